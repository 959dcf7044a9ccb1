"""Two-layer projection head ``x = W2 relu(W1 H)`` with a manual backward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng


@dataclass
class ProjectionHead:
    W1: np.ndarray  # (d_hidden, d_in)
    W2: np.ndarray  # (d_out, d_hidden)
    grad_W1: np.ndarray = field(default=None)
    grad_W2: np.ndarray = field(default=None)

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.W2 = np.asarray(self.W2, dtype=np.float64)
        if self.W1.ndim != 2 or self.W2.ndim != 2 or self.W2.shape[1] != self.W1.shape[0]:
            raise ValueError(f"inconsistent shapes W1 {self.W1.shape}, W2 {self.W2.shape}")
        if self.grad_W1 is None:
            self.grad_W1 = np.zeros_like(self.W1)
        if self.grad_W2 is None:
            self.grad_W2 = np.zeros_like(self.W2)

    @property
    def d_in(self) -> int:
        return self.W1.shape[1]

    @property
    def d_hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def d_out(self) -> int:
        return self.W2.shape[0]

    def zero_grad(self) -> None:
        self.grad_W1[...] = 0.0
        self.grad_W2[...] = 0.0

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "W2": self.W2}

    def grads(self) -> dict[str, np.ndarray]:
        return {"W1": self.grad_W1, "W2": self.grad_W2}


@dataclass(frozen=True)
class ForwardTape:
    H: np.ndarray
    a1: np.ndarray
    h: np.ndarray
    x: np.ndarray


def _glorot(rng: Rng, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_head(rng: Rng, d_in: int, d_hidden: int, d_out: int) -> ProjectionHead:
    """Fan-based uniform init, one draw block per layer."""
    if min(d_in, d_hidden, d_out) < 1:
        raise ValueError("all dimensions must be >= 1")
    W1 = _glorot(rng, d_hidden, d_in)
    W2 = _glorot(rng, d_out, d_hidden)
    return ProjectionHead(W1, W2)


def forward(head: ProjectionHead, H) -> tuple[np.ndarray, ForwardTape]:
    """Project one feature vector (d_in,) or a batch (n, d_in)."""
    H = np.asarray(H, dtype=np.float64)
    if H.shape[-1] != head.d_in:
        raise ValueError(f"feature length {H.shape[-1]} != d_in {head.d_in}")
    a1 = H @ head.W1.T
    h = np.maximum(a1, 0.0)
    x = h @ head.W2.T
    return x, ForwardTape(H, a1, h, x)


def backward(head: ProjectionHead, tape: ForwardTape, dL_dx) -> np.ndarray:
    """Accumulate parameter gradients and return dL/dH.

    Works for a single sample or a batch; batch contributions are summed.
    ReLU subgradient at exactly 0 is 0.
    """
    g = np.asarray(dL_dx, dtype=np.float64)
    if g.shape != tape.x.shape:
        raise ValueError(f"cotangent shape {g.shape} != output shape {tape.x.shape}")
    if tape.a1.shape[-1] != head.d_hidden:
        raise ValueError("tape does not belong to this head")
    g_h = g @ head.W2
    g_a1 = g_h * (tape.a1 > 0.0)
    if g.ndim == 1:
        head.grad_W2 += np.outer(g, tape.h)
        head.grad_W1 += np.outer(g_a1, tape.H)
    else:
        head.grad_W2 += g.T @ tape.h
        head.grad_W1 += g_a1.T @ tape.H
    return g_a1 @ head.W1
