"""Linear softmax classifier standing in for the detector's classification branch.

It reads the raw proposal feature, supplies the confidence scores used for
confidence-weighted prototypes, and produces thresholded pseudo labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .numerics import Rng, logsumexp, softmax


@dataclass
class Scorer:
    W: np.ndarray  # (C, d_in)
    b: np.ndarray  # (C,)
    grad_W: np.ndarray = field(default=None)
    grad_b: np.ndarray = field(default=None)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError(f"inconsistent scorer shapes W {self.W.shape}, b {self.b.shape}")
        if self.grad_W is None:
            self.grad_W = np.zeros_like(self.W)
        if self.grad_b is None:
            self.grad_b = np.zeros_like(self.b)

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    def zero_grad(self) -> None:
        self.grad_W[...] = 0.0
        self.grad_b[...] = 0.0

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def grads(self) -> dict[str, np.ndarray]:
        return {"W": self.grad_W, "b": self.grad_b}


@dataclass(frozen=True)
class PseudoLabel:
    class_id: Optional[int]
    confidence: float

    @property
    def accepted(self) -> bool:
        return self.class_id is not None


def init_scorer(rng: Rng, C: int, d_in: int) -> Scorer:
    bound = np.sqrt(6.0 / (C + d_in))
    return Scorer(rng.uniform(-bound, bound, size=(C, d_in)), np.zeros(C))


def _logits(s: Scorer, H: np.ndarray) -> np.ndarray:
    if H.shape[-1] != s.W.shape[1]:
        raise ValueError(f"feature length {H.shape[-1]} != scorer input {s.W.shape[1]}")
    return H @ s.W.T + s.b


def score(s: Scorer, H) -> np.ndarray:
    """Class probabilities for one feature vector or a batch."""
    return softmax(_logits(s, np.asarray(H, dtype=np.float64)))


def pseudo_label(q, tau: float) -> PseudoLabel:
    """Argmax class if its probability reaches ``tau`` (ties go to the lowest index)."""
    q = np.asarray(q, dtype=np.float64)
    c = int(np.argmax(q))  # argmax returns the first maximum
    conf = float(q[c])
    return PseudoLabel(c if conf >= tau else None, conf)


def pseudo_label_batch(Q: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``pseudo_label``: returns (class ids with -1 for rejected, confidences)."""
    cls = np.argmax(Q, axis=1)
    conf = Q[np.arange(Q.shape[0]), cls]
    return np.where(conf >= tau, cls, -1), conf


def ce_loss_and_grad(s: Scorer, H, label, weight: float = 1.0) -> tuple[float, np.ndarray]:
    """Mean cross-entropy ``-log q[label]`` over the batch.

    Accumulates ``weight * dL/dparams`` into the scorer and returns
    ``weight * dL/dH`` with the input's shape.
    """
    H = np.asarray(H, dtype=np.float64)
    single = H.ndim == 1
    H2 = np.atleast_2d(H)
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    C = s.num_classes
    if labels.shape[0] != H2.shape[0]:
        raise ValueError("one label per feature vector required")
    if np.any(labels < 0) or np.any(labels >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    n = H2.shape[0]
    z = _logits(s, H2)
    rows = np.arange(n)
    loss = float(np.mean(logsumexp(z, axis=1) - z[rows, labels]))
    g_z = softmax(z)
    g_z[rows, labels] -= 1.0
    g_z *= weight / n
    s.grad_W += g_z.T @ H2
    s.grad_b += g_z.sum(axis=0)
    dH = g_z @ s.W
    return loss, dH[0] if single else dH
