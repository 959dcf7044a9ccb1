"""Small numeric kernels shared by every module.

Vectors and matrices are plain float64 numpy arrays.  Batched inputs use
rows as samples.
"""

from __future__ import annotations

import numpy as np

# Below this distance the gradient of the Euclidean distance is taken as 0.
DIST_EPS = 1e-12


def as_vec(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64)


def relu(v: np.ndarray) -> np.ndarray:
    return np.maximum(as_vec(v), 0.0)


def euclid(a, b) -> float:
    """Plain (non-squared) Euclidean distance between two vectors."""
    a, b = as_vec(a), as_vec(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def euclid_grad(a, b) -> tuple[float, np.ndarray]:
    """Distance and its gradient w.r.t. ``a`` (the gradient w.r.t. ``b`` is the negation).

    Uses subgradient 0 when the points coincide.
    """
    a, b = as_vec(a), as_vec(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    d = float(np.sqrt(np.sum(diff * diff)))
    if d < DIST_EPS:
        return d, np.zeros_like(diff)
    return d, diff / d


def pairwise_dist(x: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distances between rows of ``x`` (n, d) and rows of ``p`` (k, d).

    Returns ``(dist, unit)`` where ``dist`` is (n, k) and ``unit[i, j]`` is the
    gradient of ``dist[i, j]`` w.r.t. ``x[i]`` (zero at coincident points).
    """
    diff = x[:, None, :] - p[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    safe = np.where(dist < DIST_EPS, 1.0, dist)
    unit = np.where((dist < DIST_EPS)[..., None], 0.0, diff / safe[..., None])
    return dist, unit


def softmax(v) -> np.ndarray:
    """Softmax over the last axis, shifted by the max for stability."""
    v = as_vec(v)
    if v.shape[-1] == 0:
        raise ValueError("softmax of an empty vector")
    z = v - np.max(v, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def logsumexp(v, axis=-1) -> np.ndarray:
    v = as_vec(v)
    vmax = np.max(v, axis=axis, keepdims=True)
    out = vmax + np.log(np.sum(np.exp(v - vmax), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def matvec(m, v) -> np.ndarray:
    m, v = as_vec(m), as_vec(v)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ValueError(f"cannot multiply {m.shape} by {v.shape}")
    return m @ v


class Rng:
    """Seeded counter-based generator (Philox 4x64 via numpy).

    ``stream`` selects an independent substream of the same seed, so that
    e.g. data generation and parameter init never share draws.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence([self.seed, self.stream])
        self._bitgen = np.random.Philox(ss)
        self._gen = np.random.Generator(self._bitgen)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def get_state(self) -> dict:
        """JSON-friendly snapshot of the generator position."""
        st = self._bitgen.state
        return {
            "seed": self.seed,
            "stream": self.stream,
            "counter": [int(c) for c in st["state"]["counter"]],
            "key": [int(k) for k in st["state"]["key"]],
            "buffer": [int(b) for b in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    def set_state(self, state: dict) -> None:
        self.seed = int(state["seed"])
        self.stream = int(state["stream"])
        self._bitgen.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(state["counter"], dtype=np.uint64),
                "key": np.array(state["key"], dtype=np.uint64),
            },
            "buffer": np.array(state["buffer"], dtype=np.uint64),
            "buffer_pos": state["buffer_pos"],
            "has_uint32": state["has_uint32"],
            "uinteger": state["uinteger"],
        }

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        rng = cls(state["seed"], state["stream"])
        rng.set_state(state)
        return rng
