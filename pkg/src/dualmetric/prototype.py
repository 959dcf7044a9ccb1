"""Class prototypes, prototype alignment losses and the labeled-prototype memory bank.

Prototypes are (weighted) class means of embeddings from one batch.  The
alignment losses only compare classes that are present on both sides and
normalise by the number of compared terms, so a batch missing a class
contributes nothing for it.

Loss functions return ``(value, grad_A, grad_B)`` where the gradients are
(C, d) arrays w.r.t. the prototype vectors (zero rows for absent classes).
``PrototypeSet.backprop`` maps a prototype gradient back onto the
embeddings that formed it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numerics import DIST_EPS, pairwise_dist


@dataclass
class PrototypeSet:
    """Per-class prototypes built from ``n_members`` embeddings."""

    vectors: list[Optional[np.ndarray]]
    support_count: np.ndarray  # (C,) ints
    support_weight: np.ndarray  # (C,) sum of weights (N for ground-truth-guided)
    member_index: list[np.ndarray]  # embedding rows contributing to each class
    member_weight: list[np.ndarray]  # normalised weights, sum to 1 per present class
    n_members: int
    dim: int

    @property
    def num_classes(self) -> int:
        return len(self.vectors)

    @property
    def present(self) -> np.ndarray:
        return self.support_count >= 1

    def backprop(self, grad: np.ndarray) -> np.ndarray:
        """Chain a (C, d) prototype gradient back to the (n, d) member embeddings."""
        d = grad.shape[1]
        out = np.zeros((self.n_members, d))
        for c in range(self.num_classes):
            if self.support_count[c]:
                out[self.member_index[c]] += self.member_weight[c][:, None] * grad[c]
        return out


@dataclass
class MeanPrototypes:
    vectors: list[Optional[np.ndarray]]
    dim: Optional[int] = None

    def __post_init__(self):
        if self.dim is None:
            self.dim = next((len(v) for v in self.vectors if v is not None), 0)

    @property
    def num_classes(self) -> int:
        return len(self.vectors)

    @property
    def present(self) -> np.ndarray:
        return np.array([v is not None for v in self.vectors], dtype=bool)


def _weighted_prototypes(X, labels, weights, C: int) -> PrototypeSet:
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = X.shape[0]
    if labels.shape != (n,) or weights.shape != (n,):
        raise ValueError("embeddings, labels and weights must have matching lengths")
    if n and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"class ids must lie in [0, {C})")
    vectors: list[Optional[np.ndarray]] = [None] * C
    count = np.zeros(C, dtype=np.int64)
    wsum = np.zeros(C)
    idx_list, w_list = [], []
    for c in range(C):
        idx = np.flatnonzero(labels == c)
        count[c] = idx.size
        if idx.size == 0:
            idx_list.append(idx)
            w_list.append(np.zeros(0))
            continue
        w = weights[idx]
        total = float(w.sum())
        if not total > 0.0:
            raise ValueError(f"class {c} has zero total weight")
        # rescale by the max first so equal weights give exactly 1/N
        w1 = w / w.max()
        wn = w1 / w1.sum()
        vectors[c] = wn @ X[idx]
        wsum[c] = total
        idx_list.append(idx)
        w_list.append(wn)
    return PrototypeSet(vectors, count, wsum, idx_list, w_list, n, X.shape[1])


def prototypes_gg(X, labels, C: int) -> PrototypeSet:
    """Unweighted per-class means (ground-truth-guided prototypes)."""
    n = np.asarray(X).shape[0]
    return _weighted_prototypes(X, labels, np.ones(n), C)


def prototypes_cg(X, labels, q, C: int) -> PrototypeSet:
    """Confidence-weighted per-class means; ``q`` must be positive."""
    q = np.asarray(q, dtype=np.float64)
    if np.any(q <= 0):
        raise ValueError("confidence weights must be positive")
    return _weighted_prototypes(X, labels, q, C)


def _stack(P) -> tuple[np.ndarray, np.ndarray]:
    idx = np.flatnonzero(P.present)
    if idx.size == 0:
        return idx, np.zeros((0, 0))
    return idx, np.stack([P.vectors[i] for i in idx])


def _dim(A, B) -> int:
    return max(A.dim, B.dim)


def loss_intra(A, B) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean distance between same-class prototypes over co-present classes."""
    C = A.num_classes
    d = _dim(A, B)
    gA, gB = np.zeros((C, d)), np.zeros((C, d))
    co = np.flatnonzero(A.present & B.present)
    if co.size == 0:
        return 0.0, gA, gB
    a = np.stack([A.vectors[c] for c in co])
    b = np.stack([B.vectors[c] for c in co])
    diff = a - b
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    safe = np.where(dist < DIST_EPS, 1.0, dist)
    unit = np.where((dist < DIST_EPS)[:, None], 0.0, diff / safe[:, None])
    k = co.size
    gA[co] = unit / k
    gB[co] = -unit / k
    return float(dist.sum() / k), gA, gB


def loss_inter(A, B, m: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean hinge ``max(0, m - d(A_c, B_k))`` over ordered pairs c != k, both present."""
    if not m > 0:
        raise ValueError("margin must be positive")
    C = A.num_classes
    d = _dim(A, B)
    gA, gB = np.zeros((C, d)), np.zeros((C, d))
    ia, a = _stack(A)
    ib, b = _stack(B)
    if ia.size == 0 or ib.size == 0:
        return 0.0, gA, gB
    pair = ia[:, None] != ib[None, :]
    n_pairs = int(pair.sum())
    if n_pairs == 0:
        return 0.0, gA, gB
    dist, unit = pairwise_dist(a, b)
    gap = m - dist
    active = pair & (gap > 0.0)
    value = float(np.sum(np.where(active, gap, 0.0)) / n_pairs)
    g_dist = np.where(active, -1.0 / n_pairs, 0.0)
    gA[ia] = np.einsum("ck,ckd->cd", g_dist, unit)
    gB[ib] = -np.einsum("ck,ckd->kd", g_dist, unit)
    return value, gA, gB


def loss_pmb(P_M: MeanPrototypes, P_cg: PrototypeSet, m: float) -> tuple[float, np.ndarray]:
    """Bank alignment of one confidence-guided set.

    intra(bank, P) + inter(bank, P) + inter(P, P); the bank is constant, so
    the returned (C, d) gradient is w.r.t. ``P_cg`` only.
    """
    v1, _, g1 = loss_intra(P_M, P_cg)
    v2, _, g2 = loss_inter(P_M, P_cg, m)
    v3, g3a, g3b = loss_inter(P_cg, P_cg, m)
    return v1 + v2 + v3, g1 + g2 + g3a + g3b


# Labeled and pseudo-labeled variants share one functional form.
loss_pmb_labeled = loss_pmb
loss_pmb_unlabeled = loss_pmb


class MemoryBank:
    """Per-class FIFO ring buffers of past labeled ground-truth-guided prototypes.

    Each class gets ``capacity // C`` slots.  Entries are copies, so later
    parameter updates never reach them.
    """

    def __init__(self, C: int, d: int, capacity: int = 1024):
        per_class = capacity // C
        if per_class < 1:
            raise ValueError(f"capacity {capacity} too small for {C} classes")
        self.C = C
        self.d = d
        self.capacity = capacity
        self.per_class = per_class
        self.buffers = np.zeros((C, per_class, d))
        self.counts = np.zeros(C, dtype=np.int64)
        self.cursors = np.zeros(C, dtype=np.int64)

    def push(self, P_gg: PrototypeSet) -> None:
        if P_gg.num_classes != self.C:
            raise ValueError("prototype set has the wrong number of classes")
        for c in range(self.C):
            v = P_gg.vectors[c]
            if v is None:
                continue
            self.push_vector(c, v)

    def push_vector(self, c: int, v) -> None:
        v = np.array(v, dtype=np.float64)
        if v.shape != (self.d,):
            raise ValueError(f"expected a vector of length {self.d}")
        self.buffers[c, self.cursors[c]] = v
        self.cursors[c] = (self.cursors[c] + 1) % self.per_class
        self.counts[c] = min(self.counts[c] + 1, self.per_class)

    def entries(self, c: int) -> np.ndarray:
        """Stored vectors of class ``c``, oldest first."""
        n = self.counts[c]
        if n < self.per_class:
            return self.buffers[c, :n].copy()
        cur = self.cursors[c]
        return np.concatenate([self.buffers[c, cur:], self.buffers[c, :cur]])

    def mean_prototypes(self) -> MeanPrototypes:
        vecs: list[Optional[np.ndarray]] = []
        for c in range(self.C):
            n = self.counts[c]
            vecs.append(self.buffers[c, :n].mean(axis=0) if n else None)
        return MeanPrototypes(vecs, self.d)

    def __len__(self) -> int:
        return int(self.counts.sum())

    def state_dict(self) -> dict:
        return {
            "C": self.C, "d": self.d, "capacity": self.capacity,
            "buffers": self.buffers.tolist(),
            "counts": self.counts.tolist(),
            "cursors": self.cursors.tolist(),
        }

    @classmethod
    def from_state(cls, st: dict) -> "MemoryBank":
        bank = cls(st["C"], st["d"], st["capacity"])
        bank.buffers = np.array(st["buffers"], dtype=np.float64).reshape(bank.buffers.shape)
        bank.counts = np.array(st["counts"], dtype=np.int64)
        bank.cursors = np.array(st["cursors"], dtype=np.int64)
        return bank


def push(bank: MemoryBank, P_gg_labeled: PrototypeSet) -> None:
    bank.push(P_gg_labeled)


def mean_prototypes(bank: MemoryBank) -> MeanPrototypes:
    return bank.mean_prototypes()
