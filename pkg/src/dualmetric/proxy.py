"""Learnable class proxies and the proxy-based alignment losses.

The labeled loss is

    L = -log( exp(-d(x, p_c)) / sum_{k != c} exp(-d(x, p_k)) )

with d the Euclidean distance.  The denominator excludes the target class
(``form="as_written"``), which makes the loss unbounded below; the usual
proxy-NCA form with the full denominator is available as
``form="softmax_all"``.  The pseudo-labeled loss has the same value but
never touches the proxy gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng, pairwise_dist

FORMS = ("as_written", "softmax_all")


@dataclass
class ProxySet:
    proxies: np.ndarray  # (C, d_out)
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.proxies = np.asarray(self.proxies, dtype=np.float64)
        if self.proxies.ndim != 2:
            raise ValueError("proxies must be a (C, d) array")
        if self.grad is None:
            self.grad = np.zeros_like(self.proxies)

    @property
    def num_classes(self) -> int:
        return self.proxies.shape[0]

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def init_proxies(rng: Rng, C: int, d_out: int) -> ProxySet:
    if C < 2:
        raise ValueError("need at least two classes")
    return ProxySet(0.1 * rng.normal(size=(C, d_out)))


def _proxy_loss(x, labels, P: ProxySet, form: str):
    """Mean loss, dL/dx (n, d) and dL/dproxies (C, d) for a batch."""
    if form not in FORMS:
        raise ValueError(f"unknown proxy loss form {form!r}")
    C = P.num_classes
    if C < 2:
        raise ValueError("need at least two classes (denominator would be empty)")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if y.shape[0] != X.shape[0]:
        raise ValueError("one label per embedding required")
    if np.any(y < 0) or np.any(y >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    n = X.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(x), np.zeros_like(P.proxies), single

    dist, unit = pairwise_dist(X, P.proxies)
    rows = np.arange(n)
    target = np.zeros((n, C), dtype=bool)
    target[rows, y] = True

    neg = -dist
    if form == "as_written":
        neg = np.where(target, -np.inf, neg)
    m = np.max(neg, axis=1, keepdims=True)
    e = np.exp(neg - m)
    denom = e.sum(axis=1, keepdims=True)
    lse = (m + np.log(denom))[:, 0]
    losses = dist[rows, y] + lse
    s = e / denom

    g_dist = -s
    g_dist[rows, y] += 1.0
    g_dist /= n
    g_x = np.einsum("nk,nkd->nd", g_dist, unit)
    g_p = -np.einsum("nk,nkd->kd", g_dist, unit)
    return float(losses.mean()), g_x, g_p, single


def proxy_loss_labeled(x, c, P: ProxySet, form: str = "as_written",
                       weight: float = 1.0) -> tuple[float, np.ndarray]:
    """Batch-mean labeled proxy loss.

    Accumulates ``weight * dL/dproxies`` into ``P.grad`` and returns the
    unweighted loss together with ``weight * dL/dx``.
    """
    loss, g_x, g_p, single = _proxy_loss(x, c, P, form)
    P.grad += weight * g_p
    g_x = weight * g_x
    return loss, (g_x[0] if single and g_x.ndim == 2 else g_x)


def proxy_loss_unlabeled(x_tilde, pseudo, P: ProxySet, form: str = "as_written",
                         weight: float = 1.0) -> tuple[float, np.ndarray]:
    """Pseudo-labeled proxy loss; the gradient reaches the embedding only.

    ``pseudo`` is a class id (or array of ids) or a ``PseudoLabel``; rejected
    labels are a caller bug.
    """
    ids = getattr(pseudo, "class_id", pseudo)
    if ids is None:
        raise ValueError("pseudo label was rejected; callers must skip it")
    ids_arr = np.atleast_1d(np.asarray(ids))
    if np.any(ids_arr < 0):
        raise ValueError("rejected pseudo labels must be filtered before the loss")
    loss, g_x, _, single = _proxy_loss(x_tilde, ids, P, form)
    g_x = weight * g_x
    return loss, (g_x[0] if single and g_x.ndim == 2 else g_x)
