"""Central finite-difference verification of every hand-derived gradient.

Each loss family draws small random instances, computes the analytic
gradient, and compares it entry by entry against

    (f(p + h) - f(p - h)) / (2 h),   h = 1e-5.

The error of one entry is ``|a - n| / max(|a|, |n|)``; when both magnitudes
are below 1e-4 the denominator is floored at 1e-3, which turns a 1e-4
tolerance into a 1e-7 absolute tolerance for near-zero gradients.

Instances whose ReLU pre-activations, distances or hinge gaps sit within
``KINK_GAP`` of a non-differentiable point are redrawn.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import projection, prototype, proxy, scorer
from .numerics import Rng, pairwise_dist
from .prototype import MeanPrototypes, MemoryBank
from .trainer import Frozen, Model, TrainConfig, compute_losses

H_STEP = 1e-5
SMALL = 1e-4
FLOOR = 1e-3
KINK_GAP = 1e-3


def entry_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    a, n = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    scale = np.maximum(np.abs(a), np.abs(n))
    denom = np.where(scale < SMALL, FLOOR, scale)
    return np.abs(a - n) / denom


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = H_STEP) -> np.ndarray:
    """Central differences of ``f`` w.r.t. every entry of ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def _max_err(pairs) -> float:
    return max(float(entry_errors(a, n).max()) for a, n in pairs if np.size(a))


# ---- instance helpers -------------------------------------------------------

def _hinge_gap(A, B, m: float) -> float:
    ia = np.flatnonzero(A.present)
    ib = np.flatnonzero(B.present)
    if not ia.size or not ib.size:
        return np.inf
    a = np.stack([A.vectors[i] for i in ia])
    b = np.stack([B.vectors[i] for i in ib])
    d, _ = pairwise_dist(a, b)
    mask = ia[:, None] != ib[None, :]
    gaps = np.abs(m - d[mask])
    # same-class distances matter for the intra term; a set against itself has none
    dists = d[~mask] if A is not B else np.zeros(0)
    return float(min(gaps.min(initial=np.inf), dists.min(initial=np.inf)))


def _pmb_gap(M: MeanPrototypes, P, m: float) -> float:
    return min(_hinge_gap(M, P, m), _hinge_gap(P, P, m))


def _random_bank(rng: Rng, C: int, d: int, scale: float = 1.0) -> MeanPrototypes:
    bank = MemoryBank(C, d, capacity=8 * C)
    for c in range(C):
        for _ in range(int(rng.integers(1, 4))):
            bank.push_vector(c, scale * rng.normal(size=d))
    return bank.mean_prototypes()


# ---- families ----------------------------------------------------------------

def check_projection(rng: Rng, cfg: TrainConfig) -> float:
    d_in, d_h, d_out, n = 5, 4, 3, 3
    while True:
        head = projection.init_head(rng, d_in, d_h, d_out)
        head.W2 *= 2.0
        H = rng.normal(size=(n, d_in))
        t = rng.normal(size=(n, d_out))
        x, tape = projection.forward(head, H)
        if np.abs(tape.a1).min() > KINK_GAP and np.linalg.norm(x - t, axis=1).min() > KINK_GAP:
            break

    def loss():
        x, _ = projection.forward(head, H)
        return float(np.sum(np.linalg.norm(x - t, axis=1)))

    x, tape = projection.forward(head, H)
    diff = x - t
    g = diff / np.linalg.norm(diff, axis=1, keepdims=True)
    dH = projection.backward(head, tape, g)
    pairs = [(head.grad_W1.copy(), numeric_grad(loss, head.W1)),
             (head.grad_W2.copy(), numeric_grad(loss, head.W2)),
             (dH, numeric_grad(loss, H))]
    return _max_err(pairs)


def check_scorer(rng: Rng, cfg: TrainConfig) -> float:
    C, d, n = 3, 5, 4
    s = scorer.init_scorer(rng, C, d)
    s.b[:] = rng.normal(size=C)
    H = rng.normal(size=(n, d))
    y = rng.integers(0, C, size=n)

    def loss():
        probe = scorer.Scorer(s.W, s.b)
        return scorer.ce_loss_and_grad(probe, H, y)[0]

    _, dH = scorer.ce_loss_and_grad(s, H, y)
    pairs = [(s.grad_W.copy(), numeric_grad(loss, s.W)),
             (s.grad_b.copy(), numeric_grad(loss, s.b)),
             (dH, numeric_grad(loss, H))]
    return _max_err(pairs)


def _proxy_instance(rng: Rng):
    C, d, n = 4, 3, 3
    while True:
        P = proxy.ProxySet(rng.normal(size=(C, d)))
        x = rng.normal(size=(n, d))
        y = rng.integers(0, C, size=n)
        if pairwise_dist(x, P.proxies)[0].min() > KINK_GAP:
            return P, x, y


def check_proxy_labeled(rng: Rng, cfg: TrainConfig) -> float:
    P, x, y = _proxy_instance(rng)
    form = cfg.proxy_loss_form

    def loss():
        return proxy.proxy_loss_labeled(x, y, proxy.ProxySet(P.proxies), form)[0]

    _, gx = proxy.proxy_loss_labeled(x, y, P, form)
    pairs = [(gx, numeric_grad(loss, x)), (P.grad.copy(), numeric_grad(loss, P.proxies))]
    return _max_err(pairs)


def check_proxy_unlabeled(rng: Rng, cfg: TrainConfig) -> float:
    P, x, y = _proxy_instance(rng)
    form = cfg.proxy_loss_form

    def loss():
        return proxy.proxy_loss_unlabeled(x, y, P, form)[0]

    before = P.grad.copy()
    _, gx = proxy.proxy_loss_unlabeled(x, y, P, form)
    if P.grad.tobytes() != before.tobytes():
        return np.inf
    return _max_err([(gx, numeric_grad(loss, x))])


def _check_pmb(rng: Rng, cfg: TrainConfig, unlabeled: bool) -> float:
    C, d, n, m = 3, 3, 6, cfg.margin
    while True:
        M = _random_bank(rng, C, d)
        x = rng.normal(size=(n, d))
        if unlabeled:
            # pseudo labels and confidences of accepted proposals only
            y = rng.integers(0, C, size=n)
            q = rng.uniform(cfg.tau, 1.0, size=n)
        else:
            y = rng.integers(0, C, size=n)
            q = rng.uniform(0.05, 1.0, size=n)
        P = prototype.prototypes_cg(x, y, q, C)
        if _pmb_gap(M, P, m) > KINK_GAP:
            break

    def loss():
        return prototype.loss_pmb(M, prototype.prototypes_cg(x, y, q, C), m)[0]

    _, gP = prototype.loss_pmb(M, P, m)
    return _max_err([(P.backprop(gP), numeric_grad(loss, x))])


def check_pmb_labeled(rng: Rng, cfg: TrainConfig) -> float:
    return _check_pmb(rng, cfg, unlabeled=False)


def check_pmb_unlabeled(rng: Rng, cfg: TrainConfig) -> float:
    return _check_pmb(rng, cfg, unlabeled=True)


def check_total(rng: Rng, cfg: TrainConfig) -> float:
    tiny = cfg.replace(C=2, d_in=4, d_hidden=4, d_out=4, batch_size=8,
                       use_proposal_alignment=True, use_prototype_alignment=True,
                       supervised_only=False)
    k = tiny.half_batch
    while True:
        model = Model(projection.init_head(rng, 4, 4, 4), scorer.init_scorer(rng, 2, 4),
                      proxy.ProxySet(rng.normal(size=(2, 4))))
        model.head.W2 *= 2.0
        H_L = rng.normal(size=(k, 4))
        y_L = rng.integers(0, 2, size=k)
        H_U = rng.normal(size=(k, 4))
        bank = _random_bank(rng, 2, 4)
        lam = float(rng.uniform(0.1, 1.0))
        # confidences and pseudo labels are constants of the step
        q_L = rng.uniform(0.05, 1.0, size=k)
        ids = rng.integers(0, 2, size=k)
        ids[int(rng.integers(0, k))] = -1
        conf = np.where(ids >= 0, rng.uniform(tiny.tau, 1.0, size=k),
                        rng.uniform(0.0, tiny.tau, size=k))
        frozen = Frozen(q_L, ids, conf)
        _, aux = compute_losses(model, tiny, H_L, y_L, H_U, bank, lam, frozen)
        model.zero_grad()
        x_all, tape = projection.forward(model.head, np.vstack([H_L, H_U]))
        dist_ok = pairwise_dist(x_all, model.proxies.proxies)[0].min() > KINK_GAP
        gap = min(_pmb_gap(bank, aux["P_L_cg"], tiny.margin),
                  _pmb_gap(bank, aux["P_U_cg"], tiny.margin))
        if np.abs(tape.a1).min() > KINK_GAP and dist_ok and gap > KINK_GAP:
            break

    def loss(proxy_view: bool = False):
        probe = Model(projection.ProjectionHead(model.head.W1, model.head.W2),
                      scorer.Scorer(model.scorer.W, model.scorer.b),
                      proxy.ProxySet(model.proxies.proxies))
        losses = compute_losses(probe, tiny, H_L, y_L, H_U, bank, lam, frozen)[0]
        if proxy_view:
            # proxies are not trained by the pseudo-labeled proxy term
            return losses["total"] - lam * losses["L_pml_u"]
        return losses["total"]

    compute_losses(model, tiny, H_L, y_L, H_U, bank, lam, frozen)
    grads = {k: v.copy() for k, v in model.grads().items()}
    pairs = []
    for name, arr in model.params().items():
        f = (lambda: loss(True)) if name == "proxies" else loss
        pairs.append((grads[name], numeric_grad(f, arr)))
    return _max_err(pairs)


FAMILIES: dict[str, Callable[[Rng, TrainConfig], float]] = {
    "projection": check_projection,
    "scorer_ce": check_scorer,
    "proxy_labeled": check_proxy_labeled,
    "proxy_unlabeled": check_proxy_unlabeled,
    "pmb_labeled": check_pmb_labeled,
    "pmb_unlabeled": check_pmb_unlabeled,
    "total": check_total,
}


def run_gradcheck(cfg: TrainConfig, trials: int = 50, families=None) -> dict[str, float]:
    """Max entry error per family over ``trials`` random instances."""
    out = {}
    for i, (name, fn) in enumerate(FAMILIES.items()):
        if families is not None and name not in families:
            continue
        rng = Rng(cfg.seed, 1000 + i)
        out[name] = max(fn(rng, cfg) for _ in range(trials))
    return out
