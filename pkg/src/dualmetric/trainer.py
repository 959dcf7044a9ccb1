"""Training loop for the dual-alignment objective.

    total = L_s + lambda(t) * (L_pml + L_pml_u + L_pmb + L_pmb_u)

``L_s`` is the surrogate classifier cross-entropy on labeled proposals.
The proxy terms align labeled and pseudo-labeled embeddings with the
class proxies; the prototype terms align confidence-guided prototypes with
the memory-bank means.  Proxies are only updated by the labeled proxy
loss; confidence scores and pseudo labels are treated as constants.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .numerics import Rng
from .projection import ProjectionHead, backward, forward, init_head
from .prototype import MemoryBank, MeanPrototypes, loss_pmb, prototypes_cg, prototypes_gg
from .proxy import FORMS, ProxySet, init_proxies, proxy_loss_labeled, proxy_loss_unlabeled
from .scorer import Scorer, ce_loss_and_grad, init_scorer, pseudo_label_batch, score
from .synthgen import Dataset, DatasetSpec

# Rng substreams of the training seed (dataset streams live in synthgen).
STREAM_HEAD, STREAM_SCORER, STREAM_PROXIES = 10, 11, 12
STREAM_SAMPLE_L, STREAM_SAMPLE_U = 20, 21


class NumericalError(RuntimeError):
    """Raised when a loss or parameter stops being finite."""

    def __init__(self, msg: str, dump: Optional[dict] = None):
        super().__init__(msg)
        self.dump = dump or {}


@dataclass
class TrainConfig:
    seed: int
    C: int = 4
    d_in: int = 32
    d_hidden: int = 16
    d_out: int = 8
    tau: float = 0.5
    margin: float = 1.0
    bank_capacity: int = 1024
    batch_size: int = 8
    lr_main: float = 0.005
    lr_proxy: float = 0.01
    momentum: float = 0.9
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 800
    lambda_max: float = 1.0
    ramp_length: int = 500
    total_iters: int = 2000
    proxy_loss_form: str = "as_written"
    use_proposal_alignment: bool = True
    use_prototype_alignment: bool = True
    supervised_only: bool = False
    # dataset generation
    r_sep: float = 3.0
    sigma_cluster: float = 1.2
    n_labeled: int = 400
    n_unlabeled: int = 400
    n_test: int = 400
    labeled_fraction: float = 0.25
    n_distractors: int = 40
    distractor_spread: float = 1.2

    REQUIRED = ("seed",)

    def validate(self) -> None:
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if not self.margin > 0:
            raise ValueError("margin must be positive")
        if not (self.lr_main > 0 and self.lr_proxy > 0):
            raise ValueError("learning rates must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError("batch_size must be even and >= 2 (equal labeled/unlabeled halves)")
        if self.lr_decay_every < 1 or self.ramp_length < 1:
            raise ValueError("lr_decay_every and ramp_length must be >= 1")
        if self.lambda_max < 0:
            raise ValueError("lambda_max must be non-negative")
        if self.total_iters < 0:
            raise ValueError("total_iters must be non-negative")
        if self.proxy_loss_form not in FORMS:
            raise ValueError(f"proxy_loss_form must be one of {FORMS}")
        if self.C < 2 or min(self.d_in, self.d_hidden, self.d_out) < 1:
            raise ValueError("C must be >= 2 and all dims >= 1")
        if self.bank_capacity < self.C:
            raise ValueError("bank_capacity must hold at least one prototype per class")
        self.dataset_spec().validate()

    @property
    def half_batch(self) -> int:
        return self.batch_size // 2

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            C=self.C, d_in=self.d_in, r_sep=self.r_sep, sigma_cluster=self.sigma_cluster,
            n_labeled=self.n_labeled, n_unlabeled=self.n_unlabeled, n_test=self.n_test,
            labeled_fraction=self.labeled_fraction, n_distractors=self.n_distractors,
            distractor_spread=self.distractor_spread, seed=self.seed)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class Model:
    head: ProjectionHead
    scorer: Scorer
    proxies: ProxySet

    def main_params(self) -> dict[str, np.ndarray]:
        return {"head.W1": self.head.W1, "head.W2": self.head.W2,
                "scorer.W": self.scorer.W, "scorer.b": self.scorer.b}

    def main_grads(self) -> dict[str, np.ndarray]:
        return {"head.W1": self.head.grad_W1, "head.W2": self.head.grad_W2,
                "scorer.W": self.scorer.grad_W, "scorer.b": self.scorer.grad_b}

    def params(self) -> dict[str, np.ndarray]:
        return {**self.main_params(), "proxies": self.proxies.proxies}

    def grads(self) -> dict[str, np.ndarray]:
        return {**self.main_grads(), "proxies": self.proxies.grad}

    def zero_grad(self) -> None:
        self.head.zero_grad()
        self.scorer.zero_grad()
        self.proxies.zero_grad()


def init_model(cfg: TrainConfig) -> Model:
    return Model(
        init_head(Rng(cfg.seed, STREAM_HEAD), cfg.d_in, cfg.d_hidden, cfg.d_out),
        init_scorer(Rng(cfg.seed, STREAM_SCORER), cfg.C, cfg.d_in),
        init_proxies(Rng(cfg.seed, STREAM_PROXIES), cfg.C, cfg.d_out),
    )


def lambda_ramp(t: int, lambda_max: float, ramp_length: int) -> float:
    """Sigmoid-shaped ramp ``lambda_max * exp(-5 (1 - min(t, T)/T)^2)``."""
    if ramp_length < 1:
        raise ValueError("ramp_length must be >= 1")
    phase = 1.0 - min(max(t, 0), ramp_length) / ramp_length
    return lambda_max * math.exp(-5.0 * phase * phase)


def lr_schedule(t: int, lr0: float, factor: float, every: int) -> float:
    if every < 1:
        raise ValueError("every must be >= 1")
    return lr0 * factor ** (t // every)


def sgd_update(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray, lr: float,
               momentum: float) -> None:
    """Heavy-ball step in place: ``v = momentum v + g; p -= lr v``."""
    if not (param.shape == grad.shape == velocity.shape):
        raise ValueError(f"shape mismatch {param.shape}, {grad.shape}, {velocity.shape}")
    velocity *= momentum
    velocity += grad
    param -= lr * velocity


class BatchSampler:
    """Draws index batches from epoch-wise permutations."""

    def __init__(self, n: int, k: int, rng: Rng):
        if n < 1:
            raise ValueError("cannot sample from an empty split")
        self.n, self.k, self.rng = n, k, rng
        self.perm = np.zeros(0, dtype=np.int64)
        self.cursor = 0

    def next(self) -> np.ndarray:
        out = []
        need = self.k
        while need:
            if self.cursor >= len(self.perm):
                self.perm = self.rng.permutation(self.n).astype(np.int64)
                self.cursor = 0
            take = self.perm[self.cursor:self.cursor + need]
            self.cursor += len(take)
            need -= len(take)
            out.append(take)
        return np.concatenate(out)

    def state_dict(self) -> dict:
        return {"n": self.n, "k": self.k, "perm": self.perm.tolist(), "cursor": self.cursor,
                "rng": self.rng.get_state()}

    @classmethod
    def from_state(cls, st: dict) -> "BatchSampler":
        s = cls(st["n"], st["k"], Rng.from_state(st["rng"]))
        s.perm = np.array(st["perm"], dtype=np.int64)
        s.cursor = st["cursor"]
        return s


LOSS_KEYS = ("L_s", "L_pml", "L_pml_u", "L_pmb", "L_pmb_u")


@dataclass
class IterationReport:
    t: int
    lam: float
    lr_main: float
    lr_proxy: float
    L_s: float
    L_pml: float
    L_pml_u: float
    L_pmb: float
    L_pmb_u: float
    total: float
    n_accepted: int
    classes_labeled: list[int] = field(default_factory=list)
    classes_unlabeled: list[int] = field(default_factory=list)
    bank_size: int = 0
    audit_proxy_grad_violations: int = 0
    audit_below_tau_consumed: int = 0

    def to_record(self) -> dict:
        return {"record": "iteration", **dataclasses.asdict(self)}


@dataclass
class Frozen:
    """Constants of one step: ground-truth-class confidences and pseudo labels."""

    q_labeled: np.ndarray
    pl_ids: np.ndarray
    pl_conf: np.ndarray


def freeze(model: Model, H_L, y_L, H_U, tau: float) -> Frozen:
    Q_L = score(model.scorer, H_L)
    q_L = Q_L[np.arange(len(y_L)), y_L]
    if len(H_U):
        ids, conf = pseudo_label_batch(score(model.scorer, H_U), tau)
    else:
        ids, conf = np.zeros(0, dtype=np.int64), np.zeros(0)
    return Frozen(q_L, ids, conf)


def compute_losses(model: Model, cfg: TrainConfig, H_L, y_L, H_U, bank_means: MeanPrototypes,
                   lam: float, frozen: Optional[Frozen] = None) -> tuple[dict, dict]:
    """Evaluate every loss term and accumulate gradients of the total into ``model``.

    Returns ``(losses, aux)``; ``losses`` holds the five components and the
    total, ``aux`` holds embeddings, prototype sets and audit counters.
    """
    H_L = np.asarray(H_L, dtype=np.float64)
    H_U = np.asarray(H_U, dtype=np.float64).reshape(-1, cfg.d_in)
    y_L = np.asarray(y_L, dtype=np.int64)
    if len(y_L) == 0:
        raise ValueError("labeled half of the batch is empty")
    if frozen is None:
        frozen = freeze(model, H_L, y_L, H_U, cfg.tau)

    losses = dict.fromkeys(LOSS_KEYS, 0.0)
    aux: dict = {"frozen": frozen, "audit_proxy_grad_violations": 0,
                 "audit_below_tau_consumed": 0}

    losses["L_s"], _ = ce_loss_and_grad(model.scorer, H_L, y_L)
    if cfg.supervised_only:
        losses["total"] = losses["L_s"]
        return losses, aux

    C, m = cfg.C, cfg.margin
    x_L, tape_L = forward(model.head, H_L)
    x_U, tape_U = forward(model.head, H_U)
    aux["x_L"] = x_L
    g_L = np.zeros_like(x_L)
    g_U = np.zeros_like(x_U)

    acc = frozen.pl_ids >= 0
    ids_acc, conf_acc = frozen.pl_ids[acc], frozen.pl_conf[acc]
    aux["n_accepted"] = int(acc.sum())

    losses["L_pml"], g = proxy_loss_labeled(x_L, y_L, model.proxies, cfg.proxy_loss_form, lam)
    g_L += g
    proxy_grad_snapshot = model.proxies.grad.copy()

    consumed_conf = []
    if cfg.use_proposal_alignment and acc.any():
        consumed_conf.append(conf_acc)
        losses["L_pml_u"], g = proxy_loss_unlabeled(x_U[acc], ids_acc, model.proxies,
                                                    cfg.proxy_loss_form, lam)
        g_U[acc] += g

    P_L = prototypes_cg(x_L, y_L, frozen.q_labeled, C)
    P_U = prototypes_cg(x_U[acc], ids_acc, conf_acc, C)
    aux["P_L_cg"], aux["P_U_cg"] = P_L, P_U
    if cfg.use_prototype_alignment:
        losses["L_pmb"], gP = loss_pmb(bank_means, P_L, m)
        g_L += lam * P_L.backprop(gP)
        if acc.any():
            consumed_conf.append(conf_acc)
            losses["L_pmb_u"], gP = loss_pmb(bank_means, P_U, m)
            g_U[acc] += lam * P_U.backprop(gP)

    if model.proxies.grad.tobytes() != proxy_grad_snapshot.tobytes():
        aux["audit_proxy_grad_violations"] = 1
    aux["audit_below_tau_consumed"] = int(sum(np.sum(c < cfg.tau) for c in consumed_conf))

    backward(model.head, tape_L, g_L)
    if len(H_U):
        backward(model.head, tape_U, g_U)

    losses["total"] = losses["L_s"] + lam * (
        losses["L_pml"] + losses["L_pml_u"] + losses["L_pmb"] + losses["L_pmb_u"])
    return losses, aux


class TrainState:
    """Everything needed to continue training bit-for-bit."""

    def __init__(self, cfg: TrainConfig, dataset: Dataset):
        cfg.validate()
        if dataset.C != cfg.C or dataset.d_in != cfg.d_in:
            raise ValueError(
                f"dataset (C={dataset.C}, d_in={dataset.d_in}) does not match config "
                f"(C={cfg.C}, d_in={cfg.d_in})")
        self.cfg = cfg
        self.dataset = dataset
        self.model = init_model(cfg)
        self.velocity = {k: np.zeros_like(v) for k, v in self.model.params().items()}
        self.bank = MemoryBank(cfg.C, cfg.d_out, cfg.bank_capacity)
        self.t = 0
        k = cfg.half_batch
        self.sampler_L = BatchSampler(len(dataset.labeled_y), k, Rng(cfg.seed, STREAM_SAMPLE_L))
        n_u = len(dataset.unlabeled_features())
        self.sampler_U = BatchSampler(n_u, k, Rng(cfg.seed, STREAM_SAMPLE_U)) if n_u else None

    def next_batch(self):
        idx_L = self.sampler_L.next()
        H_L = self.dataset.labeled_X[idx_L]
        y_L = self.dataset.labeled_y[idx_L]
        if self.sampler_U is None:
            H_U = np.zeros((0, self.cfg.d_in))
        else:
            H_U = self.dataset.unlabeled_features()[self.sampler_U.next()]
        return H_L, y_L, H_U


def train_step(state: TrainState, H_L, y_L, H_U) -> IterationReport:
    cfg, model = state.cfg, state.model
    t = state.t
    if len(H_U) and len(H_U) != len(H_L):
        raise ValueError("labeled and unlabeled halves must have equal size")
    lam = lambda_ramp(t, cfg.lambda_max, cfg.ramp_length)
    losses, aux = compute_losses(model, cfg, H_L, y_L, H_U, state.bank.mean_prototypes(), lam)

    if not math.isfinite(losses["total"]):
        raise NumericalError(f"non-finite loss at iteration {t}", {
            "t": t, "losses": losses, "H_L": np.asarray(H_L).tolist(),
            "y_L": np.asarray(y_L).tolist(), "H_U": np.asarray(H_U).tolist()})

    lr_main = lr_schedule(t, cfg.lr_main, cfg.lr_decay_factor, cfg.lr_decay_every)
    lr_proxy = lr_schedule(t, cfg.lr_proxy, cfg.lr_decay_factor, cfg.lr_decay_every)
    grads = model.grads()
    for name, p in model.params().items():
        lr = lr_proxy if name == "proxies" else lr_main
        sgd_update(p, grads[name], state.velocity[name], lr, cfg.momentum)
    model.zero_grad()

    if not cfg.supervised_only:
        state.bank.push(prototypes_gg(aux["x_L"], y_L, cfg.C))
    state.t += 1

    P_L, P_U = aux.get("P_L_cg"), aux.get("P_U_cg")
    return IterationReport(
        t=t, lam=lam, lr_main=lr_main, lr_proxy=lr_proxy,
        **{k: losses[k] for k in LOSS_KEYS}, total=losses["total"],
        n_accepted=aux.get("n_accepted", 0),
        classes_labeled=np.flatnonzero(P_L.present).tolist() if P_L else [],
        classes_unlabeled=np.flatnonzero(P_U.present).tolist() if P_U else [],
        bank_size=len(state.bank),
        audit_proxy_grad_violations=aux["audit_proxy_grad_violations"],
        audit_below_tau_consumed=aux["audit_below_tau_consumed"],
    )


def run(state: TrainState, until: Optional[int] = None, callback=None) -> list[IterationReport]:
    """Train up to iteration ``until`` (default: ``total_iters``)."""
    until = state.cfg.total_iters if until is None else until
    reports = []
    while state.t < until:
        rep = train_step(state, *state.next_batch())
        reports.append(rep)
        if callback is not None:
            callback(state, rep)
    return reports


def train(cfg: TrainConfig, dataset: Dataset) -> tuple[TrainState, list[IterationReport]]:
    state = TrainState(cfg, dataset)
    return state, run(state)
