"""Nearest-proxy classification metrics on the test split."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .numerics import pairwise_dist
from .projection import ProjectionHead, forward
from .proxy import ProxySet
from .scorer import Scorer, pseudo_label_batch, score
from .synthgen import Dataset


def classify_nearest_proxy(head: ProjectionHead, P: ProxySet, H) -> np.ndarray | int:
    """Index of the closest proxy to the embedding of ``H``; ties go to the lowest index."""
    H = np.asarray(H, dtype=np.float64)
    x, _ = forward(head, np.atleast_2d(H))
    dist, _ = pairwise_dist(x, P.proxies)
    pred = np.argmin(dist, axis=1)
    return int(pred[0]) if H.ndim == 1 else pred


@dataclass
class EvalReport:
    per_class_accuracy: list[float]
    macro_accuracy: float
    confusion: list[list[int]]  # rows: true class, cols: predicted
    scorer_macro_accuracy: float
    mean_intra_class_distance: float
    mean_inter_proxy_distance: float
    # diagnostics on the unlabeled split (hidden labels, never used for training)
    pseudo_label_acceptance_rate: float
    pseudo_label_accuracy: float
    distractor_acceptance_rate: float

    def to_record(self) -> dict:
        return {"record": "eval", **dataclasses.asdict(self)}


def _macro(y_true: np.ndarray, y_pred: np.ndarray, C: int) -> tuple[list[float], np.ndarray]:
    conf = np.zeros((C, C), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    rows = conf.sum(axis=1)
    per_class = [float(conf[c, c] / rows[c]) if rows[c] else 0.0 for c in range(C)]
    return per_class, conf


def evaluate(head: ProjectionHead, P: ProxySet, scorer: Scorer, dataset: Dataset,
             tau: float = 0.5) -> EvalReport:
    if len(dataset.test_y) == 0:
        raise ValueError("dataset has no test split")
    C = dataset.C
    X, y = dataset.test_X, dataset.test_y
    pred = classify_nearest_proxy(head, P, X)
    per_class, conf = _macro(y, pred, C)
    present = [c for c in range(C) if conf[c].sum()]
    macro = float(np.mean([per_class[c] for c in present]))

    s_pred = np.argmax(score(scorer, X), axis=1)
    s_per_class, _ = _macro(y, s_pred, C)
    scorer_macro = float(np.mean([s_per_class[c] for c in present]))

    emb, _ = forward(head, X)
    intra = []
    for c in present:
        e = emb[y == c]
        intra.append(np.linalg.norm(e - e.mean(axis=0), axis=1))
    mean_intra = float(np.mean(np.concatenate(intra)))
    pd, _ = pairwise_dist(P.proxies, P.proxies)
    off = ~np.eye(P.num_classes, dtype=bool)
    mean_inter = float(pd[off].mean())

    U = dataset.unlabeled_features()
    hidden = dataset.hidden_unlabeled_labels()
    if len(U):
        ids, _ = pseudo_label_batch(score(scorer, U), tau)
        accepted = ids >= 0
        real = hidden >= 0
        accept_rate = float(accepted[real].mean()) if real.any() else 0.0
        ok = accepted & real
        pl_acc = float(np.mean(ids[ok] == hidden[ok])) if ok.any() else 0.0
        dis = ~real
        dis_rate = float(accepted[dis].mean()) if dis.any() else 0.0
    else:
        accept_rate = pl_acc = dis_rate = 0.0

    return EvalReport(per_class, macro, conf.tolist(), scorer_macro, mean_intra, mean_inter,
                      accept_rate, pl_acc, dis_rate)
