"""Seeded ablation and labeled-fraction experiments on synthetic data."""

from __future__ import annotations

import numpy as np

from .evaluate import EvalReport, evaluate
from .synthgen import generate
from .trainer import TrainConfig, train

# name -> config overrides
VARIANTS: dict[str, dict] = {
    "supervised": {"lambda_max": 0.0},
    "no_prototype": {"use_prototype_alignment": False},
    "no_proposal": {"use_proposal_alignment": False},
    "full": {},
}


def variant_config(base: TrainConfig, variant: str, seed: int) -> TrainConfig:
    return base.replace(seed=seed, **VARIANTS[variant])


def run_variant(base: TrainConfig, variant: str, seed: int) -> EvalReport:
    cfg = variant_config(base, variant, seed)
    ds = generate(cfg.dataset_spec())
    state, _ = train(cfg, ds)
    m = state.model
    return evaluate(m.head, m.proxies, m.scorer, ds, cfg.tau)


def ablation(base: TrainConfig, seeds, variants=tuple(VARIANTS), fraction=None,
             log=None) -> list[dict]:
    """One row per (variant, seed) with the test metrics."""
    if fraction is not None:
        base = base.replace(labeled_fraction=fraction)
    rows = []
    for seed in seeds:
        for v in variants:
            rep = run_variant(base, v, seed)
            row = {"variant": v, "seed": seed, "labeled_fraction": base.labeled_fraction,
                   "macro_accuracy": rep.macro_accuracy,
                   "scorer_macro_accuracy": rep.scorer_macro_accuracy,
                   "pseudo_label_accuracy": rep.pseudo_label_accuracy}
            rows.append(row)
            if log:
                log(row)
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    """Mean and std of macro accuracy per (labeled_fraction, variant)."""
    keys = sorted({(r["labeled_fraction"], r["variant"]) for r in rows},
                  key=lambda k: (k[0], list(VARIANTS).index(k[1]) if k[1] in VARIANTS else 99))
    out = []
    for frac, v in keys:
        acc = np.array([r["macro_accuracy"] for r in rows
                        if r["labeled_fraction"] == frac and r["variant"] == v])
        out.append({"labeled_fraction": frac, "variant": v, "n_seeds": int(acc.size),
                    "mean_macro_accuracy": float(acc.mean()),
                    "std_macro_accuracy": float(acc.std())})
    return out
