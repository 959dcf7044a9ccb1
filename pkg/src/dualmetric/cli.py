"""Command-line entry point.

Exit codes: 0 success, 1 internal or numeric failure, 2 usage/config error.
Set ``DUALMETRIC_LOG`` (DEBUG, INFO, WARNING) to control stderr logging.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time

from .checkpoint import CheckpointError, model_from_payload, read_checkpoint, restore_state, \
    save_checkpoint
from .config import ConfigError, load_config
from .evaluate import evaluate
from .synthgen import DatasetParseError, export_dataset, generate, import_dataset
from .trainer import NumericalError, TrainState, train_step

log = logging.getLogger("dualmetric")


class UsageError(Exception):
    pass


def _setup_logging() -> None:
    level = os.environ.get("DUALMETRIC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)


def _config(path):
    try:
        return load_config(path)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    except ConfigError as exc:
        raise UsageError(f"invalid config {path}: {exc}") from None


def _dataset(path):
    try:
        return import_dataset(path)
    except OSError as exc:
        raise UsageError(f"cannot read dataset: {exc}") from None
    except DatasetParseError as exc:
        raise UsageError(f"malformed dataset {path}: {exc}") from None


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def cmd_datagen(args) -> int:
    cfg = _config(args.config)
    ds = generate(cfg.dataset_spec())
    try:
        export_dataset(ds, args.out)
    except OSError as exc:
        raise UsageError(f"cannot write {args.out}: {exc}") from None
    log.info("wrote %d samples to %s", len(ds), args.out)
    return 0


def cmd_train(args) -> int:
    ds = _dataset(args.data)
    if args.resume:
        try:
            payload = read_checkpoint(args.resume)
        except CheckpointError as exc:
            log.error("refusing to resume: %s", exc)
            print(f"error: refusing to resume: {exc}", file=sys.stderr)
            return 2
        if args.config:
            cfg = _config(args.config)
            if dataclasses.asdict(cfg) != payload["config"]:
                raise UsageError("--config differs from the configuration stored in the checkpoint")
        try:
            state = restore_state(payload, ds)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    else:
        if not args.config:
            raise UsageError("--config is required unless --resume is given")
        cfg = _config(args.config)
        try:
            state = TrainState(cfg, ds)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    os.makedirs(args.out_dir, exist_ok=True)
    metrics_path = os.path.join(args.out_dir, "metrics.jsonl")
    stop = state.cfg.total_iters if args.stop_at is None else min(args.stop_at,
                                                                   state.cfg.total_iters)
    started = time.monotonic()
    with open(metrics_path, "a", encoding="utf-8") as metrics:
        while state.t < stop:
            H_L, y_L, H_U = state.next_batch()
            try:
                rep = train_step(state, H_L, y_L, H_U)
            except NumericalError as exc:
                dump = os.path.join(args.out_dir, "nan_dump.json")
                with open(dump, "w", encoding="utf-8") as fh:
                    json.dump(exc.dump, fh)
                log.error("%s; offending batch written to %s", exc, dump)
                print(f"error: {exc} (batch dump: {dump})", file=sys.stderr)
                return 1
            metrics.write(_dump_json(rep.to_record()) + "\n")
            if args.checkpoint_every and state.t % args.checkpoint_every == 0:
                save_checkpoint(state, os.path.join(args.out_dir, f"ckpt_{state.t:07d}.json"))
    log.info("trained to t=%d in %.1fs", state.t, time.monotonic() - started)

    save_checkpoint(state, os.path.join(args.out_dir, "checkpoint.json"))
    if state.t >= state.cfg.total_iters:
        m = state.model
        report = evaluate(m.head, m.proxies, m.scorer, ds, state.cfg.tau)
        rec = _dump_json(report.to_record())
        with open(metrics_path, "a", encoding="utf-8") as metrics:
            metrics.write(rec + "\n")
        with open(os.path.join(args.out_dir, "eval.json"), "w", encoding="utf-8") as fh:
            fh.write(rec + "\n")
        print(rec)
    if args.plot:
        from .plots import plot_training_curves
        with open(metrics_path, encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh]
        plot_training_curves(records, os.path.join(args.out_dir, "training_curves.png"))
    return 0


def cmd_eval(args) -> int:
    try:
        payload = read_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        raise UsageError(str(exc)) from None
    cfg, model = model_from_payload(payload)
    ds = _dataset(args.data)
    if ds.C != cfg.C or ds.d_in != cfg.d_in:
        raise UsageError(f"checkpoint expects C={cfg.C}, d_in={cfg.d_in}; "
                         f"dataset has C={ds.C}, d_in={ds.d_in}")
    report = evaluate(model.head, model.proxies, model.scorer, ds, cfg.tau)
    print(_dump_json(report.to_record()))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck
    cfg = _config(args.config)
    started = time.monotonic()
    results = run_gradcheck(cfg, trials=args.trials)
    worst = 0.0
    for name, err in results.items():
        status = "ok" if err <= args.tolerance else "FAIL"
        print(f"{name:16s} max_rel_err={err:.3e} {status}")
        worst = max(worst, err)
    print(f"trials={args.trials} tolerance={args.tolerance:g} "
          f"elapsed={time.monotonic() - started:.1f}s")
    return 0 if worst <= args.tolerance else 1


def cmd_sweep(args) -> int:
    from .experiments import VARIANTS, ablation, summarize
    from .plots import plot_ablation
    cfg = _config(args.config)
    seeds = list(range(cfg.seed, cfg.seed + args.seeds))
    fractions = args.fractions or [cfg.labeled_fraction]
    variants = args.variants or list(VARIANTS)
    os.makedirs(args.out_dir, exist_ok=True)
    rows = []
    with open(os.path.join(args.out_dir, "runs.jsonl"), "w", encoding="utf-8") as fh:
        def emit(row):
            fh.write(_dump_json(row) + "\n")
            fh.flush()
        for frac in fractions:
            try:
                rows += ablation(cfg, seeds, variants, fraction=frac, log=emit)
            except ValueError as exc:
                raise UsageError(str(exc)) from None
    summary = summarize(rows)
    with open(os.path.join(args.out_dir, "summary.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]))
        w.writeheader()
        w.writerows(summary)
    plot_ablation(summary, os.path.join(args.out_dir, "ablation.png"))
    for row in summary:
        print(f"{row['labeled_fraction']:.2f} {row['variant']:13s} "
              f"{row['mean_macro_accuracy']:.4f} +- {row['std_macro_accuracy']:.4f}")
    return 0


def cmd_report(args) -> int:
    from .plots import plot_training_curves
    try:
        with open(args.metrics, encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read metrics: {exc}") from None
    plot_training_curves(records, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualmetric", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("datagen", help="write a synthetic dataset")
    d.add_argument("--config", required=True)
    d.add_argument("--out", required=True, help="output path, or - for stdout")
    d.set_defaults(func=cmd_datagen)

    t = sub.add_parser("train", help="train and evaluate")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--stop-at", type=int, help="stop after this iteration (checkpoint is kept)")
    t.add_argument("--plot", action="store_true", help="also render training_curves.png")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    g.add_argument("--config", required=True)
    g.add_argument("--trials", type=int, default=50)
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("sweep", help="seeded ablation / labeled-fraction sweep with figures")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--fractions", type=float, nargs="*")
    s.add_argument("--variants", nargs="*")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="plot loss curves from a metrics stream")
    r.add_argument("--metrics", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal failure")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
