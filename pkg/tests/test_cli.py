import json

import numpy as np
import pytest

import dualmetric.projection as projection
from dualmetric.cli import main
from dualmetric.synthgen import import_dataset

SMALL = """\
seed = 3
d_in = 8
d_hidden = 6
d_out = 4
n_labeled = 40
n_unlabeled = 40
n_test = 40
labeled_fraction = 0.5
n_distractors = 4
total_iters = 40
lr_decay_every = 25
ramp_length = 15
bank_capacity = 32
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(SMALL)
    return p


@pytest.fixture
def data_path(tmp_path, cfg_path):
    p = tmp_path / "data.csv"
    assert main(["datagen", "--config", str(cfg_path), "--out", str(p)]) == 0
    return p


def test_datagen_is_reproducible(tmp_path, cfg_path, data_path, capsys):
    other = tmp_path / "again.csv"
    main(["datagen", "--config", str(cfg_path), "--out", str(other)])
    assert other.read_bytes() == data_path.read_bytes()
    capsys.readouterr()
    assert main(["datagen", "--config", str(cfg_path), "--out", "-"]) == 0
    assert capsys.readouterr().out == data_path.read_text()
    ds = import_dataset(data_path)
    assert (ds.C, ds.d_in) == (4, 8)


def test_missing_seed_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("tau = 0.5\n")
    assert main(["datagen", "--config", str(p), "--out", str(tmp_path / "x")]) == 2
    assert "seed" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("seed = 1\nlearning_rate = 3\n")
    assert main(["datagen", "--config", str(p), "--out", str(tmp_path / "x")]) == 2
    assert "learning_rate" in capsys.readouterr().err


def _lines(path):
    return path.read_text().splitlines()


def test_train_resume_matches_straight_run(tmp_path, cfg_path, data_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", str(cfg_path), "--data", str(data_path),
                 "--out-dir", str(a)]) == 0
    out = capsys.readouterr().out.strip()
    assert json.loads(out)["record"] == "eval"
    assert main(["train", "--config", str(cfg_path), "--data", str(data_path),
                 "--out-dir", str(b), "--stop-at", "17"]) == 0
    assert not (b / "eval.json").exists()
    assert main(["train", "--resume", str(b / "checkpoint.json"), "--data", str(data_path),
                 "--out-dir", str(b)]) == 0
    assert (a / "eval.json").read_bytes() == (b / "eval.json").read_bytes()
    assert _lines(a / "metrics.jsonl") == _lines(b / "metrics.jsonl")
    assert (a / "checkpoint.json").read_bytes() == (b / "checkpoint.json").read_bytes()


def test_metrics_schema(tmp_path, cfg_path, data_path):
    out = tmp_path / "run"
    main(["train", "--config", str(cfg_path), "--data", str(data_path), "--out-dir", str(out),
          "--checkpoint-every", "20"])
    recs = [json.loads(x) for x in _lines(out / "metrics.jsonl")]
    it = [r for r in recs if r["record"] == "iteration"]
    assert [r["t"] for r in it] == list(range(40))
    for key in ("lam", "lr_main", "lr_proxy", "L_s", "L_pml", "L_pml_u", "L_pmb", "L_pmb_u",
                "total", "n_accepted", "bank_size", "audit_proxy_grad_violations",
                "audit_below_tau_consumed"):
        assert key in it[0]
    assert recs[-1]["record"] == "eval"
    assert (out / "ckpt_0000020.json").exists() and (out / "ckpt_0000040.json").exists()


def test_corrupt_checkpoint_refused(tmp_path, cfg_path, data_path, capsys):
    out = tmp_path / "run"
    main(["train", "--config", str(cfg_path), "--data", str(data_path), "--out-dir", str(out),
          "--stop-at", "5"])
    ck = out / "checkpoint.json"
    ck.write_text(ck.read_text().replace("[[", "[[1.0e3,", 1))
    n_before = len(_lines(out / "metrics.jsonl"))
    assert main(["train", "--resume", str(ck), "--data", str(data_path),
                 "--out-dir", str(out)]) == 2
    assert "refusing to resume" in capsys.readouterr().err
    assert len(_lines(out / "metrics.jsonl")) == n_before


def test_eval_command_and_mismatch(tmp_path, cfg_path, data_path, capsys):
    out = tmp_path / "run"
    main(["train", "--config", str(cfg_path), "--data", str(data_path), "--out-dir", str(out)])
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(out / "checkpoint.json"),
                 "--data", str(data_path)]) == 0
    assert capsys.readouterr().out == (out / "eval.json").read_text()

    other_cfg = tmp_path / "o.cfg"
    other_cfg.write_text(SMALL.replace("d_in = 8", "d_in = 12"))
    other = tmp_path / "o.csv"
    main(["datagen", "--config", str(other_cfg), "--out", str(other)])
    assert main(["eval", "--checkpoint", str(out / "checkpoint.json"),
                 "--data", str(other)]) == 2
    assert "d_in" in capsys.readouterr().err


def test_train_rejects_mismatched_data(tmp_path, cfg_path, capsys):
    other_cfg = tmp_path / "o.cfg"
    other_cfg.write_text(SMALL.replace("d_in = 8", "d_in = 12"))
    other = tmp_path / "o.csv"
    main(["datagen", "--config", str(other_cfg), "--out", str(other)])
    assert main(["train", "--config", str(cfg_path), "--data", str(other),
                 "--out-dir", str(tmp_path / "r")]) == 2


def test_malformed_dataset_exit_2(tmp_path, cfg_path, data_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text(data_path.read_text()[:200])
    assert main(["train", "--config", str(cfg_path), "--data", str(bad),
                 "--out-dir", str(tmp_path / "r")]) == 2
    assert "line" in capsys.readouterr().err


def test_nan_dump(tmp_path, cfg_path, data_path, monkeypatch, capsys):
    import dualmetric.trainer as trainer
    real = trainer.compute_losses

    def poisoned(*a, **k):
        losses, aux = real(*a, **k)
        losses["total"] = float("nan")
        return losses, aux
    monkeypatch.setattr(trainer, "compute_losses", poisoned)
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_path), "--data", str(data_path),
                 "--out-dir", str(out)]) == 1
    dump = json.loads((out / "nan_dump.json").read_text())
    assert dump["t"] == 0 and len(dump["H_L"]) == 4


def test_gradcheck_passes(cfg_path, capsys):
    assert main(["gradcheck", "--config", str(cfg_path), "--trials", "3"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "total" in out


def test_gradcheck_catches_broken_gradient(cfg_path, monkeypatch, capsys):
    real = projection.backward

    def broken(head, tape, g):
        out = real(head, tape, g)
        head.grad_W1 *= 1.01
        return out
    monkeypatch.setattr(projection, "backward", broken)
    assert main(["gradcheck", "--config", str(cfg_path), "--trials", "2"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_sweep_and_report(tmp_path, cfg_path, data_path, capsys):
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text(SMALL.replace("total_iters = 40", "total_iters = 10"))
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(cfg), "--out-dir", str(out), "--seeds", "2",
                 "--fractions", "0.5", "1.0", "--variants", "supervised", "full"]) == 0
    rows = [json.loads(x) for x in _lines(out / "runs.jsonl")]
    assert len(rows) == 8
    csv_lines = _lines(out / "summary.csv")
    assert csv_lines[0].startswith("labeled_fraction,variant")
    assert len(csv_lines) == 5
    assert (out / "ablation.png").read_bytes()[:4] == b"\x89PNG"

    run = tmp_path / "run"
    main(["train", "--config", str(cfg_path), "--data", str(data_path), "--out-dir", str(run),
          "--plot"])
    assert (run / "training_curves.png").stat().st_size > 0
    fig = tmp_path / "curves.png"
    assert main(["report", "--metrics", str(run / "metrics.jsonl"), "--out", str(fig)]) == 0
    assert fig.read_bytes()[:4] == b"\x89PNG"
