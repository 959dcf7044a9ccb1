"""Versioned JSON checkpoints with an integrity hash.

Floats are stored through ``json`` (shortest round-trip repr), so restoring
a checkpoint reproduces every parameter bit for bit.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os

import numpy as np

from .projection import ProjectionHead
from .proxy import ProxySet
from .prototype import MemoryBank
from .scorer import Scorer
from .synthgen import Dataset
from .trainer import BatchSampler, Model, TrainConfig, TrainState

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _payload(state: TrainState) -> dict:
    m = state.model
    return {
        "config": dataclasses.asdict(state.cfg),
        "t": state.t,
        "params": {k: v.tolist() for k, v in m.params().items()},
        "velocity": {k: v.tolist() for k, v in state.velocity.items()},
        "bank": state.bank.state_dict(),
        "sampler_L": state.sampler_L.state_dict(),
        "sampler_U": state.sampler_U.state_dict() if state.sampler_U else None,
    }


def _digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def save_checkpoint(state: TrainState, path) -> None:
    payload = _payload(state)
    doc = {"format_version": FORMAT_VERSION, "sha256": _digest(payload), "payload": payload}
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def read_checkpoint(path) -> dict:
    """Load and verify; raises ``CheckpointError`` on any corruption."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format in {path}")
    payload = doc.get("payload")
    if not isinstance(payload, dict) or _digest(payload) != doc.get("sha256"):
        raise CheckpointError(f"checkpoint {path} failed its integrity check")
    return payload


def _arr(x) -> np.ndarray:
    return np.array(x, dtype=np.float64)


def model_from_payload(payload: dict) -> tuple[TrainConfig, Model]:
    cfg = TrainConfig(**payload["config"])
    p = payload["params"]
    model = Model(ProjectionHead(_arr(p["head.W1"]), _arr(p["head.W2"])),
                  Scorer(_arr(p["scorer.W"]), _arr(p["scorer.b"])),
                  ProxySet(_arr(p["proxies"])))
    return cfg, model


def restore_state(payload: dict, dataset: Dataset) -> TrainState:
    cfg, model = model_from_payload(payload)
    state = TrainState(cfg, dataset)
    state.model = model
    state.velocity = {k: _arr(v).reshape(model.params()[k].shape)
                      for k, v in payload["velocity"].items()}
    state.bank = MemoryBank.from_state(payload["bank"])
    state.t = int(payload["t"])
    state.sampler_L = BatchSampler.from_state(payload["sampler_L"])
    if payload["sampler_U"] is not None:
        state.sampler_U = BatchSampler.from_state(payload["sampler_U"])
    return state


__all__ = ["CheckpointError", "FORMAT_VERSION", "read_checkpoint", "restore_state",
           "save_checkpoint", "model_from_payload"]
