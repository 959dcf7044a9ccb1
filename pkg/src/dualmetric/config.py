"""Flat ``key = value`` run-config files.

Blank lines and ``#`` comments are ignored.  Every ``TrainConfig`` field is
a valid key; unknown keys are rejected, missing keys take their defaults
except ``seed``, which must be given.
"""

from __future__ import annotations

import dataclasses

from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _fields():
    return {f.name: f for f in dataclasses.fields(TrainConfig)}


def _coerce(name: str, typ, raw: str):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r} (expected {typ})") from None


def parse_config(text: str) -> TrainConfig:
    fields = _fields()
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, fields[key].type, raw)
    for key in TrainConfig.REQUIRED:
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    cfg = TrainConfig(**values)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def serialize_config(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {repr(v) if isinstance(v, float) else v}")
    return "\n".join(lines) + "\n"


def load_config(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
