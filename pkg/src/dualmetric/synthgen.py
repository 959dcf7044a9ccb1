"""Synthetic proposal features: Gaussian class clusters plus unlabeled distractors.

File format (plain text)::

    C d_in
    split,class,feat_0,...,feat_{d-1}
    ...

``split`` is one of ``labeled``, ``unlabeled``, ``test``; distractors carry
class -1.  Floats are written with ``repr`` so a round trip is exact.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass

import numpy as np

from .numerics import Rng

SPLITS = ("labeled", "unlabeled", "test")

# substreams of the dataset seed
_STREAM_MEANS, _STREAM_LABELED, _STREAM_UNLABELED, _STREAM_TEST, _STREAM_DISTRACT = range(5)


@dataclass(frozen=True)
class DatasetSpec:
    C: int = 4
    d_in: int = 32
    r_sep: float = 3.0
    sigma_cluster: float = 1.2
    n_labeled: int = 400  # full labeled pool; ``labeled_fraction`` of it is kept
    n_unlabeled: int = 400
    n_test: int = 400
    labeled_fraction: float = 0.25
    n_distractors: int = 40
    distractor_spread: float = 1.2
    seed: int = 0

    def validate(self) -> None:
        if self.C < 2:
            raise ValueError("C must be >= 2")
        if self.d_in < 1:
            raise ValueError("d_in must be >= 1")
        if min(self.n_labeled, self.n_unlabeled, self.n_test, self.n_distractors) < 0:
            raise ValueError("sample counts must be non-negative")
        for name in ("n_labeled", "n_unlabeled", "n_test"):
            if getattr(self, name) % self.C:
                raise ValueError(f"{name} must be a multiple of C for class balance")
        if not self.sigma_cluster > 0:
            raise ValueError("sigma_cluster must be positive")
        if not 0 < self.labeled_fraction <= 1:
            raise ValueError("labeled_fraction must lie in (0, 1]")
        per_class = self.n_labeled // self.C
        kept = per_class * self.labeled_fraction
        if abs(kept - round(kept)) > 1e-9:
            raise ValueError(
                f"labeled_fraction {self.labeled_fraction} of {per_class} per class is not an integer")
        if self.distractor_spread < 0:
            raise ValueError("distractor_spread must be non-negative")


class Dataset:
    """Three splits of proposal features.

    Labels of the unlabeled split are hidden: training code only sees
    ``unlabeled_features()``; ``hidden_unlabeled_labels()`` exists for
    diagnostics.
    """

    def __init__(self, C: int, d_in: int, labeled_X, labeled_y, unlabeled_X, unlabeled_y,
                 test_X, test_y):
        self.C = int(C)
        self.d_in = int(d_in)
        self.labeled_X = np.asarray(labeled_X, dtype=np.float64).reshape(-1, d_in)
        self.labeled_y = np.asarray(labeled_y, dtype=np.int64)
        self._unlabeled_X = np.asarray(unlabeled_X, dtype=np.float64).reshape(-1, d_in)
        self._unlabeled_y = np.asarray(unlabeled_y, dtype=np.int64)
        self.test_X = np.asarray(test_X, dtype=np.float64).reshape(-1, d_in)
        self.test_y = np.asarray(test_y, dtype=np.int64)

    def unlabeled_features(self) -> np.ndarray:
        return self._unlabeled_X

    def hidden_unlabeled_labels(self) -> np.ndarray:
        return self._unlabeled_y

    def iter_unlabeled(self):
        """Yield unlabeled feature vectors; no label is exposed."""
        yield from self._unlabeled_X

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.C == other.C and self.d_in == other.d_in and all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self._arrays(), other._arrays())))

    def _arrays(self):
        return (self.labeled_X, self.labeled_y, self._unlabeled_X, self._unlabeled_y,
                self.test_X, self.test_y)

    def __len__(self) -> int:
        return len(self.labeled_y) + len(self._unlabeled_y) + len(self.test_y)


def cluster_means(spec: DatasetSpec) -> np.ndarray:
    rng = Rng(spec.seed, _STREAM_MEANS)
    dirs = rng.normal(size=(spec.C, spec.d_in))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return spec.r_sep * dirs


def _draw(rng: Rng, means: np.ndarray, per_class: int, sigma: float):
    C, d = means.shape
    noise = rng.normal(size=(C, per_class, d))
    X = (means[:, None, :] + sigma * noise).reshape(C * per_class, d)
    y = np.repeat(np.arange(C), per_class)
    return X, y


def generate(spec: DatasetSpec) -> Dataset:
    """Draw all splits; each split has its own substream so counts do not interact."""
    spec.validate()
    means = cluster_means(spec)
    C, d = spec.C, spec.d_in

    pool_X, pool_y = _draw(Rng(spec.seed, _STREAM_LABELED), means, spec.n_labeled // C,
                           spec.sigma_cluster)
    keep = int(round(spec.n_labeled // C * spec.labeled_fraction))
    per_class = spec.n_labeled // C
    sel = np.concatenate([np.arange(c * per_class, c * per_class + keep) for c in range(C)])
    lab_X, lab_y = pool_X[sel], pool_y[sel]

    unl_X, unl_y = _draw(Rng(spec.seed, _STREAM_UNLABELED), means, spec.n_unlabeled // C,
                         spec.sigma_cluster)
    if spec.n_distractors:
        rng = Rng(spec.seed, _STREAM_DISTRACT)
        dis = spec.distractor_spread * rng.normal(size=(spec.n_distractors, d))
        unl_X = np.concatenate([unl_X, dis])
        unl_y = np.concatenate([unl_y, -np.ones(spec.n_distractors, dtype=np.int64)])

    test_X, test_y = _draw(Rng(spec.seed, _STREAM_TEST), means, spec.n_test // C,
                           spec.sigma_cluster)
    return Dataset(C, d, lab_X, lab_y, unl_X, unl_y, test_X, test_y)


class DatasetParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def dumps(ds: Dataset) -> str:
    out = io.StringIO()
    out.write(f"{ds.C} {ds.d_in}\n")
    for split, X, y in (("labeled", ds.labeled_X, ds.labeled_y),
                        ("unlabeled", ds.unlabeled_features(), ds.hidden_unlabeled_labels()),
                        ("test", ds.test_X, ds.test_y)):
        for row, cls in zip(X.tolist(), y.tolist()):
            out.write(split + "," + str(cls) + "," + ",".join(repr(v) for v in row) + "\n")
    return out.getvalue()


def loads(text: str) -> Dataset:
    """Parse a dataset; raises ``DatasetParseError`` naming the bad line."""
    if not text:
        raise DatasetParseError(1, "empty file, missing header")
    if not text.endswith("\n"):
        n = text.count("\n") + 1
        raise DatasetParseError(n, "file truncated (last line has no newline)")
    lines = text.split("\n")[:-1]
    head = lines[0].split()
    try:
        if len(head) != 2:
            raise ValueError
        C, d_in = int(head[0]), int(head[1])
    except ValueError:
        raise DatasetParseError(1, f"bad header {lines[0]!r}, expected 'C d_in'") from None
    if C < 2 or d_in < 1:
        raise DatasetParseError(1, "header values out of range")
    rows = {s: ([], []) for s in SPLITS}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != d_in + 2:
            raise DatasetParseError(lineno, f"expected {d_in + 2} fields, got {len(parts)}")
        split = parts[0]
        if split not in rows:
            raise DatasetParseError(lineno, f"unknown split {split!r}")
        try:
            cls = int(parts[1])
            feats = [float(v) for v in parts[2:]]
        except ValueError as exc:
            raise DatasetParseError(lineno, str(exc)) from None
        if not all(np.isfinite(feats)):
            raise DatasetParseError(lineno, "non-finite feature value")
        lo = -1 if split == "unlabeled" else 0
        if not lo <= cls < C:
            raise DatasetParseError(lineno, f"class {cls} out of range")
        rows[split][0].append(feats)
        rows[split][1].append(cls)

    def arr(split):
        X, y = rows[split]
        return np.array(X, dtype=np.float64).reshape(-1, d_in), np.array(y, dtype=np.int64)

    return Dataset(C, d_in, *arr("labeled"), *arr("unlabeled"), *arr("test"))


def export_dataset(ds: Dataset, path) -> None:
    """Write atomically (temp file + rename); ``"-"`` writes to stdout."""
    text = dumps(ds)
    if str(path) == "-":
        import sys
        sys.stdout.write(text)
        return
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write(text)
    os.replace(tmp, path)


def import_dataset(path) -> Dataset:
    with open(path, "r", encoding="ascii") as fh:
        return loads(fh.read())
