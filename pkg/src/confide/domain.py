"""Core value types, validation and dataset ingestion.

A combination dataset holds, per instance, the categorical labeler's hard
label ``h``, the probabilistic labeler's vector ``m`` and optionally the true
label ``y``. Labels are 0-based everywhere, including the file formats.

CSV layout::

    human_label,true_label,p_0,...,p_{K-1}
    0,1,0.2,0.8
    1,,0.6,0.4          # empty true_label -> unsupervised row

JSONL layout: one object per line, ``{"h": 0, "y": 1, "m": [0.2, 0.8]}`` with
``"y": null`` for unsupervised rows.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    BadSum,
    EmptySplit,
    InconsistentK,
    NegativeEntry,
    ParseError,
    WrongLength,
)

EPS = 1e-12
SUM_TOLERANCE = 1e-6
MISSING = -1


@dataclass(frozen=True)
class LabelSpace:
    k: int

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise WrongLength(f"label space needs k >= 2, got {self.k}")


def validate_prob_vector(raw, k: int | None = None, tolerance: float = 1e-9) -> np.ndarray:
    """Check a probability vector and return a floored, renormalized copy.

    Entries are clamped to ``[EPS, 1]`` and the vector renormalized so that
    later logarithms stay finite.
    """
    x = np.asarray(raw, dtype=float)
    if x.ndim != 1 or x.size < 2 or (k is not None and x.size != k):
        raise WrongLength(f"expected a vector of length {k if k is not None else '>= 2'}, got shape {x.shape}")
    return _validate_rows(x[None, :], tolerance)[0]


def validate_prob_matrix(raw, k: int | None = None, tolerance: float = 1e-9) -> np.ndarray:
    """Row-wise :func:`validate_prob_vector` for an ``(n, K)`` array."""
    x = np.asarray(raw, dtype=float)
    if x.ndim != 2 or x.shape[1] < 2 or (k is not None and x.shape[1] != k):
        raise WrongLength(f"expected an (n, {k if k is not None else 'K'}) array, got shape {x.shape}")
    return _validate_rows(x, tolerance)


def _validate_rows(x: np.ndarray, tolerance: float) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise BadSum("probability vector has non-finite entries")
    if np.any(x < -tolerance):
        raise NegativeEntry(f"entry below -{tolerance}: {x.min()!r}")
    sums = x.sum(axis=1)
    bad = np.abs(sums - 1.0) > SUM_TOLERANCE
    if np.any(bad):
        raise BadSum(f"probabilities sum to {sums[bad][0]!r}, not 1")
    out = np.clip(x, EPS, 1.0)
    out /= out.sum(axis=1, keepdims=True)
    # Renormalizing can push a floored entry a hair below EPS.
    return np.maximum(out, EPS)


@dataclass(frozen=True)
class Example:
    human_label: int
    model_probs: np.ndarray
    true_label: int | None = None


class CombinationDataset:
    """Immutable column store of ``(h, m, y)`` rows.

    ``truth`` uses ``-1`` for rows without a ground-truth label.
    """

    def __init__(self, human, probs, truth=None, *, validate: bool = True):
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 2:
            raise WrongLength(f"probs must be 2-D, got shape {probs.shape}")
        n, k = probs.shape
        self.space = LabelSpace(k)
        human = np.asarray(human, dtype=np.int64).reshape(-1)
        truth = np.full(n, MISSING, dtype=np.int64) if truth is None else np.asarray(truth, dtype=np.int64).reshape(-1)
        if human.shape[0] != n or truth.shape[0] != n:
            raise WrongLength("human, probs and truth must have the same number of rows")
        if np.any((human < 0) | (human >= k)):
            raise ParseError(f"human label out of range 0..{k - 1}")
        if np.any((truth < MISSING) | (truth >= k)):
            raise ParseError(f"true label out of range 0..{k - 1}")
        if validate:
            probs = validate_prob_matrix(probs, k)
        for arr in (human, probs, truth):
            arr.setflags(write=False)
        self.human = human
        self.probs = probs
        self.truth = truth

    @property
    def k(self) -> int:
        return self.space.k

    @property
    def n(self) -> int:
        return self.human.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def supervised_mask(self) -> np.ndarray:
        return self.truth != MISSING

    @property
    def supervised_count(self) -> int:
        return int(self.supervised_mask.sum())

    @property
    def rows(self) -> list[Example]:
        return list(iter(self))

    def __iter__(self) -> Iterator[Example]:
        for h, m, y in zip(self.human, self.probs, self.truth):
            yield Example(int(h), m, None if y == MISSING else int(y))

    def subset(self, index) -> "CombinationDataset":
        index = np.asarray(index)
        return CombinationDataset(self.human[index], self.probs[index], self.truth[index], validate=False)

    def supervised(self) -> "CombinationDataset":
        return self.subset(np.flatnonzero(self.supervised_mask))

    def without_truth(self) -> "CombinationDataset":
        return CombinationDataset(self.human, self.probs, None, validate=False)

    @classmethod
    def from_rows(cls, rows: Iterable[Example], k: int | None = None) -> "CombinationDataset":
        rows = list(rows)
        if not rows and k is None:
            raise ParseError("cannot infer K from an empty row list")
        k = k if k is not None else len(rows[0].model_probs)
        probs = np.array([r.model_probs for r in rows], dtype=float).reshape(len(rows), k)
        human = [r.human_label for r in rows]
        truth = [MISSING if r.true_label is None else r.true_label for r in rows]
        return cls(human, probs, truth)

    def __repr__(self) -> str:
        return f"CombinationDataset(n={self.n}, k={self.k}, supervised={self.supervised_count})"


def _parse_label(text: str, k: int, line: int, what: str, allow_missing: bool) -> int:
    text = text.strip()
    if text == "" or text.lower() in ("null", "none"):
        if allow_missing:
            return MISSING
        raise ParseError(f"{what} is required", line)
    try:
        value = int(text)
    except ValueError:
        raise ParseError(f"{what} {text!r} is not an integer", line) from None
    if not 0 <= value < k:
        raise ParseError(f"{what} {value} out of range 0..{k - 1}", line)
    return value


def _validated_row(values: Sequence, k: int, line: int) -> np.ndarray:
    try:
        return validate_prob_vector(values, k)
    except (BadSum, NegativeEntry, WrongLength) as exc:
        raise ParseError(str(exc), line) from None


def _load_csv(path: Path) -> CombinationDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        header = [c.strip() for c in header]
        if header[:2] != ["human_label", "true_label"]:
            raise ParseError("header must start with human_label,true_label", 1)
        k = len(header) - 2
        if header[2:] != [f"p_{i}" for i in range(k)] or k < 2:
            raise ParseError("probability columns must be p_0..p_{K-1} with K >= 2", 1)
        human, truth, probs = [], [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != k + 2:
                raise InconsistentK(f"expected {k} probabilities, got {len(row) - 2}", line)
            human.append(_parse_label(row[0], k, line, "human_label", False))
            truth.append(_parse_label(row[1], k, line, "true_label", True))
            try:
                values = [float(c) for c in row[2:]]
            except ValueError:
                raise ParseError("non-numeric probability", line) from None
            probs.append(_validated_row(values, k, line))
    return CombinationDataset(human, np.array(probs).reshape(len(probs), k), truth, validate=False)


def _load_jsonl(path: Path) -> CombinationDataset:
    human, truth, probs = [], [], []
    k = None
    with open(path, encoding="utf-8") as fh:
        for line, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
                h, y, m = obj["h"], obj.get("y"), obj["m"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"bad JSONL record ({exc})", line) from None
            if not isinstance(m, list):
                raise ParseError("'m' must be an array", line)
            if k is None:
                k = len(m)
                if k < 2:
                    raise ParseError("need at least 2 probabilities", line)
            elif len(m) != k:
                raise InconsistentK(f"expected {k} probabilities, got {len(m)}", line)
            if isinstance(h, bool) or not isinstance(h, int) or not 0 <= h < k:
                raise ParseError(f"h={h!r} is not a label in 0..{k - 1}", line)
            if y is not None and (isinstance(y, bool) or not isinstance(y, int) or not 0 <= y < k):
                raise ParseError(f"y={y!r} is not a label in 0..{k - 1}", line)
            human.append(h)
            truth.append(MISSING if y is None else y)
            probs.append(_validated_row(m, k, line))
    if k is None:
        raise ParseError("empty file", 1)
    return CombinationDataset(human, np.array(probs), truth, validate=False)


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        fmt = fmt.lower()
    elif path.suffix.lower() in (".jsonl", ".ndjson"):
        fmt = "jsonl"
    else:
        fmt = "csv"
    if fmt not in ("csv", "jsonl"):
        raise ParseError(f"unknown format {fmt!r}")
    return fmt


def load_dataset(path, format: str | None = None) -> CombinationDataset:
    """Read a dataset from CSV or JSONL (format inferred from the suffix)."""
    path = Path(path)
    if _infer_format(path, format) == "jsonl":
        return _load_jsonl(path)
    return _load_csv(path)


def save_dataset(data: CombinationDataset, path, format: str | None = None) -> None:
    path = Path(path)
    if _infer_format(path, format) == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for h, m, y in zip(data.human, data.probs, data.truth):
                rec = {"h": int(h), "y": None if y == MISSING else int(y), "m": [float(v) for v in m]}
                fh.write(json.dumps(rec) + "\n")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["human_label", "true_label"] + [f"p_{i}" for i in range(data.k)])
        for h, m, y in zip(data.human, data.probs, data.truth):
            writer.writerow([int(h), "" if y == MISSING else int(y)] + [repr(float(v)) for v in m])


def split_indices(n: int, eval_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Row indices ``(train, eval)`` of a seeded shuffle split, each sorted.

    The evaluation side gets ``round(eval_fraction * n)`` rows (half rounds up).
    """
    if not 0.0 < eval_fraction < 1.0:
        raise EmptySplit(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    n_eval = int(math.floor(eval_fraction * n + 0.5))
    if n_eval == 0 or n_eval == n:
        raise EmptySplit(f"split of {n} rows at {eval_fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_eval:]), np.sort(perm[:n_eval])


def split_dataset(data: CombinationDataset, eval_fraction: float, seed: int):
    """Seeded shuffle split into ``(train, eval)``; each side keeps the original row order."""
    train_idx, eval_idx = split_indices(data.n, eval_fraction, seed)
    return data.subset(train_idx), data.subset(eval_idx)
