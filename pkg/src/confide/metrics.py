"""Error rate, NLL and binned calibration errors.

Binning is equal-mass: rows are stably sorted by score and cut into ``bins``
contiguous groups whose sizes differ by at most one, the larger groups being
the lowest-scoring ones. Bin sums use ``math.fsum`` so results do not depend
on summation order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .domain import EPS
from .errors import LengthMismatch, TooFewRows

DEFAULT_BINS = 15


@dataclass
class MetricsReport:
    n: int
    error_rate: float
    nll: float
    ece: float
    cw_ece: float
    bins: int
    mce_l1: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _check_lengths(a, b) -> None:
    if len(a) != len(b):
        raise LengthMismatch(f"length {len(a)} != {len(b)}")
    if len(a) == 0:
        raise LengthMismatch("need at least one row")


def error_rate(preds, truth) -> float:
    preds, truth = np.asarray(preds), np.asarray(truth)
    _check_lengths(preds, truth)
    return float(np.mean(preds != truth))


def nll(posteriors, truth) -> float:
    posteriors, truth = np.asarray(posteriors, dtype=float), np.asarray(truth)
    _check_lengths(posteriors, truth)
    picked = posteriors[np.arange(truth.size), truth]
    return math.fsum(-np.log(np.maximum(picked, EPS))) / truth.size


def bin_sizes(n: int, bins: int) -> list[int]:
    base, extra = divmod(n, bins)
    return [base + 1 if b < extra else base for b in range(bins)]


def equal_mass_bins(scores: np.ndarray, bins: int) -> list[np.ndarray]:
    """Index groups of the stably sorted scores, lowest scores first."""
    if len(scores) < bins:
        raise TooFewRows(f"{len(scores)} rows cannot fill {bins} bins")
    order = np.argsort(scores, kind="stable")
    edges = np.cumsum([0] + bin_sizes(len(scores), bins))
    return [order[edges[b] : edges[b + 1]] for b in range(bins)]


def _binned_gap(scores: np.ndarray, hits: np.ndarray, bins: int) -> float:
    n = len(scores)
    terms = []
    for idx in equal_mass_bins(scores, bins):
        nb = len(idx)
        acc = math.fsum(hits[idx]) / nb
        conf = math.fsum(scores[idx]) / nb
        terms.append((nb / n) * abs(acc - conf))
    return math.fsum(terms)


def ece(posteriors, truth, bins: int = DEFAULT_BINS) -> float:
    posteriors, truth = np.asarray(posteriors, dtype=float), np.asarray(truth)
    _check_lengths(posteriors, truth)
    conf = posteriors.max(axis=1)
    hits = (posteriors.argmax(axis=1) == truth).astype(float)
    return _binned_gap(conf, hits, bins)


def cw_ece(posteriors, truth, bins: int = DEFAULT_BINS) -> float:
    """Class-wise ECE: mean over classes of the binned gap for ``posterior[:, j]``."""
    posteriors, truth = np.asarray(posteriors, dtype=float), np.asarray(truth)
    _check_lengths(posteriors, truth)
    k = posteriors.shape[1]
    per_class = [_binned_gap(posteriors[:, j], (truth == j).astype(float), bins) for j in range(k)]
    return math.fsum(per_class) / k


def mce_l1(posteriors, truth, bins: int = DEFAULT_BINS, oracle_posteriors=None) -> float:
    """l1 marginal calibration error ``sum_j p(y=j) E|p(y=j|m) - q_j| given y=j``.

    With ``oracle_posteriors`` (the true ``p(y | m)``, known for synthetic
    data) the expectation is an exact empirical average. Without it,
    ``p(y=j | m)`` is estimated by equal-mass binning of ``q_j``; that path is
    an estimate and carries binning bias.
    """
    posteriors, truth = np.asarray(posteriors, dtype=float), np.asarray(truth)
    _check_lengths(posteriors, truth)
    n = truth.size
    rows = np.arange(n)
    if oracle_posteriors is not None:
        oracle = np.asarray(oracle_posteriors, dtype=float)
        _check_lengths(oracle, truth)
        return math.fsum(np.abs(oracle[rows, truth] - posteriors[rows, truth])) / n
    estimate = np.empty(n)
    for j in range(posteriors.shape[1]):
        scores = posteriors[:, j]
        hits = (truth == j).astype(float)
        freq = np.empty(n)
        for idx in equal_mass_bins(scores, bins):
            freq[idx] = math.fsum(hits[idx]) / len(idx)
        own = truth == j
        estimate[own] = freq[own]
    return math.fsum(np.abs(estimate - posteriors[rows, truth])) / n


def evaluate_posteriors(posteriors, truth, bins: int = DEFAULT_BINS, oracle_posteriors=None) -> MetricsReport:
    posteriors, truth = np.asarray(posteriors, dtype=float), np.asarray(truth)
    preds = posteriors.argmax(axis=1)
    return MetricsReport(
        n=int(truth.size),
        error_rate=error_rate(preds, truth),
        nll=nll(posteriors, truth),
        ece=ece(posteriors, truth, bins),
        cw_ece=cw_ece(posteriors, truth, bins),
        bins=bins,
        mce_l1=mce_l1(posteriors, truth, bins, oracle_posteriors) if len(truth) >= bins or oracle_posteriors is not None else None,
    )


def reliability_table(posteriors, truth, bins: int = DEFAULT_BINS) -> list[dict]:
    """Per-bin ``(count, confidence, accuracy)`` rows for external plotting."""
    posteriors, truth = np.asarray(posteriors, dtype=float), np.asarray(truth)
    conf = posteriors.max(axis=1)
    hits = (posteriors.argmax(axis=1) == truth).astype(float)
    out = []
    for b, idx in enumerate(equal_mass_bins(conf, bins)):
        out.append(
            {
                "bin": b,
                "count": int(len(idx)),
                "confidence": math.fsum(conf[idx]) / len(idx),
                "accuracy": math.fsum(hits[idx]) / len(idx),
            }
        )
    return out
