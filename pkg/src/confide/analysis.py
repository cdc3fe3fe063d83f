"""Accuracy bounds from confidence ratios, the estimation-error bound, and
conditional-dependence diagnostics.

A predictor's confidence ratio is its odds for the true class, ``c / (1 - c)``.
The combination is correct at least whenever the model's odds beat the
inverse of the human's odds; a sharper event compares each predictor's true
class score against its best competitor.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .calibration import temper
from .combiner import combine_pl
from .confusion import ConfusionMatrix
from .domain import EPS, CombinationDataset
from .errors import NoSupervisedRows, OracleRequired, LengthMismatch
from .metrics import mce_l1

ODDS_CAP = 1e15


def _odds(c: float, complement: float, k: int) -> float:
    # A complement made only of floored entries stands for an exact zero.
    if complement <= k * EPS:
        return ODDS_CAP
    return min(c / complement, ODDS_CAP)


def confidence_ratio_model(m, t, y: int) -> float:
    q = temper(m, t)
    return _odds(float(q[y]), float(np.delete(q, y).sum()), q.size)


def confidence_ratio_human(phi: ConfusionMatrix, h: int, y: int) -> float:
    col = phi.entries[:, y]
    return _odds(float(col[h]), float(np.delete(col, h).sum()), phi.k)


@dataclass
class BoundReport:
    empirical_accuracy: float
    bound_weak: float
    bound_strong: float
    n: int
    slack: float
    binary_gap: float | None = None

    @property
    def holds(self) -> bool:
        return self.empirical_accuracy >= self.bound_weak - self.slack

    def to_dict(self) -> dict:
        return {**asdict(self), "holds": self.holds}


def _supervised_rows(data: CombinationDataset) -> CombinationDataset:
    if data.supervised_count == 0:
        raise NoSupervisedRows("bound checks need labeled rows")
    return data.supervised() if data.supervised_count < data.n else data


def theorem1_report(data: CombinationDataset, phi: ConfusionMatrix, t) -> BoundReport:
    """Empirical accuracy of the combination against its confidence-ratio lower bounds.

    Unlabeled rows are skipped. ``bound_weak`` is the frequency of
    ``r_m > 1 / r_h`` (strict); ``bound_strong`` replaces both complements by
    the largest competing entry.
    """
    data = _supervised_rows(data)
    n, k = data.n, data.k
    rows = np.arange(n)
    h, y = data.human, data.truth
    q = temper(data.probs, t)
    post = combine_pl(h, data.probs, phi, t)
    accuracy = float(np.mean(post.argmax(axis=1) == y))

    phi_rows = phi.entries[h]
    m_y = q[rows, y]
    phi_hy = phi_rows[rows, y]
    m_rest = q.sum(axis=1) - m_y
    phi_rest = phi.entries[:, y].sum(axis=0) - phi_hy
    weak = phi_hy * m_y > phi_rest * m_rest

    others = np.ones((n, k), dtype=bool)
    others[rows, y] = False
    m_max_other = np.where(others, q, -np.inf).max(axis=1)
    phi_max_other = np.where(others, phi_rows, -np.inf).max(axis=1)
    strong = phi_hy * m_y > phi_max_other * m_max_other

    bound_weak = float(np.mean(weak))
    return BoundReport(
        empirical_accuracy=accuracy,
        bound_weak=bound_weak,
        bound_strong=float(np.mean(strong)),
        n=n,
        slack=3.0 * math.sqrt(0.25 / n),
        binary_gap=accuracy - bound_weak if k == 2 else None,
    )


@dataclass
class EstimationErrorReport:
    eta_mean: float
    bound: float
    phi_l1: float
    mce: float

    @property
    def holds(self) -> bool:
        return self.eta_mean <= self.bound + 1e-9

    def to_dict(self) -> dict:
        return {**asdict(self), "holds": self.holds}


def theorem2_report(
    data: CombinationDataset,
    oracle_posteriors,
    phi_true: ConfusionMatrix,
    phi_hat: ConfusionMatrix,
    t,
) -> EstimationErrorReport:
    """Mean unnormalized posterior error against ``||phi - phi_hat||_1 + MCE``.

    Needs the true ``p(y | m)`` per row, which only synthetic data provides.
    """
    if oracle_posteriors is None:
        raise OracleRequired("the estimation-error bound needs oracle posteriors")
    oracle = np.asarray(oracle_posteriors, dtype=float)
    if oracle.shape != data.probs.shape:
        raise LengthMismatch(f"oracle shape {oracle.shape} != data shape {data.probs.shape}")
    sup = data.supervised_mask
    if not sup.any():
        raise NoSupervisedRows("the estimation-error bound needs labeled rows")
    h, y = data.human[sup], data.truth[sup]
    oracle = oracle[sup]
    rows = np.arange(y.size)
    q = temper(data.probs[sup], t)
    eta = np.abs(phi_true.entries[h, y] * oracle[rows, y] - q[rows, y] * phi_hat.entries[h, y])
    phi_l1 = float(np.abs(phi_true.entries - phi_hat.entries).sum())
    mce = mce_l1(q, y, oracle_posteriors=oracle)
    eta_mean = math.fsum(eta) / y.size
    return EstimationErrorReport(eta_mean=eta_mean, bound=phi_l1 + mce, phi_l1=phi_l1, mce=mce)


def lemma1_check(a1: float, b1: float, a2: float, b2: float) -> bool:
    """``|a1*b1 - a2*b2| <= |a1 - a2| + |b1 - b2|`` for arguments in ``[0, 1]``."""
    for v in (a1, b1, a2, b2):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"arguments must lie in [0, 1], got {v}")
    return abs(a1 * b1 - a2 * b2) <= abs(a1 - a2) + abs(b1 - b2)


# --- conditional-dependence diagnostics -----------------------------------


@dataclass
class DependenceReport:
    cmi: float
    mi: float
    per_class_shift: list[tuple[float | None, float | None]]

    def to_dict(self) -> dict:
        return {
            "cmi": self.cmi,
            "mi": self.mi,
            "per_class_shift": [{"given_y": a, "given_y_and_h": b} for a, b in self.per_class_shift],
        }


def _plugin_mi(joint: np.ndarray) -> float:
    """Mutual information (nats) of a 2-D count table."""
    total = joint.sum()
    if total == 0:
        return 0.0
    p = joint / total
    pa = p.sum(axis=1, keepdims=True)
    pb = p.sum(axis=0, keepdims=True)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / (pa @ pb)[nz])))


def conditional_entropy(x, given, k: int) -> float:
    """Plug-in ``H(X | G)`` in nats for labels in ``0..k-1``."""
    counts = np.zeros((k, k))
    np.add.at(counts, (np.asarray(given), np.asarray(x)), 1.0)
    n = counts.sum()
    out = 0.0
    for row in counts:
        tot = row.sum()
        if tot == 0:
            continue
        p = row[row > 0] / tot
        out -= (tot / n) * float(np.sum(p * np.log(p)))
    return out


def cmi_discrete(data: CombinationDataset) -> DependenceReport:
    """Plug-in CMI(M; H | Y) and MI(M; H), with M the model's argmax label."""
    data = _supervised_rows(data)
    k = data.k
    m_label = data.probs.argmax(axis=1)
    h, y = data.human, data.truth
    counts = np.zeros((k, k, k))
    np.add.at(counts, (y, m_label, h), 1.0)
    n = counts.sum()
    cmi = 0.0
    for c in range(k):
        n_y = counts[c].sum()
        if n_y > 0:
            cmi += (n_y / n) * _plugin_mi(counts[c])
    mi = _plugin_mi(counts.sum(axis=0))

    shift = []
    for c in range(k):
        in_class = y == c
        both = in_class & (h == c)
        a = float(data.probs[in_class, c].mean()) if in_class.any() else None
        b = float(data.probs[both, c].mean()) if both.any() else None
        shift.append((a, b))
    return DependenceReport(cmi=max(cmi, 0.0), mi=max(mi, 0.0), per_class_shift=shift)
