"""Confusion-matrix estimation for the categorical labeler.

``phi[i, j] = p(h = i | y = j)``; columns are distributions over the labeler's
output given the true class. The Bayesian estimate puts an independent
Dirichlet prior on each column with ``gamma`` on the diagonal and ``beta``
elsewhere, chosen so that the prior mode's diagonal equals a given accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import EPS, CombinationDataset, LabelSpace
from .errors import AccuracyOutOfRange, DegenerateMode, NoSupervisedRows, WrongLength

DEFAULT_STRENGTH = 10.0


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise WrongLength(f"confusion matrix must be square, got shape {entries.shape}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def space(self) -> LabelSpace:
        return LabelSpace(self.k)

    @classmethod
    def identity(cls, k: int) -> "ConfusionMatrix":
        return cls(floor_columns(np.eye(k)))

    @classmethod
    def uniform(cls, k: int) -> "ConfusionMatrix":
        return cls(np.full((k, k), 1.0 / k))

    @classmethod
    def symmetric(cls, k: int, diag: float) -> "ConfusionMatrix":
        """Matrix with ``diag`` on the diagonal and the rest spread evenly."""
        off = (1.0 - diag) / (k - 1)
        mat = np.full((k, k), off)
        np.fill_diagonal(mat, diag)
        return cls(floor_columns(mat))

    def tolist(self) -> list[list[float]]:
        return self.entries.tolist()


def floor_columns(mat: np.ndarray) -> np.ndarray:
    """Floor entries at EPS and renormalize every column to sum to one."""
    out = np.maximum(np.asarray(mat, dtype=float), EPS)
    return out / out.sum(axis=0, keepdims=True)


@dataclass(frozen=True)
class DirichletPrior:
    k: int
    gamma: float
    beta: float

    def __post_init__(self):
        if self.k < 2:
            raise WrongLength("prior needs k >= 2")
        if not self.gamma > 1.0 or not self.beta >= 1.0:
            raise DegenerateMode(f"need gamma > 1 and beta >= 1, got gamma={self.gamma}, beta={self.beta}")

    @property
    def alpha(self) -> np.ndarray:
        a = np.full((self.k, self.k), float(self.beta))
        np.fill_diagonal(a, self.gamma)
        return a

    def mode(self) -> ConfusionMatrix:
        return estimate_map_from_counts(np.zeros((self.k, self.k)), self)


def prior_from_accuracy(accuracy: float, k: int, strength: float = DEFAULT_STRENGTH) -> DirichletPrior:
    """Dirichlet prior whose per-column mode has ``accuracy`` on the diagonal.

    ``strength`` is the number of pseudo-observations per column
    (``sum(alpha_j) - K``).

    >>> p = prior_from_accuracy(0.9, 10, 9)
    >>> round(p.gamma, 10), round(p.beta, 10)
    (9.1, 1.1)
    """
    if not 1.0 / k < accuracy < 1.0:
        raise AccuracyOutOfRange(f"accuracy must lie in (1/{k}, 1), got {accuracy}")
    if not strength > 0:
        raise AccuracyOutOfRange(f"prior strength must be positive, got {strength}")
    return DirichletPrior(k, 1.0 + accuracy * strength, 1.0 + (1.0 - accuracy) * strength / (k - 1))


def count_matrix(human, truth, k: int, weights=None) -> np.ndarray:
    """``counts[i, j]`` = (weighted) number of rows with ``h = i`` and ``y = j``."""
    counts = np.zeros((k, k))
    np.add.at(counts, (np.asarray(human), np.asarray(truth)), 1.0 if weights is None else weights)
    return counts


def estimate_mle(data: CombinationDataset) -> ConfusionMatrix:
    sup = data.supervised_mask
    if not sup.any():
        raise NoSupervisedRows("maximum-likelihood confusion needs labeled rows")
    counts = count_matrix(data.human[sup], data.truth[sup], data.k)
    return ConfusionMatrix(mle_from_counts(counts))


def mle_from_counts(counts: np.ndarray, min_total: float = 0.0) -> np.ndarray:
    k = counts.shape[0]
    totals = counts.sum(axis=0)
    out = np.full((k, k), 1.0 / k)
    seen = totals > min_total
    out[:, seen] = counts[:, seen] / totals[seen]
    return floor_columns(out)


def estimate_map(data: CombinationDataset, prior: DirichletPrior) -> ConfusionMatrix:
    """Per-column posterior mode under the Dirichlet prior; no data gives the prior mode."""
    sup = data.supervised_mask
    counts = count_matrix(data.human[sup], data.truth[sup], data.k)
    return estimate_map_from_counts(counts, prior)


def estimate_map_from_counts(counts: np.ndarray, prior: DirichletPrior) -> ConfusionMatrix:
    post = prior.alpha + counts
    denom = post.sum(axis=0) - prior.k
    if np.any(denom <= 0):
        raise DegenerateMode("posterior Dirichlet has no interior mode")
    return ConfusionMatrix(floor_columns((post - 1.0) / denom))


def posterior_mean_from_counts(counts: np.ndarray, prior: DirichletPrior) -> ConfusionMatrix:
    post = prior.alpha + counts
    return ConfusionMatrix(floor_columns(post / post.sum(axis=0)))


def human_confidence(phi: ConfusionMatrix, h: int, y: int) -> float:
    return float(phi.entries[h, y])
