"""Temperature scaling of classifier probabilities.

Tempering raises each probability to ``1/T`` and renormalizes; ``T > 1``
softens an overconfident model. Everything is parameterized internally by
the log-temperature ``tau = log T`` and evaluated in log space.

Fits minimize a one-dimensional objective over the clamped domain
``T in [1e-3, 1e3]``: a 64-point coarse scan locates the best bracket, then a
golden-section search refines it. The fully Bayesian variant replaces
sampling by quadrature on a uniform ``tau`` grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .domain import EPS, CombinationDataset
from .errors import NoSupervisedRows, WrongLength

T_MIN, T_MAX = 1e-3, 1e3
TAU_MIN, TAU_MAX = math.log(T_MIN), math.log(T_MAX)
COARSE_POINTS = 64
DEFAULT_TOL = 1e-6
DEFAULT_NODES = 513
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Temperature:
    t: float

    def __post_init__(self):
        t = float(self.t)
        if not t > 0 or not math.isfinite(t):
            raise ValueError(f"temperature must be positive and finite, got {t}")
        object.__setattr__(self, "t", min(max(t, T_MIN), T_MAX))

    @classmethod
    def from_tau(cls, tau: float) -> "Temperature":
        return cls(math.exp(tau))

    @property
    def tau(self) -> float:
        return math.log(self.t)

    def __float__(self) -> float:
        return self.t


@dataclass(frozen=True)
class LogTempPrior:
    """Gaussian prior on ``log T``; the default encodes mild overconfidence."""

    mu: float = 0.5
    sigma: float = 0.5

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def neg_log_density(self, tau: float) -> float:
        return (tau - self.mu) ** 2 / (2.0 * self.sigma**2)


@dataclass(frozen=True, eq=False)
class TemperaturePosterior:
    grid: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float).reshape(-1)
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if grid.shape != weights.shape or grid.size == 0:
            raise WrongLength("grid and weights must be non-empty and of equal length")
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise ValueError("tau grid must be strictly increasing")
        if np.any(weights < 0):
            raise ValueError("posterior weights must be nonnegative")
        weights = weights / weights.sum()
        grid.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def point_mass(cls, tau: float) -> "TemperaturePosterior":
        return cls(np.array([tau]), np.array([1.0]))

    def mean_temperature(self) -> float:
        return float(self.weights @ np.exp(self.grid))


def _log_probs(m) -> np.ndarray:
    return np.log(np.maximum(np.asarray(m, dtype=float), EPS))


def _logsumexp_rows(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=-1, keepdims=True)
    return (zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True)))[..., 0]


def temper_log(logm: np.ndarray, t: float) -> np.ndarray:
    """Log of the tempered distribution, given log-probabilities."""
    z = np.asarray(logm) / float(t)
    return z - _logsumexp_rows(z)[..., None]


def temper(m, t) -> np.ndarray:
    """Temper one vector or an ``(n, K)`` batch at temperature ``t``."""
    return np.exp(temper_log(_log_probs(m), float(t)))


class TemperatureObjective:
    """Weighted negative log-likelihood of tempered probabilities, as a function of tau.

    ``value(tau) = -sum_l sum_j r[l, j] * log temper(m_l, e^tau)[j]``. Because the
    tempered logits are ``log m / T``, the linear part collapses to a scalar
    and each evaluation costs one row-wise log-sum-exp.
    """

    def __init__(self, logm: np.ndarray, resp: np.ndarray):
        self.logm = np.asarray(logm, dtype=float)
        resp = np.asarray(resp, dtype=float)
        self.linear = float(np.sum(resp * self.logm))
        self.row_mass = resp.sum(axis=1)
        self.total = float(self.row_mass.sum())

    def __call__(self, tau: float) -> float:
        inv_t = math.exp(-tau)
        lse = _logsumexp_rows(self.logm * inv_t)
        return float(self.row_mass @ lse) - inv_t * self.linear


def _supervised_objective(data: CombinationDataset) -> TemperatureObjective:
    sup = data.supervised_mask
    if not sup.any():
        raise NoSupervisedRows("temperature fitting needs labeled rows")
    y = data.truth[sup]
    resp = np.zeros((y.size, data.k))
    resp[np.arange(y.size), y] = 1.0
    return TemperatureObjective(_log_probs(data.probs[sup]), resp)


def nll_of_temperature(data: CombinationDataset, tau: float) -> float:
    obj = _supervised_objective(data)
    return obj(tau) / obj.total


def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float = DEFAULT_TOL) -> tuple[float, float]:
    """Minimize a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``."""
    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def minimize_bracketed(
    f: Callable[[float], float],
    lo: float = TAU_MIN,
    hi: float = TAU_MAX,
    tol: float = DEFAULT_TOL,
    anchor: float = 0.0,
    points: int = COARSE_POINTS,
) -> float:
    """Global-ish 1-D minimizer: coarse scan, then golden section in the best bracket.

    A flat objective (all scan values equal to rounding) returns ``anchor``
    clipped to the domain; ties on the scan go to the point nearest ``anchor``.
    """
    grid = np.linspace(lo, hi, points)
    values = np.array([f(x) for x in grid])
    best = values.min()
    slack = 1e-12 * max(1.0, abs(best))
    if values.max() - best <= slack:
        return min(max(anchor, lo), hi)
    candidates = np.flatnonzero(values <= best + slack)
    i = int(candidates[np.argmin(np.abs(grid[candidates] - anchor))])
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, points - 1)]
    x, fx = golden_section(f, a, b, tol)
    return x if fx <= values[i] else float(grid[i])


def minimize_from(
    f: Callable[[float], float],
    start: float,
    lo: float = TAU_MIN,
    hi: float = TAU_MAX,
    tol: float = DEFAULT_TOL,
    step: float = 0.1,
) -> float:
    """Warm-started 1-D minimizer for unimodal objectives.

    Walks downhill from ``start`` with geometrically growing steps until the
    minimum is bracketed, then refines by golden section.
    """
    start = min(max(start, lo), hi)
    f0 = f(start)
    right = min(start + step, hi)
    f_right = f(right)
    if f_right < f0:
        a, b, fb, direction = start, right, f_right, 1.0
    else:
        left = max(start - step, lo)
        f_left = f(left)
        if f_left < f0:
            a, b, fb, direction = start, left, f_left, -1.0
        else:
            x, fx = golden_section(f, left, right, tol)
            return x if fx <= f0 else start
    best_x, best_f = b, fb
    while True:
        c = b + (1.0 + INV_PHI) * (b - a)
        c = min(max(c, lo), hi)
        if c == b:
            break
        fc = f(c)
        if fc >= fb:
            break
        a, b, fb = b, c, fc
        best_x, best_f = b, fb
    lo_b, hi_b = (a, c) if direction > 0 else (c, a)
    x, fx = golden_section(f, lo_b, hi_b, tol)
    return x if fx <= best_f else best_x


def fit_temperature_ml(data: CombinationDataset, tol: float = DEFAULT_TOL) -> Temperature:
    obj = _supervised_objective(data)
    return Temperature.from_tau(minimize_bracketed(obj, tol=tol, anchor=0.0))


def fit_temperature_map(data: CombinationDataset, prior: LogTempPrior | None = None, tol: float = DEFAULT_TOL) -> Temperature:
    """MAP temperature under a Gaussian log-temperature prior.

    With no labeled rows the prior mode ``exp(mu)`` comes back unchanged.
    """
    prior = prior or LogTempPrior()
    if data.supervised_count == 0:
        return Temperature.from_tau(prior.mu)
    obj = _supervised_objective(data)
    return Temperature.from_tau(_map_tau(obj, prior, tol))


def _map_tau(obj: TemperatureObjective, prior: LogTempPrior, tol: float) -> float:
    return minimize_bracketed(lambda tau: obj(tau) + prior.neg_log_density(tau), tol=tol, anchor=prior.mu)


def posterior_temperature(
    data: CombinationDataset,
    prior: LogTempPrior | None = None,
    nodes: int = DEFAULT_NODES,
) -> TemperaturePosterior:
    """Quadrature approximation of ``p(tau | data)`` on a uniform grid."""
    prior = prior or LogTempPrior()
    if nodes < 33 or nodes % 2 == 0:
        raise ValueError(f"nodes must be odd and >= 33, got {nodes}")
    obj = _supervised_objective(data)
    tau_map = _map_tau(obj, prior, DEFAULT_TOL)
    lo = max(min(prior.mu - 4 * prior.sigma, tau_map - 2.0), TAU_MIN)
    hi = min(max(prior.mu + 4 * prior.sigma, tau_map + 2.0), TAU_MAX)
    grid = np.linspace(lo, hi, nodes)
    log_post = np.array([-obj(tau) - prior.neg_log_density(tau) for tau in grid])
    log_post -= log_post.max()
    weights = np.exp(log_post)
    return TemperaturePosterior(grid, weights / weights.sum())


def bayes_calibrated_probs(m, post: TemperaturePosterior) -> np.ndarray:
    """Posterior-weighted average of tempered probabilities, renormalized."""
    logm = _log_probs(m)
    acc = np.zeros_like(logm)
    for tau, w in zip(post.grid, post.weights):
        if w > 0:
            acc += w * np.exp(temper_log(logm, math.exp(tau)))
    return acc / acc.sum(axis=-1, keepdims=True)
