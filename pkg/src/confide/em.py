"""Learning the confusion matrix and temperature without ground truth.

The true label is treated as latent. Each iteration computes responsibilities
with the combination rule (E-step), then updates the confusion matrix in
closed form and the temperature by 1-D search (M-step). The observed-data
objective ``sum_l log sum_y temper(m_l, T)[y] * phi[h_l, y]`` (plus log-priors
for the MAP variant) never decreases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .calibration import (
    DEFAULT_TOL,
    LogTempPrior,
    Temperature,
    TemperatureObjective,
    minimize_bracketed,
    minimize_from,
    temper_log,
)
from .combiner import CombinerParams, combine_pl, version_meta
from .confusion import ConfusionMatrix, DirichletPrior, floor_columns
from .domain import EPS, CombinationDataset

log = logging.getLogger(__name__)

ML_INIT_DIAG = 0.7


@dataclass(frozen=True)
class EmConfig:
    variant: str = "MAP"
    confusion_prior: DirichletPrior | None = None
    temp_prior: LogTempPrior | None = None
    max_iters: int = 500
    loglik_tol: float = 1e-6
    init_temperature: float | None = None
    search_tol: float = DEFAULT_TOL

    def __post_init__(self):
        if self.variant not in ("ML", "MAP"):
            raise ValueError(f"variant must be 'ML' or 'MAP', got {self.variant!r}")
        if self.variant == "MAP" and (self.confusion_prior is None or self.temp_prior is None):
            raise ValueError("MAP EM needs both a confusion prior and a temperature prior")

    def initial_temperature(self) -> float:
        if self.init_temperature is not None:
            return float(self.init_temperature)
        return float(np.exp(self.temp_prior.mu)) if self.variant == "MAP" else 1.0


@dataclass
class EmTrace:
    iterations: int = 0
    loglik_history: list[float] = field(default_factory=list)
    converged: bool = False

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "loglik": list(self.loglik_history), "converged": self.converged}


def e_step(data: CombinationDataset, phi: ConfusionMatrix, t) -> np.ndarray:
    """Responsibilities ``p(y | h_l, m_l)``, one row per instance."""
    return combine_pl(data.human, data.probs, phi, t)


def soft_counts(human: np.ndarray, resp: np.ndarray) -> np.ndarray:
    """``counts[i, j] = sum over rows with h = i of resp[row, j]``."""
    k = resp.shape[1]
    onehot = np.zeros((human.size, k))
    onehot[np.arange(human.size), human] = 1.0
    return onehot.T @ resp


def m_step_confusion(
    data: CombinationDataset,
    resp: np.ndarray,
    variant: str = "ML",
    prior: DirichletPrior | None = None,
) -> ConfusionMatrix:
    k = data.k
    counts = soft_counts(data.human, resp)
    totals = counts.sum(axis=0)
    if variant == "ML":
        out = np.full((k, k), 1.0 / k)
        seen = totals >= 1e-9
        out[:, seen] = counts[:, seen] / totals[seen]
        return ConfusionMatrix(floor_columns(out))
    alpha = prior.alpha
    denom = np.maximum(alpha.sum(axis=0) - k + totals, 1e-9)
    numer = np.maximum(alpha - 1.0 + counts, 0.0)
    return ConfusionMatrix(floor_columns(numer / denom))


def m_step_temperature(
    data: CombinationDataset,
    resp: np.ndarray,
    variant: str = "ML",
    prior: LogTempPrior | None = None,
    tol: float = DEFAULT_TOL,
    current: float | None = None,
) -> Temperature:
    """Maximize the expected complete-data log-likelihood in the temperature.

    Without ``current`` this runs the full scan-then-refine search. With it,
    the search is warm-started from the current temperature (the objective is
    unimodal in tau) and an update that fails to improve on it is rejected,
    which keeps the outer loop monotone despite the finite search tolerance.
    """
    obj = TemperatureObjective(np.log(np.maximum(data.probs, EPS)), resp)
    if variant == "MAP":
        f = lambda tau: obj(tau) + prior.neg_log_density(tau)  # noqa: E731
        anchor = prior.mu
    else:
        f, anchor = obj, 0.0
    if current is None:
        return Temperature.from_tau(minimize_bracketed(f, tol=tol, anchor=anchor))
    tau_cur = float(np.log(current))
    tau = minimize_from(f, tau_cur, tol=tol)
    if f(tau) > f(tau_cur):
        tau = tau_cur
    return Temperature.from_tau(tau)


def _log_joint(logm: np.ndarray, human: np.ndarray, phi: ConfusionMatrix, t) -> np.ndarray:
    return temper_log(logm, float(t)) + np.log(np.maximum(phi.entries[human], EPS))


def _penalized(
    loglik: float,
    phi: ConfusionMatrix,
    t,
    confusion_prior: DirichletPrior | None,
    temp_prior: LogTempPrior | None,
) -> float:
    if confusion_prior is not None:
        loglik += float(np.sum((confusion_prior.alpha - 1.0) * np.log(phi.entries)))
    if temp_prior is not None:
        loglik -= temp_prior.neg_log_density(float(np.log(float(t))))
    return loglik


def em_objective(
    data: CombinationDataset,
    phi: ConfusionMatrix,
    t,
    confusion_prior: DirichletPrior | None = None,
    temp_prior: LogTempPrior | None = None,
) -> float:
    """Observed-data log-likelihood of the human labels given the model outputs."""
    z = _log_joint(np.log(np.maximum(data.probs, EPS)), data.human, phi, t)
    loglik = float(np.sum(_row_lse(z)))
    return _penalized(loglik, phi, t, confusion_prior, temp_prior)


def _row_lse(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=1, keepdims=True)
    return zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))


def run_em(data: CombinationDataset, config: EmConfig | None = None) -> tuple[CombinerParams, EmTrace]:
    """Fit ``(phi, T)`` from human labels and model probabilities only.

    True labels present in ``data`` are never read.
    """
    config = config or EmConfig(variant="ML")
    unlabeled = data.without_truth()
    k = unlabeled.k
    is_map = config.variant == "MAP"
    c_prior = config.confusion_prior if is_map else None
    t_prior = config.temp_prior if is_map else None

    phi = c_prior.mode() if is_map else ConfusionMatrix.symmetric(k, ML_INIT_DIAG)
    temp = Temperature(config.initial_temperature())
    logm = np.log(np.maximum(unlabeled.probs, EPS))
    trace = EmTrace()

    def evaluate(phi, temp):
        # One pass gives both the objective and the next responsibilities.
        z = _log_joint(logm, unlabeled.human, phi, temp)
        lse = _row_lse(z)
        return _penalized(float(np.sum(lse)), phi, temp, c_prior, t_prior), np.exp(z - lse[:, None])

    previous, resp = evaluate(phi, temp)
    trace.loglik_history.append(previous)

    for it in range(1, config.max_iters + 1):
        phi = m_step_confusion(unlabeled, resp, config.variant, c_prior)
        temp = m_step_temperature(unlabeled, resp, config.variant, t_prior, config.search_tol, current=temp.t)
        current, resp = evaluate(phi, temp)
        trace.loglik_history.append(current)
        trace.iterations = it
        if abs(current - previous) <= config.loglik_tol * max(abs(previous), 1.0):
            trace.converged = True
            break
        previous = current

    log.debug("EM %s stopped after %d iterations (converged=%s)", config.variant, trace.iterations, trace.converged)
    meta = version_meta(
        variant=config.variant,
        max_iters=config.max_iters,
        loglik_tol=config.loglik_tol,
        iterations=trace.iterations,
        converged=trace.converged,
    )
    params = CombinerParams(method="PL_EM", k=k, phi_human=phi, temperature=temp, meta=meta)
    return params, trace
