"""Synthetic data with known ground truth, and the learning-curve protocol.

Each row draws a true posterior ``p`` from a Dirichlet, a label ``y ~ p``, and
a human label from column ``y`` of a known confusion matrix. The model
reports ``m`` with ``m_i`` proportional to ``p_i ** t_star``, so tempering at
``t_star`` recovers ``p``. A dependence knob ``rho`` makes the human copy the
model's argmax with that probability, breaking conditional independence.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .calibration import temper
from .confusion import ConfusionMatrix
from .domain import CombinationDataset, validate_prob_matrix, validate_prob_vector
from .errors import ConfigInvalid, SizeTooLarge
from .fitting import FitConfig, fit_combiner
from .combiner import predict_dataset
from .metrics import error_rate

DEFAULT_CONCENTRATION = 5.0


@dataclass(frozen=True)
class SyntheticConfig:
    k: int = 10
    n: int = 1000
    phi_diag: float = 0.95
    phi_star: Any = None
    t_star: float = 1.0
    class_prior: Any = None
    concentration: float = DEFAULT_CONCENTRATION
    dirichlet_alpha: Any = None
    rho: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise ConfigInvalid(f"k must be an integer >= 2, got {self.k}")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigInvalid(f"n must be a positive integer, got {self.n}")
        if not self.t_star > 0:
            raise ConfigInvalid("t_star must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigInvalid("rho must lie in [0, 1]")
        if not self.concentration > 0:
            raise ConfigInvalid("concentration must be positive")
        if self.phi_star is None and not 0.0 < self.phi_diag <= 1.0:
            raise ConfigInvalid("phi_diag must lie in (0, 1]")
        # Touch the derived arrays so invalid shapes fail at construction.
        self.phi_matrix()
        self.alpha()

    def prior(self) -> np.ndarray:
        if self.class_prior is None:
            return np.full(self.k, 1.0 / self.k)
        try:
            return validate_prob_vector(self.class_prior, self.k)
        except ValueError as exc:
            raise ConfigInvalid(f"class_prior: {exc}") from None

    def alpha(self) -> np.ndarray:
        if self.dirichlet_alpha is not None:
            alpha = np.asarray(self.dirichlet_alpha, dtype=float)
            if alpha.shape != (self.k,) or np.any(alpha <= 0):
                raise ConfigInvalid(f"dirichlet_alpha must be {self.k} positive reals")
            return alpha
        return self.concentration * self.prior()

    def phi_matrix(self) -> ConfusionMatrix:
        if self.phi_star is None:
            if self.phi_diag == 1.0:
                return ConfusionMatrix.identity(self.k)
            return ConfusionMatrix.symmetric(self.k, self.phi_diag)
        mat = np.asarray(self.phi_star, dtype=float)
        if mat.shape != (self.k, self.k) or np.any(mat < 0) or np.any(np.abs(mat.sum(axis=0) - 1) > 1e-6):
            raise ConfigInvalid(f"phi_star must be a column-stochastic {self.k}x{self.k} matrix")
        return ConfusionMatrix(mat)

    def to_dict(self) -> dict:
        out = {f: getattr(self, f) for f in self.__dataclass_fields__}
        for key in ("phi_star", "class_prior", "dirichlet_alpha"):
            if out[key] is not None:
                out[key] = np.asarray(out[key], dtype=float).tolist()
        return out


def _categorical(rng_u: np.ndarray, probs: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    idx = (rng_u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def generate(config: SyntheticConfig) -> tuple[CombinationDataset, np.ndarray]:
    """Draw a dataset and the exact ``p(y | m)`` for every row.

    The oracle posterior is defined as ``temper(m, t_star)`` of the reported
    (floored) ``m``, so it matches the data-generating distribution of ``y``
    exactly even when the Dirichlet draw has entries below the float floor.
    """
    rng = np.random.default_rng(config.seed)
    n, k = config.n, config.k
    p0 = rng.dirichlet(config.alpha(), size=n)
    u_y = rng.random(n)
    u_copy = rng.random(n)
    u_h = rng.random(n)

    logit = config.t_star * np.log(np.maximum(p0, np.finfo(float).tiny))
    logit -= logit.max(axis=1, keepdims=True)
    m = np.exp(logit)
    m = validate_prob_matrix(m / m.sum(axis=1, keepdims=True), k)
    oracle = temper(m, config.t_star)

    y = _categorical(u_y, oracle)
    phi = config.phi_matrix().entries
    h = _categorical(u_h, phi[:, y].T)
    copy = u_copy < config.rho
    h = np.where(copy, m.argmax(axis=1), h)
    return CombinationDataset(h, m, y, validate=False), oracle


def save_oracle(oracle: np.ndarray, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row"] + [f"p_{i}" for i in range(oracle.shape[1])])
        for i, row in enumerate(oracle):
            writer.writerow([i] + [repr(float(v)) for v in row])


def load_oracle(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return np.array([[float(v) for v in row[1:]] for row in reader if row])


# --- learning curves ------------------------------------------------------


def worker_count() -> int:
    env = os.environ.get("CONFIDE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigInvalid(f"CONFIDE_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


@dataclass(frozen=True)
class CurveRow:
    size: int
    mean_error: float
    std_error: float
    errors: tuple[float, ...] = field(repr=False, default=())

    def to_dict(self) -> dict:
        return {"size": self.size, "mean_error": self.mean_error, "std_error": self.std_error, "seeds": len(self.errors)}


def subsample(data: CombinationDataset, size: int, seed: int) -> CombinationDataset:
    rng = np.random.default_rng([seed, size])
    return data.subset(np.sort(rng.choice(data.n, size=size, replace=False)))


def evaluate_error(params, data: CombinationDataset) -> float:
    sup = data.supervised() if data.supervised_count < data.n else data
    labels, _ = predict_dataset(params, sup)
    return error_rate(labels, sup.truth)


def learning_curve(
    train: CombinationDataset,
    eval: CombinationDataset,
    method: str,
    sizes,
    seeds: int,
    fit_config: FitConfig | None = None,
    base_seed: int = 0,
    workers: int | None = None,
) -> list[CurveRow]:
    """Mean and sample std of eval error over seeded subsamples of each size."""
    sizes = [int(s) for s in sizes]
    for s in sizes:
        if s > train.n or s < 1:
            raise SizeTooLarge(f"size {s} outside 1..{train.n}")
    if eval.supervised_count == 0:
        raise ConfigInvalid("evaluation data needs true labels")
    cells = [(s, base_seed + i) for s in sizes for i in range(seeds)]

    def run(cell):
        size, seed = cell
        params = fit_combiner(method, subsample(train, size, seed), fit_config)
        return evaluate_error(params, eval)

    workers = workers or worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            errors = list(pool.map(run, cells))
    else:
        errors = [run(c) for c in cells]

    rows = []
    for j, size in enumerate(sizes):
        errs = np.array(errors[j * seeds : (j + 1) * seeds])
        std = float(errs.std(ddof=1)) if errs.size > 1 else 0.0
        rows.append(CurveRow(size, float(errs.mean()), std, tuple(float(e) for e in errs)))
    return rows
