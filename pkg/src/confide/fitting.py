"""One entry point to fit any combination method from a dataset."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .calibration import DEFAULT_NODES, LogTempPrior, fit_temperature_map, fit_temperature_ml, posterior_temperature
from .combiner import CombinerParams, fit_lr, version_meta
from .confusion import (
    DEFAULT_STRENGTH,
    count_matrix,
    estimate_map,
    estimate_map_from_counts,
    estimate_mle,
    posterior_mean_from_counts,
    prior_from_accuracy,
)
from .domain import CombinationDataset
from .em import EmConfig, run_em
from .errors import ConfigInvalid, NoSupervisedRows

# CLI spelling -> (params tag, variant)
METHOD_NAMES = {
    "pl-ml": ("PL", "ML"),
    "pl-map": ("PL", "MAP"),
    "pl-em-ml": ("PL_EM", "ML"),
    "pl-em-map": ("PL_EM", "MAP"),
    "ll": ("LL", "MAP"),
    "sp": ("SP", "MAP"),
    "lr": ("LR", None),
    "pl-bayes": ("PL_BAYES", "MAP"),
}

FALLBACK_ACCURACY = 0.7


@dataclass(frozen=True)
class FitConfig:
    prior_accuracy: float | None = None
    prior_strength: float = DEFAULT_STRENGTH
    temp_mu: float = 0.5
    temp_sigma: float = 0.5
    tol: float = 1e-6
    em_max_iters: int = 500
    em_tol: float = 1e-6
    lr_l2: float = 1e-4
    lr_max_iters: int = 2000
    lr_tol: float = 1e-6
    nodes: int = DEFAULT_NODES

    @property
    def temp_prior(self) -> LogTempPrior:
        return LogTempPrior(self.temp_mu, self.temp_sigma)


def anchor_accuracy(data: CombinationDataset, requested: float | None = None) -> float:
    """Accuracy the confusion prior is anchored to.

    Defaults to the model's accuracy on whatever labeled rows exist, else 0.7,
    pulled strictly inside ``(1/K, 1)``.
    """
    k = data.k
    if requested is not None:
        a = float(requested)
    elif data.supervised_count > 0:
        sup = data.supervised_mask
        a = float(np.mean(data.probs[sup].argmax(axis=1) == data.truth[sup]))
    else:
        a = FALLBACK_ACCURACY
    if requested is None:
        a = min(max(a, 1.0 / k + 1e-3), 1.0 - 1e-3)
    return a


def class_prior_map(data: CombinationDataset) -> np.ndarray:
    """Label frequencies smoothed by a symmetric Dirichlet(1 + 1/K) (posterior mode)."""
    k = data.k
    counts = np.bincount(data.truth[data.supervised_mask], minlength=k).astype(float)
    return (counts + 1.0 / k) / (counts.sum() + 1.0)


def fit_combiner(method: str, data: CombinationDataset, config: FitConfig | None = None) -> CombinerParams:
    config = config or FitConfig()
    if method not in METHOD_NAMES:
        raise ConfigInvalid(f"unknown method {method!r}; choose from {', '.join(METHOD_NAMES)}")
    tag, variant = METHOD_NAMES[method]
    k = data.k
    meta = version_meta(method=method, n_rows=data.n, n_supervised=data.supervised_count, **asdict(config))

    if tag == "LR":
        params = fit_lr(data, config.lr_l2, config.lr_max_iters, config.lr_tol)
        params.meta = {**meta, **params.meta}
        return params

    accuracy = anchor_accuracy(data if tag != "PL_EM" else data.without_truth(), config.prior_accuracy)
    meta["prior_accuracy_used"] = accuracy
    prior = prior_from_accuracy(accuracy, k, config.prior_strength)

    if tag == "PL_EM":
        em_config = EmConfig(
            variant=variant,
            confusion_prior=prior if variant == "MAP" else None,
            temp_prior=config.temp_prior if variant == "MAP" else None,
            max_iters=config.em_max_iters,
            loglik_tol=config.em_tol,
            search_tol=config.tol,
        )
        params, trace = run_em(data, em_config)
        params.meta = {**meta, **params.meta, "trace": trace.to_dict()}
        return params

    if tag == "PL" and variant == "ML":
        return CombinerParams(
            "PL", k, phi_human=estimate_mle(data), temperature=fit_temperature_ml(data, config.tol), meta=meta
        )
    if tag == "PL":
        return CombinerParams(
            "PL",
            k,
            phi_human=estimate_map(data, prior),
            temperature=fit_temperature_map(data, config.temp_prior, config.tol),
            meta=meta,
        )
    if tag == "PL_BAYES":
        sup = data.supervised_mask
        if not sup.any():
            raise NoSupervisedRows("the fully Bayesian fit needs labeled rows")
        counts = count_matrix(data.human[sup], data.truth[sup], k)
        return CombinerParams(
            "PL_BAYES",
            k,
            phi_human=posterior_mean_from_counts(counts, prior),
            tau_posterior=posterior_temperature(data, config.temp_prior, config.nodes),
            meta=meta,
        )
    if tag == "SP":
        sup = data.supervised_mask
        correct = float(np.sum(data.human[sup] == data.truth[sup]))
        s = config.prior_strength
        diag = (accuracy * s + correct) / (s + sup.sum())
        diag = min(max(diag, 1.0 / k + 1e-9), 1.0 - 1e-9)
        return CombinerParams(
            "SP", k, sp_diag=diag, temperature=fit_temperature_map(data, config.temp_prior, config.tol), meta=meta
        )
    # LL: model reduced to its argmax label, both confusions by MAP.
    sup = data.supervised_mask
    m_label = data.probs[sup].argmax(axis=1)
    phi_m = estimate_map_from_counts(count_matrix(m_label, data.truth[sup], k), prior)
    return CombinerParams(
        "LL",
        k,
        phi_human=estimate_map(data, prior),
        phi_model=phi_m,
        class_prior=class_prior_map(data),
        meta=meta,
    )
