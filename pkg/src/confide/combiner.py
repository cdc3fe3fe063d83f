"""Combination rules and the fitted-parameter container.

Methods:

``PL``        calibrated probabilities times the labeler's confusion row
``PL_EM``     same rule, parameters learned without ground truth
``PL_BAYES``  same rule with the temperature marginalized over a grid posterior
``SP``        same rule with a one-parameter symmetric confusion matrix
``LL``        naive-Bayes product of two confusion matrices (model reduced to its argmax)
``LR``        multinomial logistic regression on ``log m`` and one-hot ``h``
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import __version__
from .calibration import Temperature, TemperaturePosterior, bayes_calibrated_probs, temper_log
from .confusion import ConfusionMatrix
from .domain import EPS, CombinationDataset
from .errors import MethodFieldMissing, NonFinite, SpOutOfRange, TooFewRows, WrongLength

METHODS = ("PL", "PL_EM", "LL", "SP", "LR", "PL_BAYES")

_REQUIRED = {
    "PL": ("phi_human", "temperature"),
    "PL_EM": ("phi_human", "temperature"),
    "PL_BAYES": ("phi_human", "tau_posterior"),
    "LL": ("phi_human", "phi_model", "class_prior"),
    "SP": ("sp_diag", "temperature"),
    "LR": ("lr_weights", "lr_bias"),
}
_OPTIONAL = ("phi_human", "phi_model", "temperature", "tau_posterior", "sp_diag", "lr_weights", "lr_bias", "class_prior")


@dataclass(eq=False)
class CombinerParams:
    method: str
    k: int
    phi_human: ConfusionMatrix | None = None
    phi_model: ConfusionMatrix | None = None
    temperature: Temperature | None = None
    tau_posterior: TemperaturePosterior | None = None
    sp_diag: float | None = None
    lr_weights: np.ndarray | None = None
    lr_bias: np.ndarray | None = None
    class_prior: np.ndarray | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise MethodFieldMissing(f"unknown method {self.method!r}")
        self.validate()

    def validate(self) -> None:
        required = _REQUIRED[self.method]
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            raise MethodFieldMissing(f"{self.method} params lack {', '.join(missing)}")
        extra = [name for name in _OPTIONAL if name not in required and getattr(self, name) is not None]
        if extra:
            raise MethodFieldMissing(f"{self.method} params carry unexpected {', '.join(extra)}")
        for name in ("phi_human", "phi_model"):
            phi = getattr(self, name)
            if phi is not None and phi.k != self.k:
                raise WrongLength(f"{name} is {phi.k}x{phi.k}, expected k={self.k}")
        if self.lr_weights is not None and np.shape(self.lr_weights) != (self.k, 2 * self.k):
            raise WrongLength(f"lr_w must be {self.k}x{2 * self.k}")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"method": self.method, "k": self.k}
        if self.phi_human is not None:
            out["phi"] = self.phi_human.tolist()
        if self.phi_model is not None:
            out["phi_model"] = self.phi_model.tolist()
        if self.temperature is not None:
            out["temperature"] = self.temperature.t
        if self.tau_posterior is not None:
            out["tau_grid"] = self.tau_posterior.grid.tolist()
            out["tau_weights"] = self.tau_posterior.weights.tolist()
        if self.sp_diag is not None:
            out["sp_diag"] = float(self.sp_diag)
        if self.lr_weights is not None:
            out["lr_w"] = np.asarray(self.lr_weights).tolist()
            out["lr_b"] = np.asarray(self.lr_bias).tolist()
        if self.class_prior is not None:
            out["class_prior"] = np.asarray(self.class_prior).tolist()
        out["meta"] = dict(self.meta)
        return out

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "CombinerParams":
        try:
            method, k = obj["method"], int(obj["k"])
        except (KeyError, TypeError, ValueError):
            raise MethodFieldMissing("params need 'method' and 'k'") from None
        kwargs: dict[str, Any] = {}
        if obj.get("phi") is not None:
            kwargs["phi_human"] = ConfusionMatrix(np.array(obj["phi"], dtype=float))
        if obj.get("phi_model") is not None:
            kwargs["phi_model"] = ConfusionMatrix(np.array(obj["phi_model"], dtype=float))
        if obj.get("temperature") is not None:
            kwargs["temperature"] = Temperature(obj["temperature"])
        if obj.get("tau_grid") is not None:
            kwargs["tau_posterior"] = TemperaturePosterior(np.array(obj["tau_grid"]), np.array(obj["tau_weights"]))
        if obj.get("sp_diag") is not None:
            kwargs["sp_diag"] = float(obj["sp_diag"])
        if obj.get("lr_w") is not None:
            kwargs["lr_weights"] = np.array(obj["lr_w"], dtype=float)
            kwargs["lr_bias"] = np.array(obj.get("lr_b"), dtype=float)
        if obj.get("class_prior") is not None:
            kwargs["class_prior"] = np.array(obj["class_prior"], dtype=float)
        return cls(method=method, k=k, meta=dict(obj.get("meta") or {}), **kwargs)


def _normalize_log(logq: np.ndarray) -> np.ndarray:
    zmax = logq.max(axis=-1, keepdims=True)
    q = np.exp(logq - zmax)
    return q / q.sum(axis=-1, keepdims=True)


def _logm(m) -> np.ndarray:
    return np.log(np.maximum(np.asarray(m, dtype=float), EPS))


def combine_pl(h, m, phi: ConfusionMatrix, t) -> np.ndarray:
    """Posterior over the true class: confusion row ``phi[h]`` times tempered ``m``.

    Works on a single row (``h`` int, ``m`` of shape ``(K,)``) or a batch.

    >>> phi = ConfusionMatrix(np.array([[0.8, 0.3], [0.2, 0.7]]))
    >>> combine_pl(0, np.array([0.6, 0.4]), phi, 1.0).round(6).tolist()
    [0.8, 0.2]
    """
    log_phi = np.log(np.maximum(phi.entries[np.asarray(h)], EPS))
    return _normalize_log(log_phi + temper_log(_logm(m), float(t)))


def combine_pl_probs(h, calibrated, phi: ConfusionMatrix) -> np.ndarray:
    """Product-rule combination when the calibrated probabilities are already in hand."""
    q = phi.entries[np.asarray(h)] * np.asarray(calibrated)
    return q / q.sum(axis=-1, keepdims=True)


def combine_ll(h, m_label, phi_h: ConfusionMatrix, phi_m: ConfusionMatrix, class_prior) -> np.ndarray:
    logq = (
        np.log(np.maximum(np.asarray(class_prior, dtype=float), EPS))
        + np.log(np.maximum(phi_h.entries[np.asarray(h)], EPS))
        + np.log(np.maximum(phi_m.entries[np.asarray(m_label)], EPS))
    )
    return _normalize_log(logq)


def sp_matrix(k: int, sp_diag: float) -> ConfusionMatrix:
    if not 1.0 / k < sp_diag < 1.0:
        raise SpOutOfRange(f"sp_diag must lie in (1/{k}, 1), got {sp_diag}")
    return ConfusionMatrix.symmetric(k, sp_diag)


def combine_sp(h, m, sp_diag: float, t) -> np.ndarray:
    k = np.shape(m)[-1]
    return combine_pl(h, m, sp_matrix(k, sp_diag), t)


# --- logistic regression -------------------------------------------------


def lr_features(h, m, k: int) -> np.ndarray:
    """``log m`` (floored) concatenated with one-hot ``h``; shape ``(n, 2K)``."""
    h = np.atleast_1d(np.asarray(h))
    logm = _logm(np.atleast_2d(m))
    onehot = np.zeros((h.size, k))
    onehot[np.arange(h.size), h] = 1.0
    return np.hstack([logm, onehot])


def lr_loss_and_grad(W: np.ndarray, b: np.ndarray, Z: np.ndarray, Y: np.ndarray, l2: float):
    """Mean cross-entropy of ``softmax(Z W^T + b)`` plus ``l2 * ||W||^2``."""
    logits = Z @ W.T + b
    zmax = logits.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
    n = Z.shape[0]
    loss = float(np.sum(lse) - np.sum(Y * logits)) / n + l2 * float(np.sum(W * W))
    P = np.exp(logits - lse[:, None])
    D = (P - Y) / n
    return loss, D.T @ Z + 2.0 * l2 * W, D.sum(axis=0)


def lr_predict_proba(W: np.ndarray, b: np.ndarray, h, m) -> np.ndarray:
    k = W.shape[0]
    single = np.ndim(m) == 1
    out = _normalize_log(lr_features(h, m, k) @ W.T + b)
    return out[0] if single else out


def lr_embedding(phi: ConfusionMatrix, t) -> tuple[np.ndarray, np.ndarray]:
    """LR weights reproducing ``combine_pl(., ., phi, t)`` exactly."""
    k = phi.k
    W = np.hstack([np.eye(k) / float(t), np.log(phi.entries).T])
    return W, np.zeros(k)


def _lbfgs(fun, x0: np.ndarray, max_iters: int, tol: float, memory: int = 10):
    """Limited-memory quasi-Newton descent with Armijo backtracking.

    Returns ``(x, iterations, converged)``. Deterministic; falls back to the
    steepest-descent direction whenever the two-loop direction is not a
    descent direction.
    """
    x = x0.copy()
    f, g = fun(x)
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    for it in range(max_iters):
        if not math.isfinite(f):
            raise NonFinite("logistic-regression objective diverged")
        if np.max(np.abs(g)) < tol:
            return x, it, True
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(s_hist), reversed(y_hist)):
            a = (s @ q) / (y @ s)
            alphas.append(a)
            q -= a * y
        if s_hist:
            q *= (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
        for (s, y), a in zip(zip(s_hist, y_hist), reversed(alphas)):
            q += (a - (y @ q) / (y @ s)) * s
        d = -q
        slope = g @ d
        if not slope < 0:
            d, slope = -g, -(g @ g)
            s_hist.clear()
            y_hist.clear()
        step = 1.0 if s_hist else min(1.0, 1.0 / max(np.max(np.abs(g)), 1e-12))
        while True:
            x_new = x + step * d
            f_new, g_new = fun(x_new)
            if math.isfinite(f_new) and f_new <= f + 1e-4 * step * slope:
                break
            step *= 0.5
            if step < 1e-20:
                return x, it, False
        s, y = x_new - x, g_new - g
        if s @ y > 1e-12 * (y @ y):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
        x, f, g = x_new, f_new, g_new
    return x, max_iters, bool(np.max(np.abs(g)) < tol)


def fit_lr(data: CombinationDataset, l2: float = 1e-4, max_iters: int = 2000, tol: float = 1e-6) -> CombinerParams:
    k = data.k
    sup = data.supervised_mask
    n = int(sup.sum())
    if n < k:
        raise TooFewRows(f"logistic regression needs at least K={k} labeled rows, got {n}")
    Z = lr_features(data.human[sup], data.probs[sup], k)
    Y = np.zeros((n, k))
    Y[np.arange(n), data.truth[sup]] = 1.0
    n_w = k * 2 * k

    def fun(theta):
        W, b = theta[:n_w].reshape(k, 2 * k), theta[n_w:]
        loss, gW, gb = lr_loss_and_grad(W, b, Z, Y, l2)
        return loss, np.concatenate([gW.ravel(), gb])

    theta, iters, converged = _lbfgs(fun, np.zeros(n_w + k), max_iters, tol)
    if not np.all(np.isfinite(theta)):
        raise NonFinite("logistic-regression weights are not finite")
    return CombinerParams(
        method="LR",
        k=k,
        lr_weights=theta[:n_w].reshape(k, 2 * k),
        lr_bias=theta[n_w:],
        meta={"l2": l2, "max_iters": max_iters, "tol": tol, "iterations": iters, "converged": converged},
    )


# --- prediction ----------------------------------------------------------


def predict_proba(params: CombinerParams, h, m) -> np.ndarray:
    """Posterior for one row or a batch under any fitted method."""
    params.validate()
    method = params.method
    if method in ("PL", "PL_EM"):
        return combine_pl(h, m, params.phi_human, params.temperature)
    if method == "SP":
        return combine_sp(h, m, params.sp_diag, params.temperature)
    if method == "PL_BAYES":
        return combine_pl_probs(h, bayes_calibrated_probs(m, params.tau_posterior), params.phi_human)
    if method == "LL":
        return combine_ll(h, np.argmax(m, axis=-1), params.phi_human, params.phi_model, params.class_prior)
    return lr_predict_proba(params.lr_weights, params.lr_bias, h, m)


def predict(params: CombinerParams, h, m) -> tuple[Any, np.ndarray]:
    """Return ``(label, posterior)``; ties in the posterior go to the smallest index."""
    post = predict_proba(params, h, m)
    label = np.argmax(post, axis=-1)
    return (int(label) if np.ndim(label) == 0 else label), post


def predict_dataset(params: CombinerParams, data: CombinationDataset) -> tuple[np.ndarray, np.ndarray]:
    return predict(params, data.human, data.probs)


def version_meta(**config: Any) -> dict[str, Any]:
    return {"version": __version__, **config}
