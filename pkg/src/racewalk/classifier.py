"""L2-regularized logistic regression on z-scored features.

Objective over standardized features ``Z`` with labels ``y`` in {0, 1}::

    f(w, b) = mean(log(1 + exp(z)) - y * z) + lam / (2 n) * ||w||^2,   z = Z w + b

The bias is not penalized. Minimized with damped Newton iterations started
from zero; the weights are the standardized regression coefficients used for
importance analysis.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from .gait_cycle import (
    CATEGORIES,
    CHANNEL_CATEGORY,
    CHANNELS,
    LAYOUT_VERSION,
    N_CHANNELS,
    N_FEATURES,
    N_FRAMES,
    FeatureVector,
    LayoutMismatchError,
)
from .pose_data import FaultLabel

logger = logging.getLogger(__name__)

BIN_WIDTH = 5
N_BINS = N_FRAMES // BIN_WIDTH


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        for name in ("mean", "std"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std shapes differ")
        if np.any(self.std <= 0):
            raise ValueError("standardizer std entries must be positive")

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.mean.shape[0]:
            raise LayoutMismatchError(f"expected {self.mean.shape[0]} features, got {X.shape[-1]}")
        return (X - self.mean) / self.std


def fit_standardizer(X) -> Standardizer:
    """Per-feature mean and population SD; zero-SD features get SD 1."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("standardizer needs at least 2 rows")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    return Standardizer(mean, std)


@dataclass(frozen=True)
class Hyperparameters:
    lam: float = 1.0
    tol: float = 1e-6
    max_iter: int = 10000

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol and max_iter must be positive")

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "tol": self.tol, "max_iter": self.max_iter}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Hyperparameters":
        return cls(float(d["lambda"]), float(d["tol"]), int(d["max_iter"]))


@dataclass(frozen=True, eq=False)
class LogisticModel:
    weights: np.ndarray
    bias: float
    standardizer: Standardizer
    fault_type: FaultLabel
    hyperparameters: Hyperparameters = Hyperparameters()
    layout_version: str = LAYOUT_VERSION
    training_fold_id: str = ""
    converged: bool = True
    n_iterations: int = 0
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if not np.all(np.isfinite(w)) or not np.isfinite(self.bias):
            raise ValueError("model parameters must be finite")
        if w.shape != self.standardizer.mean.shape:
            raise ValueError("weights and standardizer disagree in length")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))
        object.__setattr__(self, "fault_type", FaultLabel(self.fault_type))


def _split(params: np.ndarray) -> tuple[np.ndarray, float]:
    return params[:-1], params[-1]


def loss_and_gradient(params, Z, y, lam: float) -> tuple[float, np.ndarray]:
    """Objective and exact gradient; ``params`` is ``[w..., b]``."""
    params = np.asarray(params, dtype=float)
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    if Z.ndim != 2 or params.shape != (Z.shape[1] + 1,) or y.shape != (Z.shape[0],):
        raise ValueError(
            f"shape mismatch: params {params.shape}, Z {Z.shape}, y {y.shape}"
        )
    n = Z.shape[0]
    w, b = _split(params)
    z = Z @ w + b
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + lam / (2 * n) * (w @ w)
    r = expit(z) - y
    grad = np.empty_like(params)
    grad[:-1] = Z.T @ r / n + lam / n * w
    grad[-1] = r.mean()
    return float(loss), grad


def _hessian(params, Z, lam: float) -> np.ndarray:
    n, p = Z.shape
    w, b = _split(params)
    s = expit(Z @ w + b)
    s = s * (1.0 - s)
    A = np.hstack([Z, np.ones((n, 1))])
    H = (A.T * s) @ A / n
    H[np.arange(p), np.arange(p)] += lam / n
    return H


def _newton_direction(params, Z, lam: float, grad: np.ndarray) -> np.ndarray:
    """Solve H d = grad.

    With a penalty and fewer samples than features, the weight block
    c I + B^T B (B = sqrt(s) Z / sqrt(n)) is inverted through the n x n
    Woodbury form and the unpenalized bias is eliminated by its Schur
    complement. Otherwise the full Hessian is solved directly.
    """
    n, p = Z.shape
    if lam <= 0 or n >= p:
        H = _hessian(params, Z, lam)
        try:
            return np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(H, grad, rcond=None)[0]
    w, b = _split(params)
    s = expit(Z @ w + b)
    s = s * (1.0 - s)
    c = lam / n
    B = Z * np.sqrt(s / n)[:, None]
    K = c * np.eye(n) + B @ B.T

    def p_inv(v):
        # (c I + B^T B)^-1 v for v of shape (p,) or (p, k)
        return (v - B.T @ np.linalg.solve(K, B @ v)) / c

    q = Z.T @ s / n
    r = s.sum() / n
    g_w, g_b = grad[:-1], grad[-1]
    Pq, Pg = p_inv(np.stack([q, g_w], axis=1)).T
    schur = r - q @ Pq
    if not schur > 1e-300:
        H = _hessian(params, Z, lam)
        return np.linalg.lstsq(H, grad, rcond=None)[0]
    d_b = (g_b - q @ Pg) / schur
    d = np.empty_like(grad)
    d[:-1] = Pg - Pq * d_b
    d[-1] = d_b
    return d


def fit_logistic(
    Z,
    y,
    lam: float = 1.0,
    tol: float = 1e-6,
    max_iter: int = 10000,
    init: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, float, bool, int]:
    """Minimize the objective on already-standardized ``Z``.

    Returns ``(w, b, converged, iterations)``.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    params = np.zeros(Z.shape[1] + 1) if init is None else np.array(init, dtype=float)
    loss, grad = loss_and_gradient(params, Z, y, lam)
    it = 0
    while np.max(np.abs(grad)) > tol and it < max_iter:
        it += 1
        step = _newton_direction(params, Z, lam, grad)
        # backtracking (Armijo) on the Newton direction
        t = 1.0
        slope = grad @ step
        while True:
            cand = params - t * step
            c_loss, c_grad = loss_and_gradient(cand, Z, y, lam)
            if c_loss <= loss - 1e-4 * t * slope or t < 1e-10:
                break
            t *= 0.5
        if t < 1e-10 and c_loss >= loss:
            # numerically stalled; take a plain gradient step instead
            # 1/L step; L bounds the Hessian's largest eigenvalue
            lipschitz = (np.sum(Z * Z) + Z.shape[0]) / (4 * Z.shape[0]) + lam / Z.shape[0]
            cand = params - grad / max(1.0, lipschitz)
            c_loss, c_grad = loss_and_gradient(cand, Z, y, lam)
        params, loss, grad = cand, c_loss, c_grad
    converged = bool(np.max(np.abs(grad)) <= tol)
    if not converged:
        logger.warning("logistic fit stopped at max_iter=%d, |grad|=%.3g", max_iter, np.max(np.abs(grad)))
    w, b = _split(params)
    return w.copy(), float(b), converged, it


def _binary_targets(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    return y


def train(
    X,
    y,
    lam: float = 1.0,
    tol: float = 1e-6,
    max_iter: int = 10000,
    fault_type: FaultLabel = FaultLabel.BK,
    training_fold_id: str = "",
    metadata: Optional[Mapping[str, Any]] = None,
    init: Optional[np.ndarray] = None,
) -> LogisticModel:
    """Fit a standardizer and a regularized logistic model; positive class = the fault."""
    X = np.asarray(X, dtype=float)
    y = _binary_targets(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, p) with one label per row")
    if len(X) < 2 or len(np.unique(y)) < 2:
        raise ValueError("training needs both classes present (single-class input)")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite features")
    hp = Hyperparameters(lam, tol, max_iter)
    std = fit_standardizer(X)
    w, b, converged, it = fit_logistic(std.transform(X), y, lam, tol, max_iter, init=init)
    return LogisticModel(
        weights=w,
        bias=b,
        standardizer=std,
        fault_type=fault_type,
        hyperparameters=hp,
        training_fold_id=training_fold_id,
        converged=converged,
        n_iterations=it,
        metadata=dict(metadata or {}),
    )


def _feature_matrix(model: LogisticModel, x) -> np.ndarray:
    if isinstance(x, FeatureVector):
        if x.layout_version != model.layout_version:
            raise LayoutMismatchError(
                f"feature layout {x.layout_version!r} does not match model layout {model.layout_version!r}"
            )
        x = x.values
    return np.asarray(x, dtype=float)


def decision_function(model: LogisticModel, x) -> np.ndarray | float:
    X = _feature_matrix(model, x)
    z = model.standardizer.transform(X) @ model.weights + model.bias
    return float(z) if np.ndim(z) == 0 else z


def predict_proba(model: LogisticModel, x) -> np.ndarray | float:
    """Fault probability for one feature vector or an (n, p) matrix."""
    p = expit(decision_function(model, x))
    return float(p) if np.ndim(p) == 0 else p


def predict(model: LogisticModel, x, threshold: float = 0.5) -> np.ndarray | bool:
    """True where the fault is detected."""
    p = np.asarray(predict_proba(model, x))
    out = p >= threshold
    return bool(out) if out.ndim == 0 else out


# -- importance ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ImportanceReport:
    fault_type: FaultLabel
    feature_importance: np.ndarray  # (1530,)
    category_importance: dict[str, float]
    frame_importance: np.ndarray  # (18 channels, 17 bins of 5 frames)
    n_models_averaged: int

    def ranked_categories(self) -> list[tuple[str, float]]:
        return sorted(self.category_importance.items(), key=lambda kv: (-kv[1], CATEGORIES.index(kv[0])))

    @property
    def top_category(self) -> str:
        return self.ranked_categories()[0][0]

    def channel_bins(self, channel: str) -> np.ndarray:
        return self.frame_importance[CHANNELS.index(channel)]


def feature_importance(models: Sequence[LogisticModel]) -> ImportanceReport:
    """Average |standardized coefficient| over fold models, by category and frame bin."""
    if not models:
        raise ValueError("no models to average")
    layouts = {m.layout_version for m in models}
    faults = {m.fault_type for m in models}
    if len(layouts) != 1 or len(faults) != 1:
        raise LayoutMismatchError(f"models mix layouts {layouts} or fault types {faults}")
    if models[0].weights.shape != (N_FEATURES,):
        raise LayoutMismatchError("importance needs full 1530-feature models")
    per_feature = np.mean(np.abs(np.stack([m.weights for m in models])), axis=0)
    by_channel = per_feature.reshape(N_CHANNELS, N_FRAMES)
    categories = {
        cat: float(by_channel[[c == cat for c in CHANNEL_CATEGORY]].mean()) for cat in CATEGORIES
    }
    bins = by_channel.reshape(N_CHANNELS, N_BINS, BIN_WIDTH).mean(axis=2)
    return ImportanceReport(faults.pop(), per_feature, categories, bins, len(models))


# -- persistence --------------------------------------------------------------


def model_to_dict(model: LogisticModel) -> dict:
    return {
        "layout_version": model.layout_version,
        "fault_type": model.fault_type.value,
        "hyperparameters": model.hyperparameters.to_dict(),
        "standardizer": {"mean": model.standardizer.mean.tolist(), "std": model.standardizer.std.tolist()},
        "weights": model.weights.tolist(),
        "bias": model.bias,
        "training_fold_id": model.training_fold_id,
        "converged": model.converged,
        "n_iterations": model.n_iterations,
        "metadata": dict(model.metadata),
    }


def model_from_dict(doc: Mapping) -> LogisticModel:
    try:
        return LogisticModel(
            weights=np.array(doc["weights"], dtype=float),
            bias=float(doc["bias"]),
            standardizer=Standardizer(np.array(doc["standardizer"]["mean"]), np.array(doc["standardizer"]["std"])),
            fault_type=FaultLabel(doc["fault_type"]),
            hyperparameters=Hyperparameters.from_dict(doc["hyperparameters"]),
            layout_version=doc["layout_version"],
            training_fold_id=doc.get("training_fold_id", ""),
            converged=bool(doc["converged"]),
            n_iterations=int(doc.get("n_iterations", 0)),
            metadata=doc.get("metadata", {}),
        )
    except KeyError as exc:
        raise ValueError(f"model document missing field {exc}") from None


def save_model(model: LogisticModel, path: Union[str, os.PathLike]) -> None:
    # float repr is the shortest string that reloads to the same double
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: Union[str, os.PathLike]) -> LogisticModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
