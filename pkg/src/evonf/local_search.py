"""Gradient-descent fine tuning of a Takagi-Sugeno model.

Membership function shapes, consequent coefficients and the T-norm exponent are tuned on
the full training batch against the mean squared error, with classic momentum::

    v <- momentum * v - rate * grad
    theta <- theta + v

The ``max`` used inside a variable and the ``max{0, .}`` clamp of the T-norm contribute a
zero subgradient at their kinks.
"""
import logging
from dataclasses import dataclass, replace
from typing import Final, List, Optional, Tuple

import numpy as np

from evonf.common.exceptions import (
    DatasetEmptyError,
    InvalidParameterError,
    TrainingDivergedError,
)
from evonf.dataset import Dataset
from evonf.fuzzy import POSITIVE_PARAMS, TNormParam
from evonf.inference import RuleBase, TSKModel, forward

logger = logging.getLogger(__name__)

TNORM_LIMITS: Final = (0.01, 100.0)

# MF widths and slopes never drop below this after a step.
POSITIVE_FLOOR: Final = 1e-6


@dataclass(frozen=True)
class LearnParams:
    """Learning rate and momentum of the local search (chromosome layer 4)."""

    rate: float = 0.05
    momentum: float = 0.2

    def __post_init__(self) -> None:
        if not (np.isfinite(self.rate) and self.rate >= 0):
            raise InvalidParameterError(f"Learning rate must be >= 0, got {self.rate!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidParameterError(f"Momentum must lie in [0, 1), got {self.momentum!r}")


@dataclass(frozen=True)
class LocalSearchConfig:
    """Which parameter groups the gradient steps may change."""

    tune_antecedents: bool = True
    tune_consequents: bool = True
    tune_tnorm: bool = True


@dataclass(frozen=True, eq=False)
class ModelGradient:
    """Partial derivatives (or a velocity) per parameter group of a TSKModel."""

    mf_params: np.ndarray
    consequents: np.ndarray
    tnorm: float

    @classmethod
    def zeros_like(cls, model: TSKModel) -> "ModelGradient":
        return cls(
            np.zeros_like(model.mf_params), np.zeros_like(model.rulebase.consequents), 0.0
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([self.mf_params.ravel(), self.consequents.ravel(), [self.tnorm]])

    def masked(self, config: LocalSearchConfig) -> "ModelGradient":
        return ModelGradient(
            self.mf_params if config.tune_antecedents else np.zeros_like(self.mf_params),
            self.consequents if config.tune_consequents else np.zeros_like(self.consequents),
            self.tnorm if config.tune_tnorm else 0.0,
        )


def _check_data(data: Dataset) -> None:
    if len(data) == 0:
        raise DatasetEmptyError("Cannot evaluate a model on an empty dataset.")


def mean_squared_error(model: TSKModel, data: Dataset) -> float:
    """Mean squared prediction error, the objective differentiated by ``gradient``."""
    _check_data(data)
    residual = forward(model, data.inputs).y - data.targets
    return float(np.mean(residual**2))


def loss(model: TSKModel, data: Dataset) -> float:
    """Root mean squared prediction error of ``model`` on ``data``."""
    return float(np.sqrt(mean_squared_error(model, data)))


def loss_and_gradient(model: TSKModel, data: Dataset) -> Tuple[float, ModelGradient]:
    """Mean squared error and its analytic gradient in one forward/backward pass."""
    _check_data(data)
    x, t = data.inputs, data.targets
    n = x.shape[0]
    rb = model.rulebase
    fp = forward(model, x, with_gradient=True)
    assert fp.dmu is not None

    residual = fp.y - t
    g_y = 2.0 * residual / n

    # derivatives of the defuzzified output w.r.t. firing strengths and rule outputs
    active = rb.active[None, :].astype(float)
    safe_total = np.where(fp.fallback, 1.0, fp.total)[:, None]
    dy_dw = np.where(fp.fallback[:, None], 0.0, active * (fp.f - fp.y[:, None]) / safe_total)
    dy_df = np.where(
        fp.fallback[:, None],
        active / rb.active.sum(),
        active * fp.w / safe_total,
    )

    g_f = g_y[:, None] * dy_df
    grad_consequents = g_f.T @ np.hstack([np.ones((n, 1)), x])

    g_w = g_y[:, None] * dy_dw
    grad_tnorm = float(np.sum(g_w * fp.dw_dp))

    g_agg = g_w[:, :, None] * fp.dw_dagg
    winner = fp.winner[..., None] == np.arange(model.mf_per_input)
    g_mu = np.einsum("nki,nkim->nim", g_agg, winner)
    grad_mf = np.einsum("nim,nimk->imk", g_mu, fp.dmu)

    return float(np.mean(residual**2)), ModelGradient(grad_mf, grad_consequents, grad_tnorm)


def gradient(model: TSKModel, data: Dataset) -> ModelGradient:
    """Analytic gradient of the mean squared error w.r.t. every model parameter."""
    return loss_and_gradient(model, data)[1]


def apply_update(
    model: TSKModel,
    update: ModelGradient,
    mf_lower: Optional[np.ndarray] = None,
    mf_upper: Optional[np.ndarray] = None,
) -> TSKModel:
    """Add ``update`` to the model parameters and clamp them back into their domains."""
    mf_params = model.mf_params + update.mf_params
    if mf_lower is not None and mf_upper is not None:
        mf_params = np.clip(mf_params, mf_lower, mf_upper)
    positive = list(POSITIVE_PARAMS[model.mf_kind])
    mf_params[..., positive] = np.maximum(mf_params[..., positive], POSITIVE_FLOOR)
    rb = model.rulebase
    return replace(
        model,
        mf_params=mf_params,
        rulebase=RuleBase(rb.antecedents, rb.consequents + update.consequents, rb.active),
        tnorm=TNormParam(float(np.clip(model.tnorm.p + update.tnorm, *TNORM_LIMITS))),
    )


def gd_step(
    model: TSKModel,
    data: Dataset,
    params: LearnParams,
    velocity: Optional[ModelGradient] = None,
    config: LocalSearchConfig = LocalSearchConfig(),
    mf_lower: Optional[np.ndarray] = None,
    mf_upper: Optional[np.ndarray] = None,
) -> Tuple[TSKModel, ModelGradient]:
    """One full-batch momentum step.

    Args:
        model: current model
        data: training data
        params: learning rate and momentum
        velocity: previous velocity, zero when None
        config: parameter groups to tune
        mf_lower: optional lower bounds for the MF parameter array
        mf_upper: optional upper bounds for the MF parameter array

    Returns:
        the updated model and velocity

    Raises:
        TrainingDivergedError: when the gradient is not finite
    """
    _, grad = loss_and_gradient(model, data)
    return _step(model, grad, params, velocity, config, mf_lower, mf_upper)


def _step(
    model: TSKModel,
    grad: ModelGradient,
    params: LearnParams,
    velocity: Optional[ModelGradient],
    config: LocalSearchConfig,
    mf_lower: Optional[np.ndarray],
    mf_upper: Optional[np.ndarray],
) -> Tuple[TSKModel, ModelGradient]:
    if not np.all(np.isfinite(grad.flat())):
        raise TrainingDivergedError("Local search produced a non-finite gradient.")
    grad = grad.masked(config)
    if velocity is None:
        velocity = ModelGradient.zeros_like(model)
    velocity = ModelGradient(
        params.momentum * velocity.mf_params - params.rate * grad.mf_params,
        params.momentum * velocity.consequents - params.rate * grad.consequents,
        params.momentum * velocity.tnorm - params.rate * grad.tnorm,
    )
    return apply_update(model, velocity, mf_lower, mf_upper), velocity


def refine(
    model: TSKModel,
    data: Dataset,
    params: LearnParams,
    epochs: int,
    config: LocalSearchConfig = LocalSearchConfig(),
    mf_lower: Optional[np.ndarray] = None,
    mf_upper: Optional[np.ndarray] = None,
) -> Tuple[TSKModel, List[float]]:
    """Run ``epochs`` gradient steps.

    Returns:
        the refined model and the training RMSE before every step followed by the final
        RMSE, so the history always has ``epochs + 1`` entries
    """
    if epochs < 0:
        raise InvalidParameterError(f"epochs must be >= 0, got {epochs}")
    history: List[float] = []
    velocity: Optional[ModelGradient] = None
    for _ in range(epochs):
        mse, grad = loss_and_gradient(model, data)
        history.append(float(np.sqrt(mse)))
        model, velocity = _step(model, grad, params, velocity, config, mf_lower, mf_upper)
    history.append(loss(model, data))
    if not np.isfinite(history[-1]):
        raise TrainingDivergedError("Local search produced a non-finite loss.")
    logger.debug("Refined over %d epoch(s): %.6g -> %.6g", epochs, history[0], history[-1])
    return model, history
