"""Single hidden layer perceptron trained by full-batch backpropagation with momentum.

Hidden units use the logistic sigmoid, the output unit is linear.
"""
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from evonf.common.exceptions import (
    DatasetEmptyError,
    DimensionMismatchError,
    InvalidParameterError,
    TrainingDivergedError,
)
from evonf.dataset import Dataset

logger = logging.getLogger(__name__)

INIT_SCALE = 0.5


@dataclass(frozen=True)
class MLPConfig:
    hidden: int = 12
    rate: float = 0.05
    momentum: float = 0.2
    epochs: int = 10000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.hidden < 1:
            raise InvalidParameterError(f"hidden must be >= 1, got {self.hidden}")
        if not self.rate >= 0.0:
            raise InvalidParameterError(f"rate must be >= 0, got {self.rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidParameterError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.epochs < 0:
            raise InvalidParameterError(f"epochs must be >= 0, got {self.epochs}")


@dataclass(frozen=True, eq=False)
class MLP:
    """Weights of the network; gradients and velocities use the same container.

    ``w1`` is ``(hidden, n_inputs)``, ``b1`` and ``w2`` are ``(hidden,)``, ``b2`` is scalar.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    def __post_init__(self) -> None:
        hidden = self.w1.shape[0]
        if self.w1.ndim != 2 or self.b1.shape != (hidden,) or self.w2.shape != (hidden,):
            raise DimensionMismatchError(
                f"Inconsistent layer shapes {self.w1.shape}, {self.b1.shape}, {self.w2.shape}."
            )

    @classmethod
    def initialise(cls, n_inputs: int, hidden: int, rng: np.random.Generator) -> "MLP":
        """Weights and biases drawn uniformly from ``[-0.5, 0.5]``."""
        return cls(
            rng.uniform(-INIT_SCALE, INIT_SCALE, (hidden, n_inputs)),
            rng.uniform(-INIT_SCALE, INIT_SCALE, hidden),
            rng.uniform(-INIT_SCALE, INIT_SCALE, hidden),
            float(rng.uniform(-INIT_SCALE, INIT_SCALE)),
        )

    @classmethod
    def zeros_like(cls, net: "MLP") -> "MLP":
        return cls(np.zeros_like(net.w1), np.zeros_like(net.b1), np.zeros_like(net.w2), 0.0)

    @property
    def n_inputs(self) -> int:
        return int(self.w1.shape[1])

    @property
    def hidden(self) -> int:
        return int(self.w1.shape[0])

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    def from_flat(self, values: np.ndarray) -> "MLP":
        h, d = self.w1.shape
        return MLP(
            values[: h * d].reshape(h, d),
            values[h * d : h * d + h],
            values[h * d + h : h * d + 2 * h],
            float(values[-1]),
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def _forward(net: MLP, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a1 = _sigmoid(x @ net.w1.T + net.b1)
    return a1, a1 @ net.w2 + net.b2


def _check_inputs(net: MLP, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != net.n_inputs:
        raise DimensionMismatchError(
            f"Expected inputs with {net.n_inputs} variables, got shape {x.shape}."
        )
    return x


def mlp_forward(net: MLP, x: np.ndarray) -> float:
    """Network output for a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatchError(f"Expected a single input vector, got shape {x.shape}.")
    return float(mlp_predict(net, x[None, :])[0])


def mlp_predict(net: MLP, x: np.ndarray) -> np.ndarray:
    """Network outputs for a batch, ``(n_samples, n_inputs) -> (n_samples,)``."""
    return _forward(net, _check_inputs(net, x))[1]


def mlp_loss_and_gradient(net: MLP, x: np.ndarray, y: np.ndarray) -> Tuple[float, MLP]:
    """Mean squared error over the batch and its gradient w.r.t. every weight."""
    x = _check_inputs(net, x)
    a1, out = _forward(net, x)
    dy = 2.0 * (out - y) / x.shape[0]
    dw2 = a1.T @ dy
    db2 = float(dy.sum())
    dz1 = np.outer(dy, net.w2) * a1 * (1.0 - a1)
    dw1 = dz1.T @ x
    db1 = dz1.sum(axis=0)
    return float(np.mean((out - y) ** 2)), MLP(dw1, db1, dw2, db2)


def mlp_gradient(net: MLP, x: np.ndarray, y: np.ndarray) -> MLP:
    """Gradient of the mean squared error, in the shape of the network."""
    return mlp_loss_and_gradient(net, x, y)[1]


def mlp_train(
    net: MLP,
    train: Dataset,
    rate: float = 0.05,
    momentum: float = 0.2,
    epochs: int = 10000,
) -> Tuple[MLP, List[float]]:
    """Train with full-batch backpropagation and momentum.

    Returns:
        the trained network and the training RMSE of every epoch, measured before that
        epoch's update

    Raises:
        TrainingDivergedError: as soon as the loss stops being finite
    """
    if len(train) == 0:
        raise DatasetEmptyError("Cannot train on an empty dataset.")
    x, y = train.inputs, train.targets
    velocity = MLP.zeros_like(net).flat()
    params = net.flat()
    curve: List[float] = []
    for epoch in range(1, epochs + 1):
        mse, grad = mlp_loss_and_gradient(net, x, y)
        if not np.isfinite(mse):
            raise TrainingDivergedError(f"MLP loss became non-finite at epoch {epoch}.")
        curve.append(float(np.sqrt(mse)))
        velocity = momentum * velocity - rate * grad.flat()
        params = params + velocity
        net = net.from_flat(params)
        if epoch % 1000 == 0:
            logger.debug("Epoch %d: train rmse %.6g", epoch, curve[-1])
    if curve:
        logger.info("Trained MLP for %d epochs, final train rmse %.6g", epochs, curve[-1])
    return net, curve
