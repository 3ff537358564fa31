from typing import Callable, Optional

import numpy as np
import pytest

from evonf.dataset import Dataset
from evonf.fuzzy import GAUSSIAN, TNormParam
from evonf.inference import RuleBase, TSKModel, grid_partition_init

ModelFactory = Callable[..., TSKModel]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def make_model() -> ModelFactory:
    """Factory for random, well conditioned grid models on inputs in [0, 1].

    Spreads stay within [0.2, 1] so that no membership comes near the floor.
    """

    def factory(
        rng: np.random.Generator,
        n_inputs: int = 2,
        mf_per_input: int = 2,
        kind: str = GAUSSIAN,
        active: Optional[np.ndarray] = None,
    ) -> TSKModel:
        grid = grid_partition_init(n_inputs, mf_per_input)
        shape = (n_inputs, mf_per_input)
        if kind == GAUSSIAN:
            params = np.stack([rng.uniform(0.0, 1.0, shape), rng.uniform(0.2, 1.0, shape)], -1)
        else:
            params = np.stack(
                [
                    rng.uniform(0.2, 1.0, shape),
                    rng.uniform(1.0, 3.0, shape),
                    rng.uniform(0.0, 1.0, shape),
                ],
                -1,
            )
        if active is None:
            active = rng.random(grid.n_rules) < 0.7
            active[rng.integers(grid.n_rules)] = True
        rulebase = RuleBase(
            grid.antecedents, rng.normal(0.0, 1.0, grid.consequents.shape), active
        )
        return TSKModel(kind, params, rulebase, TNormParam(float(rng.uniform(0.3, 3.0))))

    return factory


@pytest.fixture
def linear_data() -> Dataset:
    """``y = 2 x + 1`` on 21 evenly spaced points of [-1, 1]."""
    x = np.linspace(-1.0, 1.0, 21)
    return Dataset.from_arrays(x, 2.0 * x + 1.0)


def single_rule_model(intercept: float = 0.0, slope: float = 0.0, s: float = 1.0) -> TSKModel:
    """One input, one Gaussian MF centred at 0 and one rule that always fires."""
    return TSKModel(
        GAUSSIAN,
        np.array([[[0.0, s]]]),
        RuleBase(
            np.ones((1, 1, 1), dtype=bool),
            np.array([[intercept, slope]]),
            np.ones(1, dtype=bool),
        ),
    )


@pytest.fixture
def one_rule() -> Callable[..., TSKModel]:
    return single_rule_model
