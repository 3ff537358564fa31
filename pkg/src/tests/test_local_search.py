from dataclasses import replace

import numpy as np
import pytest

from evonf.common.exceptions import DatasetEmptyError, InvalidParameterError
from evonf.dataset import Dataset
from evonf.fuzzy import BELL, GAUSSIAN, TNormParam
from evonf.inference import RuleBase
from evonf.local_search import (
    POSITIVE_FLOOR,
    LearnParams,
    LocalSearchConfig,
    ModelGradient,
    apply_update,
    gd_step,
    gradient,
    loss,
    loss_and_gradient,
    mean_squared_error,
    refine,
)

H = 1e-6


def test_loss_values(one_rule):
    model = one_rule(intercept=0.0)
    assert loss(model, Dataset.from_arrays([0.0, 1.0], [0.0, 0.0])) == 0.0
    assert loss(model, Dataset.from_arrays([0.3], [0.5])) == pytest.approx(0.5)
    errors = Dataset.from_arrays([0.0, 1.0, 2.0], [1.0, 2.0, -2.0])
    assert loss(model, errors) == pytest.approx(np.sqrt(3.0))


def test_loss_of_empty_dataset(one_rule):
    empty = Dataset.from_arrays(np.zeros((0, 1)), np.zeros(0))
    with pytest.raises(DatasetEmptyError):
        loss(one_rule(), empty)


def test_zero_residual_zero_gradient(one_rule, linear_data):
    grad = gradient(one_rule(intercept=1.0, slope=2.0), linear_data)
    assert np.allclose(grad.flat(), 0.0, atol=1e-14)


def test_single_rule_consequent_gradient_is_regression_gradient(one_rule, linear_data):
    model = one_rule(intercept=0.3, slope=-0.5)
    x, t = linear_data.inputs[:, 0], linear_data.targets
    residual = 0.3 - 0.5 * x - t
    grad = gradient(model, linear_data)
    expected = [2.0 * residual.mean(), 2.0 * (residual * x).mean()]
    np.testing.assert_allclose(grad.consequents[0], expected, rtol=1e-10)


def _finite_difference(model, data):
    """Central differences of the MSE w.r.t. every MF, consequent and T-norm parameter."""
    fd_mf = np.zeros_like(model.mf_params)
    for idx in np.ndindex(*model.mf_params.shape):
        up, down = model.mf_params.copy(), model.mf_params.copy()
        up[idx] += H
        down[idx] -= H
        fd_mf[idx] = (
            mean_squared_error(replace(model, mf_params=up), data)
            - mean_squared_error(replace(model, mf_params=down), data)
        ) / (2 * H)
    rb = model.rulebase
    fd_cons = np.zeros_like(rb.consequents)
    for idx in np.ndindex(*rb.consequents.shape):
        up, down = rb.consequents.copy(), rb.consequents.copy()
        up[idx] += H
        down[idx] -= H
        fd_cons[idx] = (
            mean_squared_error(model.with_rulebase(RuleBase(rb.antecedents, up, rb.active)), data)
            - mean_squared_error(
                model.with_rulebase(RuleBase(rb.antecedents, down, rb.active)), data
            )
        ) / (2 * H)
    p = model.tnorm.p
    fd_p = (
        mean_squared_error(replace(model, tnorm=TNormParam(p + H)), data)
        - mean_squared_error(replace(model, tnorm=TNormParam(p - H)), data)
    ) / (2 * H)
    return fd_mf, fd_cons, fd_p


@pytest.mark.parametrize("kind", [GAUSSIAN, BELL])
def test_gradient_matches_finite_differences(kind, make_model, rng):
    """Analytic MSE gradient against central differences for every parameter group."""
    for _ in range(25):
        model = make_model(rng, n_inputs=2, mf_per_input=2, kind=kind)
        x = rng.random((20, 2))
        data = Dataset.from_arrays(x, np.sin(3.0 * x[:, 0]) + x[:, 1] ** 2)
        _, grad = loss_and_gradient(model, data)
        fd_mf, fd_cons, fd_p = _finite_difference(model, data)
        np.testing.assert_allclose(grad.mf_params, fd_mf, rtol=1e-4, atol=1e-7)
        np.testing.assert_allclose(grad.consequents, fd_cons, rtol=1e-4, atol=1e-7)
        assert grad.tnorm == pytest.approx(fd_p, rel=1e-4, abs=1e-7)


def test_zero_rate_leaves_model_unchanged(make_model, rng):
    model = make_model(rng)
    data = Dataset.from_arrays(rng.random((10, 2)), rng.random(10))
    stepped, _ = gd_step(model, data, LearnParams(rate=0.0, momentum=0.2))
    assert np.array_equal(stepped.mf_params, model.mf_params)
    assert np.array_equal(stepped.rulebase.consequents, model.rulebase.consequents)
    assert stepped.tnorm == model.tnorm


def test_zero_momentum_is_plain_gradient_step(make_model, rng):
    model = make_model(rng)
    data = Dataset.from_arrays(rng.random((10, 2)), rng.random(10))
    grad = gradient(model, data)
    stepped, velocity = gd_step(model, data, LearnParams(rate=0.01, momentum=0.0))
    np.testing.assert_allclose(stepped.mf_params, model.mf_params - 0.01 * grad.mf_params)
    np.testing.assert_allclose(
        stepped.rulebase.consequents, model.rulebase.consequents - 0.01 * grad.consequents
    )
    assert stepped.tnorm.p == pytest.approx(model.tnorm.p - 0.01 * grad.tnorm)
    np.testing.assert_allclose(velocity.consequents, -0.01 * grad.consequents)


def test_descent_on_convex_subproblem(one_rule, linear_data):
    config = LocalSearchConfig(tune_antecedents=False, tune_tnorm=False)
    _, history = refine(one_rule(), linear_data, LearnParams(0.05, 0.0), 10, config)
    assert len(history) == 11
    assert all(b <= a for a, b in zip(history, history[1:]))


def test_linear_target_is_fitted(one_rule, linear_data, rng):
    for _ in range(5):
        start = one_rule(intercept=rng.uniform(-1, 1), slope=rng.uniform(-1, 1))
        _, history = refine(start, linear_data, LearnParams(0.1, 0.5), 100)
        assert history[-1] < 1e-3


def test_shape_parameters_stay_positive(make_model, rng):
    model = make_model(rng, kind=BELL)
    x = rng.random((15, 2))
    data = Dataset.from_arrays(x, 10.0 * x[:, 0] - 5.0)
    refined, _ = refine(model, data, LearnParams(rate=0.2, momentum=0.5), 30)
    assert (refined.mf_params[..., :2] > 0).all()
    assert 0.01 <= refined.tnorm.p <= 100.0


def test_bounds_are_respected(make_model, rng):
    model = make_model(rng)
    data = Dataset.from_arrays(rng.random((10, 2)), 3.0 * rng.random(10))
    lower = np.full(model.mf_params.shape, 0.1)
    upper = np.full(model.mf_params.shape, 0.9)
    refined, _ = refine(model, data, LearnParams(0.2, 0.5), 20, mf_lower=lower, mf_upper=upper)
    assert (refined.mf_params >= 0.1).all() and (refined.mf_params <= 0.9).all()


def test_frozen_groups_do_not_move(make_model, rng):
    model = make_model(rng)
    data = Dataset.from_arrays(rng.random((10, 2)), rng.random(10))
    config = LocalSearchConfig(tune_antecedents=False, tune_consequents=True, tune_tnorm=False)
    refined, _ = refine(model, data, LearnParams(0.1, 0.2), 5, config)
    assert np.array_equal(refined.mf_params, model.mf_params)
    assert refined.tnorm.p == model.tnorm.p
    assert not np.array_equal(refined.rulebase.consequents, model.rulebase.consequents)


def test_refine_without_epochs(one_rule, linear_data):
    model, history = refine(one_rule(), linear_data, LearnParams(), 0)
    assert history == [loss(model, linear_data)]
    with pytest.raises(InvalidParameterError):
        refine(model, linear_data, LearnParams(), -1)


@pytest.mark.parametrize("rate,momentum", [(-0.1, 0.2), (0.1, 1.0), (0.1, -0.5)])
def test_learn_params_validation(rate, momentum):
    with pytest.raises(InvalidParameterError):
        LearnParams(rate, momentum)


def test_update_floors_shape_parameters(make_model, rng):
    model = make_model(rng, kind=BELL)
    update = ModelGradient.zeros_like(model)
    update = ModelGradient(np.full_like(model.mf_params, -50.0), update.consequents, 1e6)
    moved = apply_update(model, update)
    assert (moved.mf_params[..., :2] == POSITIVE_FLOOR).all()
    np.testing.assert_allclose(moved.mf_params[..., 2], model.mf_params[..., 2] - 50.0)
    assert moved.tnorm.p == 100.0
