import logging
import math

import numpy as np
import pytest

from evonf.common.exceptions import (
    DimensionMismatchError,
    InvalidParameterError,
    NoActiveRulesError,
    SizeOverflowError,
)
from evonf.fuzzy import BELL, GAUSSIAN, TNormParam, tnorm_ss
from evonf.inference import (
    Rule,
    RuleBase,
    TSKModel,
    count_active,
    export_rules,
    firing_strength,
    forward,
    grid_mf_params,
    grid_partition_init,
    infer,
    infer_batch,
    rule_to_text,
)


def _gaussian_model(centres, spreads, antecedents, consequents, p=1.0, active=None):
    antecedents = np.asarray(antecedents, dtype=bool)
    return TSKModel(
        GAUSSIAN,
        np.stack([np.asarray(centres, float), np.asarray(spreads, float)], -1),
        RuleBase(
            antecedents,
            np.asarray(consequents, dtype=float),
            np.ones(len(antecedents), dtype=bool) if active is None else np.asarray(active),
        ),
        TNormParam(p),
    )


def _x_for(membership):
    """Distance from the centre of a unit Gaussian giving ``membership``."""
    return math.sqrt(-2.0 * math.log(membership))


def test_single_variable_firing_is_membership():
    model = _gaussian_model([[0.0]], [[1.0]], [[[True]]], [[0.0, 0.0]])
    rule = model.rulebase.rules[0]
    assert firing_strength(model, rule, np.array([_x_for(0.8)])) == pytest.approx(0.8)


@pytest.mark.parametrize("p", [0.01, 1.0, 100.0])
def test_full_membership_is_tnorm_identity(p):
    model = _gaussian_model(
        [[0.0], [0.0]], [[1.0], [1.0]], [[[True], [True]]], [[0.0, 0.0, 0.0]], p
    )
    x = np.array([0.0, _x_for(0.6)])
    assert firing_strength(model, model.rulebase.rules[0], x) == pytest.approx(0.6, abs=1e-12)


def test_product_limit_of_firing():
    model = _gaussian_model(
        [[0.0], [0.0]], [[1.0], [1.0]], [[[True], [True]]], [[0.0, 0.0, 0.0]], 1e-6
    )
    x = np.array([_x_for(0.6), _x_for(0.8)])
    strength = firing_strength(model, model.rulebase.rules[0], x)
    assert strength == pytest.approx(0.48, abs=1e-4)
    assert strength == pytest.approx(tnorm_ss(0.6, 0.8, 1e-6), rel=1e-12)


def test_dont_care_variables_and_max_within_variable():
    model = _gaussian_model(
        [[0.0, 1.0], [0.0, 1.0]],
        [[1.0, 1.0], [1.0, 1.0]],
        [[[True, True], [False, False]], [[False, True], [True, False]]],
        [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
    )
    x = np.array([0.3, 5.0])
    rules = model.rulebase.rules
    # rule 0 only looks at input 1, where the nearer curve (centre 0) wins
    assert firing_strength(model, rules[0], x) == pytest.approx(math.exp(-0.045))
    assert forward(model, x[None, :]).w[0, 0] == pytest.approx(math.exp(-0.045))


def test_batched_strengths_match_scalar_fold(make_model, rng):
    for kind in (GAUSSIAN, BELL):
        model = make_model(rng, n_inputs=3, mf_per_input=2, kind=kind)
        x = rng.random((6, 3))
        w = forward(model, x).w
        for n in range(6):
            for k, rule in enumerate(model.rulebase.rules):
                assert w[n, k] == pytest.approx(firing_strength(model, rule, x[n]), rel=1e-10)


def test_constant_consequent():
    model = _gaussian_model([[0.0]], [[1.0]], [[[True]]], [[2.0, 0.0]])
    assert infer(model, np.array([0.0])) == pytest.approx(2.0)


def test_equal_firing_averages_consequents():
    model = _gaussian_model([[0.0]], [[1.0]], [[[True]], [[True]]], [[1.0, 0.0], [3.0, 0.0]])
    assert infer(model, np.array([0.4])) == pytest.approx(2.0)


def test_zero_firing_falls_back_to_mean_of_active_rules(caplog):
    model = _gaussian_model(
        [[0.0]],
        [[0.1]],
        [[[True]], [[True]], [[True]]],
        [[1.0, 0.0], [3.0, 0.0], [50.0, 0.0]],
        active=[True, True, False],
    )
    caplog.set_level(logging.WARNING, logger="evonf.inference")
    fp = forward(model, np.array([[100.0]]))
    assert fp.fallback[0]
    assert fp.y[0] == pytest.approx(2.0)
    warnings = [r for r in caplog.records if r.levelno == logging.WARNING]
    assert [r.getMessage() for r in warnings] == ["1 sample(s) used the zero-firing fallback."]


def _brute_force(model, x):
    """Independent straight-line Takagi-Sugeno evaluation of one sample."""
    p = model.tnorm.p
    numerator = denominator = 0.0
    for k in range(model.rulebase.n_rules):
        if not model.rulebase.active[k]:
            continue
        degrees = []
        for i in range(model.n_inputs):
            labels = [j for j in range(model.mf_per_input) if model.rulebase.antecedents[k, i, j]]
            if not labels:
                continue
            best = 0.0
            for j in labels:
                params = model.mf_params[i, j]
                if model.mf_kind == GAUSSIAN:
                    value = math.exp(-((x[i] - params[0]) ** 2) / (2.0 * params[1] ** 2))
                else:
                    value = 1.0 / (1.0 + abs((x[i] - params[2]) / params[0]) ** (2.0 * params[1]))
                best = max(best, value)
            degrees.append(best)
        total = sum(d**-p for d in degrees) - (len(degrees) - 1)
        w = total ** (-1.0 / p)
        c = model.rulebase.consequents[k]
        numerator += w * (c[0] + sum(c[i + 1] * x[i] for i in range(model.n_inputs)))
        denominator += w
    return numerator / denominator


def _random_model(rng):
    n_inputs = int(rng.integers(1, 4))
    m = int(rng.integers(1, 4))
    n_rules = int(rng.integers(1, 6))
    antecedents = rng.random((n_rules, n_inputs, m)) < 0.5
    for k in range(n_rules):
        if not antecedents[k].any():
            antecedents[k, rng.integers(n_inputs), rng.integers(m)] = True
    active = rng.random(n_rules) < 0.8
    active[rng.integers(n_rules)] = True
    shape = (n_inputs, m)
    if rng.random() < 0.5:
        kind = GAUSSIAN
        params = np.stack([rng.random(shape), rng.uniform(0.3, 1.0, shape)], -1)
    else:
        kind = BELL
        params = np.stack(
            [rng.uniform(0.3, 1.0, shape), rng.uniform(0.5, 2.0, shape), rng.random(shape)], -1
        )
    return TSKModel(
        kind,
        params,
        RuleBase(antecedents, rng.normal(0, 1, (n_rules, n_inputs + 1)), active),
        TNormParam(float(rng.uniform(0.1, 3.0))),
    )


def test_inference_matches_brute_force(rng):
    for _ in range(200):
        model = _random_model(rng)
        x = rng.random((4, model.n_inputs))
        y = infer_batch(model, x)
        for n in range(4):
            assert y[n] == pytest.approx(_brute_force(model, x[n]), abs=1e-10)
            assert infer(model, x[n]) == pytest.approx(y[n], rel=1e-12)


def test_rule_order_does_not_matter(rng):
    for _ in range(100):
        model = _random_model(rng)
        order = rng.permutation(model.rulebase.n_rules)
        shuffled = model.with_rulebase(model.rulebase.permuted(order))
        x = rng.random((5, model.n_inputs))
        np.testing.assert_allclose(
            infer_batch(shuffled, x), infer_batch(model, x), rtol=1e-12, atol=1e-12
        )


def test_dropping_a_silent_rule_keeps_the_output(rng):
    """A rule on a label far from the data contributes nothing, active or not."""
    for _ in range(50):
        n_inputs = int(rng.integers(1, 4))
        n_rules = int(rng.integers(1, 5))
        centres = np.stack([rng.random(n_inputs), np.full(n_inputs, 100.0)], -1)
        spreads = np.stack([rng.uniform(0.3, 1.0, n_inputs), np.full(n_inputs, 0.1)], -1)
        antecedents = np.zeros((n_rules + 1, n_inputs, 2), dtype=bool)
        antecedents[:n_rules, :, 0] = rng.random((n_rules, n_inputs)) < 0.7
        antecedents[np.arange(n_rules), rng.integers(n_inputs, size=n_rules), 0] = True
        antecedents[n_rules, rng.integers(n_inputs), 1] = True
        consequents = rng.normal(0.0, 1.0, (n_rules + 1, n_inputs + 1))
        p = float(rng.uniform(0.1, 3.0))
        model = _gaussian_model(centres, spreads, antecedents, consequents, p)
        active = np.ones(n_rules + 1, dtype=bool)
        active[n_rules] = False
        silenced = _gaussian_model(centres, spreads, antecedents, consequents, p, active)
        x = rng.random((5, n_inputs))
        assert (forward(model, x).w[:, n_rules] < 1e-200).all()
        np.testing.assert_allclose(
            infer_batch(silenced, x), infer_batch(model, x), rtol=1e-12, atol=1e-12
        )


def test_output_lies_between_active_consequents(rng):
    for _ in range(200):
        model = _random_model(rng)
        x = rng.random((5, model.n_inputs))
        fp = forward(model, x)
        f = fp.f[:, model.rulebase.active]
        assert (fp.y >= f.min(axis=1) - 1e-12).all()
        assert (fp.y <= f.max(axis=1) + 1e-12).all()


def test_infer_requires_active_rule():
    model = _gaussian_model([[0.0]], [[1.0]], [[[True]]], [[1.0, 0.0]], active=[False])
    assert count_active(model.rulebase) == 0
    with pytest.raises(NoActiveRulesError):
        infer(model, np.array([0.0]))


@pytest.mark.parametrize("x", [np.array([0.0, 1.0]), np.zeros((2, 1)), np.zeros((1, 3))])
def test_infer_rejects_wrong_dimension(x):
    model = _gaussian_model([[0.0]], [[1.0]], [[[True]]], [[1.0, 0.0]])
    with pytest.raises(DimensionMismatchError):
        infer(model, x)


@pytest.mark.parametrize("n_inputs,mf_per_input,expected", [(7, 2, 128), (1, 1, 1), (3, 3, 27)])
def test_grid_partition_size(n_inputs, mf_per_input, expected):
    rb = grid_partition_init(n_inputs, mf_per_input)
    assert rb.n_rules == expected
    assert count_active(rb) == expected
    assert (rb.antecedents.sum(axis=2) == 1).all()
    labels = {tuple(a.argmax(axis=1)) for a in rb.antecedents}
    assert len(labels) == expected
    assert not rb.consequents.any()


def test_grid_partition_is_lexicographic():
    rb = grid_partition_init(2, 3)
    labels = [tuple(a.argmax(axis=1)) for a in rb.antecedents]
    assert labels == sorted(labels)
    assert labels[1] == (0, 1)


def test_grid_partition_cap():
    with pytest.raises(SizeOverflowError):
        grid_partition_init(7, 10)
    with pytest.raises(SizeOverflowError):
        grid_partition_init(3, 3, cap=26)


def test_count_active():
    rb = grid_partition_init(2, 2)
    bits = np.arange(10) % 2 == 0
    alternating = RuleBase(np.ones((10, 1, 1), dtype=bool), np.zeros((10, 2)), bits)
    assert count_active(alternating) == 5
    assert count_active(RuleBase(rb.antecedents, rb.consequents, np.zeros(4, bool))) == 0


def test_rule_needs_a_set_bit():
    with pytest.raises(InvalidParameterError):
        Rule(np.zeros((2, 2), dtype=bool), np.zeros(3))
    with pytest.raises(DimensionMismatchError):
        Rule(np.ones((2, 2), dtype=bool), np.zeros(2))
    with pytest.raises(InvalidParameterError):
        RuleBase(np.zeros((1, 2, 2), dtype=bool), np.zeros((1, 3)), np.ones(1, bool))


def test_rulebase_from_rules_and_permutation():
    rules = [
        Rule(np.array([[True, False]]), np.array([1.0, 2.0])),
        Rule(np.array([[False, True]]), np.array([3.0, 4.0])),
    ]
    rb = RuleBase.from_rules(rules, active=[True, False])
    swapped = rb.permuted([1, 0])
    assert swapped.consequents[0].tolist() == [3.0, 4.0]
    assert swapped.active.tolist() == [False, True]
    assert rules[1].consequent_value(np.array([2.0])) == 11.0


@pytest.mark.parametrize("kind", [GAUSSIAN, BELL])
def test_grid_mf_neighbours_cross_at_half(kind):
    params = grid_mf_params(kind, np.array([0.0]), np.array([1.0]), 2)
    model = TSKModel(kind, params, grid_partition_init(1, 2))
    curves = model.partitions[0]
    assert [c.params[0 if kind == GAUSSIAN else 2] for c in curves] == [0.0, 1.0]
    fp = forward(model, np.array([[0.5]]))
    np.testing.assert_allclose(fp.mu[0, 0], [0.5, 0.5], atol=1e-12)


def test_rule_text_export():
    rb = grid_partition_init(2, 2)
    consequents = rb.consequents.copy()
    consequents[0] = [0.5, 1.0, -2.0]
    active = np.array([True, False, True, True])
    model = TSKModel(
        GAUSSIAN,
        grid_mf_params(GAUSSIAN, np.zeros(2), np.ones(2), 2),
        RuleBase(rb.antecedents, consequents, active),
    )
    assert rule_to_text(model, 0, ["a", "b"]) == (
        "IF a IS {mf1} AND b IS {mf1} THEN y = 0.5 + 1*a + -2*b ; active=1"
    )
    assert rule_to_text(model, 1).startswith("IF x1 IS {mf1} AND x2 IS {mf2} THEN")
    assert rule_to_text(model, 1).endswith("active=0")
    text = export_rules(model, ["a", "b"])
    assert text.endswith("\n")
    assert len(text.splitlines()) == 4
