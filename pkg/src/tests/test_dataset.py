import numpy as np
import pandas as pd
import pytest
from scipy.stats import chi2

from evonf.common.exceptions import (
    DataIOError,
    DatasetEmptyError,
    DatasetTooSmallError,
    DimensionMismatchError,
    ParseError,
    RangeViolationError,
    ZeroRangeError,
    ZeroVarianceError,
)
from evonf.dataset import (
    EXPORT_SCHEMA,
    Dataset,
    Scaling,
    apply_scaling,
    fingerprint,
    fit_scaling,
    load_csv,
    metrics,
    scale,
    split,
    synth_generate,
    unscale,
    unscale_targets,
    write_csv,
)


@pytest.fixture
def survey(tmp_path):
    path = tmp_path / "survey.csv"
    write_csv(synth_generate(69, seed=7), path)
    return path


def _rewrite(path, column, row, value):
    frame = pd.read_csv(path, dtype=str)
    frame.loc[row, column] = value
    frame.to_csv(path, index=False)


def test_load_survey_sized_file(survey):
    data = load_csv(survey)
    assert len(data) == 69
    assert data.schema.columns == EXPORT_SCHEMA.columns
    assert data.inputs.shape == (69, 7)


def test_load_write_load_round_trip(survey, tmp_path):
    first = load_csv(survey)
    again = load_csv(write_csv(first, tmp_path / "again.csv"))
    assert np.array_equal(first.frame.to_numpy(float), again.frame.to_numpy(float))


def test_columns_may_come_in_any_order(survey):
    frame = pd.read_csv(survey, dtype=str)
    frame[frame.columns[::-1]].to_csv(survey, index=False)
    assert load_csv(survey).schema.columns == EXPORT_SCHEMA.columns


def test_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(DatasetEmptyError):
        load_csv(path)
    path.write_text(",".join(EXPORT_SCHEMA.columns) + "\n")
    with pytest.raises(DatasetEmptyError):
        load_csv(path)


def test_missing_file(tmp_path):
    with pytest.raises(DataIOError) as e:
        load_csv(tmp_path / "nope.csv")
    assert "nope.csv" in str(e.value)


def test_range_violation(survey):
    _rewrite(survey, "customers_market", 4, "5")
    with pytest.raises(RangeViolationError) as e:
        load_csv(survey)
    assert e.value.row == 5
    assert e.value.column == "customers_market"


def test_non_numeric_cell(survey):
    _rewrite(survey, "resources", 0, "high")
    with pytest.raises(ParseError) as e:
        load_csv(survey)
    assert (e.value.row, e.value.column) == (1, "resources")
    assert "row 1" in str(e.value)


def test_row_with_extra_fields(survey):
    lines = survey.read_text().splitlines()
    lines[2] += ",1,2"
    survey.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as e:
        load_csv(survey)
    assert e.value.row == 2
    assert "row 2" in str(e.value)


def test_missing_and_unexpected_columns(survey):
    frame = pd.read_csv(survey, dtype=str)
    frame.drop(columns="tax_protection").to_csv(survey, index=False)
    with pytest.raises(ParseError) as e:
        load_csv(survey)
    assert e.value.column == "tax_protection"
    frame.assign(extra="1").to_csv(survey, index=False)
    with pytest.raises(ParseError) as e:
        load_csv(survey)
    assert e.value.column == "extra"


@pytest.mark.parametrize("n,n_train,n_test", [(69, 62, 7), (10, 9, 1), (2, 1, 1)])
def test_split_sizes(n, n_train, n_test):
    """round(0.9 n) training rows with at least one row on each side."""
    train, test = split(synth_generate(n, seed=1))
    assert (len(train), len(test)) == (n_train, n_test)


def test_split_is_a_reproducible_partition():
    data = synth_generate(30, seed=2)
    train, test = split(data, 0.8, seed=11)
    assert sorted(np.concatenate([train.index, test.index]).tolist()) == list(range(30))
    again, _ = split(data, 0.8, seed=11)
    assert train.index.tolist() == again.index.tolist()
    with pytest.raises(DatasetTooSmallError):
        split(synth_generate(1, seed=2))


def _toy():
    return Dataset.from_arrays(np.array([[1.0, 2.0], [3.0, 5.0], [2.0, 3.0]]), [0.0, 1.0, 2.0])


def test_scaling_maps_minimum_row_to_zero():
    scaled = scale(_toy())
    assert scaled.inputs[0].tolist() == [0.0, 0.0]
    assert scaled.frame.to_numpy().min() == 0.0
    assert scaled.frame.to_numpy().max() == 1.0


def test_scale_unscale_identity():
    data = synth_generate(50, seed=4)
    restored = unscale(scale(data))
    np.testing.assert_allclose(
        restored.frame.to_numpy(float), data.frame.to_numpy(float), atol=1e-12
    )
    assert restored.scaling is None


def test_test_data_may_leave_unit_interval():
    data = _toy()
    train_scaling = fit_scaling(data.subset([0, 2]))
    scaled = apply_scaling(data, train_scaling)
    assert scaled.inputs.max() > 1.0
    np.testing.assert_allclose(unscale_targets(scaled.targets, train_scaling), data.targets)


def test_constant_column_cannot_be_scaled():
    data = Dataset.from_arrays(np.array([[1.0, 4.0], [1.0, 5.0]]), [0.0, 1.0])
    with pytest.raises(ZeroRangeError) as e:
        fit_scaling(data)
    assert "x1" in str(e.value)


def test_scaling_record_round_trip():
    scaling = fit_scaling(_toy())
    columns = _toy().schema.columns
    restored = Scaling.from_dict(scaling.to_dict(columns), columns)
    assert np.array_equal(restored.lower, scaling.lower)
    assert np.array_equal(restored.upper, scaling.upper)


def test_metrics_values():
    t = np.array([1.0, -2.0, 0.5, 0.5])
    assert metrics(t, t).rmse == 0.0
    assert metrics(t, t).cc == pytest.approx(1.0)
    zero_mean = np.array([1.0, -1.0, 2.0, -2.0])
    assert metrics(-zero_mean, zero_mean).cc == pytest.approx(-1.0)
    m = metrics(np.array([1.0, 2.0, 3.0]), np.array([2.0, 4.0, 6.0]))
    assert m.rmse == pytest.approx(np.sqrt(14.0 / 3.0))
    assert m.cc == pytest.approx(1.0)


def test_metrics_errors():
    with pytest.raises(ZeroVarianceError):
        metrics(np.ones(4), np.arange(4.0))
    with pytest.raises(DimensionMismatchError):
        metrics(np.ones(3), np.ones(4))
    with pytest.raises(DatasetTooSmallError):
        metrics(np.ones(1), np.ones(1))


def test_synthetic_data_is_reproducible():
    first = synth_generate(69, seed=3, noise_sd=0.0)
    second = synth_generate(69, seed=3, noise_sd=0.0)
    assert first.frame.equals(second.frame)
    assert fingerprint(first) == fingerprint(second)
    assert len(fingerprint(first)) == 16
    assert fingerprint(first) != fingerprint(synth_generate(69, seed=4, noise_sd=0.0))


def test_synthetic_rows_are_schema_valid():
    x = synth_generate(69, seed=7).inputs
    low = np.array([v.low for v in EXPORT_SCHEMA.inputs])
    high = np.array([v.high for v in EXPORT_SCHEMA.inputs])
    assert ((x >= low) & (x <= high)).all()
    assert np.array_equal(x, np.round(x))


def test_synthetic_inputs_are_uniform():
    frame = synth_generate(10_000, seed=1).frame
    statistic, dof = 0.0, 0
    for v in EXPORT_SCHEMA.inputs:
        counts = frame[v.name].value_counts().sort_index().to_numpy()
        assert counts.size == int(v.high - v.low) + 1
        expected = counts.sum() / counts.size
        statistic += float(((counts - expected) ** 2 / expected).sum())
        dof += counts.size - 1
    assert chi2.sf(statistic, dof) > 0.01


def test_dataset_requires_schema_columns():
    frame = pd.DataFrame({"a": [1.0], "y": [2.0]})
    with pytest.raises(DimensionMismatchError):
        Dataset(frame)
