"""Export behaviour data: schema, CSV ingestion, scaling, splitting, metrics and synthesis.

The seven inputs are ordinal survey answers. Models work on min-max scaled copies of the
data; the scaling record travels with the scaled dataset so predictions can be mapped back
and so test data can be scaled with the statistics of the training data (values outside
[0, 1] are allowed there).
"""
import logging
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Final, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from evonf.common import make_hash
from evonf.common.exceptions import (
    DataIOError,
    DatasetEmptyError,
    DatasetTooSmallError,
    DimensionMismatchError,
    InvalidParameterError,
    ParseError,
    RangeViolationError,
    ZeroRangeError,
    ZeroVarianceError,
)

logger = logging.getLogger(__name__)

# Bump whenever ``ground_truth`` or the sampling in ``synth_generate`` changes.
GENERATOR_VERSION: Final = "1"


@dataclass(frozen=True)
class Variable:
    """Input column with its (inclusive) ordinal range, unbounded when the range is None."""

    name: str
    low: Optional[float] = None
    high: Optional[float] = None

    def __str__(self) -> str:
        if self.low is None or self.high is None:
            return self.name
        return f"{self.name} ({self.low:g}-{self.high:g})"


@dataclass(frozen=True)
class Schema:
    inputs: Tuple[Variable, ...]
    target: str

    @property
    def input_names(self) -> List[str]:
        return [v.name for v in self.inputs]

    @property
    def columns(self) -> List[str]:
        return self.input_names + [self.target]

    @classmethod
    def generic(cls, n_inputs: int) -> "Schema":
        """Unbounded schema ``x1 .. xn -> y``."""
        return cls(tuple(Variable(f"x{i + 1}") for i in range(n_inputs)), "y")


EXPORT_SCHEMA: Final = Schema(
    inputs=(
        Variable("product_manufactured", 1, 5),
        Variable("resources", 1, 5),
        Variable("tax_protection", 1, 5),
        Variable("customers_market", 1, 4),
        Variable("involvement_strategy", 1, 4),
        Variable("financial_independence", 1, 5),
        Variable("suppliers_relationship", 1, 5),
    ),
    target="export_intensity",
)


@dataclass(frozen=True, eq=False)
class Scaling:
    """Per-column minimum and maximum used by min-max scaling, in schema column order."""

    lower: np.ndarray
    upper: np.ndarray

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    def to_dict(self, columns: Sequence[str]) -> dict:
        return {
            c: {"min": float(lo), "max": float(hi)}
            for c, lo, hi in zip(columns, self.lower, self.upper)
        }

    @classmethod
    def from_dict(cls, record: dict, columns: Sequence[str]) -> "Scaling":
        return cls(
            np.array([record[c]["min"] for c in columns], dtype=float),
            np.array([record[c]["max"] for c in columns], dtype=float),
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rows of inputs and target held in a DataFrame with the schema's column order.

    The frame index keeps the original row numbers through splits.
    """

    frame: pd.DataFrame
    schema: Schema = EXPORT_SCHEMA
    scaling: Optional[Scaling] = None

    def __post_init__(self) -> None:
        if list(self.frame.columns) != self.schema.columns:
            raise DimensionMismatchError(
                f"Columns {list(self.frame.columns)} do not follow the schema"
                f" {self.schema.columns}."
            )

    @classmethod
    def from_arrays(
        cls, inputs: np.ndarray, targets: np.ndarray, schema: Optional[Schema] = None
    ) -> "Dataset":
        inputs = np.asarray(inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs[:, None]
        targets = np.asarray(targets, dtype=float).ravel()
        if inputs.shape[0] != targets.shape[0]:
            raise DimensionMismatchError(
                f"{inputs.shape[0]} input rows but {targets.shape[0]} targets."
            )
        schema = schema or Schema.generic(inputs.shape[1])
        frame = pd.DataFrame(inputs, columns=schema.input_names)
        frame[schema.target] = targets
        return cls(frame, schema)

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def inputs(self) -> np.ndarray:
        return self.frame[self.schema.input_names].to_numpy(dtype=float)

    @property
    def targets(self) -> np.ndarray:
        return self.frame[self.schema.target].to_numpy(dtype=float)

    @property
    def index(self) -> np.ndarray:
        return self.frame.index.to_numpy()

    def subset(self, positions: Sequence[int]) -> "Dataset":
        return replace(self, frame=self.frame.iloc[list(positions)])


@dataclass(frozen=True)
class Metrics:
    rmse: float
    cc: float

    def __str__(self) -> str:
        return f"rmse={self.rmse:.6g} cc={self.cc:.6g}"


def _validate(frame: pd.DataFrame, schema: Schema) -> pd.DataFrame:
    """Parse every cell as a number and check the declared input ranges."""
    parsed = pd.DataFrame(index=frame.index)
    for column in schema.columns:
        values = pd.to_numeric(frame[column].str.strip(), errors="coerce")
        bad = values.isna() | ~np.isfinite(values.astype(float))
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0]) + 1
            raise ParseError(f"Not a number: {frame[column].iloc[row - 1]!r}", row, column)
        parsed[column] = values
    for variable in schema.inputs:
        if variable.low is None or variable.high is None:
            continue
        values = parsed[variable.name]
        bad = (values < variable.low) | (values > variable.high)
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0]) + 1
            raise RangeViolationError(
                f"Value {values.iloc[row - 1]} outside {variable}", row, variable.name
            )
    return parsed


def _malformed_row(path: Path, error: Exception) -> ParseError:
    # the tokenizer counts file lines, the header being line 1
    found = re.search(r"line (\d+)", str(error))
    row = int(found.group(1)) - 1 if found else None
    return ParseError(f"Malformed row in {path}: {error}".strip(), row=row)


def load_csv(path: Path, schema: Schema = EXPORT_SCHEMA) -> Dataset:
    """Read a headed, comma separated data file.

    Columns may appear in any order but must be exactly the schema's columns.

    Raises:
        DataIOError: when the file cannot be read
        DatasetEmptyError: when the file has no data rows
        ParseError: for a row with too many fields, a missing column or a non numeric cell
        RangeViolationError: for an input outside its declared range
    """
    logger.info("Loading dataset from %s", path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as e:
        raise DatasetEmptyError(f"Data file {path} is empty.") from e
    except pd.errors.ParserError as e:
        raise _malformed_row(path, e) from e
    except (OSError, UnicodeDecodeError) as e:
        raise DataIOError(f"Cannot read data file {path}: {e}") from e
    frame.columns = [c.strip() for c in frame.columns]
    for column in schema.columns:
        if column not in frame.columns:
            raise ParseError(f"Missing column in {path}", column=column)
    extra = sorted(set(frame.columns) - set(schema.columns))
    if extra:
        raise ParseError(f"Unexpected column in {path}", column=extra[0])
    if frame.empty:
        raise DatasetEmptyError(f"Data file {path} has no data rows.")
    data = Dataset(_validate(frame[schema.columns], schema), schema)
    logger.info("Loaded %d rows", len(data))
    return data


def write_csv(data: Dataset, path: Path) -> Path:
    """Write ``data`` so that ``load_csv`` reads it back unchanged."""
    try:
        data.frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    except OSError as e:
        raise DataIOError(f"Cannot write data file {path}: {e}") from e
    return path


def split(data: Dataset, train_fraction: float = 0.9, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Shuffle the rows with ``seed`` and cut them into a train and a test part.

    The train part holds ``round(train_fraction * n)`` rows (halves rounded up), kept within
    ``[1, n - 1]`` so both parts are non-empty.
    """
    n = len(data)
    if n < 2:
        raise DatasetTooSmallError(f"Need at least 2 rows to split, got {n}.")
    if not 0.0 < train_fraction < 1.0:
        raise InvalidParameterError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = min(max(math.floor(train_fraction * n + 0.5), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    return data.subset(order[:n_train]), data.subset(order[n_train:])


def fit_scaling(data: Dataset) -> Scaling:
    """Column minima and maxima of ``data``.

    Raises:
        ZeroRangeError: if a column is constant
    """
    if len(data) == 0:
        raise DatasetEmptyError("Cannot scale an empty dataset.")
    values = data.frame.to_numpy(dtype=float)
    lower, upper = values.min(axis=0), values.max(axis=0)
    constant = np.flatnonzero(upper - lower <= 0.0)
    if constant.size:
        raise ZeroRangeError(
            f"Column {data.schema.columns[constant[0]]!r} is constant and cannot be scaled."
        )
    return Scaling(lower, upper)


def apply_scaling(data: Dataset, scaling: Scaling) -> Dataset:
    """Min-max scale every column of ``data`` with a previously fitted record."""
    scaled = (data.frame.to_numpy(dtype=float) - scaling.lower) / scaling.span
    frame = pd.DataFrame(scaled, index=data.frame.index, columns=data.frame.columns)
    return replace(data, frame=frame, scaling=scaling)


def scale(data: Dataset) -> Dataset:
    """Map inputs and target of ``data`` to [0, 1] with its own column minima and maxima."""
    return apply_scaling(data, fit_scaling(data))


def unscale(data: Dataset) -> Dataset:
    """Undo ``scale``; datasets without a scaling record are returned as they are."""
    if data.scaling is None:
        return data
    values = data.frame.to_numpy(dtype=float) * data.scaling.span + data.scaling.lower
    frame = pd.DataFrame(values, index=data.frame.index, columns=data.frame.columns)
    return replace(data, frame=frame, scaling=None)


def unscale_targets(values: np.ndarray, scaling: Scaling) -> np.ndarray:
    """Map scaled target values (eg predictions) back to target units."""
    return np.asarray(values, dtype=float) * scaling.span[-1] + scaling.lower[-1]


def rmse(prediction: np.ndarray, target: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(prediction) - np.asarray(target)) ** 2)))


def metrics(prediction: np.ndarray, target: np.ndarray) -> Metrics:
    """Root mean squared error and Pearson correlation coefficient.

    Raises:
        DimensionMismatchError: for series of different length
        DatasetTooSmallError: for fewer than 2 points
        ZeroVarianceError: when either series is constant
    """
    prediction = np.asarray(prediction, dtype=float).ravel()
    target = np.asarray(target, dtype=float).ravel()
    if prediction.shape != target.shape:
        raise DimensionMismatchError(
            f"{prediction.size} predictions for {target.size} targets."
        )
    if prediction.size < 2:
        raise DatasetTooSmallError("Metrics need at least 2 points.")
    if np.ptp(prediction) == 0.0 or np.ptp(target) == 0.0:
        raise ZeroVarianceError("Correlation is undefined for a constant series.")
    cc = float(np.clip(np.corrcoef(prediction, target)[0, 1], -1.0, 1.0))
    return Metrics(rmse(prediction, target), cc)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def ground_truth(z: np.ndarray) -> np.ndarray:
    """Noise free export intensity of the synthetic generator.

    ``z`` holds the seven inputs of ``EXPORT_SCHEMA`` mapped to [0, 1] by their declared
    ranges, in schema order. The function is an interaction of financial independence and
    involvement strategy plus saturating and threshold effects of the other answers::

        0.10 + 0.30 * fin * inv + 0.15 * (1 - exp(-3 * prod)) + 0.10 * res^2
             + 0.10 * sigmoid(6 * (cust - 0.5)) - 0.08 * tax + 0.08 * sup * (1 - inv)
    """
    prod, res, tax, cust, inv, fin, sup = (z[:, i] for i in range(7))
    return (
        0.10
        + 0.30 * fin * inv
        + 0.15 * (1.0 - np.exp(-3.0 * prod))
        + 0.10 * res**2
        + 0.10 * _sigmoid(6.0 * (cust - 0.5))
        - 0.08 * tax
        + 0.08 * sup * (1.0 - inv)
    )


def synth_generate(n: int, seed: int, noise_sd: float = 0.05) -> Dataset:
    """Draw ``n`` schema valid rows with uniformly distributed ordinal answers.

    The target is ``ground_truth`` plus Gaussian noise with standard deviation ``noise_sd``.
    """
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    if not noise_sd >= 0.0:
        raise InvalidParameterError(f"noise_sd must be >= 0, got {noise_sd}")
    rng = np.random.default_rng(seed)
    frame = pd.DataFrame(
        {
            v.name: rng.integers(int(v.low), int(v.high) + 1, size=n)  # type: ignore[arg-type]
            for v in EXPORT_SCHEMA.inputs
        }
    )
    low = np.array([v.low for v in EXPORT_SCHEMA.inputs], dtype=float)
    high = np.array([v.high for v in EXPORT_SCHEMA.inputs], dtype=float)
    z = (frame.to_numpy(dtype=float) - low) / (high - low)
    frame[EXPORT_SCHEMA.target] = ground_truth(z) + rng.normal(0.0, noise_sd, size=n)
    logger.info("Generated %d synthetic rows (seed %d, noise_sd %g)", n, seed, noise_sd)
    return Dataset(frame, EXPORT_SCHEMA)


def fingerprint(data: Dataset) -> str:
    """Short hex digest identifying the exact rows of ``data``."""
    rows = data.frame.to_csv(index=False, lineterminator="\n").splitlines()
    return f"{make_hash(rows):016x}"
