"""Layered chromosome of an evolvable Takagi-Sugeno model.

Real genes, in order:

1. membership function shapes, input-major, MF-minor, shape parameter innermost
2. consequent coefficients, rule-major, stored as angles in degrees (``arctan`` coding)
3. the Schweizer-Sklar exponent
4. learning rate and momentum of the local search

The rule selection layer is a separate bit vector, one bit per rule of the grid. The type of
inference system is not a gene: it is always Takagi-Sugeno.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Final, Optional, Tuple

import numpy as np

from evonf.common.exceptions import (
    InvalidParameterError,
    LayoutMismatchError,
    OutOfRangeError,
    ZeroRangeError,
)
from evonf.dataset import Dataset
from evonf.fuzzy import BELL, CENTRE_PARAM, GAUSSIAN, MF_PARAMS, TNormParam
from evonf.inference import (
    DEFAULT_RULE_CAP,
    RuleBase,
    TSKModel,
    grid_mf_params,
    grid_partition_init,
)
from evonf.local_search import TNORM_LIMITS, LearnParams

logger = logging.getLogger(__name__)

FIS_TYPE: Final = "takagi-sugeno"

ANGLE_LIMIT: Final = 89.9
CENTRE_MARGIN: Final = 0.5
WIDTH_FRACTION: Final = (0.05, 1.0)
BELL_SLOPE_LIMITS: Final = (0.5, 10.0)
RATE_LIMITS: Final = (0.001, 0.5)
MOMENTUM_LIMITS: Final = (0.0, 0.95)


@dataclass(frozen=True)
class GeneBounds:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise InvalidParameterError(f"Empty gene domain [{self.lo}, {self.hi}]")


def _encode_angles(coef: np.ndarray) -> np.ndarray:
    # beyond 45 degrees work with the complement so large coefficients keep their precision
    coef = np.asarray(coef, dtype=float)
    mag = np.abs(coef)
    with np.errstate(divide="ignore"):
        steep = 90.0 - np.degrees(np.arctan(1.0 / mag))
    return np.where(mag <= 1.0, np.degrees(np.arctan(coef)), np.copysign(steep, coef))


def _decode_angles(alpha: np.ndarray) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    mag = np.abs(alpha)
    with np.errstate(divide="ignore"):
        steep = 1.0 / np.tan(np.radians(90.0 - mag))
    return np.where(mag <= 45.0, np.tan(np.radians(alpha)), np.copysign(steep, alpha))


def angular_encode(coef: float) -> float:
    """Direction of the tangent ``arctan(coef)`` in degrees, within (-90, 90)."""
    if not math.isfinite(coef):
        raise InvalidParameterError(f"Coefficient must be finite, got {coef!r}")
    return float(_encode_angles(np.array(coef)))


def angular_decode(alpha: float) -> float:
    """Coefficient ``tan(alpha)`` of an angle in degrees; inverse of ``angular_encode``."""
    if not -90.0 < alpha < 90.0:
        raise OutOfRangeError(f"Angle must lie in (-90, 90) degrees, got {alpha!r}")
    return float(_decode_angles(np.array(alpha)))


@dataclass(frozen=True, eq=False)
class GenomeLayout:
    """Segment sizes and per-gene bounds of the real part of a chromosome."""

    n_mf_genes: int
    n_consequent_genes: int
    n_rules: int
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n_real(self) -> int:
        return self.n_mf_genes + self.n_consequent_genes + 3

    @property
    def mf(self) -> slice:
        return slice(0, self.n_mf_genes)

    @property
    def consequent(self) -> slice:
        return slice(self.n_mf_genes, self.n_mf_genes + self.n_consequent_genes)

    @property
    def tnorm(self) -> int:
        return self.n_mf_genes + self.n_consequent_genes

    @property
    def learning(self) -> slice:
        return slice(self.tnorm + 1, self.tnorm + 3)

    def bounds(self, index: int) -> GeneBounds:
        return GeneBounds(float(self.lower[index]), float(self.upper[index]))

    def same_as(self, other: "GenomeLayout") -> bool:
        return (
            self.n_mf_genes == other.n_mf_genes
            and self.n_consequent_genes == other.n_consequent_genes
            and self.n_rules == other.n_rules
        )


@dataclass(frozen=True, eq=False)
class Chromosome:
    """Real genes plus the rule selection bits, laid out by ``layout``."""

    real: np.ndarray
    bits: np.ndarray
    layout: GenomeLayout

    def __post_init__(self) -> None:
        if self.real.shape != (self.layout.n_real,) or self.bits.shape != (self.layout.n_rules,):
            raise LayoutMismatchError(
                f"Expected {self.layout.n_real} real genes and {self.layout.n_rules} bits,"
                f" got {self.real.shape} and {self.bits.shape}."
            )

    @property
    def layer1_mf(self) -> np.ndarray:
        return self.real[self.layout.mf]

    @property
    def layer1_consequent(self) -> np.ndarray:
        return self.real[self.layout.consequent]

    @property
    def layer2_rules(self) -> np.ndarray:
        return self.bits

    @property
    def layer3_tnorm(self) -> float:
        return float(self.real[self.layout.tnorm])

    @property
    def layer4_learning(self) -> np.ndarray:
        return self.real[self.layout.learning]

    def within_bounds(self) -> bool:
        return bool(
            np.all(self.real >= self.layout.lower) and np.all(self.real <= self.layout.upper)
        )

    def equals(self, other: "Chromosome") -> bool:
        return (
            self.layout.same_as(other.layout)
            and np.array_equal(self.real, other.real)
            and np.array_equal(self.bits, other.bits)
        )


@dataclass(frozen=True, eq=False)
class EvoNFCandidate:
    """A model with its local search hyperparameters and, once evaluated, its fitness."""

    model: TSKModel
    learn: LearnParams
    fitness: Optional[float] = None

    def with_fitness(self, fitness: float) -> "EvoNFCandidate":
        return replace(self, fitness=fitness)


@dataclass(frozen=True, eq=False)
class ModelTemplate:
    """Fixed topology shared by every chromosome of a run.

    Holds the input ranges the MF bounds derive from, the MF family and count, and the grid
    antecedents of the rule base.
    """

    mf_kind: str
    lower: np.ndarray
    upper: np.ndarray
    mf_per_input: int
    antecedents: np.ndarray

    def __post_init__(self) -> None:
        if self.mf_kind not in MF_PARAMS:
            raise InvalidParameterError(f"Unknown membership function family: {self.mf_kind!r}")
        flat = np.flatnonzero(self.upper - self.lower <= 0.0)
        if flat.size:
            raise ZeroRangeError(f"Input {flat[0] + 1} has an empty range.")

    @classmethod
    def from_ranges(
        cls,
        lower: np.ndarray,
        upper: np.ndarray,
        mf_kind: str = GAUSSIAN,
        mf_per_input: int = 2,
        cap: int = DEFAULT_RULE_CAP,
    ) -> "ModelTemplate":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        rulebase = grid_partition_init(lower.size, mf_per_input, cap)
        return cls(mf_kind, lower, upper, mf_per_input, rulebase.antecedents)

    @classmethod
    def from_dataset(
        cls,
        data: Dataset,
        mf_kind: str = GAUSSIAN,
        mf_per_input: int = 2,
        cap: int = DEFAULT_RULE_CAP,
    ) -> "ModelTemplate":
        """Grid partitioned topology over the observed input ranges of ``data``."""
        x = data.inputs
        return cls.from_ranges(x.min(axis=0), x.max(axis=0), mf_kind, mf_per_input, cap)

    @property
    def n_inputs(self) -> int:
        return int(self.lower.size)

    @property
    def n_rules(self) -> int:
        return int(self.antecedents.shape[0])

    @property
    def n_shape_params(self) -> int:
        return len(MF_PARAMS[self.mf_kind])

    def mf_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Lower and upper bounds shaped like the MF parameter array."""
        span = self.upper - self.lower
        shape = (self.n_inputs, self.mf_per_input, self.n_shape_params)
        lo, hi = np.empty(shape), np.empty(shape)
        centre = CENTRE_PARAM[self.mf_kind]
        width = 1 if self.mf_kind == GAUSSIAN else 0
        lo[..., centre] = (self.lower - CENTRE_MARGIN * span)[:, None]
        hi[..., centre] = (self.upper + CENTRE_MARGIN * span)[:, None]
        lo[..., width] = (WIDTH_FRACTION[0] * span)[:, None]
        hi[..., width] = (WIDTH_FRACTION[1] * span)[:, None]
        if self.mf_kind == BELL:
            lo[..., 1], hi[..., 1] = BELL_SLOPE_LIMITS
        return lo, hi

    def layout(self) -> GenomeLayout:
        mf_lo, mf_hi = self.mf_bounds()
        n_consequent = self.n_rules * (self.n_inputs + 1)
        lower = np.concatenate(
            [
                mf_lo.ravel(),
                np.full(n_consequent, -ANGLE_LIMIT),
                [TNORM_LIMITS[0], RATE_LIMITS[0], MOMENTUM_LIMITS[0]],
            ]
        )
        upper = np.concatenate(
            [
                mf_hi.ravel(),
                np.full(n_consequent, ANGLE_LIMIT),
                [TNORM_LIMITS[1], RATE_LIMITS[1], MOMENTUM_LIMITS[1]],
            ]
        )
        return GenomeLayout(mf_lo.size, n_consequent, self.n_rules, lower, upper)

    def grid_model(self) -> TSKModel:
        """Evenly spaced MFs, zero consequents, all rules active and ``p = 1``."""
        params = grid_mf_params(self.mf_kind, self.lower, self.upper, self.mf_per_input)
        lo, hi = self.mf_bounds()
        rulebase = RuleBase(
            self.antecedents.copy(),
            np.zeros((self.n_rules, self.n_inputs + 1)),
            np.ones(self.n_rules, dtype=bool),
        )
        return TSKModel(self.mf_kind, np.clip(params, lo, hi), rulebase, TNormParam(1.0))

    def check(self, model: TSKModel) -> None:
        if (
            model.mf_kind != self.mf_kind
            or model.mf_params.shape != (self.n_inputs, self.mf_per_input, self.n_shape_params)
            or not np.array_equal(model.rulebase.antecedents, self.antecedents)
        ):
            raise LayoutMismatchError("Model topology does not match the chromosome template.")


def repair_selection(bits: np.ndarray) -> np.ndarray:
    """Force the highest-index rule on when no rule is selected."""
    bits = np.asarray(bits, dtype=bool)
    if bits.any():
        return bits
    repaired = bits.copy()
    repaired[-1] = True
    return repaired


def encode(candidate: EvoNFCandidate, template: ModelTemplate) -> Chromosome:
    """Write a candidate into the fixed gene layout of ``template``."""
    template.check(candidate.model)
    model = candidate.model
    real = np.concatenate(
        [
            model.mf_params.ravel(),
            _encode_angles(model.rulebase.consequents).ravel(),
            [model.tnorm.p, candidate.learn.rate, candidate.learn.momentum],
        ]
    )
    return Chromosome(real, model.rulebase.active.astype(bool), template.layout())


def decode(chrom: Chromosome, template: ModelTemplate) -> EvoNFCandidate:
    """Build the candidate a chromosome describes.

    Real genes are clamped into their bounds and an empty rule selection is repaired, so every
    decoded model is valid.
    """
    layout = template.layout()
    if not chrom.layout.same_as(layout):
        raise LayoutMismatchError("Chromosome layout does not match the template.")
    real = np.clip(chrom.real, layout.lower, layout.upper)
    mf_params = real[layout.mf].reshape(template.n_inputs, template.mf_per_input, -1)
    consequents = _decode_angles(real[layout.consequent]).reshape(
        template.n_rules, template.n_inputs + 1
    )
    rate, momentum = real[layout.learning]
    model = TSKModel(
        template.mf_kind,
        mf_params,
        RuleBase(template.antecedents.copy(), consequents, repair_selection(chrom.bits)),
        TNormParam(float(real[layout.tnorm])),
    )
    return EvoNFCandidate(model, LearnParams(float(rate), float(momentum)))


def initial_chromosome(
    template: ModelTemplate, rng: np.random.Generator, init_angle: float = 45.0
) -> Chromosome:
    """Random chromosome: every real gene uniform within its bounds and every rule selected.

    Angular genes are drawn from ``[-init_angle, init_angle]`` so initial consequents stay
    moderate.
    """
    layout = template.layout()
    lower, upper = layout.lower.copy(), layout.upper.copy()
    limit = min(init_angle, ANGLE_LIMIT)
    lower[layout.consequent], upper[layout.consequent] = -limit, limit
    real = rng.uniform(lower, upper)
    return Chromosome(real, np.ones(layout.n_rules, dtype=bool), layout)


def grid_chromosome(template: ModelTemplate, learn: LearnParams = LearnParams()) -> Chromosome:
    """Chromosome of the plain grid partitioned model."""
    return encode(EvoNFCandidate(template.grid_model(), learn), template)
