"""Takagi-Sugeno rule base construction and inference.

A rule's antecedent is a bit mask per input variable over that variable's fuzzy partition.
Set bits within one variable are joined by ``max`` (fuzzy OR), variables are joined by the
Schweizer-Sklar T-norm, and variables without any set bit are "don't care". The crisp output
is the firing-strength weighted average of the active rules' linear consequents.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Final, List, Optional, Sequence, Tuple

import numpy as np

from evonf.common.exceptions import (
    DimensionMismatchError,
    InvalidParameterError,
    NoActiveRulesError,
    SizeOverflowError,
)
from evonf.fuzzy import (
    MF_PARAMS,
    MembershipFunction,
    TNormParam,
    evaluate,
    make_mf,
    mf_values,
    mf_values_and_gradients,
    tnorm_ss,
    tnorm_ss_reduce_with_gradient,
)

logger = logging.getLogger(__name__)

DEFAULT_RULE_CAP: Final = 10**6

# Below this total firing strength the weighted average is replaced by a plain mean.
FIRING_EPS: Final = 1e-12

# Memberships are floored here so the log-domain T-norm never sees an exact zero.
MEMBERSHIP_FLOOR: Final = float(np.finfo(float).tiny)


@dataclass(frozen=True, eq=False)
class Rule:
    """One Takagi-Sugeno rule.

    ``antecedent`` is a ``(n_inputs, mf_per_input)`` boolean mask, ``consequent`` holds the
    intercept followed by one slope per input.
    """

    antecedent: np.ndarray
    consequent: np.ndarray

    def __post_init__(self) -> None:
        if self.antecedent.ndim != 2 or not self.antecedent.any():
            raise InvalidParameterError("A rule needs at least one set antecedent bit.")
        if self.consequent.shape != (self.antecedent.shape[0] + 1,):
            raise DimensionMismatchError(
                f"Consequent needs {self.antecedent.shape[0] + 1} coefficients,"
                f" got {self.consequent.shape}."
            )

    def consequent_value(self, x: np.ndarray) -> float:
        return float(self.consequent[0] + np.dot(self.consequent[1:], x))


@dataclass(frozen=True, eq=False)
class RuleBase:
    """Ordered rules stored column-wise, plus the rule selection vector.

    A rule base without active rules can be built and counted, but not inferred with.
    """

    antecedents: np.ndarray
    consequents: np.ndarray
    active: np.ndarray

    def __post_init__(self) -> None:
        n_rules = self.antecedents.shape[0]
        if self.antecedents.ndim != 3:
            raise DimensionMismatchError("Antecedents must be shaped (rules, inputs, mf).")
        if self.consequents.shape != (n_rules, self.antecedents.shape[1] + 1):
            raise DimensionMismatchError(
                f"Consequents must be shaped {(n_rules, self.antecedents.shape[1] + 1)},"
                f" got {self.consequents.shape}."
            )
        if self.active.shape != (n_rules,):
            raise DimensionMismatchError("Active vector length must equal the rule count.")
        if not self.antecedents.reshape(n_rules, -1).any(axis=1).all():
            raise InvalidParameterError("Every rule needs at least one set antecedent bit.")

    @classmethod
    def from_rules(
        cls, rules: Sequence[Rule], active: Optional[Sequence[bool]] = None
    ) -> "RuleBase":
        if not rules:
            raise InvalidParameterError("A rule base needs at least one rule.")
        return cls(
            antecedents=np.stack([r.antecedent for r in rules]).astype(bool),
            consequents=np.stack([r.consequent for r in rules]).astype(float),
            active=np.ones(len(rules), dtype=bool)
            if active is None
            else np.asarray(active, dtype=bool),
        )

    @property
    def n_rules(self) -> int:
        return int(self.antecedents.shape[0])

    @property
    def rules(self) -> List[Rule]:
        return [Rule(a, c) for a, c in zip(self.antecedents, self.consequents)]

    def permuted(self, order: Sequence[int]) -> "RuleBase":
        idx = np.asarray(order)
        return RuleBase(self.antecedents[idx], self.consequents[idx], self.active[idx])


@dataclass(frozen=True, eq=False)
class TSKModel:
    """Fuzzy partitions, rule base and T-norm exponent of a Takagi-Sugeno system.

    ``mf_params`` is shaped ``(n_inputs, mf_per_input, n_shape_params)`` for the MF family
    named by ``mf_kind``.
    """

    mf_kind: str
    mf_params: np.ndarray
    rulebase: RuleBase
    tnorm: TNormParam = field(default_factory=lambda: TNormParam(1.0))

    def __post_init__(self) -> None:
        if self.mf_kind not in MF_PARAMS:
            raise InvalidParameterError(f"Unknown membership function family: {self.mf_kind!r}")
        expected = (
            self.rulebase.antecedents.shape[1],
            self.rulebase.antecedents.shape[2],
            len(MF_PARAMS[self.mf_kind]),
        )
        if self.mf_params.shape != expected:
            raise DimensionMismatchError(
                f"MF parameters must be shaped {expected}, got {self.mf_params.shape}."
            )

    @property
    def n_inputs(self) -> int:
        return int(self.mf_params.shape[0])

    @property
    def mf_per_input(self) -> int:
        return int(self.mf_params.shape[1])

    @property
    def partitions(self) -> Tuple[Tuple[MembershipFunction, ...], ...]:
        return tuple(
            tuple(make_mf(self.mf_kind, tuple(mf)) for mf in variable)
            for variable in self.mf_params
        )

    def with_rulebase(self, rulebase: RuleBase) -> "TSKModel":
        return replace(self, rulebase=rulebase)


@dataclass(frozen=True, eq=False)
class ForwardPass:
    """Intermediate values of a batched inference, kept for gradient computation."""

    mu: np.ndarray  # (n, inputs, mf), floored
    dmu: Optional[np.ndarray]  # (n, inputs, mf, params), 0 where the floor applied
    winner: np.ndarray  # (n, rules, inputs) label chosen by max within each variable
    present: np.ndarray  # (rules, inputs)
    w: np.ndarray  # (n, rules) firing strengths
    dw_dagg: np.ndarray  # (n, rules, inputs)
    dw_dp: np.ndarray  # (n, rules)
    f: np.ndarray  # (n, rules) consequent values
    total: np.ndarray  # (n,) summed firing of active rules
    fallback: np.ndarray  # (n,) samples using the unweighted mean
    y: np.ndarray  # (n,)


def _check_inputs(model: TSKModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise DimensionMismatchError(
            f"Expected inputs with {model.n_inputs} variables, got shape {x.shape}."
        )
    return x


def forward(model: TSKModel, x: np.ndarray, with_gradient: bool = False) -> ForwardPass:
    """Run batched inference and keep every intermediate needed for backpropagation.

    Args:
        model: the fuzzy system
        x: samples, ``(n_samples, n_inputs)``
        with_gradient: also compute MF parameter derivatives

    Returns:
        the forward pass record
    """
    x = _check_inputs(model, x)
    rb = model.rulebase
    if not rb.active.any():
        raise NoActiveRulesError("The rule base has no active rules.")

    dmu: Optional[np.ndarray] = None
    if with_gradient:
        mu, dmu = mf_values_and_gradients(model.mf_kind, model.mf_params, x)
        dmu = np.where((mu >= MEMBERSHIP_FLOOR)[..., None], dmu, 0.0)
    else:
        mu = mf_values(model.mf_kind, model.mf_params, x)
    mu = np.maximum(mu, MEMBERSHIP_FLOOR)

    masked = np.where(rb.antecedents[None], mu[:, None], -np.inf)
    winner = masked.argmax(axis=-1)
    present = rb.antecedents.any(axis=-1)
    agg = np.where(present[None], masked.max(axis=-1), 1.0)
    present_b = np.broadcast_to(present[None], agg.shape)
    w, dw_dagg, dw_dp = tnorm_ss_reduce_with_gradient(agg, model.tnorm.p, present_b)

    f = rb.consequents[:, 0][None, :] + x @ rb.consequents[:, 1:].T
    wa = np.where(rb.active[None], w, 0.0)
    total = wa.sum(axis=1)
    fallback = total < FIRING_EPS
    mean_f = f[:, rb.active].mean(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        weighted = (wa * f).sum(axis=1) / total
    y = np.where(fallback, mean_f, weighted)
    if fallback.any():
        logger.warning("%d sample(s) used the zero-firing fallback.", int(fallback.sum()))
    return ForwardPass(mu, dmu, winner, present, w, dw_dagg, dw_dp, f, total, fallback, y)


def firing_strength(model: TSKModel, rule: Rule, x: np.ndarray) -> float:
    """Firing strength of one rule for one input vector.

    Per variable the memberships of the set labels are joined by ``max``; the per-variable
    degrees are then folded left to right with the Schweizer-Sklar T-norm. Variables without
    set bits are skipped.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n_inputs,) or rule.antecedent.shape != model.mf_params.shape[:2]:
        raise DimensionMismatchError(
            f"Expected {model.n_inputs} inputs and an antecedent shaped"
            f" {model.mf_params.shape[:2]}."
        )
    partitions = model.partitions
    strength: Optional[float] = None
    for i, bits in enumerate(rule.antecedent):
        if not bits.any():
            continue
        degree = max(evaluate(partitions[i][j], x[i]) for j in np.flatnonzero(bits))
        strength = degree if strength is None else tnorm_ss(strength, degree, model.tnorm.p)
    return 1.0 if strength is None else strength


def infer_batch(model: TSKModel, x: np.ndarray) -> np.ndarray:
    """Crisp outputs for a batch of samples, ``(n_samples, n_inputs) -> (n_samples,)``."""
    return forward(model, x).y


def infer(model: TSKModel, x: np.ndarray) -> float:
    """Crisp output of the fuzzy system for a single input vector.

    Raises:
        NoActiveRulesError: when no rule is selected
        DimensionMismatchError: when ``x`` does not match the number of inputs
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatchError(f"Expected a single input vector, got shape {x.shape}.")
    return float(infer_batch(model, x[None, :])[0])


def grid_partition_init(
    n_inputs: int, mf_per_input: int, cap: int = DEFAULT_RULE_CAP
) -> RuleBase:
    """Create one rule per combination of linguistic labels.

    Rule ``k`` takes label ``j_i`` of input ``i`` where ``(j_1, ..., j_n)`` is the k-th tuple
    of the Cartesian product in lexicographic order. All rules start active with zero
    consequents.

    Raises:
        SizeOverflowError: if ``mf_per_input ** n_inputs`` exceeds ``cap``
    """
    if n_inputs < 1 or mf_per_input < 1:
        raise InvalidParameterError("Grid partitioning needs at least one input and one MF.")
    n_rules = mf_per_input**n_inputs
    if n_rules > cap:
        raise SizeOverflowError(f"Grid of {n_rules} rules exceeds the cap of {cap}.")
    labels = np.indices((mf_per_input,) * n_inputs).reshape(n_inputs, -1).T
    antecedents = np.zeros((n_rules, n_inputs, mf_per_input), dtype=bool)
    antecedents[np.arange(n_rules)[:, None], np.arange(n_inputs)[None, :], labels] = True
    return RuleBase(
        antecedents=antecedents,
        consequents=np.zeros((n_rules, n_inputs + 1)),
        active=np.ones(n_rules, dtype=bool),
    )


def grid_mf_params(
    kind: str, lower: np.ndarray, upper: np.ndarray, mf_per_input: int
) -> np.ndarray:
    """Evenly spaced membership functions covering ``[lower, upper]`` per input.

    Neighbouring curves cross at membership 0.5.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    span = upper - lower
    if mf_per_input == 1:
        centres = ((lower + upper) / 2.0)[:, None]
        half = span[:, None]
    else:
        centres = lower[:, None] + span[:, None] * np.linspace(0.0, 1.0, mf_per_input)[None, :]
        half = np.repeat((span / (mf_per_input - 1) / 2.0)[:, None], mf_per_input, axis=1)
    if kind == "gaussian":
        # exp(-h^2 / (2 s^2)) = 0.5
        return np.stack([centres, half / np.sqrt(2.0 * np.log(2.0))], axis=-1)
    if kind == "bell":
        return np.stack([half, np.full_like(centres, 2.0), centres], axis=-1)
    raise InvalidParameterError(f"Unknown membership function family: {kind!r}")


def count_active(rulebase: RuleBase) -> int:
    """Number of selected rules."""
    return int(np.count_nonzero(rulebase.active))


def rule_to_text(model: TSKModel, index: int, names: Optional[Sequence[str]] = None) -> str:
    """Render one rule as ``IF x1 IS {mf1} AND ... THEN y = p0 + p1*x1 + ... ; active=1``."""
    names = list(names) if names is not None else [f"x{i + 1}" for i in range(model.n_inputs)]
    rb = model.rulebase
    terms = [
        f"{names[i]} IS {{{','.join(f'mf{j + 1}' for j in np.flatnonzero(bits))}}}"
        for i, bits in enumerate(rb.antecedents[index])
        if bits.any()
    ]
    coefs = rb.consequents[index]
    rhs = " + ".join(
        [f"{coefs[0]:.10g}"] + [f"{c:.10g}*{name}" for c, name in zip(coefs[1:], names)]
    )
    return f"IF {' AND '.join(terms)} THEN y = {rhs} ; active={int(rb.active[index])}"


def export_rules(model: TSKModel, names: Optional[Sequence[str]] = None) -> str:
    """Line oriented text export of the whole rule base."""
    return "\n".join(rule_to_text(model, k, names) for k in range(model.rulebase.n_rules)) + "\n"
