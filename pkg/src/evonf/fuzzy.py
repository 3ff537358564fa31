"""Membership functions and the Schweizer-Sklar T-norm, with analytic derivatives.

Scalar functions (``eval_bell``, ``eval_gaussian``, ``tnorm_ss``, ``mf_gradient``) follow the
textbook definitions one value at a time. The vectorised helpers further down evaluate whole
fuzzy partitions over a batch of samples and are what the inference engine and the gradient
code use.
"""
import math
from dataclasses import dataclass
from typing import ClassVar, Dict, Final, Optional, Tuple, Union

import numpy as np

from evonf.common.exceptions import InvalidParameterError

GAUSSIAN: Final = "gaussian"
BELL: Final = "bell"

# Shape parameters per MF family, in chromosome order.
MF_PARAMS: Final[Dict[str, Tuple[str, ...]]] = {GAUSSIAN: ("c", "s"), BELL: ("p", "q", "r")}

# Positions of the parameters that must stay strictly positive.
POSITIVE_PARAMS: Final[Dict[str, Tuple[int, ...]]] = {GAUSSIAN: (1,), BELL: (0, 1)}

# Index of the centre parameter per family.
CENTRE_PARAM: Final[Dict[str, int]] = {GAUSSIAN: 0, BELL: 2}


def _check_positive(name: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise InvalidParameterError(f"{name} must be a positive finite number, got {value!r}")


@dataclass(frozen=True)
class BellMF:
    """Generalised bell curve ``1 / (1 + |(x - r) / p|^(2q))``."""

    kind: ClassVar[str] = BELL

    p: float
    q: float
    r: float

    def __post_init__(self) -> None:
        _check_positive("p", self.p)
        _check_positive("q", self.q)
        if not math.isfinite(self.r):
            raise InvalidParameterError(f"r must be finite, got {self.r!r}")

    @property
    def params(self) -> Tuple[float, ...]:
        return (self.p, self.q, self.r)


@dataclass(frozen=True)
class GaussianMF:
    """Gaussian curve ``exp(-(x - c)^2 / (2 s^2))``."""

    kind: ClassVar[str] = GAUSSIAN

    c: float
    s: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.c):
            raise InvalidParameterError(f"c must be finite, got {self.c!r}")
        _check_positive("s", self.s)

    @property
    def params(self) -> Tuple[float, ...]:
        return (self.c, self.s)


MembershipFunction = Union[BellMF, GaussianMF]


@dataclass(frozen=True)
class TNormParam:
    """Exponent of the Schweizer-Sklar T-norm.

    ``p -> 0`` and ``p -> inf`` are limits and are never stored.
    """

    p: float

    def __post_init__(self) -> None:
        _check_positive("p", self.p)


def make_mf(kind: str, params: Tuple[float, ...]) -> MembershipFunction:
    """Build a membership function of family ``kind`` from its shape parameters."""
    if kind == GAUSSIAN:
        return GaussianMF(*map(float, params))
    if kind == BELL:
        return BellMF(*map(float, params))
    raise InvalidParameterError(f"Unknown membership function family: {kind!r}")


def eval_bell(mf: BellMF, x: float) -> float:
    """Evaluate a generalised bell membership function.

    Args:
        mf: the bell curve
        x: crisp input value

    Returns:
        membership degree in (0, 1]
    """
    _check_positive("p", mf.p)
    _check_positive("q", mf.q)
    z = abs((x - mf.r) / mf.p)
    return 1.0 / (1.0 + z ** (2.0 * mf.q))


def eval_gaussian(mf: GaussianMF, x: float) -> float:
    """Evaluate a Gaussian membership function.

    Args:
        mf: the Gaussian curve
        x: crisp input value

    Returns:
        membership degree in (0, 1]
    """
    _check_positive("s", mf.s)
    return math.exp(-((x - mf.c) ** 2) / (2.0 * mf.s**2))


def evaluate(mf: MembershipFunction, x: float) -> float:
    """Evaluate any supported membership function at ``x``."""
    if isinstance(mf, BellMF):
        return eval_bell(mf, x)
    return eval_gaussian(mf, x)


def mf_gradient(mf: MembershipFunction, x: float) -> Tuple[float, ...]:
    """Partial derivatives of the membership value w.r.t. the shape parameters.

    For a bell curve the result is ``(d/dp, d/dq, d/dr)``, for a Gaussian ``(d/dc, d/ds)``.
    At the centre of a bell curve (the non-smooth point when ``q <= 0.5``) all partials are 0.
    """
    params = np.asarray(mf.params, dtype=float).reshape(1, 1, -1)
    _, grads = mf_values_and_gradients(mf.kind, params, np.array([[float(x)]]))
    return tuple(float(g) for g in grads[0, 0, 0])


def tnorm_ss(a: float, b: float, p: Union[float, TNormParam]) -> float:
    """Schweizer-Sklar T-norm ``[max{0, a^-p + b^-p - 1}]^(-1/p)``.

    ``p -> 0`` approaches the product ``a * b`` and ``p -> inf`` approaches ``min(a, b)``.
    If either argument is 0 the result is 0, the limit of the formula.

    Args:
        a: first membership degree in [0, 1]
        b: second membership degree in [0, 1]
        p: exponent, strictly positive

    Returns:
        conjunction degree in [0, 1]
    """
    if isinstance(p, TNormParam):
        p = p.p
    _check_positive("p", p)
    for name, value in (("a", a), ("b", b)):
        if not 0.0 <= value <= 1.0:
            raise InvalidParameterError(f"{name} must lie in [0, 1], got {value!r}")
    if a == 0.0 or b == 0.0:
        return 0.0
    return float(tnorm_ss_reduce(np.array([a, b], dtype=float), p))


# Vectorised forms -------------------------------------------------------------------------


def mf_values(kind: str, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Membership degrees of every input against its fuzzy partition.

    Args:
        kind: MF family name
        params: shape parameters, ``(n_inputs, n_mf, n_params)``
        x: samples, ``(n_samples, n_inputs)``

    Returns:
        membership degrees, ``(n_samples, n_inputs, n_mf)``
    """
    xs = x[:, :, None]
    if kind == GAUSSIAN:
        c, s = params[..., 0], params[..., 1]
        return np.exp(-((xs - c) ** 2) / (2.0 * s**2))
    if kind == BELL:
        p, q, r = params[..., 0], params[..., 1], params[..., 2]
        return 1.0 / (1.0 + np.abs((xs - r) / p) ** (2.0 * q))
    raise InvalidParameterError(f"Unknown membership function family: {kind!r}")


def mf_values_and_gradients(
    kind: str, params: np.ndarray, x: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Membership degrees plus their derivatives w.r.t. every shape parameter.

    Returns:
        ``(mu, dmu)`` with ``mu`` shaped ``(n_samples, n_inputs, n_mf)`` and ``dmu`` shaped
        ``(n_samples, n_inputs, n_mf, n_params)``
    """
    xs = x[:, :, None]
    if kind == GAUSSIAN:
        c, s = params[..., 0], params[..., 1]
        diff = xs - c
        mu = np.exp(-(diff**2) / (2.0 * s**2))
        dmu = np.stack([mu * diff / s**2, mu * diff**2 / s**3], axis=-1)
        return mu, dmu
    if kind == BELL:
        p, q, r = params[..., 0], params[..., 1], params[..., 2]
        z = (xs - r) / p
        az = np.abs(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = az ** (2.0 * q)
            mu = 1.0 / (1.0 + t)
            mu2 = mu**2
            d_p = 2.0 * q * mu2 * t / p
            d_q = np.where(az > 0.0, -2.0 * mu2 * t * np.log(az), 0.0)
            d_r = np.where(az > 0.0, 2.0 * q * mu2 * az ** (2.0 * q - 1.0) * np.sign(z) / p, 0.0)
        return mu, np.stack([d_p, d_q, d_r], axis=-1)
    raise InvalidParameterError(f"Unknown membership function family: {kind!r}")


def _log_ss_sum(u: np.ndarray, present: np.ndarray) -> np.ndarray:
    """``ln(sum_present exp(u) - (k - 1))`` over the last axis, without overflow.

    ``u = -p ln(a)`` is non-negative for memberships in (0, 1], so the argument of the
    logarithm is at least 1 and the ``max{0, .}`` clamp of the T-norm never binds.
    """
    k = present.sum(axis=-1)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        masked = np.where(present, u, -np.inf)
        top = masked.max(axis=-1, initial=-np.inf)
        shift = np.where(np.isfinite(top), top, 0.0)
        lse = shift + np.log(np.sum(np.exp(masked - shift[..., None]), axis=-1))
        large = lse + np.log1p(-(k - 1) * np.exp(-lse))
        small = np.log1p(np.sum(np.where(present, np.expm1(u), 0.0), axis=-1))
        out = np.where(lse < 1.0, small, large)
    return np.where(k == 0, 0.0, out)


def tnorm_ss_reduce(
    values: np.ndarray, p: float, present: Optional[np.ndarray] = None
) -> np.ndarray:
    """n-ary Schweizer-Sklar conjunction over the last axis.

    The operator is associative, so this equals folding ``tnorm_ss`` left to right. Entries
    where ``present`` is False are skipped; a row without any present entry yields 1.

    Args:
        values: membership degrees in [0, 1], ``(..., k)``
        p: exponent, strictly positive
        present: optional mask of participating entries, same shape as ``values``

    Returns:
        conjunction degrees, ``values.shape[:-1]``
    """
    return tnorm_ss_reduce_with_gradient(values, p, present)[0]


def tnorm_ss_reduce_with_gradient(
    values: np.ndarray, p: float, present: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """n-ary Schweizer-Sklar conjunction with its derivatives.

    Returns:
        ``(w, dw_dvalues, dw_dp)``; ``dw_dvalues`` has the shape of ``values`` and is 0 for
        skipped entries, ``dw_dp`` has the shape of ``w``
    """
    _check_positive("p", p)
    if present is None:
        present = np.ones(values.shape, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        u = np.where(present, -p * np.log(values), 0.0)
        log_s = _log_ss_sum(u, present)
        w = np.exp(-log_s / p)
        share = np.where(present, np.exp(u - log_s[..., None]), 0.0)
        dw_dvalues = np.where(present & (values > 0.0), w[..., None] / values * share, 0.0)
        dw_dp = w / p**2 * (log_s - np.sum(np.where(present, u * share, 0.0), axis=-1))
    alive = w > 0.0
    dw_dvalues = np.where(alive[..., None], np.nan_to_num(dw_dvalues), 0.0)
    dw_dp = np.where(alive, np.nan_to_num(dw_dp), 0.0)
    return w, dw_dvalues, dw_dp
