"""One-dimensional Gaussian beliefs and truncated-Gaussian moment corrections.

All updates downstream reduce to conditioning a scalar Gaussian difference on a
half-line or a symmetric band and matching the first two moments, so this
module is the numerical foundation of every Bayesian model in the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import _kernels as _k
from .errors import DegenerateEvidenceError

MIN_EVIDENCE_MASS = 1e-300


@dataclass(frozen=True)
class Gaussian1D:
    """Gaussian belief as (mean, variance).

    variance > 0 for any belief used as a prior; variance == 0 is allowed only
    for fixed, observed quantities.
    """

    mean: float
    variance: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mean) and math.isfinite(self.variance)):
            raise ValueError(f"non-finite Gaussian parameters: {self}")
        if self.variance < 0.0:
            raise ValueError(f"negative variance: {self.variance}")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)


def std_cdf(t: float) -> float:
    """Cumulative density of a zero-mean unit-variance Gaussian."""
    return _k.std_cdf(float(t))


def std_pdf(t: float) -> float:
    """Density of a zero-mean unit-variance Gaussian."""
    return _k.std_pdf(float(t))


def std_quantile(p: float) -> float:
    """Inverse of :func:`std_cdf` on (0, 1)."""
    p = float(p)
    if not (0.0 < p < 1.0):
        raise ValueError(f"quantile argument must lie in (0, 1), got {p}")
    return _k.std_quantile(p)


def v_above(t: float) -> float:
    """Mean correction phi(t)/Phi(t) for conditioning a difference on > 0.

    Switches to a continued-fraction expansion of the reciprocal Mills ratio
    for strongly negative t, where the direct ratio would go 0/0.
    """
    return _k.v_above(float(t))


def w_above(t: float) -> float:
    """Variance correction v(t) * (v(t) + t); always in (0, 1)."""
    return _k.w_above(float(t))


def truncate_above(prior: Gaussian1D, performance_noise_sq: float = 0.0) -> Gaussian1D:
    """Moment-matched posterior of ``prior`` given prior + noise > 0.

    With ``performance_noise_sq == 0`` this is the plain truncation of the
    prior itself to the positive half-line.
    """
    if prior.variance <= 0.0:
        raise ValueError("truncate_above needs a prior with positive variance")
    noise_sq = float(performance_noise_sq)
    if not math.isfinite(noise_sq) or noise_sq < 0.0:
        raise ValueError(f"invalid performance noise: {performance_noise_sq}")
    mean, variance = _k.trunc_above_moments(prior.mean, prior.variance, noise_sq)
    return Gaussian1D(mean, variance)


def truncate_within(prior: Gaussian1D, margin: float) -> Gaussian1D:
    """Moment-matched posterior of ``prior`` given |prior| <= margin."""
    if prior.variance <= 0.0:
        raise ValueError("truncate_within needs a prior with positive variance")
    margin = float(margin)
    if not margin > 0.0:
        raise ValueError(f"margin must be positive, got {margin}")
    mean, variance, mass = _k.trunc_within_moments(prior.mean, prior.variance, margin)
    if mass < MIN_EVIDENCE_MASS:
        raise DegenerateEvidenceError(
            f"probability mass within margin {margin} of N({prior.mean}, "
            f"{prior.variance}) underflowed ({mass!r}); widen the beliefs"
        )
    return Gaussian1D(mean, variance)
