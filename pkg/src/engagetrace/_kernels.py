"""Hot numeric kernels: standard-normal functions, truncated moments, team updates.

Every function here is written in numba-compatible scalar/array style and is
JIT-compiled when numba is available. Setting ``ENGAGETRACE_DISABLE_NUMBA=1``
(or any of "1", "true", "yes") selects the pure numpy/math fallback, which runs
the exact same code uncompiled. ``benchmarks/bench_numba_vs_numpy.py`` compares
the two paths.
"""

from __future__ import annotations

import math
import os

import numpy as np

_DISABLE = os.environ.get("ENGAGETRACE_DISABLE_NUMBA", "").strip().lower()
NUMBA_ENABLED = _DISABLE not in ("1", "true", "yes")

if NUMBA_ENABLED:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    def _jit(func):
        return _njit(cache=True)(func)
else:
    def _jit(func):
        return func


_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Relative error of both v/w branches is < 1e-10 on either side of this point.
_ASYMPTOTIC_SWITCH = -5.0


@_jit
def std_pdf(t):
    return math.exp(-0.5 * t * t) * _INV_SQRT_2PI


@_jit
def std_cdf(t):
    # erfc keeps the lower tail accurate down to ~1e-300.
    return 0.5 * math.erfc(-t / _SQRT2)


@_jit
def _inv_mills(x):
    # Reciprocal Mills ratio phi(x)/Phi(-x) for large x > 0, evaluated as the
    # continued fraction x + 1/(x + 2/(x + 3/(x + ...))) from the innermost term.
    f = x
    for k in range(64, 0, -1):
        f = x + k / f
    return f


@_jit
def v_above(t):
    if t < _ASYMPTOTIC_SWITCH:
        return _inv_mills(-t)
    return std_pdf(t) / std_cdf(t)


@_jit
def w_above(t):
    v = v_above(t)
    return v * (v + t)


@_jit
def std_quantile(p):
    # Rational approximation (Acklam) polished with two Halley steps against
    # the erfc-based CDF; |std_cdf(result) - p| lands well under 1e-13.
    if p < 0.02425:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q
               - 2.400758277161838e+00) * q - 2.549732539343734e+00) * q
             + 4.374664141464968e+00) * q + 2.938163982698783e+00) / \
            ((((7.784695709041462e-03 * q + 3.224671290700398e-01) * q
               + 2.445134137142996e+00) * q + 3.754408661907416e+00) * q + 1.0)
    elif p <= 0.97575:
        q = p - 0.5
        r = q * q
        x = (((((-3.969683028665376e+01 * r + 2.209460984245205e+02) * r
               - 2.759285104469687e+02) * r + 1.383577518672690e+02) * r
             - 3.066479806614716e+01) * r + 2.506628277459239e+00) * q / \
            (((((-5.447609879822406e+01 * r + 1.615858368580409e+02) * r
               - 1.556989798598866e+02) * r + 6.680131188771972e+01) * r
             - 1.328068155288572e+01) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q
                - 2.400758277161838e+00) * q - 2.549732539343734e+00) * q
              + 4.374664141464968e+00) * q + 2.938163982698783e+00) / \
            ((((7.784695709041462e-03 * q + 3.224671290700398e-01) * q
               + 2.445134137142996e+00) * q + 3.754408661907416e+00) * q + 1.0)
    for _ in range(2):
        e = std_cdf(x) - p
        u = e / std_pdf(x)
        x = x - u / (1.0 + 0.5 * x * u)
    return x


@_jit
def trunc_above_moments(mu, var, noise_sq):
    # Posterior moments of x ~ N(mu, var) given x + eta > 0, eta ~ N(0, noise_sq).
    c_sq = var + noise_sq
    c = math.sqrt(c_sq)
    t = mu / c
    v = v_above(t)
    w = w_above(t)
    mean = mu + (var / c) * v
    variance = var * (1.0 - (var / c_sq) * w)
    return mean, variance


@_jit
def trunc_within_moments(mu, var, margin):
    # Moments of x ~ N(mu, var) given |x| <= margin, plus the mass of the event.
    # Mass is computed through whichever tail avoids cancellation.
    if margin == math.inf:
        return mu, var, 1.0
    s = math.sqrt(var)
    alpha = (-margin - mu) / s
    beta = (margin - mu) / s
    if alpha >= 0.0:
        mass = std_cdf(-alpha) - std_cdf(-beta)
    else:
        mass = std_cdf(beta) - std_cdf(alpha)
    if mass < 1e-300:
        return mu, var, mass
    pa = std_pdf(alpha)
    pb = std_pdf(beta)
    ratio = (pa - pb) / mass
    mean = mu + s * ratio
    variance = var * (1.0 + (alpha * pa - beta * pb) / mass - ratio * ratio)
    if variance <= 0.0:
        variance = var * 1e-16
    return mean, variance, mass


@_jit
def team_apply(means, variances, sign, c_sq, diff_mean_prior, diff_mean_post,
               diff_var_post, var_floor):
    # Push the moment-matched correction of the team performance difference back
    # onto each member, weighted by the member's share of the total variance.
    shift = (diff_mean_post - diff_mean_prior) / c_sq
    shrink = (1.0 - diff_var_post / c_sq) / c_sq
    for i in range(means.shape[0]):
        k = variances[i]
        means[i] = means[i] + sign * k * shift
        new_var = k * (1.0 - k * shrink)
        if new_var < var_floor:
            new_var = var_floor
        variances[i] = new_var


@_jit
def noisy_and_prob(pis, noise):
    prod = 1.0
    for i in range(pis.shape[0]):
        prod *= pis[i]
    return (1.0 - noise) * prod + noise * (1.0 - prod)


@_jit
def noisy_and_posterior(pis, label_positive, noise):
    # Exact per-skill marginals under the noisy-AND likelihood by enumerating
    # all joint mastery states (callers bound the skill count).
    n = pis.shape[0]
    out = np.zeros(n)
    total = 0.0
    full = (1 << n) - 1
    for state in range(1 << n):
        prior = 1.0
        for h in range(n):
            if state >> h & 1:
                prior *= pis[h]
            else:
                prior *= 1.0 - pis[h]
        if label_positive:
            lik = 1.0 - noise if state == full else noise
        else:
            lik = noise if state == full else 1.0 - noise
        weight = prior * lik
        total += weight
        for h in range(n):
            if state >> h & 1:
                out[h] += weight
    for h in range(n):
        out[h] /= total
    return out


def warmup():
    """Force compilation of every kernel (no-op on the fallback path)."""
    std_cdf(0.3)
    std_quantile(0.7)
    v_above(-8.0)
    w_above(2.0)
    trunc_above_moments(0.1, 1.0, 0.5)
    trunc_within_moments(0.1, 1.0, 0.8)
    m = np.array([0.0, 0.2])
    v = np.array([1.0, 0.5])
    team_apply(m, v, 1.0, 3.0, 0.2, 0.4, 2.0, 1e-12)
    noisy_and_prob(np.array([0.5, 0.5]), 0.1)
    noisy_and_posterior(np.array([0.5, 0.5]), True, 0.1)
