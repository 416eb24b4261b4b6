"""Numerical kernel: chi-square tail, Poisson CDF, harmonic mean p-value."""

from __future__ import annotations

import math
import sys
from typing import Sequence

TINY = sys.float_info.min  # smallest positive normal double
_EPS = 1e-16


def _clamp_p(p: float) -> float:
    if p != p:
        raise ArithmeticError("p-value is NaN")
    return min(1.0, max(TINY, p))


def _log_prefactor(a: float, x: float) -> float:
    return -x + a * math.log(x) - math.lgamma(a)


def _max_iter(a: float) -> int:
    return 1000 + int(60 * math.sqrt(a))


def _gamma_p_series(a: float, x: float) -> float:
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_max_iter(a)):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma series did not converge (a={a}, x={x})")
    return total * math.exp(_log_prefactor(a, x))


def _gamma_q_cf(a: float, x: float) -> float:
    # modified Lentz
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _max_iter(a)):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma continued fraction did not converge (a={a}, x={x})")
    return math.exp(_log_prefactor(a, x)) * h


def gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x), unclamped."""
    if x <= 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_p_series(a, x)
    return _gamma_q_cf(a, x)


def gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x), unclamped."""
    if x <= 0.0:
        return 0.0
    if x < a + 1.0:
        return _gamma_p_series(a, x)
    return 1.0 - _gamma_q_cf(a, x)


def chi_square_sf(x: float, dof: int) -> float:
    """Upper tail P(X >= x) of the chi-square distribution with ``dof`` degrees of freedom."""
    if not math.isfinite(x):
        raise ValueError(f"non-finite statistic {x}")
    if x < 0:
        raise ValueError(f"negative statistic {x}")
    if dof < 1:
        raise ValueError(f"dof must be >= 1, got {dof}")
    if x == 0:
        return 1.0
    return _clamp_p(gamma_q(dof / 2.0, x / 2.0))


def _poisson_log_pmf(j: int, lam: float) -> float:
    return -lam + j * math.log(lam) - math.lgamma(j + 1)


def _poisson_sum(lo: int, hi: int, lam: float) -> float:
    """sum of Pois(lam) pmf over j in [lo, hi], skipping terms below 1e-20 of the peak."""
    if hi < lo:
        return 0.0
    mode = min(max(int(lam), lo), hi)
    peak = _poisson_log_pmf(mode, lam)
    cutoff = peak - 46.0
    logs = [peak]
    j = mode - 1
    while j >= lo:
        t = _poisson_log_pmf(j, lam)
        if t < cutoff:
            break
        logs.append(t)
        j -= 1
    j = mode + 1
    while j <= hi:
        t = _poisson_log_pmf(j, lam)
        if t < cutoff:
            break
        logs.append(t)
        j += 1
    return math.fsum(math.exp(t) for t in logs)


def _check_poisson(r: int, lam: float):
    if not math.isfinite(lam):
        raise ValueError(f"non-finite lambda {lam}")
    if lam < 0:
        raise ValueError(f"negative lambda {lam}")
    if r < 0:
        raise ValueError(f"negative r {r}")


def poisson_cdf(r: int, lam: float) -> float:
    """P(R <= r) for R ~ Poisson(lam)."""
    _check_poisson(r, lam)
    if lam == 0:
        return 1.0
    if r >= lam:
        # upper tail is the small side here; subtracting it keeps precision
        return _clamp_p(1.0 - _poisson_sum(r + 1, max(r + 1, int(lam)) + 10**9, lam))
    return _clamp_p(_poisson_sum(0, r, lam))


def poisson_sf(r: int, lam: float) -> float:
    """P(R >= r) for R ~ Poisson(lam); 1 for r <= 0."""
    if r <= 0:
        return 1.0
    _check_poisson(r, lam)
    if lam == 0:
        return TINY
    if r > lam:
        return _clamp_p(_poisson_sum(r, r + 10**9, lam))
    return _clamp_p(1.0 - _poisson_sum(0, r - 1, lam))


def hmp_combine(pvalues: Sequence[float], weights: Sequence[float] | None = None) -> float:
    """Weighted harmonic mean p-value: sum(w) / sum(w / p).

    Equal weights 1/m are used when ``weights`` is omitted. Any p = 0 with a
    positive weight forces the result to 0.
    """
    m = len(pvalues)
    if m == 0:
        raise ValueError("hmp_combine needs at least one p-value")
    if weights is None:
        weights = [1.0 / m] * m
    elif len(weights) != m:
        raise ValueError("weights and p-values differ in length")
    wsum = math.fsum(weights)
    if wsum > 1.0 + 1e-12:
        raise ValueError(f"weights sum to {wsum} > 1")
    if wsum <= 0:
        raise ValueError("weights sum to zero")
    terms = []
    for p, w in zip(pvalues, weights):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p-value {p} outside [0, 1]")
        if w < 0:
            raise ValueError(f"negative weight {w}")
        if w == 0:
            continue
        if p == 0.0:
            return 0.0
        terms.append(w / p)
    return min(1.0, wsum / math.fsum(terms))


def fwer_alpha(alpha: float, n_tests: int) -> tuple[float, float]:
    """(family-wise error rate of n independent level-alpha tests, Bonferroni per-test level)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if n_tests < 1:
        raise ValueError("n_tests must be >= 1")
    return 1.0 - (1.0 - alpha) ** n_tests, alpha / n_tests
