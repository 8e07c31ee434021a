"""Correlation statistics with two-sided p-values from the Student-t approximation.

The p-value for a sample correlation r on n points transforms r to
t = r * sqrt((n-2) / (1 - r^2)) and evaluates the two-sided tail of the
t distribution with n-2 degrees of freedom through the regularized
incomplete beta function, which is implemented here directly (Lentz's
continued fraction) so the package has no runtime scipy dependency and
scipy can serve as an independent oracle in the tests.
"""

import math

import numpy as np

from .errors import DataError

_CF_MAX_ITER = 300
_CF_EPS = 3e-16
_CF_TINY = 1e-300


def _betacf(a, b, x):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction failed for a={a}, b={b}, x={x}")


def betainc_reg(a, b, x):
    """Regularized incomplete beta function I_x(a, b) for a, b > 0."""
    if a <= 0 or b <= 0:
        raise DataError(f"betainc_reg requires a, b > 0, got a={a}, b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    # Use the continued fraction on whichever side converges fast.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t, df):
    """P(|T_df| >= |t|) for the Student-t distribution."""
    if df <= 0:
        raise DataError(f"degrees of freedom must be > 0, got {df}")
    t2 = t * t
    return betainc_reg(0.5 * df, 0.5, df / (df + t2))


def _p_from_r(r, n):
    if abs(r) >= 1.0:
        return 0.0
    df = n - 2
    t2 = r * r * df / (1.0 - r * r)
    return betainc_reg(0.5 * df, 0.5, df / (df + t2))


def pearson(x, y):
    """Sample Pearson correlation and its two-sided p-value.

    Requires n >= 3 and nonzero variance in both inputs.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise DataError(f"pearson: length mismatch {x.size} vs {y.size}")
    n = x.size
    if n < 3:
        raise DataError(f"pearson: need n >= 3, got {n}")
    xm = x - x.mean()
    ym = y - y.mean()
    sxx = float(xm @ xm)
    syy = float(ym @ ym)
    if sxx == 0.0 or syy == 0.0:
        raise DataError("pearson: undefined for zero-variance input")
    r = float(xm @ ym) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    return r, _p_from_r(r, n)


def rankdata(values):
    """Ranks starting at 1; tied values receive the mean of their ranks."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(v.size, dtype=np.float64)
    sv = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y):
    """Spearman rank correlation with the same t-based p-value as pearson."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise DataError(f"spearman: length mismatch {x.size} vs {y.size}")
    if x.size < 3:
        raise DataError(f"spearman: need n >= 3, got {x.size}")
    rx = rankdata(x)
    ry = rankdata(y)
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        raise DataError("spearman: undefined when all values are equal")
    return pearson(rx, ry)
