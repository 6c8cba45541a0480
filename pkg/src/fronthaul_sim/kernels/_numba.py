"""Loop kernels compiled with numba; same signatures as the numpy versions."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_U53 = 2.0**-53
_TWO_PI = 2.0 * math.pi
_INV_LN2 = 1.0 / math.log(2.0)


@njit(cache=True)
def uniform_from_raw(words):
    out = np.empty(words.shape[0], dtype=np.float64)
    for i in range(words.shape[0]):
        out[i] = (float(words[i] >> np.uint64(11)) + 1.0) * _U53
    return out


@njit(cache=True)
def cnormal_from_raw(words):
    n = words.shape[0] // 2
    out = np.empty(n, dtype=np.complex128)
    for i in range(n):
        u1 = (float(words[2 * i] >> np.uint64(11)) + 1.0) * _U53
        u2 = (float(words[2 * i + 1] >> np.uint64(11)) + 1.0) * _U53
        r = math.sqrt(-math.log(u1))
        ang = _TWO_PI * u2
        out[i] = complex(r * math.cos(ang), r * math.sin(ang))
    return out


# One log per row: ln prod(1 + v) instead of sum ln(1 + v). The product is
# accurate when it is well above 1 and finite; otherwise fall back to log1p.
_PROD_LO = 2.0
_PROD_HI = 1e300


@njit(cache=True, inline="always")
def _row_ln1p(x, i, s):
    p = 1.0
    for j in range(x.shape[1]):
        p *= 1.0 + x[i, j] * s
    if _PROD_LO <= p <= _PROD_HI:
        return math.log(p)
    acc = 0.0
    for j in range(x.shape[1]):
        acc += math.log1p(x[i, j] * s)
    return acc


@njit(cache=True)
def sum_log2_1p(x, scale):
    acc = 0.0
    for i in range(x.shape[0]):
        acc += _row_ln1p(x, i, scale[i])
    return acc * _INV_LN2


@njit(cache=True)
def row_log2_1p(x, scale):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = _row_ln1p(x, i, scale[i]) * _INV_LN2
    return out


@njit(cache=True, inline="always")
def _ln_prod1p(lam, vals):
    p = 1.0
    for j in range(lam.shape[0]):
        p *= 1.0 + lam[j] * vals[j]
    if _PROD_LO <= p <= _PROD_HI:
        return math.log(p)
    acc = 0.0
    for j in range(lam.shape[0]):
        acc += math.log1p(lam[j] * vals[j])
    return acc


@njit(cache=True, inline="always")
def _waterfill_row(t, i, s, kappa, lam, svec):
    inv = 1.0 / s
    for j in range(t.shape[1]):
        v = kappa * (inv - 1.0 / t[i, j]) - inv
        lam[j] = v if v > 0.0 else 0.0
        svec[j] = s
    a = _ln_prod1p(lam, t[i])
    return a, a - _ln_prod1p(lam, svec)


@njit(cache=True)
def waterfill_sums(t, spe, kappa):
    m = t.shape[1]
    lam = np.empty(m)
    svec = np.empty(m)
    spent = 0.0
    gain = 0.0
    for i in range(t.shape[0]):
        a, g = _waterfill_row(t, i, spe[i], kappa, lam, svec)
        spent += a
        gain += g
    return spent * _INV_LN2, gain * _INV_LN2


@njit(cache=True)
def waterfill_rows(t, spe, kappa):
    n, m = t.shape
    spent = np.empty(n)
    gain = np.empty(n)
    lam_out = np.zeros((n, m))
    svec = np.empty(m)
    for i in range(n):
        a, g = _waterfill_row(t, i, spe[i], kappa, lam_out[i], svec)
        spent[i] = a * _INV_LN2
        gain[i] = g * _INV_LN2
    return spent, gain, lam_out


@njit(cache=True)
def herm2_eigvalsh(a):
    n = a.shape[0]
    out = np.empty((n, 2))
    for i in range(n):
        p = a[i, 0, 0].real
        q = a[i, 1, 1].real
        c = a[i, 0, 1]
        off = c.real * c.real + c.imag * c.imag
        half = 0.5 * (p + q)
        rad = math.sqrt(0.25 * (p - q) ** 2 + off)
        out[i, 0] = half - rad
        out[i, 1] = half + rad
    return out
