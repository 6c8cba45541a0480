"""Vectorised numpy implementations of the hot reductions."""

from __future__ import annotations

import numpy as np

_U53 = 2.0**-53


def uniform_from_raw(words: np.ndarray) -> np.ndarray:
    """Map raw 64-bit words to uniforms in (0, 1]."""
    return ((words >> np.uint64(11)).astype(np.float64) + 1.0) * _U53


def cnormal_from_raw(words: np.ndarray) -> np.ndarray:
    """Box-Muller: two words per unit-variance circular complex normal."""
    u1 = uniform_from_raw(words[0::2])
    u2 = uniform_from_raw(words[1::2])
    radius = np.sqrt(-np.log(u1))
    return radius * np.exp(2j * np.pi * u2)


def sum_log2_1p(x: np.ndarray, scale: np.ndarray) -> float:
    return float(np.log2(1.0 + x * scale[:, None]).sum())


def row_log2_1p(x: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return np.log2(1.0 + x * scale[:, None]).sum(axis=1)


def _levels(t, spe, kappa):
    inv = 1.0 / spe[:, None]
    return np.maximum(kappa * (inv - 1.0 / t) - inv, 0.0)


def waterfill_sums(t: np.ndarray, spe: np.ndarray, kappa: float) -> tuple[float, float]:
    lam = _levels(t, spe, kappa)
    spent = np.log2(1.0 + lam * t)
    gain = spent - np.log2(1.0 + lam * spe[:, None])
    return float(spent.sum()), float(gain.sum())


def waterfill_rows(t: np.ndarray, spe: np.ndarray, kappa: float):
    lam = _levels(t, spe, kappa)
    spent = np.log2(1.0 + lam * t)
    gain = spent - np.log2(1.0 + lam * spe[:, None])
    return spent.sum(axis=1), gain.sum(axis=1), lam


def herm2_eigvalsh(a: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a batch of 2x2 Hermitian matrices."""
    p = a[:, 0, 0].real
    q = a[:, 1, 1].real
    off = np.abs(a[:, 0, 1]) ** 2
    half = 0.5 * (p + q)
    rad = np.sqrt(0.25 * (p - q) ** 2 + off)
    return np.stack([half - rad, half + rad], axis=1)
