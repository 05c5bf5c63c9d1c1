"""Waveform error metrics and MAPE over derived variables."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatchError, UndefinedMapeError, ZeroRangeError

# Prior-work thresholds for a "very accurate" vertical GRF prediction.
RMSE_VERY_ACCURATE = 0.21
RRMSE_VERY_ACCURATE = 0.14

MAPE_ZERO_TOL = 1e-9
RANGE_ZERO_TOL = 1e-12


def _pair(g, g_hat):
    g = np.asarray(g, dtype=float).ravel()
    g_hat = np.asarray(g_hat, dtype=float).ravel()
    if g.shape != g_hat.shape:
        raise DimensionMismatchError(f"length mismatch: {g.size} vs {g_hat.size}")
    if g.size < 1:
        raise DimensionMismatchError("signals must have at least one sample")
    return g, g_hat


def rmse(g, g_hat) -> float:
    g, g_hat = _pair(g, g_hat)
    return float(np.sqrt(np.mean((g - g_hat) ** 2)))


def rrmse(g, g_hat) -> float:
    """RMSE divided by the mean of the two signal ranges."""
    g, g_hat = _pair(g, g_hat)
    scale = (np.ptp(g) + np.ptp(g_hat)) / 2
    if scale <= RANGE_ZERO_TOL:
        raise ZeroRangeError("both signals are constant; rRMSE is undefined")
    return rmse(g, g_hat) / scale


class MapeResult(NamedTuple):
    value: float
    skipped: int
    used: int


def mape(true_values, predicted) -> MapeResult:
    """Mean of ``|f_hat - f| / |f|``, skipping entries with ``|f| <= 1e-9``."""
    f = np.asarray(true_values, dtype=float).ravel()
    f_hat = np.asarray(predicted, dtype=float).ravel()
    if f.shape != f_hat.shape:
        raise DimensionMismatchError(f"length mismatch: {f.size} vs {f_hat.size}")
    keep = np.abs(f) > MAPE_ZERO_TOL
    if not keep.any():
        raise UndefinedMapeError("every true value is ~0; MAPE is undefined")
    value = float(np.mean(np.abs(f_hat[keep] - f[keep]) / np.abs(f[keep])))
    return MapeResult(value, int((~keep).sum()), int(keep.sum()))


def waveform_errors(g: np.ndarray, g_hat: np.ndarray) -> dict:
    """Per-component RMSE and rRMSE for one step given ``(T, 3)`` x/y/z arrays.

    rRMSE is NaN for a component where both signals are flat.
    """
    out = {}
    for i, comp in enumerate("xyz"):
        out[f"rmse_{comp}"] = rmse(g[:, i], g_hat[:, i])
        try:
            out[f"rrmse_{comp}"] = rrmse(g[:, i], g_hat[:, i])
        except ZeroRangeError:
            out[f"rrmse_{comp}"] = math.nan
    return out


def mean_over_steps(values) -> float:
    """Mean of finite values with ``math.fsum`` so the result is order independent."""
    v = [float(x) for x in values if math.isfinite(x)]
    if not v:
        return math.nan
    return math.fsum(v) / len(v)
