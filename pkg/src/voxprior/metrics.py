"""Image-quality metrics: MAE, PSNR, and 2.5D SSIM / GMSD.

The 2.5D protocol computes a 2D metric on every slice along each of the
three axes and averages over all included slices of all three orientations
(one pooled mean, not a mean of per-axis means).  Slices whose reference is
entirely constant are excluded: SSIM is undefined there and GMSD carries no
gradient information.

Argument order for the asymmetric metrics is (estimate, reference); MAE is
symmetric.  data_range defaults to 2.0 for [-1, 1]-normalized volumes and
must be overridden for anything else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError
from .grid import Volume

__all__ = [
    "MetricReport",
    "gmsd_2p5d",
    "mae",
    "metric_report",
    "psnr",
    "ssim_2p5d",
]

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5   # Gaussian window width
GMSD_C = 0.0026    # on [0, 1]-rescaled intensities


def _as_array(v) -> np.ndarray:
    data = v.data if isinstance(v, Volume) else np.asarray(v, dtype=np.float64)
    if data.ndim != 3:
        raise ValueError(f"expected a 3D volume, got shape {data.shape}")
    return np.asarray(data, dtype=np.float64)


def _paired(a, b) -> tuple[np.ndarray, np.ndarray]:
    da, db = _as_array(a), _as_array(b)
    if da.shape != db.shape:
        raise ValueError(f"shape mismatch: {da.shape} vs {db.shape}")
    return da, db


def mae(a, b) -> float:
    da, db = _paired(a, b)
    return float(np.mean(np.abs(da - db)))


def psnr(a, ref, data_range: float = 2.0) -> float:
    """10 log10(data_range^2 / MSE); +inf for identical inputs."""
    if data_range <= 0:
        raise ValueError(f"data_range must be > 0, got {data_range}")
    da, dr = _paired(a, ref)
    mse = float(np.mean(np.square(da - dr)))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def _corr1d_valid(x: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(x, kernel.size, axis=axis)
    return windows @ kernel


def _gaussian_window(size: int, sigma: float = SSIM_SIGMA) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (offsets / sigma) ** 2)
    return g / g.sum()


def _slice_stack(vol: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(vol, axis, 0)


def _included(ref_stack: np.ndarray) -> np.ndarray:
    # a slice is included only if its reference is not constant
    flat = ref_stack.reshape(ref_stack.shape[0], -1)
    return flat.max(axis=1) > flat.min(axis=1)


def _ssim_slices(a: np.ndarray, ref: np.ndarray, axis: int, data_range: float,
                 window: int) -> np.ndarray:
    sa = _slice_stack(a, axis)
    sr = _slice_stack(ref, axis)
    if min(sa.shape[1], sa.shape[2]) < window:
        raise ValueError(f"slice dims {sa.shape[1:]} smaller than window {window}")
    g = _gaussian_window(window)

    def smooth(x):
        return _corr1d_valid(_corr1d_valid(x, g, 1), g, 2)

    mu_a = smooth(sa)
    mu_r = smooth(sr)
    var_a = smooth(sa * sa) - mu_a * mu_a
    var_r = smooth(sr * sr) - mu_r * mu_r
    cov = smooth(sa * sr) - mu_a * mu_r
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    smap = ((2.0 * mu_a * mu_r + c1) * (2.0 * cov + c2)) / (
        (mu_a * mu_a + mu_r * mu_r + c1) * (var_a + var_r + c2))
    values = smap.mean(axis=(1, 2))
    return values[_included(sr)]


def ssim_2p5d(a, ref, data_range: float = 2.0, window: int = 7) -> float:
    """Windowed SSIM (Gaussian window, k1=0.01, k2=0.03), 2.5D protocol."""
    if data_range <= 0:
        raise ValueError(f"data_range must be > 0, got {data_range}")
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    da, dr = _paired(a, ref)
    if min(da.shape) < window:
        raise ValueError(f"volume dims {da.shape} smaller than window {window}")
    pooled = np.concatenate([_ssim_slices(da, dr, ax, data_range, window) for ax in range(3)])
    if pooled.size == 0:
        raise DegenerateInputError("every reference slice is constant; SSIM is undefined")
    return float(pooled.mean())


_PREWITT_SMOOTH = np.array([1.0, 1.0, 1.0]) / 3.0
_PREWITT_DIFF = np.array([1.0, 0.0, -1.0])


def _gradient_magnitude(stack: np.ndarray) -> np.ndarray:
    gx = _corr1d_valid(_corr1d_valid(stack, _PREWITT_SMOOTH, 1), _PREWITT_DIFF, 2)
    gy = _corr1d_valid(_corr1d_valid(stack, _PREWITT_DIFF, 1), _PREWITT_SMOOTH, 2)
    return np.sqrt(gx * gx + gy * gy)


def _gmsd_slices(a: np.ndarray, ref: np.ndarray, axis: int, data_range: float) -> np.ndarray:
    sa = _slice_stack(a, axis) / data_range
    sr = _slice_stack(ref, axis) / data_range
    if min(sa.shape[1], sa.shape[2]) < 3:
        raise ValueError(f"slice dims {sa.shape[1:]} too small for a 3x3 gradient")
    ga = _gradient_magnitude(sa)
    gr = _gradient_magnitude(sr)
    smap = (2.0 * ga * gr + GMSD_C) / (ga * ga + gr * gr + GMSD_C)
    values = smap.std(axis=(1, 2))   # population std per slice
    return values[_included(_slice_stack(ref, axis))]


def gmsd_2p5d(a, ref, data_range: float = 2.0) -> float:
    """Gradient-magnitude similarity deviation (Prewitt/3, c=0.0026), 2.5D.

    Intensities are divided by data_range before gradients so the constant c
    keeps its [0, 1]-scale meaning.  Lower is better; identical inputs give 0.
    """
    if data_range <= 0:
        raise ValueError(f"data_range must be > 0, got {data_range}")
    da, dr = _paired(a, ref)
    pooled = np.concatenate([_gmsd_slices(da, dr, ax, data_range) for ax in range(3)])
    if pooled.size == 0:
        raise DegenerateInputError("every reference slice is constant; GMSD is undefined")
    return float(pooled.mean())


@dataclass(frozen=True)
class MetricReport:
    mae: float
    psnr: float
    ssim: float
    gmsd: float
    # per-orientation means for the 2.5D metrics (nan when an axis has no
    # includable slices)
    ssim_by_axis: tuple[float, float, float]
    gmsd_by_axis: tuple[float, float, float]
    data_range: float


def _axis_mean(values: np.ndarray) -> float:
    return float(values.mean()) if values.size else math.nan


def metric_report(a, ref, data_range: float = 2.0, window: int = 7) -> MetricReport:
    """All four metrics plus the per-orientation breakdown."""
    if data_range <= 0:
        raise ValueError(f"data_range must be > 0, got {data_range}")
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    da, dr = _paired(a, ref)
    ssim_parts = [_ssim_slices(da, dr, ax, data_range, window) for ax in range(3)]
    gmsd_parts = [_gmsd_slices(da, dr, ax, data_range) for ax in range(3)]
    ssim_pool = np.concatenate(ssim_parts)
    gmsd_pool = np.concatenate(gmsd_parts)
    if ssim_pool.size == 0:
        raise DegenerateInputError("every reference slice is constant; SSIM is undefined")
    return MetricReport(
        mae=mae(da, dr),
        psnr=psnr(da, dr, data_range),
        ssim=float(ssim_pool.mean()),
        gmsd=float(gmsd_pool.mean()),
        ssim_by_axis=tuple(_axis_mean(v) for v in ssim_parts),
        gmsd_by_axis=tuple(_axis_mean(v) for v in gmsd_parts),
        data_range=data_range,
    )
