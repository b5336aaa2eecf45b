"""Synthetic degradation pipeline and phantom generation.

The degradation path is deliberately NOT the solver's forward operator: it
filters in the Fourier domain (circular boundary) before trilinear
resampling, which models a realistic mismatch between acquisition physics
and the reconstruction model.  Tests that need operator agreement should
build observations with the solver's own operator instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .biasfield import BiasField, basis_build, bias_eval
from .grid import GridMap, Rng, Volume, normalize_minmax, resample_trilinear
from .linops import downsample_dims

__all__ = [
    "DegradeConfig",
    "Phantom",
    "PHANTOM_KINDS",
    "degrade",
    "fourier_lowpass",
    "make_phantom",
]

PHANTOM_KINDS = ("ellipsoid-stack", "smooth-random-field", "checker-smoothed")

_EYE4 = np.eye(4)


def _unit_volume(data) -> Volume:
    return Volume(data, (1.0, 1.0, 1.0), _EYE4)


@dataclass(frozen=True)
class DegradeConfig:
    # ratio of target to source voxel spacing, per axis
    factors: tuple = (1.6, 1.6, 5.0)
    # anti-alias width: sigma_f = filter_sigma_scale * (factor - 1) voxels,
    # the scikit-image anti-aliasing convention
    filter_sigma_scale: float = 0.5
    bias_order: int = 4
    bias_amplitude: float = 0.0   # std of the sampled polynomial coefficients
    noise_sigma: float = 0.0      # additive Gaussian noise, applied last
    seed: int = 0

    def __post_init__(self):
        f = tuple(float(v) for v in self.factors)
        if len(f) != 3 or any(v < 1.0 for v in f):
            raise ValueError(f"factors must be a triple >= 1, got {self.factors}")
        object.__setattr__(self, "factors", f)
        if self.filter_sigma_scale < 0:
            raise ValueError("filter_sigma_scale must be >= 0")
        if self.bias_order < 0:
            raise ValueError("bias_order must be >= 0")
        if self.bias_amplitude < 0 or self.noise_sigma < 0:
            raise ValueError("amplitudes must be >= 0")


def fourier_lowpass(vol: Volume, sigma_f) -> Volume:
    """Gaussian low-pass with unit DC gain, applied in the Fourier domain.

    sigma_f is the equivalent spatial Gaussian width in voxels per axis; the
    frequency response along one axis is exp(-2 pi^2 sigma^2 nu^2) with nu in
    cycles/voxel.  sigma_f = 0 on every axis returns the input unchanged.
    """
    s = tuple(float(v) for v in sigma_f)
    if len(s) != 3 or any(v < 0 for v in s):
        raise ValueError(f"sigma_f must be a non-negative triple, got {sigma_f}")
    if all(v == 0.0 for v in s):
        return vol
    spec = np.fft.fftshift(np.fft.fftn(vol.data))
    for axis in range(3):
        n = vol.dims[axis]
        nu = (np.arange(n) - n // 2) / n
        h = np.exp(-2.0 * np.pi**2 * s[axis] ** 2 * nu**2)
        shape = [1, 1, 1]
        shape[axis] = n
        spec *= h.reshape(shape)
    out = np.fft.ifftn(np.fft.ifftshift(spec)).real
    return vol.with_data(out)


def degrade(vol: Volume, cfg: DegradeConfig, rng: Rng) -> tuple[Volume, np.ndarray]:
    """Low-pass, resample to floor(dims/factors), multiply by a random
    polynomial bias field, then add noise.  Returns the degraded volume and
    the sampled bias coefficients.  Draw order: bias coefficients, then
    noise, so runs with the same rng state pair up across configs.
    """
    lr_dims = downsample_dims(vol.dims, cfg.factors)
    sigma_f = tuple(cfg.filter_sigma_scale * (f - 1.0) for f in cfg.factors)
    low = fourier_lowpass(vol, sigma_f)
    target_affine = vol.affine @ np.diag([cfg.factors[0], cfg.factors[1], cfg.factors[2], 1.0])
    gmap = GridMap(vol.affine, target_affine, lr_dims)
    low = resample_trilinear(low, gmap)
    basis = basis_build(cfg.bias_order, lr_dims)
    c = cfg.bias_amplitude * rng.normal((basis.k,))
    data = low.data
    if cfg.bias_amplitude > 0:
        data = data * bias_eval(BiasField(c), basis)
    if cfg.noise_sigma > 0:
        data = data + cfg.noise_sigma * rng.normal(lr_dims)
    return low.with_data(data), c


@dataclass(frozen=True)
class Phantom:
    kind: str
    dims: tuple = (24, 24, 24)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PHANTOM_KINDS:
            raise ValueError(f"unknown phantom kind {self.kind!r}; choose from {PHANTOM_KINDS}")
        d = tuple(int(v) for v in self.dims)
        if len(d) != 3 or any(v < 4 for v in d):
            raise ValueError(f"dims must be a triple >= 4, got {self.dims}")
        object.__setattr__(self, "dims", d)


def _axes_grid(dims):
    # voxel centers mapped to [-1, 1] per axis
    ax = [np.linspace(-1.0, 1.0, n) for n in dims]
    return np.meshgrid(*ax, indexing="ij")


def _ellipsoid_stack(p: Phantom, rng: Rng) -> np.ndarray:
    xx, yy, zz = _axes_grid(p.dims)
    data = np.full(p.dims, -1.0)
    # nested plateaus with seed-jittered geometry; later shells overwrite
    jit = lambda lo, hi: float(lo + (hi - lo) * rng.uniform(()))
    shells = [
        ((jit(-0.06, 0.06), jit(-0.06, 0.06), jit(-0.06, 0.06)),
         (jit(0.80, 0.90), jit(0.80, 0.90), jit(0.80, 0.90)), 0.1),
        ((jit(-0.10, 0.10), jit(-0.10, 0.10), jit(-0.10, 0.10)),
         (jit(0.50, 0.60), jit(0.50, 0.60), jit(0.50, 0.60)), 0.55),
        ((jit(-0.12, 0.12), jit(-0.12, 0.12), jit(-0.12, 0.12)),
         (jit(0.24, 0.32), jit(0.24, 0.32), jit(0.24, 0.32)), 1.0),
    ]
    for (cx, cy, cz), (ax, ay, az), value in shells:
        r2 = ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 + ((zz - cz) / az) ** 2
        data[r2 <= 1.0] = value
    # one off-center pocket inside the mid shell for extra edge content
    cx, cy, cz = jit(-0.35, 0.35), jit(-0.35, 0.35), jit(-0.35, 0.35)
    r2 = ((xx - cx) / 0.16) ** 2 + ((yy - cy) / 0.16) ** 2 + ((zz - cz) / 0.16) ** 2
    data[r2 <= 1.0] = -0.4
    return data


def _smooth_random_field(p: Phantom, rng: Rng) -> np.ndarray:
    noise = rng.normal(p.dims)
    sigma = min(4.0, max(1.5, min(p.dims) / 8.0))
    vol = fourier_lowpass(_unit_volume(noise), (sigma, sigma, sigma))
    return vol.data


def _checker_smoothed(p: Phantom, rng: Rng) -> np.ndarray:
    cell = max(2, min(p.dims) // 4)
    ix, iy, iz = np.meshgrid(*(np.arange(n) // cell for n in p.dims), indexing="ij")
    pattern = np.where((ix + iy + iz) % 2 == 0, 1.0, -1.0)
    # seed-dependent phase keeps the family from being a single fixed volume
    shift = int(rng.integers(0, cell, ()))
    pattern = np.roll(pattern, shift, axis=0)
    vol = fourier_lowpass(_unit_volume(pattern), (0.8, 0.8, 0.8))
    return vol.data


def make_phantom(p: Phantom) -> Volume:
    """Structured test volume with smooth regions and edges, [-1, 1]."""
    rng = Rng(p.seed)
    if p.kind == "ellipsoid-stack":
        data = _ellipsoid_stack(p, rng)
    elif p.kind == "smooth-random-field":
        data = _smooth_random_field(p, rng)
    else:
        data = _checker_smoothed(p, rng)
    return normalize_minmax(_unit_volume(data))
