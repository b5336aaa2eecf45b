"""Forward-model building blocks: alignment, slice-profile blur, downsampling,
their composition A = R·S·T, and the inpainting selection operator.

Operators act on plain value grids (float64 arrays shaped like the voxel
lattice); grid geometry stays with :class:`~voxprior.grid.Volume` at call
sites.  Every adjoint is the exact transpose of the discrete apply (same
weights, scattered instead of gathered), never a resampling with inverted
parameters, so the dot-test ⟨Au, w⟩ = ⟨u, Aᵀw⟩ holds to rounding error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grid import GridMap, trilinear_corners, trilinear_gather, trilinear_scatter

__all__ = [
    "LinearOperator",
    "Mask",
    "SliceProfile",
    "downsample_dims",
    "gaussian_kernel",
    "op_align",
    "op_blur",
    "op_downsample",
    "op_project",
    "op_select",
]

# FWHM of a Gaussian = 2*sqrt(2*ln 2) * sigma
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class SliceProfile:
    """Gaussian acquisition profile, full width at half maximum per axis (mm).

    Zero disables blurring on that axis.
    """

    fwhm_mm: tuple[float, float, float]

    def __post_init__(self):
        fwhm = tuple(float(f) for f in self.fwhm_mm)
        if len(fwhm) != 3 or any(f < 0 or not np.isfinite(f) for f in fwhm):
            raise ValueError(f"fwhm_mm must be 3 non-negative reals, got {self.fwhm_mm}")
        object.__setattr__(self, "fwhm_mm", fwhm)


@dataclass(frozen=True)
class Mask:
    """Binary voxel mask; 1 = observed/healthy, 0 = missing."""

    data: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.ndim != 3:
            raise ValueError(f"mask must be 3D, got shape {raw.shape}")
        if raw.dtype != np.bool_:
            vals = np.unique(raw)
            if not np.all(np.isin(vals, (0, 1))):
                raise ValueError("mask values must be 0 or 1")
        data = raw.astype(bool)
        if not data.any():
            raise ValueError("mask must select at least one voxel")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def count(self) -> int:
        return int(self.data.sum())


class LinearOperator:
    """Linear map with an exact adjoint.

    ``in_shape``/``out_shape`` of None mean the operator is not pinned to one
    grid (blur is shape-preserving, alignment infers its source grid per
    call, selection emits a vector).
    """

    def __init__(self, apply_fn, adjoint_fn, in_shape, out_shape, name: str = ""):
        self._apply = apply_fn
        self._adjoint = adjoint_fn
        self.in_shape = tuple(in_shape) if in_shape is not None else None
        self.out_shape = tuple(out_shape) if out_shape is not None else None
        self.name = name

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.in_shape is not None and x.shape != self.in_shape:
            raise ValueError(f"{self.name or 'operator'}: expected input shape {self.in_shape}, got {x.shape}")
        return self._apply(x)

    def adjoint(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if self.out_shape is not None and w.shape != self.out_shape:
            raise ValueError(f"{self.name or 'operator'}: expected adjoint input shape {self.out_shape}, got {w.shape}")
        return self._adjoint(w)

    def __repr__(self) -> str:  # pragma: no cover
        return f"LinearOperator({self.name or 'anonymous'}, in={self.in_shape}, out={self.out_shape})"


class _AlignOperator(LinearOperator):
    """Trilinear resampling onto a target grid.

    The interpolation weights depend on the (clamped) source dims, which a
    GridMap does not carry, so they are computed per source shape and
    memoized.  The adjoint reuses the dims of the last apply unless told
    otherwise via ``source_dims`` or :meth:`bind`.
    """

    def __init__(self, coords: np.ndarray, out_dims):
        super().__init__(None, None, None, out_dims, name="align")
        self._coords = coords
        self._cache: dict[tuple[int, int, int], tuple[np.ndarray, np.ndarray]] = {}
        self._seen_dims: tuple[int, int, int] | None = None

    def _corners(self, dims):
        got = self._cache.get(dims)
        if got is None:
            got = self._cache[dims] = trilinear_corners(self._coords, dims)
        return got

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3:
            raise ValueError(f"align: expected a 3D grid, got shape {x.shape}")
        self._seen_dims = x.shape
        idx, w = self._corners(x.shape)
        return trilinear_gather(x, idx, w).reshape(self.out_shape, order="F")

    def adjoint(self, w: np.ndarray, source_dims=None) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != self.out_shape:
            raise ValueError(f"align: expected adjoint input shape {self.out_shape}, got {w.shape}")
        dims = tuple(source_dims) if source_dims is not None else self._seen_dims
        if dims is None:
            raise ValueError("align adjoint needs source_dims (no prior apply to infer them from)")
        idx, wts = self._corners(dims)
        return trilinear_scatter(w.ravel(order="F"), idx, wts, dims)

    def bind(self, source_dims) -> LinearOperator:
        """Pin the source grid, yielding a fully-shaped pure operator."""
        dims = tuple(int(d) for d in source_dims)
        idx, wts = self._corners(dims)
        out_dims = self.out_shape

        def apply_fn(x):
            return trilinear_gather(x, idx, wts).reshape(out_dims, order="F")

        def adjoint_fn(w):
            return trilinear_scatter(w.ravel(order="F"), idx, wts, dims)

        return LinearOperator(apply_fn, adjoint_fn, dims, out_dims, name="align")


def op_align(gmap: GridMap) -> LinearOperator:
    """Trilinear resampling under ``gmap``; the adjoint scatters the same
    interpolation weights back onto the source grid (exact transpose)."""
    m = np.linalg.solve(gmap.source_affine, gmap.target_affine)
    tx, ty, tz = gmap.target_dims
    ii, jj, kk = np.meshgrid(
        np.arange(tx, dtype=np.float64),
        np.arange(ty, dtype=np.float64),
        np.arange(tz, dtype=np.float64),
        indexing="ij",
    )
    pts = np.stack([ii.ravel(order="F"), jj.ravel(order="F"), kk.ravel(order="F")])
    coords = m[:3, :3] @ pts + m[:3, 3:4]
    return _AlignOperator(coords, gmap.target_dims)


def gaussian_kernel(sigma_vox: float) -> np.ndarray:
    """Discrete Gaussian, truncated at radius ceil(4*sigma), renormalized to sum 1."""
    if sigma_vox <= 0:
        return np.ones(1)
    r = int(math.ceil(4.0 * sigma_vox))
    j = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (j / sigma_vox) ** 2)
    return k / k.sum()


def _conv_axis(x: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """1D correlation along ``axis`` with replicate padding."""
    r = (len(kernel) - 1) // 2
    if r == 0:
        return x * kernel[0]
    return ndimage.correlate1d(np.asarray(x, dtype=np.float64), kernel,
                               axis=axis, mode="nearest")


def _conv_axis_adjoint(w: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """Exact transpose of :func:`_conv_axis`: spread with the flipped kernel
    onto the padded lattice, then fold the replicate-padding weights onto the
    edge samples."""
    r = (len(kernel) - 1) // 2
    if r == 0:
        return w * kernel[0]
    wm = np.moveaxis(np.asarray(w, dtype=np.float64), axis, -1)
    n = wm.shape[-1]
    pad_spec = [(0, 0)] * (wm.ndim - 1) + [(r, r)]
    full = ndimage.correlate1d(np.pad(wm, pad_spec), kernel[::-1],
                               axis=-1, mode="constant")
    if n == 1:
        out = full.sum(axis=-1, keepdims=True)
    else:
        out = np.empty_like(wm)
        out[..., 0] = full[..., :r + 1].sum(axis=-1)
        out[..., 1:n - 1] = full[..., r + 1:n - 1 + r]
        out[..., n - 1] = full[..., n - 1 + r:].sum(axis=-1)
    return np.moveaxis(out, -1, axis)


def op_blur(profile: SliceProfile, spacing) -> LinearOperator:
    """Separable spatial Gaussian blur with replicate boundary.

    Per-axis sigma in voxels is (fwhm_mm / spacing_mm) / (2*sqrt(2 ln 2)).
    Shape-preserving; works on any 3D grid.
    """
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or any(s <= 0 for s in spacing):
        raise ValueError(f"spacing must be 3 positive reals, got {spacing}")
    kernels: list[tuple[int, np.ndarray]] = []
    for axis in range(3):
        fwhm = profile.fwhm_mm[axis]
        if fwhm > 0:
            sigma_vox = (fwhm / spacing[axis]) / FWHM_PER_SIGMA
            kernels.append((axis, gaussian_kernel(sigma_vox)))

    def apply_fn(x):
        for axis, k in kernels:
            x = _conv_axis(x, k, axis)
        return x

    def adjoint_fn(w):
        for axis, k in reversed(kernels):
            w = _conv_axis_adjoint(w, k, axis)
        return w

    return LinearOperator(apply_fn, adjoint_fn, None, None, name="blur")


def downsample_dims(hr_dims, factors) -> tuple[int, int, int]:
    """Low-res grid size: floor(hr / factor) per axis.

    A 1e-9 slack absorbs binary representation error in decimal factors
    (32/1.6 evaluates to 19.999... in floats but means 20).
    """
    out = tuple(int(math.floor(d / f + 1e-9)) for d, f in zip(hr_dims, factors))
    if any(d < 1 for d in out):
        raise ValueError(f"factors {tuple(factors)} collapse dims {tuple(hr_dims)} to {out}")
    return out


def op_downsample(factors, hr_dims) -> LinearOperator:
    """Point sampling at low-res voxel centres: LR index i reads HR
    coordinate i*factor with trilinear weights.  No area averaging."""
    factors = tuple(float(f) for f in factors)
    if len(factors) != 3 or any(f < 1 for f in factors):
        raise ValueError(f"factors must be 3 reals >= 1, got {factors}")
    hr_dims = tuple(int(d) for d in hr_dims)
    lr_dims = downsample_dims(hr_dims, factors)

    lx, ly, lz = lr_dims
    ii, jj, kk = np.meshgrid(
        np.arange(lx, dtype=np.float64) * factors[0],
        np.arange(ly, dtype=np.float64) * factors[1],
        np.arange(lz, dtype=np.float64) * factors[2],
        indexing="ij",
    )
    coords = np.stack([ii.ravel(order="F"), jj.ravel(order="F"), kk.ravel(order="F")])
    idx, w = trilinear_corners(coords, hr_dims)

    def apply_fn(x):
        return trilinear_gather(x, idx, w).reshape(lr_dims, order="F")

    def adjoint_fn(v):
        return trilinear_scatter(v.ravel(order="F"), idx, w, hr_dims)

    return LinearOperator(apply_fn, adjoint_fn, hr_dims, lr_dims, name="downsample")


def op_project(t: LinearOperator, s: LinearOperator, r: LinearOperator) -> LinearOperator:
    """Composition A = R∘S∘T with adjoint Tᵀ∘Sᵀ∘Rᵀ; geometries must chain."""
    after_t = t.out_shape
    after_s = s.out_shape if s.out_shape is not None else after_t
    if s.in_shape is not None and after_t is not None and s.in_shape != after_t:
        raise ValueError(f"geometry mismatch: T yields {after_t}, S expects {s.in_shape}")
    if r.in_shape is not None and after_s is not None and r.in_shape != after_s:
        raise ValueError(f"geometry mismatch: S yields {after_s}, R expects {r.in_shape}")

    def apply_fn(x):
        return r.apply(s.apply(t.apply(x)))

    def adjoint_fn(w):
        return t.adjoint(s.adjoint(r.adjoint(w)))

    return LinearOperator(apply_fn, adjoint_fn, t.in_shape, r.out_shape, name="project")


class _SelectOperator(LinearOperator):
    """Coordinate selection; apply returns a vector, not a grid."""

    def __init__(self, dims, sel: np.ndarray):
        super().__init__(None, None, dims, None, name="select")
        self._sel = sel
        self.n_selected = int(sel.size)
        self._dims = tuple(dims)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self._dims:
            raise ValueError(f"select: expected input shape {self._dims}, got {x.shape}")
        return x.ravel(order="F")[self._sel]

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n_selected,):
            raise ValueError(f"select adjoint expects a vector of length {self.n_selected}, got shape {v.shape}")
        flat = np.zeros(int(np.prod(self._dims)), dtype=np.float64)
        flat[self._sel] = v
        return flat.reshape(self._dims, order="F")


def op_select(mask: Mask) -> LinearOperator:
    """Extract masked voxels as a vector in canonical flat order (x fastest);
    the adjoint scatters back with zeros at unselected voxels."""
    sel = np.flatnonzero(mask.data.ravel(order="F"))
    return _SelectOperator(mask.dims, sel)
