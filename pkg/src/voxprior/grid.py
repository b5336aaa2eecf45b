"""Volume container, grid geometry, and deterministic random streams.

Conventions used throughout the package:

* a volume is a 3D scalar field sampled on a regular grid, stored as a
  float64 array indexed ``data[ix, iy, iz]``;
* the canonical flat ordering of voxels puts x fastest, i.e. flat index
  ``ix + nx * (iy + ny * iz)`` (the same ordering the NIfTI payload uses);
* ``affine`` is a 4x4 matrix mapping homogeneous voxel indices
  ``(i, j, k, 1)`` to world coordinates in millimetres;
* interpolation is trilinear with replicate (clamp-to-edge) boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import DegenerateInputError, NumericError

__all__ = [
    "GridMap",
    "Rng",
    "Volume",
    "make_volume",
    "normalize_minmax",
    "resample_trilinear",
]


def _as_affine(mat) -> np.ndarray:
    a = np.asarray(mat, dtype=np.float64)
    if a.shape != (4, 4):
        raise ValueError(f"affine must be 4x4, got shape {a.shape}")
    if not np.allclose(a[3], (0.0, 0.0, 0.0, 1.0), rtol=0.0, atol=1e-12):
        raise ValueError("affine bottom row must be [0, 0, 0, 1]")
    if abs(np.linalg.det(a[:3, :3])) < 1e-300:
        raise ValueError("affine is singular")
    a = a.copy()
    a[3] = (0.0, 0.0, 0.0, 1.0)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Volume:
    """Immutable 3D scalar field on a regular grid.

    Attributes:
        data: float64 array of shape ``(nx, ny, nz)``.
        spacing: voxel size per axis in mm.
        affine: 4x4 voxel-to-world matrix.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    affine: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be 3D and non-empty, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NumericError("volume data contains non-finite values")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing}")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", _as_affine(self.affine))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data) -> "Volume":
        """New volume with the same geometry and different values."""
        return Volume(data, self.spacing, self.affine)

    def ravel(self) -> np.ndarray:
        """Values in canonical flat order (x fastest)."""
        return self.data.ravel(order="F")


@dataclass(frozen=True)
class GridMap:
    """Resampling geometry: where each target voxel lands in a source grid."""

    source_affine: np.ndarray
    target_affine: np.ndarray
    target_dims: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "source_affine", _as_affine(self.source_affine))
        object.__setattr__(self, "target_affine", _as_affine(self.target_affine))
        dims = tuple(int(d) for d in self.target_dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"target_dims must be 3 positive integers, got {self.target_dims}")
        object.__setattr__(self, "target_dims", dims)

    @classmethod
    def identity(cls, vol: Volume) -> "GridMap":
        return cls(vol.affine, vol.affine, vol.dims)


def make_volume(dims, spacing=(1.0, 1.0, 1.0), fill: float = 0.0) -> Volume:
    """Axis-aligned volume with the affine ``diag(spacing, 1)``."""
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise ValueError(f"dims must be 3 positive integers, got {dims}")
    if not np.isfinite(fill):
        raise ValueError(f"fill must be finite, got {fill}")
    affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])
    return Volume(np.full(dims, float(fill)), spacing, affine)


# ---------------------------------------------------------------------------
# trilinear interpolation core (shared with the linear operators)

def trilinear_corners(coords: np.ndarray, dims) -> tuple[np.ndarray, np.ndarray]:
    """Corner indices and weights for trilinear sampling with replicate boundary.

    Args:
        coords: (3, N) continuous voxel coordinates in the source grid.
        dims: source grid shape.

    Returns:
        (idx, w): two (8, N) arrays; ``idx`` holds flat source indices in
        canonical x-fastest order, ``w`` the matching convex weights.
        Out-of-range coordinates are clamped, so weights always sum to 1.
    """
    nx, ny, nz = (int(d) for d in dims)
    lo = np.empty((3, coords.shape[1]), dtype=np.int64)
    hi = np.empty_like(lo)
    frac = np.empty((3, coords.shape[1]), dtype=np.float64)
    for a, n in enumerate((nx, ny, nz)):
        c = np.clip(coords[a], 0.0, n - 1.0)
        i0 = np.clip(np.floor(c).astype(np.int64), 0, max(n - 2, 0))
        lo[a] = i0
        hi[a] = np.minimum(i0 + 1, n - 1)
        frac[a] = c - i0
    wx0, wy0, wz0 = 1.0 - frac[0], 1.0 - frac[1], 1.0 - frac[2]
    wx1, wy1, wz1 = frac[0], frac[1], frac[2]

    idx = np.empty((8, coords.shape[1]), dtype=np.int64)
    w = np.empty((8, coords.shape[1]), dtype=np.float64)
    corner = 0
    for cz, wz in ((lo[2], wz0), (hi[2], wz1)):
        for cy, wy in ((lo[1], wy0), (hi[1], wy1)):
            for cx, wx in ((lo[0], wx0), (hi[0], wx1)):
                idx[corner] = cx + nx * (cy + ny * cz)
                w[corner] = wx * wy * wz
                corner += 1
    return idx, w


def trilinear_gather(data: np.ndarray, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
    flat = data.ravel(order="F")
    return np.einsum("cn,cn->n", w, flat[idx])


def trilinear_scatter(values: np.ndarray, idx: np.ndarray, w: np.ndarray, dims) -> np.ndarray:
    """Exact transpose of :func:`trilinear_gather`.

    Accumulation runs corner-by-corner via ``np.add.at``, which applies
    updates sequentially, so the summation order is deterministic.
    """
    out = np.zeros(int(np.prod(dims)), dtype=np.float64)
    np.add.at(out, idx.ravel(), (w * values).ravel())
    return out.reshape(tuple(dims), order="F")


def _target_coords(gmap: GridMap) -> np.ndarray:
    """Continuous source-voxel coordinates of every target voxel centre."""
    tx, ty, tz = gmap.target_dims
    ii, jj, kk = np.meshgrid(
        np.arange(tx, dtype=np.float64),
        np.arange(ty, dtype=np.float64),
        np.arange(tz, dtype=np.float64),
        indexing="ij",
    )
    pts = np.stack([ii.ravel(order="F"), jj.ravel(order="F"), kk.ravel(order="F")])
    m = np.linalg.solve(gmap.source_affine, gmap.target_affine)
    return m[:3, :3] @ pts + m[:3, 3:4]


def resample_trilinear(src: Volume, gmap: GridMap) -> Volume:
    """Resample ``src`` onto the target grid described by ``gmap``.

    Sampling is trilinear with replicate boundary.  An identity map (same
    affine, same dims) returns the input values bit-exactly.
    """
    if not np.allclose(gmap.source_affine, src.affine, rtol=0.0, atol=1e-9):
        raise ValueError("gmap.source_affine does not match the source volume affine")
    t_affine = gmap.target_affine
    spacing = tuple(float(np.linalg.norm(t_affine[:3, a])) for a in range(3))
    if gmap.target_dims == src.dims and np.array_equal(gmap.target_affine, src.affine):
        return Volume(src.data, spacing, t_affine)
    coords = _target_coords(gmap)
    idx, w = trilinear_corners(coords, src.dims)
    vals = trilinear_gather(src.data, idx, w)
    return Volume(vals.reshape(gmap.target_dims, order="F"), spacing, t_affine)


def normalize_minmax(vol: Volume, lo: float = -1.0, hi: float = 1.0) -> Volume:
    """Affinely rescale values so min maps to ``lo`` and max to ``hi``."""
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
        raise ValueError(f"need lo < hi, got lo={lo}, hi={hi}")
    vmin = float(vol.data.min())
    vmax = float(vol.data.max())
    if vmax == vmin:
        raise DegenerateInputError("constant volume cannot be min-max normalized")
    # ratio form so the extremes land on lo and hi exactly
    scaled = (vol.data - vmin) / (vmax - vmin) * (hi - lo) + lo
    return vol.with_data(scaled)


# ---------------------------------------------------------------------------
# deterministic randomness

class Rng:
    """Deterministic random stream with a documented algorithm.

    The bit source is PCG64 seeded with a 64-bit integer.  Gaussian draws
    apply the inverse normal CDF to uniforms of the form
    ``(k + 0.5) / 2**53`` with ``k`` drawn from ``[0, 2**53)``, which are
    strictly inside (0, 1); a given seed therefore reproduces bit-identical
    draws wherever IEEE-754 doubles are available.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def uniform(self, shape=None) -> np.ndarray:
        """Uniform draws in [0, 1)."""
        return self._gen.random(size=shape)

    def normal(self, shape=None) -> np.ndarray:
        """Standard normal draws via the inverse CDF."""
        k = self._gen.integers(0, 1 << 53, size=shape, dtype=np.int64)
        return ndtri((k + 0.5) * 2.0**-53)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        """Integer draws in [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def derive(self, key: int) -> "Rng":
        """Independent child stream; (seed, key) -> child seed via SeedSequence."""
        child = np.random.SeedSequence((self.seed, int(key)))
        return Rng(int(child.generate_state(1, dtype=np.uint64)[0]))

    def __repr__(self) -> str:  # pragma: no cover
        return f"Rng(seed={self.seed})"
