"""Minimal NIfTI-1 single-file (.nii / .nii.gz) reader and writer.

Supports 3D volumes with datatypes float32, int16, and uint8.  The writer
always produces little-endian files with the sform set from the volume
affine (sform_code 1, qform_code 0) and vox_offset 352.  The reader accepts
either byte order (detected via sizeof_hdr), applies scl_slope/scl_inter,
and takes the affine from the sform when present, falling back to a
diagonal pixdim affine.  Gzip compression is selected by the ``.gz`` suffix;
compressed output is written with a zeroed timestamp so identical volumes
produce identical bytes.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .grid import Volume

__all__ = ["NiftiHeader", "read_header", "read_nifti", "write_nifti"]

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

# NIfTI datatype code -> (name, numpy base dtype, bitpix)
_DTYPES = {
    2: ("uint8", "u1", 8),
    4: ("int16", "i2", 16),
    16: ("float32", "f4", 32),
}
_DTYPE_BY_NAME = {name: (code, base, bits) for code, (name, base, bits) in _DTYPES.items()}


@dataclass(frozen=True)
class NiftiHeader:
    dims: tuple[int, int, int]
    datatype: str
    pixdim: tuple[float, float, float]
    affine: np.ndarray          # 4x4, from sform or diagonal fallback
    scl_slope: float
    scl_inter: float
    vox_offset: int
    endianness: str             # "<" or ">"
    sform_code: int


def _write_blob(path: str, blob: bytes) -> None:
    if str(path).endswith(".gz"):
        # fixed mtime keeps outputs bit-reproducible
        blob = gzip.compress(blob, mtime=0)
    with open(path, "wb") as f:
        f.write(blob)


def _read_blob(path: str) -> bytes:
    with open(path, "rb") as f:
        raw = f.read()
    if str(path).endswith(".gz"):
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as e:
            raise FormatError(f"gzip payload unreadable: {e}") from e
    return raw


def write_nifti(vol: Volume, path: str, datatype: str = "float32") -> None:
    """Write a volume as a little-endian NIfTI-1 single file.

    float32 preserves float32-representable values exactly; int16 and uint8
    round and clip to the integer range (slope 1, intercept 0).
    """
    if datatype not in _DTYPE_BY_NAME:
        raise ValueError(f"unsupported datatype {datatype!r}; choose from {sorted(_DTYPE_BY_NAME)}")
    if any(d > 32767 for d in vol.dims):
        raise ValueError(f"dims {vol.dims} exceed the int16 header field")
    code, base, bits = _DTYPE_BY_NAME[datatype]
    if datatype == "float32":
        payload = vol.data.astype("<f4")
    else:
        info = np.iinfo(base)
        payload = np.clip(np.rint(vol.data), info.min, info.max).astype("<" + base)

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)          # sizeof_hdr
    struct.pack_into("<c", hdr, 38, b"r")                # regular (legacy)
    dim = (3,) + vol.dims + (1, 1, 1, 1)
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 70, code)                # datatype
    struct.pack_into("<h", hdr, 72, bits)                # bitpix
    pixdim = (1.0,) + vol.spacing + (0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))  # vox_offset
    struct.pack_into("<f", hdr, 112, 1.0)                # scl_slope
    struct.pack_into("<f", hdr, 116, 0.0)                # scl_inter
    struct.pack_into("<h", hdr, 252, 0)                  # qform_code
    struct.pack_into("<h", hdr, 254, 1)                  # sform_code
    struct.pack_into("<4f", hdr, 280, *vol.affine[0])    # srow_x
    struct.pack_into("<4f", hdr, 296, *vol.affine[1])    # srow_y
    struct.pack_into("<4f", hdr, 312, *vol.affine[2])    # srow_z
    struct.pack_into("<4s", hdr, 344, MAGIC)

    _write_blob(path, bytes(hdr) + b"\x00\x00\x00\x00" + payload.ravel(order="F").tobytes())


def _parse_header(raw: bytes) -> NiftiHeader:
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"header truncated: {len(raw)} bytes, need {HEADER_SIZE} (field sizeof_hdr)")
    (size_le,) = struct.unpack_from("<i", raw, 0)
    (size_be,) = struct.unpack_from(">i", raw, 0)
    if size_le == HEADER_SIZE:
        e = "<"
    elif size_be == HEADER_SIZE:
        e = ">"
    else:
        raise FormatError(f"field sizeof_hdr is {size_le}, expected {HEADER_SIZE}")
    magic = struct.unpack_from("4s", raw, 344)[0]
    if magic != MAGIC:
        raise FormatError(f"field magic is {magic!r}, expected {MAGIC!r} (single-file NIfTI-1)")
    dim = struct.unpack_from(e + "8h", raw, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise FormatError(f"field dim[0] is {ndim}, expected 1..7")
    sizes = [dim[i] if i <= ndim else 1 for i in range(1, 8)]
    if any(s != 1 for s in sizes[3:]):
        raise FormatError(f"field dim describes a {ndim}D image; only 3D volumes are supported")
    if any(s < 1 for s in sizes[:3]):
        raise FormatError(f"field dim has non-positive sizes {sizes[:3]}")
    dims = tuple(sizes[:3])
    (dtype_code,) = struct.unpack_from(e + "h", raw, 70)
    if dtype_code not in _DTYPES:
        raise FormatError(f"field datatype is {dtype_code}, supported codes are {sorted(_DTYPES)}")
    name, base, _bits = _DTYPES[dtype_code]
    pixdim = struct.unpack_from(e + "8f", raw, 76)
    (vox_offset,) = struct.unpack_from(e + "f", raw, 108)
    if not np.isfinite(vox_offset) or vox_offset < HEADER_SIZE:
        raise FormatError(f"field vox_offset is {vox_offset}, expected >= {HEADER_SIZE}")
    (slope,) = struct.unpack_from(e + "f", raw, 112)
    (inter,) = struct.unpack_from(e + "f", raw, 116)
    (sform_code,) = struct.unpack_from(e + "h", raw, 254)
    if sform_code > 0:
        rows = [struct.unpack_from(e + "4f", raw, off) for off in (280, 296, 312)]
        affine = np.array(rows + [(0.0, 0.0, 0.0, 1.0)], dtype=np.float64)
        spacing = tuple(float(np.linalg.norm(affine[:3, a])) for a in range(3))
    else:
        spacing = tuple(float(p) for p in pixdim[1:4])
        if any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise FormatError(f"field pixdim has non-positive spacing {spacing} and no sform is set")
        affine = np.diag(list(spacing) + [1.0])
    return NiftiHeader(
        dims=dims,
        datatype=name,
        pixdim=tuple(float(p) for p in pixdim[1:4]),
        affine=affine,
        scl_slope=float(slope),
        scl_inter=float(inter),
        vox_offset=int(vox_offset),
        endianness=e,
        sform_code=int(sform_code),
    )


def read_header(path: str) -> NiftiHeader:
    return _parse_header(_read_blob(path))


def read_nifti(path: str) -> Volume:
    """Read a NIfTI-1 volume, applying scl_slope/scl_inter (slope 0 means 1)."""
    raw = _read_blob(path)
    hdr = _parse_header(raw)
    code, base, _bits = _DTYPE_BY_NAME[hdr.datatype]
    n_vox = int(np.prod(hdr.dims))
    n_bytes = n_vox * np.dtype(base).itemsize
    payload = raw[hdr.vox_offset:hdr.vox_offset + n_bytes]
    if len(payload) < n_bytes:
        raise FormatError(
            f"payload truncated: {len(payload)} bytes after vox_offset, need {n_bytes} "
            f"for dims {hdr.dims} datatype {hdr.datatype}")
    arr = np.frombuffer(payload, dtype=hdr.endianness + base)
    data = arr.reshape(hdr.dims, order="F").astype(np.float64)
    slope = hdr.scl_slope if hdr.scl_slope != 0.0 else 1.0
    if slope != 1.0 or hdr.scl_inter != 0.0:
        data = data * slope + hdr.scl_inter
    spacing = tuple(float(np.linalg.norm(hdr.affine[:3, a])) for a in range(3))
    return Volume(data, spacing, hdr.affine)
