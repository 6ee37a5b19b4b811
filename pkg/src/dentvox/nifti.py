"""Minimal single-file NIfTI-1 reader/writer.

Covers the subset this toolkit needs: little-endian NIfTI-1 (magic
``n+1\\0``), data types uint8/uint16/int16/float32, 3D or 4D arrays,
optional gzip (detected by the 0x1F8B prefix). Reading reorients to
canonical RAS axis order via the header affine.
"""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

HEADER_SIZE = 348
MAGIC = b"n+1\x00"

_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32, 512: np.uint16}
_CODES = {np.dtype(np.uint8): 2, np.dtype(np.int16): 4,
          np.dtype(np.float32): 16, np.dtype(np.uint16): 512}


def _read_bytes(path: Path) -> bytes:
    blob = path.read_bytes()
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    return blob


def _parse_header(blob: bytes):
    if len(blob) < HEADER_SIZE:
        raise ValueError("file shorter than a NIfTI-1 header")
    (size,) = struct.unpack_from("<i", blob, 0)
    if size != HEADER_SIZE:
        (size_be,) = struct.unpack_from(">i", blob, 0)
        if size_be == HEADER_SIZE:
            raise ValueError("big-endian NIfTI is not supported")
        raise ValueError("unreadable NIfTI header (bad sizeof_hdr)")
    magic = blob[344:348]
    if magic != MAGIC:
        raise ValueError(f"unsupported NIfTI magic {magic!r} (need single-file n+1)")
    dim = struct.unpack_from("<8h", blob, 40)
    datatype, bitpix = struct.unpack_from("<2h", blob, 70)
    pixdim = struct.unpack_from("<8f", blob, 76)
    (vox_offset,) = struct.unpack_from("<f", blob, 108)
    scl_slope, scl_inter = struct.unpack_from("<2f", blob, 112)
    qform_code, sform_code = struct.unpack_from("<2h", blob, 252)
    quat = struct.unpack_from("<6f", blob, 256)  # b, c, d, qoffset x/y/z
    srow = struct.unpack_from("<12f", blob, 280)
    return {
        "dim": dim, "datatype": datatype, "bitpix": bitpix, "pixdim": pixdim,
        "vox_offset": int(vox_offset), "scl_slope": scl_slope,
        "scl_inter": scl_inter, "qform_code": qform_code,
        "sform_code": sform_code, "quat": quat, "srow": srow,
    }


def _affine_from_header(h) -> np.ndarray:
    aff = np.eye(4)
    if h["sform_code"] > 0:
        aff[:3, :] = np.array(h["srow"], dtype=np.float64).reshape(3, 4)
        return aff
    if h["qform_code"] > 0:
        b, c, d, ox, oy, oz = h["quat"]
        a2 = 1.0 - (b * b + c * c + d * d)
        a = np.sqrt(a2) if a2 > 0 else 0.0
        rot = np.array([
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ])
        qfac = -1.0 if h["pixdim"][0] < 0 else 1.0
        zooms = np.array([h["pixdim"][1], h["pixdim"][2], h["pixdim"][3] * qfac])
        aff[:3, :3] = rot * zooms[np.newaxis, :]
        aff[:3, 3] = (ox, oy, oz)
        return aff
    aff[0, 0], aff[1, 1], aff[2, 2] = h["pixdim"][1:4]
    return aff


def read_nifti(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a NIfTI-1 file; returns (data in header axis order, 4x4 affine)."""
    blob = _read_bytes(Path(path))
    h = _parse_header(blob)
    dim = h["dim"]
    if dim[0] not in (2, 3, 4):
        raise ValueError(f"unsupported NIfTI dimensionality dim[0]={dim[0]}")
    nx, ny = dim[1], max(dim[2], 1)
    nz = max(dim[3], 1) if dim[0] >= 3 else 1
    nc = max(dim[4], 1) if dim[0] >= 4 else 1
    if h["datatype"] not in _DTYPES:
        raise ValueError(f"unsupported NIfTI datatype code {h['datatype']}")
    dtype = np.dtype(_DTYPES[h["datatype"]]).newbyteorder("<")
    offset = max(h["vox_offset"], HEADER_SIZE)
    count = nx * ny * nz * nc
    if len(blob) < offset + count * dtype.itemsize:
        raise ValueError("NIfTI data block shorter than header promises")
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    shape = (nx, ny, nz, nc) if nc > 1 else (nx, ny, nz)
    data = data.reshape(shape, order="F").astype(dtype.newbyteorder("="))
    slope, inter = h["scl_slope"], h["scl_inter"]
    if slope not in (0.0, 1.0) or inter != 0.0:
        if data.dtype.kind != "f":
            data = data.astype(np.float32)
        data = (data * np.float32(slope if slope != 0.0 else 1.0)
                + np.float32(inter))
    return data, _affine_from_header(h)


def orientation_transform(affine: np.ndarray):
    """Map header voxel axes to world RAS axes.

    Returns (axis_order, flips): output axis i comes from input axis
    axis_order[i], reversed when flips[i]. Raises if the direction matrix
    does not define a bijection between voxel and world axes.
    """
    m = affine[:3, :3]
    if abs(np.linalg.det(m)) < 1e-12:
        raise ValueError("non-invertible orientation matrix")
    axis_order = [-1, -1, -1]
    flips = [False, False, False]
    taken = set()
    # strongest component first so near-oblique headers resolve stably
    cols = sorted(range(3), key=lambda j: -np.abs(m[:, j]).max())
    for j in cols:
        ranked = np.argsort(-np.abs(m[:, j]))
        i = next((int(i) for i in ranked if int(i) not in taken), None)
        if i is None or m[i, j] == 0:
            raise ValueError("non-invertible orientation matrix")
        taken.add(i)
        axis_order[i] = j
        flips[i] = m[i, j] < 0
    return axis_order, flips


def to_ras(data: np.ndarray, affine: np.ndarray):
    """Permute/flip axes into RAS order; returns (data, spacing, origin)."""
    axis_order, flips = orientation_transform(affine)
    perm = list(axis_order) + ([3] if data.ndim == 4 else [])
    out = np.transpose(data, perm)
    corner = [0, 0, 0]
    for i in range(3):
        if flips[i]:
            out = np.flip(out, axis=i)
            corner[axis_order[i]] = data.shape[axis_order[i]] - 1
    spacing = tuple(float(np.linalg.norm(affine[:3, j])) for j in axis_order)
    origin = tuple(float(x) for x in (affine[:3, :3] @ corner + affine[:3, 3]))
    return np.ascontiguousarray(out), spacing, origin


def read_nifti_ras(path: str | Path):
    """Read and reorient to canonical RAS; returns (data, spacing, origin)."""
    data, affine = read_nifti(path)
    return to_ras(data, affine)


def write_nifti(path: str | Path, data: np.ndarray,
                spacing: tuple[float, float, float],
                origin: tuple[float, float, float]) -> None:
    """Write a canonical-RAS array as single-file NIfTI-1 (gzip iff *.gz)."""
    path = Path(path)
    if data.ndim not in (3, 4):
        raise ValueError("NIfTI writer accepts 3D or 4D arrays")
    dtype = np.dtype(data.dtype)
    if dtype not in _CODES:
        raise ValueError(f"unsupported dtype for NIfTI: {dtype}")
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    ndim = data.ndim
    dim = [ndim, data.shape[0], data.shape[1], data.shape[2], 1, 1, 1, 1]
    if ndim == 4:
        dim[4] = data.shape[3]
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<2h", hdr, 70, _CODES[dtype], dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, spacing[0], spacing[1], spacing[2],
                     1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, float(HEADER_SIZE + 4))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)  # scl_slope / scl_inter
    hdr[123] = 2  # xyzt_units: millimetres
    struct.pack_into("<2h", hdr, 252, 1, 1)  # qform_code, sform_code
    struct.pack_into("<6f", hdr, 256, 0.0, 0.0, 0.0, *origin)  # identity quaternion
    srow = [spacing[0], 0, 0, origin[0],
            0, spacing[1], 0, origin[1],
            0, 0, spacing[2], origin[2]]
    struct.pack_into("<12f", hdr, 280, *srow)
    hdr[344:348] = MAGIC
    payload = bytes(hdr) + b"\x00\x00\x00\x00" \
        + data.astype(dtype.newbyteorder("<"), copy=False).tobytes(order="F")
    if path.name.endswith(".gz"):
        # fixed mtime keeps byte-identical outputs for identical inputs
        payload = gzip.compress(payload, mtime=0)
    path.write_bytes(payload)
