"""Dense 3D grid types shared by all modules, plus on-disk IO.

Canonical in-memory convention: axis order RAS with x varying fastest,
arrays indexed ``data[x, y, z]`` (channel last for multi-channel payloads).
Volumes are treated as immutable after construction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import nifti

# payload kinds (strings double as the on-disk sidecar vocabulary)
SCALAR = "scalar-f32"
VECTOR3 = "vector3-f32"
LABEL = "label-u16"
PROB_STACK = "prob-stack-f32"

PAYLOADS = (SCALAR, VECTOR3, LABEL, PROB_STACK)

N_CLASSES = 33  # background + Universal Numbering System teeth 1..32

_PAYLOAD_DTYPE = {SCALAR: np.float32, VECTOR3: np.float32,
                  LABEL: np.uint16, PROB_STACK: np.float32}


@dataclass(frozen=True)
class Volume:
    """A dense volumetric grid with spacing/origin metadata (mm)."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    payload: str = SCALAR
    orientation: str = "RAS"
    normalized: bool = False

    def __post_init__(self):
        if self.payload not in PAYLOADS:
            raise ValueError(f"unknown payload kind: {self.payload!r}")
        want = _PAYLOAD_DTYPE[self.payload]
        if self.data.dtype != want:
            raise ValueError(
                f"{self.payload} payload requires dtype {np.dtype(want).name}, "
                f"got {self.data.dtype.name}")
        ndim = 4 if self.payload in (VECTOR3, PROB_STACK) else 3
        if self.data.ndim != ndim:
            raise ValueError(f"{self.payload} payload requires {ndim}D data")
        if self.payload == VECTOR3 and self.data.shape[3] != 3:
            raise ValueError("vector3 payload requires 3 channels")
        if min(self.data.shape[:3]) < 1:
            raise ValueError("dims components must be >= 1")
        if min(self.spacing) <= 0:
            raise ValueError("spacing components must be > 0")
        if self.normalized and self.payload == PROB_STACK:
            if self.data.min() < 0:
                raise ValueError("normalized prob-stack has negative channel value")
            sums = self.data.sum(axis=3, dtype=np.float64)
            if np.abs(sums - 1.0).max() > 1e-4:
                raise ValueError("normalized prob-stack channel sums deviate from 1")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[:3]

    @property
    def channels(self) -> int:
        return self.data.shape[3] if self.data.ndim == 4 else 1


@dataclass(frozen=True)
class InstanceRecord:
    """One separated instance: its seed voxels, size, and assigned class."""

    instance_id: int
    seed_voxels: tuple[tuple[int, int, int], ...]
    voxel_count: int
    assigned_class: int | None = None  # Universal class 1..32, None = unassigned
    seed_peak_energy: float | None = None


@dataclass(frozen=True)
class InstanceMap:
    """Integer-labeled volume of separated instances plus per-instance records."""

    labels: Volume
    records: tuple[InstanceRecord, ...]

    @property
    def count(self) -> int:
        return len(self.records)

    def validate(self) -> None:
        """Check id contiguity, voxel counts, and seed membership."""
        if self.labels.payload != LABEL:
            raise ValueError("instance map labels must be a label volume")
        ids = sorted(r.instance_id for r in self.records)
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError("instance ids must be contiguous 1..K")
        data = self.labels.data
        present = np.unique(data)
        if present.max(initial=0) > len(ids):
            raise ValueError("label volume carries ids beyond K")
        counts = np.bincount(data.ravel(), minlength=len(ids) + 1)
        for rec in self.records:
            if counts[rec.instance_id] != rec.voxel_count:
                raise ValueError(f"instance {rec.instance_id}: voxel_count mismatch")
            if not rec.seed_voxels:
                raise ValueError(f"instance {rec.instance_id}: empty seed")
            for sv in rec.seed_voxels:
                if data[sv] != rec.instance_id:
                    raise ValueError(
                        f"instance {rec.instance_id}: seed voxel {sv} not inside instance")


def _is_raw_path(path: Path) -> bool:
    return path.suffix in (".f32", ".u16", ".json")


def read_volume(path: str | Path, expected_payload: str) -> Volume:
    """Read a NIfTI-1 or raw+sidecar volume, reoriented to canonical RAS."""
    path = Path(path)
    if expected_payload not in PAYLOADS:
        raise ValueError(f"unknown payload kind: {expected_payload!r}")
    if not path.exists():
        raise OSError(f"no such file: {path}")
    if _is_raw_path(path):
        return _read_raw(path, expected_payload)
    return _read_nifti_volume(path, expected_payload)


def write_volume(v: Volume, path: str | Path) -> None:
    """Write a volume; format chosen by extension (.nii/.nii.gz or raw+sidecar)."""
    path = Path(path)
    if _is_raw_path(path):
        _write_raw(v, path)
        return
    if path.name.endswith(".nii") or path.name.endswith(".nii.gz"):
        dtype = np.uint16 if v.payload == LABEL else np.float32
        nifti.write_nifti(path, v.data.astype(dtype, copy=False), v.spacing, v.origin)
        return
    raise ValueError(f"unsupported volume format for path: {path.name}")


def _read_nifti_volume(path: Path, expected_payload: str) -> Volume:
    data, spacing, origin = nifti.read_nifti_ras(path)
    want_4d = expected_payload in (VECTOR3, PROB_STACK)
    if want_4d and data.ndim != 4:
        raise ValueError(f"{expected_payload} expects 4D data, file is {data.ndim}D")
    if not want_4d:
        if data.ndim == 4 and data.shape[3] == 1:
            data = data[..., 0]
        if data.ndim != 3:
            raise ValueError(f"{expected_payload} expects 3D data, file is {data.ndim}D")
    if expected_payload == LABEL:
        if data.dtype.kind == "f":
            raise ValueError("float data cannot be read as labels")
        if data.dtype.kind == "i" and data.min() < 0:
            raise ValueError("negative integers cannot be read as labels")
        data = data.astype(np.uint16)
    else:
        data = data.astype(np.float32)
    return Volume(data=np.ascontiguousarray(data), spacing=spacing, origin=origin,
                  payload=expected_payload)


def _sidecar_paths(path: Path) -> tuple[Path, Path]:
    if path.suffix == ".json":
        for ext in (".f32", ".u16"):
            cand = path.with_suffix(ext)
            if cand.exists():
                return cand, path
        raise OSError(f"no data file (.f32/.u16) next to sidecar {path}")
    return path, path.with_suffix(".json")


def _read_raw(path: Path, expected_payload: str) -> Volume:
    data_path, sidecar_path = _sidecar_paths(path)
    if not data_path.exists():
        raise OSError(f"no such file: {data_path}")
    if not sidecar_path.exists():
        raise OSError(f"missing sidecar: {sidecar_path}")
    meta = json.loads(sidecar_path.read_text())
    payload = meta["payload"]
    if payload != expected_payload:
        raise ValueError(f"payload mismatch: file holds {payload}, "
                         f"expected {expected_payload}")
    dims = tuple(int(n) for n in meta["dims"])
    channels = int(meta.get("channels", 1))
    dtype = np.dtype(_PAYLOAD_DTYPE[payload]).newbyteorder("<")
    shape = dims + (channels,) if payload in (VECTOR3, PROB_STACK) else dims
    raw = data_path.read_bytes()
    count = int(np.prod(shape))
    if len(raw) != count * dtype.itemsize:
        raise ValueError(f"raw data size {len(raw)} does not match dims {shape}")
    # x fastest, then y, z, channel slowest
    data = np.frombuffer(raw, dtype=dtype).reshape(shape, order="F")
    return Volume(data=np.ascontiguousarray(data.astype(dtype.newbyteorder("="))),
                  spacing=tuple(float(s) for s in meta["spacing_mm"]),
                  origin=tuple(float(o) for o in meta["origin_mm"]),
                  payload=payload)


def _write_raw(v: Volume, path: Path) -> None:
    ext = ".u16" if v.payload == LABEL else ".f32"
    if path.suffix == ".json":
        data_path = path.with_suffix(ext)
    elif path.suffix == ext:
        data_path = path
    else:
        raise ValueError(f"payload {v.payload} must be written as {ext}, "
                         f"got {path.suffix}")
    meta = {
        "dims": list(v.dims),
        "spacing_mm": list(v.spacing),
        "origin_mm": list(v.origin),
        "payload": v.payload,
        "channels": v.channels,
    }
    le = v.data.astype(v.data.dtype.newbyteorder("<"), copy=False)
    data_path.write_bytes(le.tobytes(order="F"))
    data_path.with_suffix(".json").write_text(json.dumps(meta, indent=1) + "\n")


def resample(v: Volume, spacing: tuple[float, float, float]) -> Volume:
    """Resample onto a new grid sharing the origin (trilinear for scalars,
    nearest for labels)."""
    if v.payload not in (SCALAR, LABEL):
        raise ValueError(f"resampling not supported for payload {v.payload}")
    new_dims = tuple(
        max(1, int(np.floor(n * old / new + 0.5)))
        for n, old, new in zip(v.dims, v.spacing, spacing))
    if min(new_dims) < 1:
        raise ValueError("volume has zero extent after resampling")
    # output voxel j sits at world origin + j*new spacing -> input index j*new/old
    grids = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in new_dims],
                        indexing="ij")
    coords = [g * (new / old) for g, new, old in zip(grids, spacing, v.spacing)]
    order = 0 if v.payload == LABEL else 1
    out = ndimage.map_coordinates(v.data, coords, order=order, mode="nearest")
    return replace(v, data=out.astype(v.data.dtype), spacing=tuple(spacing))


def preprocess_scan(v: Volume, *, iso_spacing: float = 0.4,
                    clip: tuple[float, float] = (0.0, 5000.0)) -> Volume:
    """Resample a scalar scan to isotropic spacing, clip HU, scale to [0, 1].

    A volume whose intensities already lie in [0, 1] passes through the
    intensity step unchanged, which makes the operation idempotent.
    """
    if v.payload != SCALAR:
        raise ValueError("preprocess_scan expects a scalar volume")
    out = resample(v, (iso_spacing,) * 3)
    data = out.data.astype(np.float64)
    if data.min() < 0.0 or data.max() > 1.0:
        lo, hi = clip
        data = (np.clip(data, lo, hi) - lo) / (hi - lo)
    return replace(out, data=data.astype(np.float32))


def one_hot(labels: Volume) -> Volume:
    """Expand a semantic label volume into a 33-channel one-hot stack."""
    if labels.payload != LABEL:
        raise ValueError("one_hot expects a label volume")
    if labels.data.max(initial=0) > 32:
        raise ValueError("label value exceeds 32")
    flat = labels.data.astype(np.int64)
    stack = (flat[..., np.newaxis] == np.arange(N_CLASSES)).astype(np.float32)
    return Volume(data=stack, spacing=labels.spacing, origin=labels.origin,
                  payload=PROB_STACK, normalized=True)


def argmax_labels(probs: Volume) -> Volume:
    """Collapse a probability stack to hard labels by channel argmax."""
    if probs.payload != PROB_STACK:
        raise ValueError("argmax_labels expects a prob-stack volume")
    data = probs.data.argmax(axis=3).astype(np.uint16)
    return Volume(data=data, spacing=probs.spacing, origin=probs.origin,
                  payload=LABEL)
