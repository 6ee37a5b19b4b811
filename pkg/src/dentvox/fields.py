"""Watershed supervision targets: per-instance distance-transform energy
maps and Sobel-Feldman gradient/direction fields.

Sign convention: the gradient is the uphill finite difference (an x-ramp of
unit slope responds with +32 in the interior), so unit directions point
toward basin peaks. The angular loss only compares relative angles, so any
consistent convention between ground truth and prediction is equivalent.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .volume import SCALAR, VECTOR3, InstanceMap, Volume

GRADIENT_EPS = 1e-8

SOURCE_GT_EDT = "ground-truth-edt"
SOURCE_PREDICTION = "model-prediction"


@dataclass(frozen=True)
class EnergyField:
    """Scalar per-voxel energy (distance-to-boundary, voxel units)."""

    energy: Volume
    source: str = SOURCE_GT_EDT

    def __post_init__(self):
        if self.energy.payload != SCALAR:
            raise ValueError("energy must be a scalar volume")
        if self.source == SOURCE_GT_EDT and self.energy.data.min() < 0:
            raise ValueError("ground-truth energy must be non-negative")


@dataclass(frozen=True)
class DirectionField:
    """Unit direction vectors (zero where the gradient vanishes) plus the
    raw gradient magnitude."""

    directions: Volume
    magnitude: Volume

    def __post_init__(self):
        if self.directions.payload != VECTOR3:
            raise ValueError("directions must be a vector3 volume")
        if self.magnitude.payload != SCALAR:
            raise ValueError("magnitude must be a scalar volume")
        norms = np.linalg.norm(self.directions.data.astype(np.float64), axis=3)
        bad = (norms > 1e-3) & (np.abs(norms - 1.0) > 1e-3)
        if bad.any():
            raise ValueError("direction norms must be 0 or 1 (within 1e-3)")


def instance_edt(instances: InstanceMap) -> EnergyField:
    """Exact Euclidean distance to the nearest voxel outside each instance,
    computed per instance; background voxels stay 0."""
    labels = instances.labels.data
    energy = np.zeros(labels.shape, dtype=np.float32)
    for rec in instances.records:
        mask = labels == rec.instance_id
        if not mask.any():
            continue
        # crop to the instance bbox plus one voxel; distances past that ring
        # cannot be nearer than the ring itself
        idx = np.nonzero(mask)
        lo = [max(int(i.min()) - 1, 0) for i in idx]
        hi = [min(int(i.max()) + 2, n) for i, n in zip(idx, labels.shape)]
        crop = tuple(slice(a, b) for a, b in zip(lo, hi))
        sub = mask[crop]
        if sub.all():
            raise ValueError(
                f"instance {rec.instance_id} fills the entire volume")
        dist = ndimage.distance_transform_edt(sub)
        energy[crop][sub] = dist[sub].astype(np.float32)
    vol = replace(instances.labels, data=energy, payload=SCALAR)
    return EnergyField(energy=vol, source=SOURCE_GT_EDT)


def raw_gradient(energy: Volume) -> np.ndarray:
    """Separable Sobel-Feldman gradient (float64, shape dims + (3,)):
    derivative [-1, 0, 1] along each axis, smoothing [1, 2, 1] along the
    others, replicate padding at borders."""
    if energy.payload != SCALAR:
        raise ValueError("raw_gradient expects a scalar volume")
    e = energy.data.astype(np.float64)
    return np.stack(
        [ndimage.sobel(e, axis=d, mode="nearest") for d in range(3)], axis=-1)


def sobel_gradient(field: EnergyField) -> DirectionField:
    """Gradient magnitude and unit directions of an energy field; voxels with
    vanishing gradient get the zero vector."""
    grad = raw_gradient(field.energy)
    mag = np.linalg.norm(grad, axis=3)
    dirs = np.zeros(grad.shape, dtype=np.float32)
    nz = mag > GRADIENT_EPS
    dirs[nz] = (grad[nz] / mag[nz, np.newaxis]).astype(np.float32)
    base = field.energy
    return DirectionField(
        directions=Volume(data=dirs, spacing=base.spacing, origin=base.origin,
                          payload=VECTOR3),
        magnitude=Volume(data=mag.astype(np.float32), spacing=base.spacing,
                         origin=base.origin, payload=SCALAR))


def descent_targets(instances: InstanceMap) -> tuple[EnergyField, DirectionField]:
    """Energy map plus direction field for an instance map, with directions
    zeroed outside the tooth mask (matching the angular loss restriction)."""
    energy = instance_edt(instances)
    direction = sobel_gradient(energy)
    outside = instances.labels.data == 0
    dirs = direction.directions.data.copy()
    mags = direction.magnitude.data.copy()
    dirs[outside] = 0.0
    mags[outside] = 0.0
    return energy, DirectionField(
        directions=replace(direction.directions, data=dirs),
        magnitude=replace(direction.magnitude, data=mags))
