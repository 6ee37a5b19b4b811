import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dentvox.fields import (descent_targets, instance_edt, raw_gradient,
                            sobel_gradient, EnergyField)
from dentvox.volume import InstanceMap, InstanceRecord, Volume, LABEL

from conftest import vol_label, vol_scalar
from oracles import brute_instance_edt, conv_sobel


def imap_from_labels(arr) -> InstanceMap:
    labels = vol_label(arr)
    records = []
    for i in sorted(int(v) for v in np.unique(arr) if v > 0):
        vox = np.argwhere(arr == i)
        records.append(InstanceRecord(
            instance_id=i, seed_voxels=(tuple(int(c) for c in vox[0]),),
            voxel_count=int(len(vox))))
    return InstanceMap(labels=labels, records=tuple(records))


def relabel_contiguous(arr):
    """Remap arbitrary positive labels to 1..K for InstanceMap invariants."""
    out = np.zeros_like(arr)
    for new, old in enumerate(sorted(int(v) for v in np.unique(arr) if v > 0),
                              start=1):
        out[arr == old] = new
    return out


# -- instance EDT -------------------------------------------------------------

def test_edt_empty_map():
    field = instance_edt(imap_from_labels(np.zeros((4, 4, 4), dtype=int)))
    assert np.all(field.energy.data == 0.0)


def test_edt_single_voxel():
    arr = np.zeros((5, 5, 5), dtype=int)
    arr[2, 2, 2] = 1
    field = instance_edt(imap_from_labels(arr))
    assert field.energy.data[2, 2, 2] == 1.0
    assert field.energy.data.sum() == 1.0


def test_edt_cube_center():
    arr = np.zeros((7, 7, 7), dtype=int)
    arr[2:5, 2:5, 2:5] = 1
    field = instance_edt(imap_from_labels(arr))
    assert field.energy.data[3, 3, 3] == 2.0
    assert field.energy.data[2, 3, 3] == 1.0
    expect = brute_instance_edt(arr)
    assert np.array_equal(field.energy.data, expect)


def test_edt_neighboring_instances_are_independent():
    # two abutting instances: each boundary voxel sees the other as outside
    arr = np.zeros((6, 4, 4), dtype=int)
    arr[1:3, 1:3, 1:3] = 1
    arr[3:5, 1:3, 1:3] = 2
    field = instance_edt(imap_from_labels(arr))
    assert np.array_equal(field.energy.data, brute_instance_edt(arr))
    assert field.energy.data[arr > 0].max() == 1.0  # all boundary voxels


def test_edt_locality():
    arr = np.zeros((20, 6, 6), dtype=int)
    arr[1:4, 1:4, 1:4] = 1
    one = instance_edt(imap_from_labels(arr)).energy.data.copy()
    arr2 = arr.copy()
    arr2[15:18, 1:4, 1:4] = 2
    two = instance_edt(imap_from_labels(arr2)).energy.data
    assert np.array_equal(one[arr == 1], two[arr == 1])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_edt_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    dims = tuple(rng.integers(3, 9, size=3))
    arr = relabel_contiguous(
        rng.integers(0, 4, size=dims) * (rng.random(dims) < 0.5))
    field = instance_edt(imap_from_labels(arr))
    assert np.array_equal(field.energy.data, brute_instance_edt(arr))


def test_edt_rejects_full_volume():
    with pytest.raises(ValueError, match="fills"):
        instance_edt(imap_from_labels(np.ones((3, 3, 3), dtype=int)))


# -- Sobel gradient -----------------------------------------------------------

def test_sobel_constant_field_is_zero():
    field = EnergyField(energy=vol_scalar(np.full((5, 5, 5), 3.25)))
    out = sobel_gradient(field)
    assert np.all(out.magnitude.data == 0.0)
    assert np.all(out.directions.data == 0.0)


def test_sobel_ramp_interior_response():
    e = np.zeros((6, 6, 6), dtype=np.float32)
    for x in range(6):
        e[x] = x
    grad = raw_gradient(vol_scalar(e))
    interior = grad[1:-1, 1:-1, 1:-1]
    assert np.allclose(interior[..., 0], 32.0)
    assert np.allclose(interior[..., 1:], 0.0)
    out = sobel_gradient(EnergyField(energy=vol_scalar(e)))
    assert np.allclose(out.directions.data[2, 2, 2], (1, 0, 0))


def test_sobel_matches_direct_convolution(rng):
    e = rng.random((5, 6, 4)).astype(np.float32)
    got = raw_gradient(vol_scalar(e))
    expect = conv_sobel(e)
    assert np.allclose(got, expect, atol=1e-9)


def test_sobel_linearity(rng):
    # dyadic inputs and power-of-two coefficients keep a*e1+b*e2 exact in f32
    e1 = (np.round(rng.random((4, 4, 4)) * 1024) / 1024).astype(np.float32)
    e2 = (np.round(rng.random((4, 4, 4)) * 1024) / 1024).astype(np.float32)
    a, b = 2.0, -0.5
    combo = raw_gradient(vol_scalar(a * e1 + b * e2))
    parts = a * raw_gradient(vol_scalar(e1)) + b * raw_gradient(vol_scalar(e2))
    assert np.allclose(combo, parts, atol=1e-9)


def test_sobel_axis_equivariance(rng):
    e = rng.random((4, 5, 6)).astype(np.float32)
    base = raw_gradient(vol_scalar(e))
    perm = (2, 0, 1)
    permuted = raw_gradient(vol_scalar(np.transpose(e, perm)))
    for out_axis, in_axis in enumerate(perm):
        assert np.allclose(permuted[..., out_axis],
                           np.transpose(base[..., in_axis], perm), atol=1e-12)


def test_basin_directions_point_toward_peak():
    # radially symmetric energy bump: uphill directions aim at the center
    arr = np.zeros((9, 9, 9), dtype=int)
    xs, ys, zs = np.ogrid[:9, :9, :9]
    arr[(xs - 4) ** 2 + (ys - 4) ** 2 + (zs - 4) ** 2 <= 12] = 1
    field = instance_edt(imap_from_labels(arr))
    out = sobel_gradient(field)
    peak = np.array([4.0, 4.0, 4.0])
    inside = (arr == 1) & (np.linalg.norm(out.directions.data, axis=3) > 0.5)
    coords = np.argwhere(inside)
    coords = coords[np.linalg.norm(coords - peak, axis=1) > 1.0]
    dots = [np.dot(out.directions.data[tuple(v)], peak - v) for v in coords]
    assert all(d > 0 for d in dots)


def test_descent_targets_composition():
    arr = np.zeros((8, 8, 8), dtype=int)
    arr[2:6, 2:6, 2:6] = 1
    imap = imap_from_labels(arr)
    energy, direction = descent_targets(imap)
    direct_e = instance_edt(imap)
    direct_d = sobel_gradient(direct_e)
    assert np.array_equal(energy.energy.data, direct_e.energy.data)
    inside = arr > 0
    assert np.array_equal(direction.directions.data[inside],
                          direct_d.directions.data[inside])
    assert np.all(direction.directions.data[~inside] == 0.0)


def test_descent_targets_empty():
    energy, direction = descent_targets(
        imap_from_labels(np.zeros((4, 4, 4), dtype=int)))
    assert np.all(energy.energy.data == 0.0)
    assert np.all(direction.directions.data == 0.0)


def test_descent_targets_peak_direction_is_zero():
    # symmetric bump: the gradient vanishes at the peak voxel
    arr = np.zeros((9, 9, 9), dtype=int)
    xs, ys, zs = np.ogrid[:9, :9, :9]
    arr[(xs - 4) ** 2 + (ys - 4) ** 2 + (zs - 4) ** 2 <= 9] = 1
    _, direction = descent_targets(imap_from_labels(arr))
    assert np.all(direction.directions.data[4, 4, 4] == 0.0)
