import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dentvox import nifti
from dentvox.volume import (LABEL, PROB_STACK, SCALAR, VECTOR3, Volume,
                            argmax_labels, one_hot, preprocess_scan,
                            read_volume, resample, write_volume)

from conftest import vol_label, vol_scalar
from oracles import trilinear_resample


def test_payload_dtype_validation():
    with pytest.raises(ValueError, match="dtype"):
        Volume(data=np.zeros((2, 2, 2), dtype=np.float64), payload=SCALAR)
    with pytest.raises(ValueError, match="3 channels"):
        Volume(data=np.zeros((2, 2, 2, 4), dtype=np.float32), payload=VECTOR3)
    with pytest.raises(ValueError, match="spacing"):
        Volume(data=np.zeros((2, 2, 2), dtype=np.float32),
               spacing=(0.0, 1.0, 1.0))


def test_normalized_prob_stack_checked():
    bad = np.full((2, 2, 2, 33), 0.5, dtype=np.float32)
    with pytest.raises(ValueError, match="sum"):
        Volume(data=bad, payload=PROB_STACK, normalized=True)
    Volume(data=bad, payload=PROB_STACK)  # unflagged stacks are not checked


def test_one_hot_examples():
    labels = vol_label(np.zeros((3, 3, 3)))
    stack = one_hot(labels)
    assert stack.data[..., 0].min() == 1.0
    data = np.zeros((2, 2, 2), dtype=np.uint16)
    data[1, 0, 1] = 17
    stack = one_hot(vol_label(data))
    assert stack.data[1, 0, 1, 17] == 1.0
    assert stack.data[1, 0, 1].sum() == 1.0


def test_one_hot_rejects_out_of_range():
    with pytest.raises(ValueError, match="32"):
        one_hot(vol_label(np.full((2, 2, 2), 33)))


def test_one_hot_argmax_roundtrip(rng):
    labels = vol_label(rng.integers(0, 33, size=(4, 4, 4)))
    assert np.array_equal(argmax_labels(one_hot(labels)).data, labels.data)


# -- preprocessing ------------------------------------------------------------

def test_preprocess_clip_endpoints():
    v = vol_scalar(np.full((4, 4, 4), 5000.0), spacing=(0.4, 0.4, 0.4))
    out = preprocess_scan(v)
    assert np.all(out.data == 1.0)
    v = vol_scalar(np.full((4, 4, 4), -1000.0), spacing=(0.4, 0.4, 0.4))
    assert np.all(preprocess_scan(v).data == 0.0)


def test_preprocess_resamples_to_isotropic(rng):
    data = rng.random((10, 10, 10)).astype(np.float32) * 3000
    v = vol_scalar(data, spacing=(0.2, 0.2, 0.2))
    out = preprocess_scan(v)
    assert out.dims == (5, 5, 5)
    assert out.spacing == (0.4, 0.4, 0.4)
    expect = trilinear_resample(data.astype(np.float64), (0.2,) * 3,
                                (0.4,) * 3, (5, 5, 5))
    assert np.allclose(out.data, np.clip(expect, 0, 5000) / 5000, atol=1e-6)


def test_resample_matches_oracle_fractional(rng):
    data = rng.random((7, 6, 5)).astype(np.float32)
    v = vol_scalar(data, spacing=(0.3, 0.5, 0.7))
    out = resample(v, (0.4, 0.4, 0.4))
    expect = trilinear_resample(data.astype(np.float64), (0.3, 0.5, 0.7),
                                (0.4,) * 3, out.dims)
    assert np.allclose(out.data, expect, atol=1e-5)


def test_preprocess_idempotent(rng):
    data = (rng.random((6, 5, 4)) * 6000 - 500).astype(np.float32)
    v = vol_scalar(data, spacing=(0.3, 0.4, 0.5))
    once = preprocess_scan(v)
    twice = preprocess_scan(once)
    assert once.dims == twice.dims
    assert np.abs(once.data - twice.data).max() <= 1e-6


def test_preprocess_rejects_labels():
    with pytest.raises(ValueError):
        preprocess_scan(vol_label(np.zeros((2, 2, 2))))


# -- IO round trips -----------------------------------------------------------

def _roundtrip(v, path):
    write_volume(v, path)
    return read_volume(path, v.payload)


@pytest.mark.parametrize("ext", [".nii", ".nii.gz", ".f32"])
def test_scalar_roundtrip(rng, tmp_path, ext):
    v = vol_scalar(rng.random((5, 4, 3)).astype(np.float32),
                   spacing=(0.4, 0.5, 0.6))
    out = _roundtrip(v, tmp_path / f"vol{ext}")
    assert np.array_equal(out.data, v.data)
    assert np.allclose(out.spacing, v.spacing, atol=1e-6)


@pytest.mark.parametrize("ext", [".nii.gz", ".u16"])
def test_label_roundtrip(rng, tmp_path, ext):
    v = vol_label(rng.integers(0, 33, size=(5, 4, 3)))
    out = _roundtrip(v, tmp_path / f"lab{ext}")
    assert np.array_equal(out.data, v.data)


@pytest.mark.parametrize("ext", [".f32", ".nii.gz"])
def test_vector_roundtrip(rng, tmp_path, ext):
    from conftest import vol_vec
    v = vol_vec(rng.normal(size=(4, 3, 2, 3)).astype(np.float32))
    out = _roundtrip(v, tmp_path / f"vec{ext}")
    assert np.array_equal(out.data, v.data)


def test_prob_stack_roundtrip(rng, tmp_path):
    from conftest import random_prob_stack
    v = random_prob_stack(rng, (3, 3, 2))
    out = _roundtrip(v, tmp_path / "probs.f32")
    assert np.array_equal(out.data, v.data)
    assert out.channels == 33


@settings(max_examples=25, deadline=None)
@given(dims=st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6)),
       payload=st.sampled_from([SCALAR, LABEL]),
       seed=st.integers(0, 2 ** 31))
def test_roundtrip_property(tmp_path_factory, dims, payload, seed):
    rng = np.random.default_rng(seed)
    tmp = tmp_path_factory.mktemp("rt")
    if payload == SCALAR:
        v = vol_scalar(rng.normal(size=dims).astype(np.float32))
        exts = (".nii", ".f32")
    else:
        v = vol_label(rng.integers(0, 60000, size=dims))
        exts = (".nii.gz", ".u16")
    for ext in exts:
        out = _roundtrip(v, tmp / f"x{ext}")
        assert np.array_equal(out.data, v.data)


def test_payload_mismatch_errors(rng, tmp_path):
    v = vol_scalar(rng.random((3, 3, 3)).astype(np.float32))
    write_volume(v, tmp_path / "s.nii")
    with pytest.raises(ValueError, match="label"):
        read_volume(tmp_path / "s.nii", LABEL)
    write_volume(v, tmp_path / "s.f32")
    with pytest.raises(ValueError, match="mismatch"):
        read_volume(tmp_path / "s.f32", LABEL)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(OSError):
        read_volume(tmp_path / "nope.nii", SCALAR)


def test_raw_sidecar_schema(tmp_path, rng):
    import json
    v = vol_scalar(rng.random((3, 2, 4)).astype(np.float32),
                   spacing=(0.4, 0.4, 0.4))
    write_volume(v, tmp_path / "vol.f32")
    meta = json.loads((tmp_path / "vol.json").read_text())
    assert set(meta) == {"dims", "spacing_mm", "origin_mm", "payload", "channels"}
    assert meta["payload"] == SCALAR
    # x varies fastest on disk
    raw = np.frombuffer((tmp_path / "vol.f32").read_bytes(), dtype="<f4")
    assert np.array_equal(raw[:3], v.data[:, 0, 0])


# -- NIfTI orientation --------------------------------------------------------

def test_lps_nifti_reorients_to_ras(tmp_path, rng):
    """World coordinates of every corner voxel must be preserved by the
    RAS reorientation (oracle: apply the 4x4 affine on both sides)."""
    data = rng.random((4, 5, 6)).astype(np.float32)
    spacing = (0.7, 0.8, 0.9)
    origin = (10.0, -4.0, 2.5)
    affine = np.diag([-spacing[0], -spacing[1], spacing[2], 1.0])  # LPS-style
    affine[:3, 3] = origin
    blob = bytearray(nifti.HEADER_SIZE)
    import struct
    struct.pack_into("<i", blob, 0, nifti.HEADER_SIZE)
    struct.pack_into("<8h", blob, 40, 3, 4, 5, 6, 1, 1, 1, 1)
    struct.pack_into("<2h", blob, 70, 16, 32)
    struct.pack_into("<8f", blob, 76, 1.0, *spacing, 1, 1, 1, 1)
    struct.pack_into("<f", blob, 108, 352.0)
    struct.pack_into("<2h", blob, 252, 0, 1)
    struct.pack_into("<12f", blob, 280, *affine[:3, :].ravel())
    blob[344:348] = nifti.MAGIC
    path = tmp_path / "lps.nii"
    path.write_bytes(bytes(blob) + b"\x00" * 4 + data.tobytes(order="F"))

    v = read_volume(path, SCALAR)
    assert v.dims == (4, 5, 6)
    # voxel (i,j,k) of the original file lands at flipped x/y indices
    for idx in [(0, 0, 0), (3, 4, 5), (1, 2, 3)]:
        world = affine @ np.array([*idx, 1.0])
        new_idx = (3 - idx[0], 4 - idx[1], idx[2])
        recon = np.array(v.origin) + np.array(new_idx) * np.array(v.spacing)
        assert np.allclose(world[:3], recon, atol=1e-5)
        assert v.data[new_idx] == data[idx]


def test_nifti_rejects_garbage(tmp_path):
    path = tmp_path / "bad.nii"
    path.write_bytes(b"\x00" * 400)
    with pytest.raises(ValueError, match="header"):
        read_volume(path, SCALAR)


def test_nifti_oblique_degenerate_rejected(tmp_path, rng):
    data = rng.random((3, 3, 3)).astype(np.float32)
    affine = np.eye(4)
    affine[:3, 0] = (1.0, 1.0, 0.0)  # two voxel axes claim world x equally
    affine[:3, 1] = (1.0, 1.0, 0.0)
    with pytest.raises(ValueError, match="orientation"):
        nifti.to_ras(data, affine)


def test_write_volume_rejects_unknown_extension(rng, tmp_path):
    v = vol_scalar(rng.random((2, 2, 2)).astype(np.float32))
    with pytest.raises(ValueError, match="format"):
        write_volume(v, tmp_path / "vol.dat")
