import numpy as np
import pytest

from dentvox.volume import LABEL, PROB_STACK, SCALAR, VECTOR3, Volume


def vol_scalar(arr, spacing=(1.0, 1.0, 1.0)) -> Volume:
    return Volume(data=np.asarray(arr, dtype=np.float32), spacing=spacing,
                  payload=SCALAR)


def vol_label(arr, spacing=(1.0, 1.0, 1.0)) -> Volume:
    return Volume(data=np.asarray(arr, dtype=np.uint16), spacing=spacing,
                  payload=LABEL)


def vol_vec(arr, spacing=(1.0, 1.0, 1.0)) -> Volume:
    return Volume(data=np.asarray(arr, dtype=np.float32), spacing=spacing,
                  payload=VECTOR3)


def vol_prob(arr, spacing=(1.0, 1.0, 1.0), normalized=False) -> Volume:
    return Volume(data=np.asarray(arr, dtype=np.float32), spacing=spacing,
                  payload=PROB_STACK, normalized=normalized)


def random_prob_stack(rng, dims, channels=33) -> Volume:
    raw = rng.random(dims + (channels,)) + 1e-3
    raw /= raw.sum(axis=3, keepdims=True)
    return vol_prob(raw, normalized=True)


def random_onehot(rng, dims, channels=33) -> Volume:
    labels = rng.integers(0, channels, size=dims)
    stack = (labels[..., None] == np.arange(channels)).astype(np.float32)
    return vol_prob(stack, normalized=True)


def random_unit_field(rng, dims) -> Volume:
    v = rng.normal(size=dims + (3,))
    n = np.linalg.norm(v, axis=3, keepdims=True)
    n[n < 1e-6] = 1.0
    return vol_vec(v / n)


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
