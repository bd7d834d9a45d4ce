import numpy as np
import pytest

from viofusion.config import Config


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_config(**overrides):
    """Small-but-valid config for fast pipeline tests."""
    base = dict(
        duration_s=2.0,
        n_sequences=2,
        steps=2,
        checkpoint_every=1,
        batch_size=2,
        sequence_length=3,
    )
    base.update(overrides)
    return Config(**base)


def grad_of(fn, x, eps=1e-6):
    """Central-difference gradient for raw ndarray inputs (test-side)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        up = fn(x)
        flat[i] = keep - eps
        down = fn(x)
        flat[i] = keep
        gflat[i] = (up - down) / (2 * eps)
    return grad
