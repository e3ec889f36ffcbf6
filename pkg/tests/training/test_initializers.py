import numpy as np
import pytest

from mixlink_toolbox.training.initializers import he_init


def test_variance_follows_fan_in():
    weights = he_init((64, 64, 3, 3), np.random.default_rng(0))
    assert weights.shape == (64, 64, 3, 3)
    assert abs(weights.data.mean()) < 0.005
    np.testing.assert_allclose(weights.data.std(), np.sqrt(2.0 / 576), rtol=0.02)


def test_explicit_fan_in():
    weights = he_init((200, 200), np.random.default_rng(1), fan_in=8)
    np.testing.assert_allclose(weights.data.std(), 0.5, rtol=0.02)


def test_same_generator_state_gives_same_weights():
    a = he_init((4, 3, 3, 3), np.random.default_rng(5))
    b = he_init((4, 3, 3, 3), np.random.default_rng(5))
    np.testing.assert_array_equal(a.data, b.data)


def test_dtype():
    weights = he_init((2, 3), np.random.default_rng(0), dtype=np.float32)
    assert weights.dtype == np.float32


def test_non_positive_fan_in_rejected():
    with pytest.raises(ValueError):
        he_init((4, 3), np.random.default_rng(0), fan_in=0)
