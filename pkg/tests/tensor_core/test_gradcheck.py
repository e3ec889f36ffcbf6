import numpy as np
import pytest

from mixlink_toolbox.tensor_core import ops
from mixlink_toolbox.tensor_core.cases import OP_CASES, run_case
from mixlink_toolbox.tensor_core.gradcheck import gradcheck, random_input
from mixlink_toolbox.tensor_core.tensor import Function, Tensor
from mixlink_toolbox.utils import make_rng


class _WrongDouble(Function):
    def forward(self, x):
        return 2.0 * x

    def backward(self, grad_output):
        return (grad_output,)


@pytest.mark.parametrize("name", list(OP_CASES))
def test_primitive_gradients(name):
    result = run_case(name, OP_CASES[name], seed=0)
    assert result.passed, result.summary()
    assert result.max_rel_error <= 1e-4
    assert result.checked > 0


@pytest.mark.parametrize("name", ["conv2d", "linear", "channel_concat"])
def test_primitive_gradients_32bit(name):
    result = run_case(name, OP_CASES[name], seed=0, dtype="32bit")
    assert result.tolerance == 1e-2
    assert result.passed, result.summary()


def test_wrong_backward_is_detected():
    x = random_input((1, 2, 3, 3), make_rng(0))
    result = gradcheck(lambda x: _WrongDouble.apply(x), [x], names=["x"], op="wrong")
    assert not result.passed
    assert result.max_rel_error == pytest.approx(0.5, rel=1e-6)
    assert result.worst_input == "x"
    assert len(result.worst_coordinate) == 4
    assert "FAIL wrong" in result.summary()


def test_max_coords_limits_checked_coordinates():
    rng = make_rng(1)
    x = random_input((2, 3, 4, 4), rng)
    k = random_input((2, 3, 3, 3), rng)
    result = gradcheck(lambda x, k: ops.conv2d(x, k, pad=1), [x, k], max_coords=5)
    assert result.checked == 10
    assert result.passed


def test_random_input_margin_keeps_values_off_zero():
    x = random_input((1000,), make_rng(0), margin=0.05)
    assert np.min(np.abs(x.data)) >= 0.05


def test_gradcheck_leaves_inputs_unchanged():
    x = random_input((1, 1, 3, 3), make_rng(2))
    before = x.numpy()
    gradcheck(lambda x: ops.relu(x), [x])
    np.testing.assert_array_equal(x.data, before)


@pytest.mark.slow
@pytest.mark.parametrize("name", list(OP_CASES))
def test_primitive_gradients_over_many_seeds(name):
    for seed in range(100):
        result = run_case(name, OP_CASES[name], seed=seed, max_coords=20)
        assert result.passed, result.summary()



@pytest.mark.parametrize("seed", range(5))
def test_batch_norm_checks_most_coordinates(seed):
    # Inputs and output weights share a shape here, so they must come from different streams
    result = run_case("batch_norm", OP_CASES["batch_norm"], seed=seed)
    assert result.passed, result.summary()
    assert result.checked >= 0.8 * (result.checked + result.skipped)
