import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mixlink_toolbox.errors import ChannelRangeError, ShapeError
from mixlink_toolbox.tensor_core import ops
from mixlink_toolbox.tensor_core.tensor import Tensor


def _x(shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


def test_conv2d_output_shape_and_identity_kernel():
    x = _x((2, 3, 5, 5))
    kernel = np.zeros((3, 3, 3, 3))
    for c in range(3):
        kernel[c, c, 1, 1] = 1.0
    out = ops.conv2d(x, Tensor(kernel), stride=1, pad=1)
    assert out.shape == (2, 3, 5, 5)
    np.testing.assert_allclose(out.data, x.data)


def test_conv2d_matches_direct_sum():
    x = _x((1, 2, 4, 4), seed=1)
    kernel = _x((3, 2, 3, 3), seed=2)
    out = ops.conv2d(x, kernel, stride=1, pad=0)
    expected = np.zeros((1, 3, 2, 2))
    for f in range(3):
        for i in range(2):
            for j in range(2):
                expected[0, f, i, j] = np.sum(x.data[0, :, i : i + 3, j : j + 3] * kernel.data[f])
    np.testing.assert_allclose(out.data, expected, rtol=1e-12)


@pytest.mark.parametrize(
    "size, kernel, stride, pad, expected",
    [(32, 3, 1, 1, 32), (224, 7, 2, 3, 112), (8, 3, 2, 1, 4), (5, 3, 2, 0, 2)],
)
def test_conv2d_spatial_sizes(size, kernel, stride, pad, expected):
    out = ops.conv2d(_x((1, 1, size, size)), _x((1, 1, kernel, kernel)), stride, pad)
    assert out.shape[2:] == (expected, expected)


def test_conv2d_rejects_channel_mismatch():
    with pytest.raises(ShapeError):
        ops.conv2d(_x((1, 2, 4, 4)), _x((1, 3, 3, 3)))


def test_conv2d_rejects_empty_output():
    with pytest.raises(ShapeError):
        ops.conv2d(_x((1, 1, 2, 2)), _x((1, 1, 3, 3)))


def test_batch_norm_train_normalizes_and_updates_running_stats():
    x = _x((4, 3, 5, 5))
    mean, var = np.zeros(3), np.ones(3)
    out = ops.batch_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), mean, var, training=True)
    np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.data.var(axis=(0, 2, 3)), 1.0, rtol=1e-3)
    batch_mean = x.data.mean(axis=(0, 2, 3))
    batch_var = x.data.var(axis=(0, 2, 3), ddof=1)
    np.testing.assert_allclose(mean, 0.1 * batch_mean)
    np.testing.assert_allclose(var, 0.9 + 0.1 * batch_var)


def test_batch_norm_eval_uses_running_stats():
    x = _x((2, 2, 3, 3))
    mean, var = np.array([1.0, -1.0]), np.array([4.0, 0.25])
    out = ops.batch_norm(
        x, Tensor(np.full(2, 2.0)), Tensor(np.full(2, 0.5)), mean, var, training=False
    )
    expected = 2.0 * (x.data - mean[None, :, None, None]) / np.sqrt(
        var[None, :, None, None] + 1e-5
    ) + 0.5
    np.testing.assert_allclose(out.data, expected)
    np.testing.assert_array_equal(mean, [1.0, -1.0])


def test_batch_norm_rejects_wrong_scale():
    with pytest.raises(ShapeError):
        ops.batch_norm(_x((1, 2, 2, 2)), Tensor(np.ones(3)), Tensor(np.zeros(3)), np.zeros(3), np.ones(3))


def test_channel_ops():
    a, b = _x((2, 2, 3, 3), 1), _x((2, 3, 3, 3), 2)
    cat = ops.channel_concat(a, b)
    assert cat.channels == 5
    np.testing.assert_array_equal(ops.slice_channels(cat, 0, 2).data, a.data)
    np.testing.assert_array_equal(ops.slice_channels(cat, 2, 5).data, b.data)

    added = ops.channel_add_at(b, a, offset=1)
    np.testing.assert_array_equal(added.data[:, 0], b.data[:, 0])
    np.testing.assert_array_equal(added.data[:, 1:3], b.data[:, 1:3] + a.data)


def test_channel_add_at_out_of_range():
    with pytest.raises(ChannelRangeError):
        ops.channel_add_at(_x((1, 3, 2, 2)), _x((1, 2, 2, 2)), offset=2)
    with pytest.raises(ChannelRangeError):
        ops.channel_add_at(_x((1, 3, 2, 2)), _x((1, 2, 2, 2)), offset=-1)


def test_channel_concat_grid_mismatch():
    with pytest.raises(ShapeError):
        ops.channel_concat(_x((1, 2, 3, 3)), _x((1, 2, 4, 4)))


def test_slice_out_of_range():
    with pytest.raises(ChannelRangeError):
        ops.slice_channels(_x((1, 3, 2, 2)), 2, 4)


def test_avg_pool_halves():
    x = Tensor(np.arange(16, dtype=float).reshape(1, 1, 4, 4))
    out = ops.avg_pool(x, 2, 2)
    np.testing.assert_array_equal(out.data[0, 0], [[2.5, 4.5], [10.5, 12.5]])


def test_max_pool_with_padding():
    x = Tensor(-np.ones((1, 1, 4, 4)))
    out = ops.max_pool(x, 3, 2, pad=1)
    assert out.shape == (1, 1, 2, 2)
    np.testing.assert_array_equal(out.data, -np.ones((1, 1, 2, 2)))


def test_max_pool_tie_sends_gradient_to_first_element():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    ops.sum_all(ops.max_pool(x, 2, 2)).backward()
    np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_max_pool_rejects_large_padding():
    with pytest.raises(ValueError):
        ops.max_pool(_x((1, 1, 4, 4)), 2, 2, pad=2)


def test_global_avg_pool_and_linear():
    x = _x((3, 4, 5, 5))
    pooled = ops.global_avg_pool(x)
    assert pooled.shape == (3, 4, 1, 1)
    weight, bias = _x((2, 4), 3), Tensor(np.array([1.0, -1.0]))
    out = ops.linear(pooled, weight, bias)
    expected = x.data.mean(axis=(2, 3)) @ weight.data.T + bias.data
    np.testing.assert_allclose(out.data.reshape(3, 2), expected)


def test_linear_rejects_spatial_input():
    with pytest.raises(ShapeError):
        ops.linear(_x((1, 2, 2, 2)), _x((3, 2)), _x((3,)))


def test_softmax_cross_entropy_uniform_logits():
    logits = Tensor(np.zeros((4, 10, 1, 1)))
    loss = ops.softmax_cross_entropy(logits, [0, 1, 2, 3])
    assert loss.item() == pytest.approx(np.log(10))


def test_softmax_cross_entropy_is_stable_for_large_logits():
    logits = np.zeros((1, 3, 1, 1))
    logits[0, 0] = 1000.0
    loss = ops.softmax_cross_entropy(Tensor(logits), [0])
    assert np.isfinite(loss.item())
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("labels", [[3], [-1], [0, 1]])
def test_softmax_cross_entropy_rejects_labels(labels):
    with pytest.raises(ValueError):
        ops.softmax_cross_entropy(Tensor(np.zeros((1, 3, 1, 1))), labels)


def test_dropout_eval_and_zero_rate_are_identity():
    x = _x((2, 2, 3, 3))
    assert ops.dropout(x, 0.5, training=False) is x
    assert ops.dropout(x, 0.0, training=True) is x


@pytest.mark.parametrize("rate", [-0.1, 1.0])
def test_dropout_rejects_rate(rate):
    with pytest.raises(ValueError):
        ops.dropout(_x((1, 1, 2, 2)), rate)


def test_dropout_preserves_mean():
    x = Tensor(np.ones((10000, 1, 1, 1)))
    out = ops.dropout(x, 0.2, training=True, rng=np.random.default_rng(0))
    survivors = out.data[out.data != 0]
    np.testing.assert_allclose(survivors, 1.25)
    assert out.data.mean() == pytest.approx(1.0, rel=0.05)
    # Kept fraction is binomial with p = 0.8
    kept = int((out.data != 0).sum())
    assert stats.binomtest(kept, 10000, 0.8).pvalue > 1e-4


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**16),
    c1=st.integers(1, 4),
    c2=st.integers(1, 4),
    alpha=st.floats(-3, 3),
)
def test_conv2d_is_linear(seed, c1, c2, alpha):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, c1, 4, 4))
    y = rng.standard_normal((1, c1, 4, 4))
    kernel = Tensor(rng.standard_normal((c2, c1, 3, 3)))
    lhs = ops.conv2d(Tensor(alpha * x + y), kernel, pad=1).data
    rhs = alpha * ops.conv2d(Tensor(x), kernel, pad=1).data + ops.conv2d(Tensor(y), kernel, pad=1).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16), width=st.integers(2, 8), k=st.integers(1, 2))
def test_channel_add_at_only_touches_window(seed, width, k):
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, width - k + 1))
    base = Tensor(rng.standard_normal((1, width, 2, 2)))
    delta = Tensor(rng.standard_normal((1, k, 2, 2)))
    out = ops.channel_add_at(base, delta, offset).data
    outside = [c for c in range(width) if not offset <= c < offset + k]
    np.testing.assert_array_equal(out[:, outside], base.data[:, outside])


def _small_graph_gradients(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((4, 2, 6, 6)), requires_grad=True)
    kernel = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
    scale = Tensor(np.ones(3), requires_grad=True)
    shift = Tensor(np.zeros(3), requires_grad=True)
    weight = Tensor(rng.standard_normal((5, 6)), requires_grad=True)
    bias = Tensor(np.zeros(5), requires_grad=True)

    h = ops.batch_norm(ops.conv2d(x, kernel, pad=1), scale, shift, np.zeros(3), np.ones(3))
    h = ops.channel_concat(ops.relu(h), ops.scale(h, 0.5))
    loss = ops.softmax_cross_entropy(ops.linear(ops.global_avg_pool(h), weight, bias), [0, 1, 2, 3])
    loss.backward()
    return [t.grad.copy() for t in (x, kernel, scale, shift, weight, bias)]


def test_repeated_forward_backward_gives_identical_gradients():
    first = _small_graph_gradients(seed=3)
    second = _small_graph_gradients(seed=3)
    for a, b in zip(first, second):
        assert a.tobytes() == b.tobytes()


_LINEAR_OPS = {
    "conv2d": lambda x, rng: ops.conv2d(x, Tensor(rng.standard_normal((2, 3, 3, 3))), pad=1),
    "channel_concat": lambda x, rng: ops.channel_concat(x, ops.scale(x, -0.5)),
    "channel_add_at": lambda x, rng: ops.channel_add_at(x, ops.slice_channels(x, 0, 2), offset=1),
    "avg_pool": lambda x, rng: ops.avg_pool(x, 2, 2),
    "global_avg_pool": lambda x, rng: ops.global_avg_pool(x),
    "linear": lambda x, rng: ops.linear(
        ops.global_avg_pool(x), Tensor(rng.standard_normal((4, 3))), Tensor(np.zeros(4))
    ),
}


@pytest.mark.parametrize("alpha", [0.0, 1.0, 2.0])
@pytest.mark.parametrize("name", list(_LINEAR_OPS))
def test_linear_ops_are_homogeneous(name, alpha):
    fn = _LINEAR_OPS[name]
    x = np.random.default_rng(11).standard_normal((2, 3, 4, 4))
    scaled = fn(Tensor(alpha * x), np.random.default_rng(12)).data
    expected = alpha * fn(Tensor(x), np.random.default_rng(12)).data
    np.testing.assert_allclose(scaled, expected, rtol=1e-12, atol=1e-12)


def test_channel_add_at_zero_delta_keeps_base_bits():
    base = np.random.default_rng(4).standard_normal((2, 4, 3, 3))
    base[:, 1, 0, 0] = -0.0
    out = ops.channel_add_at(Tensor(base), Tensor(np.zeros((2, 2, 3, 3))), offset=1)
    assert out.data.tobytes() == base.tobytes()
