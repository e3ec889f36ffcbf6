import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixlink_toolbox import MixedLinkConfig, Position
from mixlink_toolbox.dense_topology.connections import ConcatConnection
from mixlink_toolbox.dense_topology.evaluators import (
    eval_dense_general,
    eval_densenet,
    eval_dual_path_reference,
    eval_mixed,
    eval_resnet_recursive,
    eval_resnet_unrolled,
    inner_link_step,
    mixed_step,
    outer_link_step,
)
from mixlink_toolbox.dense_topology.transforms import (
    AffineTransform,
    ConstantTransform,
    ConvReluTransform,
    PairTransform,
)
from mixlink_toolbox.errors import ChannelRangeError, ShapeError
from mixlink_toolbox.tensor_core.tensor import Tensor


def _x(channels, seed=0, spatial=4):
    return Tensor(np.random.default_rng(seed).standard_normal((2, channels, spatial, spatial)))


def test_resnet_unrolling_hand_computed():
    layers = [AffineTransform(2, scale=1.0, index=i) for i in range(3)]
    x0 = Tensor(np.ones((1, 2, 1, 1)))
    recursive = eval_resnet_recursive(layers, x0)
    unrolled = eval_resnet_unrolled(layers, x0)
    assert [x.data[0, 0, 0, 0] for x in recursive.xs] == [1.0, 1.0, 2.0, 4.0]
    assert [x.data[0, 0, 0, 0] for x in unrolled.xs] == [1.0, 1.0, 2.0, 4.0]
    assert recursive.output.data[0, 0, 0, 0] == 8.0
    assert unrolled.output.data[0, 0, 0, 0] == 8.0
    assert recursive.num_layers == 3


def test_resnet_single_layer_forms_agree():
    rng = np.random.default_rng(0)
    layers = [ConvReluTransform(3, 3, rng)]
    x0 = _x(3)
    np.testing.assert_array_equal(
        eval_resnet_recursive(layers, x0).output.data,
        eval_resnet_unrolled(layers, x0).output.data,
    )


def test_resnet_zero_layers_is_identity():
    x0 = _x(3)
    assert eval_resnet_recursive([], x0).output is x0


def test_resnet_rejects_width_change():
    with pytest.raises(ShapeError):
        eval_resnet_recursive([ConstantTransform(4)], _x(3))


@pytest.mark.parametrize("layers", [2, 5, 8])
def test_resnet_unrolling_with_random_transforms(layers):
    rng = np.random.default_rng(layers)
    transforms = [ConvReluTransform(4, 4, rng, index=i) for i in range(layers)]
    x0 = _x(4, seed=layers)
    recursive = eval_resnet_recursive(transforms, x0)
    unrolled = eval_resnet_unrolled(transforms, x0)
    for a, b in zip(recursive.xs, unrolled.xs):
        assert np.max(np.abs(a.data - b.data)) <= 1e-10


def test_densenet_matches_general_concat():
    rng = np.random.default_rng(1)
    transforms = [ConvReluTransform(3 + 2 * i, 2, rng, index=i) for i in range(3)]
    x0 = _x(3)
    dense = eval_densenet(transforms, x0)
    general = eval_dense_general(transforms, x0, ConcatConnection())
    assert dense.widths() == [3, 5, 7, 9]
    for a, b in zip(dense.ss, general.ss):
        np.testing.assert_array_equal(a.data, b.data)


@pytest.mark.parametrize("position", list(Position))
def test_mixed_matches_general_mixed_connection(position):
    rng = np.random.default_rng(2)
    config = MixedLinkConfig(k1=2, k2=3, position=position)
    widths = [4 + 3 * i for i in range(3)]
    h_in = [ConvReluTransform(w, 2, rng, index=i) for i, w in enumerate(widths)]
    h_out = [ConvReluTransform(w, 3, rng, index=i) for i, w in enumerate(widths)]
    pairs = [PairTransform(a, b, index=i) for i, (a, b) in enumerate(zip(h_in, h_out))]
    x0 = _x(4)
    mixed = eval_mixed(h_in, h_out, x0, config)
    general = eval_dense_general(pairs, x0, config)
    for a, b in zip(mixed.ss, general.ss):
        np.testing.assert_array_equal(a.data, b.data)


def test_mixed_without_inner_link_is_densenet():
    rng = np.random.default_rng(3)
    h_out = [ConvReluTransform(3 + 2 * i, 2, rng, index=i) for i in range(3)]
    x0 = _x(3)
    mixed = eval_mixed([None] * 3, h_out, x0, MixedLinkConfig(k1=0, k2=2))
    dense = eval_densenet(h_out, x0)
    for a, b in zip(mixed.ss, dense.ss):
        np.testing.assert_array_equal(a.data, b.data)


def test_mixed_full_width_fixed_is_resnet():
    rng = np.random.default_rng(4)
    h_in = [ConvReluTransform(4, 4, rng, index=i) for i in range(3)]
    x0 = _x(4)
    config = MixedLinkConfig(k1=4, k2=0, position=Position.FIXED)
    mixed = eval_mixed(h_in, [None] * 3, x0, config)
    residual = eval_resnet_recursive(h_in, x0)
    for a, b in zip(mixed.ss, residual.rs):
        np.testing.assert_array_equal(a.data, b.data)


def test_mixed_fixed_is_dual_path():
    rng = np.random.default_rng(5)
    widths = [5 + 2 * i for i in range(3)]
    h_in = [ConvReluTransform(w, 3, rng, index=i) for i, w in enumerate(widths)]
    h_out = [ConvReluTransform(w, 2, rng, index=i) for i, w in enumerate(widths)]
    x0 = _x(5)
    config = MixedLinkConfig(k1=3, k2=2, position=Position.FIXED)
    mixed = eval_mixed(h_in, h_out, x0, config)
    reference = eval_dual_path_reference(h_in, h_out, x0, 3, 2)
    np.testing.assert_array_equal(mixed.output.data, reference.data)


def test_witness_fixed_and_unfixed_differ():
    s_prev = Tensor(np.zeros((1, 8, 1, 1)))
    h_in, h_out = ConstantTransform(2, 1.0), ConstantTransform(2, 0.0)
    fixed = mixed_step(s_prev, h_in, h_out, MixedLinkConfig(k1=2, k2=2, position="fixed"))
    unfixed = mixed_step(s_prev, h_in, h_out, MixedLinkConfig(k1=2, k2=2, position="unfixed"))
    np.testing.assert_array_equal(fixed.data[0, :, 0, 0], [1, 1, 0, 0, 0, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(unfixed.data[0, :, 0, 0], [0, 0, 0, 0, 0, 0, 1, 1, 0, 0])


def test_mixed_step_rejects_wide_inner_link():
    with pytest.raises(ChannelRangeError):
        mixed_step(_x(2), ConstantTransform(3), None, MixedLinkConfig(k1=3, k2=0))


def test_mixed_step_rejects_mismatched_transform():
    with pytest.raises(ShapeError):
        mixed_step(_x(4), ConstantTransform(2), ConstantTransform(3), MixedLinkConfig(k1=2, k2=2))


def test_mixed_step_with_custom_offset_rule():
    s_prev = Tensor(np.zeros((1, 4, 1, 1)))
    out = mixed_step(
        s_prev, ConstantTransform(1, 1.0), None, MixedLinkConfig(k1=1, k2=0), offset_fn=lambda w, k, p: 1
    )
    np.testing.assert_array_equal(out.data[0, :, 0, 0], [0, 1, 0, 0])


def test_eval_mixed_needs_paired_transforms():
    with pytest.raises(ValueError):
        eval_mixed([None], [], _x(2), MixedLinkConfig(k1=0, k2=1))


def test_link_steps():
    s_prev = Tensor(np.zeros((1, 3, 1, 1)))
    added = inner_link_step(s_prev, ConstantTransform(2, 1.0), offset=1)
    np.testing.assert_array_equal(added.data[0, :, 0, 0], [0, 1, 1])
    grown = outer_link_step(s_prev, ConstantTransform(2, 3.0))
    np.testing.assert_array_equal(grown.data[0, :, 0, 0], [0, 0, 0, 3, 3])
    assert outer_link_step(s_prev, None) is s_prev
    assert outer_link_step(s_prev, ConstantTransform(0)) is s_prev


def test_transform_width_is_checked():
    class Liar(ConstantTransform):
        def forward(self, x):
            return Tensor(np.zeros((x.shape[0], self.out_channels + 1, *x.shape[2:])))

    with pytest.raises(ShapeError):
        Liar(2)(_x(2))


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**16),
    width=st.integers(1, 12),
    k2=st.integers(0, 4),
    layers=st.integers(1, 4),
    fixed=st.booleans(),
    data=st.data(),
)
def test_width_law_and_locality(seed, width, k2, layers, fixed, data):
    k1 = data.draw(st.integers(0 if k2 > 0 else 1, width))
    position = Position.FIXED if fixed else Position.UNFIXED
    config = MixedLinkConfig(k1=k1, k2=k2, position=position)
    s = _x(width, seed=seed, spatial=2)
    trace_widths = [width]
    for layer in range(layers):
        h_in = ConstantTransform(k1, 1.0) if k1 else None
        h_out = ConstantTransform(k2, -1.0) if k2 else None
        out = mixed_step(s, h_in, h_out, config)
        offset = 0 if fixed else s.channels - k1
        window = np.zeros(s.channels, dtype=bool)
        window[offset : offset + k1] = True
        np.testing.assert_array_equal(out.data[:, : s.channels][:, ~window], s.data[:, ~window])
        np.testing.assert_array_equal(out.data[:, : s.channels][:, window], s.data[:, window] + 1.0)
        np.testing.assert_array_equal(out.data[:, s.channels :], -1.0)
        s = out
        trace_widths.append(s.channels)
    assert trace_widths == [width + i * k2 for i in range(layers + 1)]
