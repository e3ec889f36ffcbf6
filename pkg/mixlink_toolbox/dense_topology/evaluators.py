"""
Evaluators of the dense topology and its special cases.

All evaluators are pure given fixed transform parameters and return the full
trace so that equivalences can be checked layer by layer.
"""

from typing import Callable, Optional, Sequence

from mixlink_toolbox import MixedLinkConfig, Position
from mixlink_toolbox.dense_topology.connections import (
    ConnectionKind,
    SumConnection,
    TopologyTrace,
    connection_function,
    inner_offset,
)
from mixlink_toolbox.dense_topology.transforms import ITransform
from mixlink_toolbox.errors import ChannelRangeError, ShapeError
from mixlink_toolbox.tensor_core import ops
from mixlink_toolbox.tensor_core.tensor import Tensor

OffsetFn = Callable[[int, int, Position], int]


def eval_dense_general(
    layers: Sequence[ITransform], x0: Tensor, connect: ConnectionKind
) -> TopologyTrace:
    """
    X_l = H_l(C(X_0, ..., X_{l-1})) for every layer, with C given by ``connect``.

    Parameters
    ----------
    layers : Sequence[ITransform]
        H_1 .. H_L.
    x0 : Tensor
        The block input X_0.
    connect : ConnectionKind
        Sum, concat or mixed connection function.

    Returns
    -------
    TopologyTrace
        xs holds X_0 .. X_L and ss holds the connection results C(X_0 .. X_l).
    """
    trace = TopologyTrace(xs=[x0], ss=[x0])
    for layer in layers:
        s = connection_function(trace.xs, connect)
        trace.xs.append(layer(s))
    trace.ss.extend(
        connection_function(trace.xs[: i + 1], connect) for i in range(1, len(trace.xs))
    )
    return trace


def eval_densenet(layers: Sequence[ITransform], x0: Tensor) -> TopologyTrace:
    """X_l = H_l(X_0 || X_1 || ... || X_{l-1})."""
    trace = TopologyTrace(xs=[x0], ss=[x0])
    for layer in layers:
        x = layer(trace.ss[-1])
        trace.xs.append(x)
        trace.ss.append(ops.channel_concat(trace.ss[-1], x))
    return trace


def _check_residual_widths(layers: Sequence[ITransform], x0: Tensor) -> None:
    for layer in layers:
        if layer.out_channels != x0.channels:
            raise ShapeError(
                f"Residual layer {layer.index} has width {layer.out_channels}, trunk width is {x0.channels}."
            )


def eval_resnet_recursive(layers: Sequence[ITransform], x0: Tensor) -> TopologyTrace:
    """R_l = R_{l-1} + H_l(R_{l-1}); the trace also keeps X_l = H_l(R_{l-1})."""
    _check_residual_widths(layers, x0)
    trace = TopologyTrace(xs=[x0], ss=[x0], rs=[x0])
    for layer in layers:
        r_prev = trace.rs[-1]
        x = layer(r_prev)
        trace.xs.append(x)
        trace.rs.append(ops.add(r_prev, x))
    trace.ss = list(trace.rs)
    return trace


def eval_resnet_unrolled(layers: Sequence[ITransform], x0: Tensor) -> TopologyTrace:
    """X_l = H_l(X_0 + X_1 + ... + X_{l-1}), summed explicitly from the stored outputs."""
    _check_residual_widths(layers, x0)
    return eval_dense_general(layers, x0, SumConnection())


def inner_link_step(s_prev: Tensor, h_in: ITransform, offset: int) -> Tensor:
    """
    Add H_in(S_{l-1}) into channels [offset, offset + k1) of S_{l-1}.

    Raises
    ------
    ChannelRangeError
        If the window does not fit inside S_{l-1}.
    """
    return ops.channel_add_at(s_prev, h_in(s_prev), offset)


def outer_link_step(s_prev: Tensor, h_out: Optional[ITransform]) -> Tensor:
    """Append H_out(S_{l-1}) to S_{l-1}; a missing or zero-width transform leaves S unchanged."""
    if h_out is None or h_out.out_channels == 0:
        return s_prev
    return ops.channel_concat(s_prev, h_out(s_prev))


def mixed_step(
    s_prev: Tensor,
    h_in: Optional[ITransform],
    h_out: Optional[ITransform],
    config: MixedLinkConfig,
    offset_fn: Optional[OffsetFn] = None,
) -> Tensor:
    """
    One mixed link layer: S_l = (S_{l-1} + H_in(S_{l-1})) || H_out(S_{l-1}).

    Both transforms read the same S_{l-1}. The addition window starts at
    channel 0 in fixed mode and at width - k1 in unfixed mode.

    Parameters
    ----------
    s_prev : Tensor
        The running embedding S_{l-1}.
    h_in : ITransform, optional
        Inner link transform of width k1; None when k1 == 0.
    h_out : ITransform, optional
        Outer link transform of width k2; None when k2 == 0.
    config : MixedLinkConfig
        k1, k2 and the window position.
    offset_fn : Callable, optional
        Replacement offset rule (width, k1, position) -> offset.

    Returns
    -------
    Tensor
        S_l with width(S_{l-1}) + k2 channels.

    Raises
    ------
    ChannelRangeError
        If k1 exceeds the width of S_{l-1}.
    ShapeError
        If a transform width disagrees with the configuration.
    """
    width = s_prev.channels
    k1, k2 = config.k1, config.k2
    if k1 > width:
        raise ChannelRangeError(f"Inner link width k1={k1} exceeds embedding width {width}.")
    for name, transform, expected in (("H_in", h_in, k1), ("H_out", h_out, k2)):
        declared = transform.out_channels if transform is not None else 0
        if declared != expected:
            raise ShapeError(f"{name} has width {declared}, configuration expects {expected}.")

    delta = h_in(s_prev) if k1 > 0 else None
    appended = h_out(s_prev) if k2 > 0 else None

    s = s_prev
    if delta is not None:
        offset = (offset_fn or inner_offset)(width, k1, config.position)
        s = ops.channel_add_at(s, delta, offset)
    if appended is not None:
        s = ops.channel_concat(s, appended)
    return s


def eval_mixed(
    layers_in: Sequence[Optional[ITransform]],
    layers_out: Sequence[Optional[ITransform]],
    x0: Tensor,
    config: MixedLinkConfig,
    offset_fn: Optional[OffsetFn] = None,
) -> TopologyTrace:
    """
    Iterate ``mixed_step`` over paired inner/outer transforms.

    The trace keeps S_0 .. S_L; X_l is recorded as the appended features
    (or the inner features when k2 == 0).
    """
    if len(layers_in) != len(layers_out):
        raise ValueError(
            f"Got {len(layers_in)} inner and {len(layers_out)} outer transforms."
        )
    trace = TopologyTrace(xs=[x0], ss=[x0])
    for h_in, h_out in zip(layers_in, layers_out):
        s = mixed_step(trace.ss[-1], h_in, h_out, config, offset_fn=offset_fn)
        trace.ss.append(s)
        if config.k2 > 0:
            trace.xs.append(ops.slice_channels(s, s.channels - config.k2, s.channels))
        else:
            trace.xs.append(s)
    return trace


def eval_dual_path_reference(
    layers_in: Sequence[Optional[ITransform]],
    layers_out: Sequence[Optional[ITransform]],
    x0: Tensor,
    k1: int,
    k2: int,
) -> Tensor:
    """
    Dual-path evaluation kept independent of the mixed step.

    A residual path of the leading k1 channels is updated by addition while a
    dense path of the remaining channels grows by concatenation; both
    transforms read the joined embedding.
    """
    if k1 < 0 or k2 < 0 or k1 + k2 == 0:
        raise ValueError(f"Dual path needs k1, k2 >= 0 and not both zero, got {k1}, {k2}.")
    if k1 > x0.channels:
        raise ChannelRangeError(f"Residual path width {k1} exceeds input width {x0.channels}.")
    residual = ops.slice_channels(x0, 0, k1)
    dense = ops.slice_channels(x0, k1, x0.channels)
    for h_in, h_out in zip(layers_in, layers_out):
        joined = ops.channel_concat(residual, dense)
        if k1 > 0:
            residual = ops.add(residual, h_in(joined))
        if k2 > 0:
            dense = ops.channel_concat(dense, h_out(joined))
    return ops.channel_concat(residual, dense)
