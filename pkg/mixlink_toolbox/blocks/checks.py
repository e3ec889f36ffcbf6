"""Gradcheck cases for built units: bottleneck, transition, mixed link block, whole network."""

from mixlink_toolbox import MixedLinkConfig, Position
from mixlink_toolbox.blocks.bottleneck import BottleneckSpec, build_bottleneck
from mixlink_toolbox.blocks.graph import build_cifar_network
from mixlink_toolbox.blocks.layers import build_mixed_link_block, build_transition
from mixlink_toolbox.blocks.units import ForwardContext
from mixlink_toolbox.tensor_core import ops
from mixlink_toolbox.tensor_core.cases import CaseBuilder, GradcheckCase
from mixlink_toolbox.tensor_core.gradcheck import random_input
from mixlink_toolbox.tensor_core.params import ParamStore


def _param_case(fn, x, params: ParamStore) -> GradcheckCase:
    names = ["x", *params]
    tensors = [x, *(params[name] for name in params)]
    return GradcheckCase(lambda x, *_: fn(x), tensors, names)


def _bottleneck(rng, dtype):
    params, ctx = ParamStore(), ForwardContext(dtype=dtype)
    unit = build_bottleneck(
        BottleneckSpec(in_channels=6, out_channels=4, multiplier=2), params, ctx, rng
    )
    x = random_input((2, 6, 6, 6), rng, dtype)
    return _param_case(unit, x, params)


def _transition(rng, dtype):
    params, ctx = ParamStore(), ForwardContext(dtype=dtype)
    unit = build_transition(8, 0.5, params, ctx, rng)
    x = random_input((2, 8, 4, 4), rng, dtype)
    return _param_case(unit, x, params)


def _mixed_block(rng, dtype):
    params, ctx = ParamStore(), ForwardContext(dtype=dtype)
    config = MixedLinkConfig(k1=2, k2=2, position=Position.UNFIXED)
    block = build_mixed_link_block(4, 2, config, multiplier=2, params=params, ctx=ctx, rng=rng)
    x = random_input((2, 4, 6, 6), rng, dtype)
    return _param_case(block, x, params)


def _network(rng, dtype):
    seed = int(rng.integers(0, 2**31))
    _, graph = build_cifar_network(
        16, 2, 2, multiplier=2, classes=3, input_size=8, seed=seed, dtype=dtype
    )
    x = random_input((2, 3, 8, 8), rng, dtype)
    labels = rng.integers(0, 3, size=2)
    return _param_case(
        lambda x: ops.softmax_cross_entropy(graph(x), labels), x, graph.params
    )


BLOCK_CASES: dict[str, CaseBuilder] = {
    "bottleneck": _bottleneck,
    "transition": _transition,
    "mixed_block": _mixed_block,
    "network": _network,
}
