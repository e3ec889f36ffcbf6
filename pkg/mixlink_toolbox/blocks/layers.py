import math
from typing import Optional

import numpy as np

from mixlink_toolbox import MixedLinkConfig
from mixlink_toolbox.blocks.bottleneck import Bottleneck, BottleneckSpec
from mixlink_toolbox.blocks.network_spec import ClassifierSpec, StemSpec
from mixlink_toolbox.blocks.units import BatchNorm2d, Conv2d, Dropout, ForwardContext
from mixlink_toolbox.dense_topology.connections import TopologyTrace
from mixlink_toolbox.dense_topology.evaluators import OffsetFn, eval_mixed, mixed_step
from mixlink_toolbox.errors import ChannelRangeError
from mixlink_toolbox.tensor_core import ops
from mixlink_toolbox.tensor_core.params import ParamStore
from mixlink_toolbox.tensor_core.tensor import Tensor
from mixlink_toolbox.training.initializers import he_init
from mixlink_toolbox.utils import make_rng


class Stem:
    """Stem convolution; the ImageNet variant continues with BN-ReLU and a 3x3/2 max pool."""

    def __init__(
        self,
        spec: StemSpec,
        params: ParamStore,
        ctx: ForwardContext,
        rng: np.random.Generator,
        name: str = "stem",
    ):
        self.spec = spec
        self.conv = Conv2d(
            f"{name}.conv",
            spec.in_channels,
            spec.out_channels,
            spec.kernel_size,
            params,
            ctx,
            rng,
            stride=spec.stride,
            pad=spec.pad,
        )
        self.bn = BatchNorm2d(f"{name}.bn", spec.out_channels, params, ctx) if spec.max_pool else None

    def __call__(self, x: Tensor) -> Tensor:
        x = self.conv(x)
        if self.bn is not None:
            x = ops.max_pool(ops.relu(self.bn(x)), window=3, stride=2, pad=1)
        return x


class MixedLinkBlock:
    """
    A stack of mixed link layers, each with its own inner and outer bottleneck.

    Layer i reads a width of in_channels + i * k2.
    """

    def __init__(
        self,
        in_channels: int,
        layers: int,
        config: MixedLinkConfig,
        multiplier: int,
        params: ParamStore,
        ctx: ForwardContext,
        rng: np.random.Generator,
        name: str = "block",
    ):
        if config.k1 > in_channels:
            raise ChannelRangeError(
                f"{name}: k1={config.k1} exceeds the block input width {in_channels}."
            )
        self.config = config
        self.in_channels = in_channels
        self.out_channels = in_channels + layers * config.k2
        self.offset_fn: Optional[OffsetFn] = None
        self.inner: list[Optional[Bottleneck]] = []
        self.outer: list[Optional[Bottleneck]] = []
        for i in range(layers):
            width = in_channels + i * config.k2
            for k, name_part, target in (
                (config.k1, "inner", self.inner),
                (config.k2, "outer", self.outer),
            ):
                target.append(
                    Bottleneck(
                        BottleneckSpec(in_channels=width, out_channels=k, multiplier=multiplier),
                        params,
                        ctx,
                        rng,
                        name=f"{name}.layer{i + 1}.{name_part}",
                        index=i + 1,
                    )
                    if k > 0
                    else None
                )

    def __call__(self, x: Tensor) -> Tensor:
        for h_in, h_out in zip(self.inner, self.outer):
            x = mixed_step(x, h_in, h_out, self.config, offset_fn=self.offset_fn)
        return x

    def trace(self, x: Tensor) -> TopologyTrace:
        return eval_mixed(self.inner, self.outer, x, self.config, offset_fn=self.offset_fn)


class Transition:
    """BN-ReLU-Conv(1x1) to floor(compression * width) channels, then 2x2 average pool, stride 2."""

    def __init__(
        self,
        in_channels: int,
        compression: float,
        params: ParamStore,
        ctx: ForwardContext,
        rng: np.random.Generator,
        name: str = "transition",
        next_k1: int = 0,
    ):
        if not 0.0 < compression <= 1.0:
            raise ValueError(f"Compression must lie in (0, 1], got {compression}.")
        self.out_channels = math.floor(compression * in_channels)
        if self.out_channels < max(next_k1, 1):
            raise ChannelRangeError(
                f"{name}: compressed width {self.out_channels} is smaller than the next block's k1={next_k1}."
            )
        self.bn = BatchNorm2d(f"{name}.bn", in_channels, params, ctx)
        self.conv = Conv2d(f"{name}.conv", in_channels, self.out_channels, 1, params, ctx, rng)
        self.dropout = Dropout(ctx)

    def __call__(self, x: Tensor) -> Tensor:
        x = self.dropout(self.conv(ops.relu(self.bn(x))))
        return ops.avg_pool(x, window=2, stride=2)


class Classifier:
    """BN-ReLU, global average pool and a linear layer to class logits."""

    def __init__(
        self,
        in_channels: int,
        spec: ClassifierSpec,
        params: ParamStore,
        ctx: ForwardContext,
        rng: np.random.Generator,
        name: str = "classifier",
    ):
        self.bn = BatchNorm2d(f"{name}.bn", in_channels, params, ctx)
        self.weight = params.add(
            f"{name}.linear.weight",
            he_init((spec.classes, in_channels), rng, dtype=ctx.np_dtype),
        )
        self.bias = params.add(
            f"{name}.linear.bias", Tensor(np.zeros(spec.classes), dtype=ctx.np_dtype)
        )

    def __call__(self, x: Tensor) -> Tensor:
        x = ops.global_avg_pool(ops.relu(self.bn(x)))
        return ops.linear(x, self.weight, self.bias)


def build_mixed_link_block(
    in_channels: int,
    layers: int,
    config: MixedLinkConfig,
    multiplier: int = 4,
    params: Optional[ParamStore] = None,
    ctx: Optional[ForwardContext] = None,
    rng: Optional[np.random.Generator] = None,
    name: str = "block",
) -> MixedLinkBlock:
    """
    Build ``layers`` mixed link layers with fresh bottlenecks.

    The output width is in_channels + layers * k2.

    Raises
    ------
    ChannelRangeError
        If k1 exceeds the input width.
    """
    return MixedLinkBlock(
        in_channels,
        layers,
        config,
        multiplier,
        params if params is not None else ParamStore(),
        ctx if ctx is not None else ForwardContext(),
        rng if rng is not None else make_rng(0),
        name=name,
    )


def build_transition(
    in_channels: int,
    compression: float = 1.0,
    params: Optional[ParamStore] = None,
    ctx: Optional[ForwardContext] = None,
    rng: Optional[np.random.Generator] = None,
    name: str = "transition",
    next_k1: int = 0,
) -> Transition:
    """
    Build a transition layer.

    Raises
    ------
    ValueError
        If compression is outside (0, 1].
    ChannelRangeError
        If the compressed width is smaller than ``next_k1``.
    """
    return Transition(
        in_channels,
        compression,
        params if params is not None else ParamStore(),
        ctx if ctx is not None else ForwardContext(),
        rng if rng is not None else make_rng(0),
        name=name,
        next_k1=next_k1,
    )
