from dataclasses import dataclass, field

import numpy as np

from mixlink_toolbox.tensor_core import ops
from mixlink_toolbox.tensor_core.params import ParamStore
from mixlink_toolbox.tensor_core.tensor import DTYPES, Tensor
from mixlink_toolbox.training.initializers import he_init
from mixlink_toolbox.utils import make_rng


@dataclass
class ForwardContext:
    """
    Mode shared by every unit of one built network.

    - training: batch statistics and active dropout when True
    - dropout: rate applied after each block/transition convolution (0 disables)
    - rng: generator for dropout masks
    - dtype: '64bit' or '32bit' element mode of the parameters
    """

    training: bool = True
    dropout: float = 0.0
    rng: np.random.Generator = field(default_factory=lambda: make_rng(0))
    bn_momentum: float = ops.BN_MOMENTUM
    eps: float = ops.BN_EPS
    dtype: str = "64bit"

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]


class BatchNorm2d:
    def __init__(self, name: str, channels: int, params: ParamStore, ctx: ForwardContext):
        self.ctx = ctx
        dtype = ctx.np_dtype
        self.scale = params.add(f"{name}.scale", Tensor(np.ones(channels), dtype=dtype))
        self.shift = params.add(f"{name}.shift", Tensor(np.zeros(channels), dtype=dtype))
        self.running_mean = params.add_buffer(
            f"{name}.running_mean", np.zeros(channels, dtype=dtype)
        )
        self.running_var = params.add_buffer(
            f"{name}.running_var", np.ones(channels, dtype=dtype)
        )

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batch_norm(
            x,
            self.scale,
            self.shift,
            self.running_mean,
            self.running_var,
            training=self.ctx.training,
            eps=self.ctx.eps,
            momentum=self.ctx.bn_momentum,
        )


class Conv2d:
    """Bias-free convolution with He-initialized weights."""

    def __init__(
        self,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        params: ParamStore,
        ctx: ForwardContext,
        rng: np.random.Generator,
        stride: int = 1,
        pad: int = 0,
    ):
        self.stride = stride
        self.pad = pad
        self.weight = params.add(
            f"{name}.weight",
            he_init(
                (out_channels, in_channels, kernel_size, kernel_size),
                rng,
                dtype=ctx.np_dtype,
            ),
        )

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, stride=self.stride, pad=self.pad)


class Dropout:
    def __init__(self, ctx: ForwardContext):
        self.ctx = ctx

    def __call__(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.ctx.dropout, training=self.ctx.training, rng=self.ctx.rng)
