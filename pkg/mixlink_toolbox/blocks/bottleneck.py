from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, PositiveInt

from mixlink_toolbox.blocks.units import BatchNorm2d, Conv2d, Dropout, ForwardContext
from mixlink_toolbox.dense_topology.transforms import ITransform
from mixlink_toolbox.tensor_core import ops
from mixlink_toolbox.tensor_core.params import ParamStore
from mixlink_toolbox.tensor_core.tensor import Tensor
from mixlink_toolbox.utils import make_rng


class BottleneckSpec(BaseModel):
    """
    Model defining one bottleneck layer.

    - in_channels: width of the running embedding it reads
    - out_channels: k1 for an inner link, k2 for an outer link
    - multiplier: intermediate width is multiplier * out_channels
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    in_channels: PositiveInt
    out_channels: PositiveInt
    multiplier: PositiveInt = 4

    @property
    def mid_channels(self) -> int:
        return self.multiplier * self.out_channels


class Bottleneck(ITransform):
    """BN-ReLU-Conv(1x1)-BN-ReLU-Conv(3x3, pad 1), with dropout after each convolution."""

    def __init__(
        self,
        spec: BottleneckSpec,
        params: ParamStore,
        ctx: ForwardContext,
        rng: np.random.Generator,
        name: str = "bottleneck",
        index: int = 0,
    ):
        self.spec = spec
        self.name = name
        self.index = index
        self.out_channels = spec.out_channels
        self.bn1 = BatchNorm2d(f"{name}.bn1", spec.in_channels, params, ctx)
        self.conv1 = Conv2d(
            f"{name}.conv1", spec.in_channels, spec.mid_channels, 1, params, ctx, rng
        )
        self.bn2 = BatchNorm2d(f"{name}.bn2", spec.mid_channels, params, ctx)
        self.conv2 = Conv2d(
            f"{name}.conv2", spec.mid_channels, spec.out_channels, 3, params, ctx, rng, pad=1
        )
        self.dropout = Dropout(ctx)

    def forward(self, x: Tensor) -> Tensor:
        x = self.dropout(self.conv1(ops.relu(self.bn1(x))))
        return self.dropout(self.conv2(ops.relu(self.bn2(x))))


def build_bottleneck(
    spec: BottleneckSpec,
    params: Optional[ParamStore] = None,
    ctx: Optional[ForwardContext] = None,
    rng: Optional[np.random.Generator] = None,
    name: str = "bottleneck",
    index: int = 0,
) -> Bottleneck:
    """
    Build a bottleneck transform and register its parameters.

    Parameters
    ----------
    spec : BottleneckSpec
        Widths and intermediate multiplier.
    params : ParamStore, optional
        Store receiving the parameters; a fresh one by default.
    ctx : ForwardContext, optional
        Shared train/eval mode; a fresh training context by default.
    rng : np.random.Generator, optional
        Initialization randomness; seeded with 0 by default.

    Returns
    -------
    Bottleneck
        A transform of width ``spec.out_channels``.
    """
    return Bottleneck(
        spec,
        params if params is not None else ParamStore(),
        ctx if ctx is not None else ForwardContext(),
        rng if rng is not None else make_rng(0),
        name=name,
        index=index,
    )
