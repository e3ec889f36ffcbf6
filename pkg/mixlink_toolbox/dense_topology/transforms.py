from abc import ABC, abstractmethod

import numpy as np

from mixlink_toolbox.errors import ShapeError
from mixlink_toolbox.tensor_core import ops
from mixlink_toolbox.tensor_core.tensor import Tensor


class ITransform(ABC):
    """
    Interface of a layer transform H mapping the running feature embedding to new features.

    Implementations declare their output width up front; calling the transform
    checks the produced tensor against it.
    """

    out_channels: int
    index: int

    @abstractmethod
    def forward(self, x: Tensor) -> Tensor:
        """
        Compute the transform.

        Parameters
        ----------
        x : Tensor
            Input of shape (N, C, H, W).

        Returns
        -------
        Tensor
            Output of shape (N, out_channels, H, W).
        """
        pass

    def __call__(self, x: Tensor) -> Tensor:
        out = self.forward(x)
        if out.channels != self.out_channels:
            raise ShapeError(
                f"Transform {self.index} declared {self.out_channels} output channels but produced {out.channels}."
            )
        return out


class ConstantTransform(ITransform):
    """Ignores its input and returns a constant feature map (zero by default)."""

    def __init__(self, out_channels: int, value: float = 0.0, index: int = 0):
        self.out_channels = out_channels
        self.value = value
        self.index = index

    def forward(self, x: Tensor) -> Tensor:
        n, _, h, w = x.shape
        return Tensor.full((n, self.out_channels, h, w), self.value, dtype=x.dtype)


class AffineTransform(ITransform):
    """H(x) = scale * x + bias on a width-preserving layer; used for hand-computed checks."""

    def __init__(self, channels: int, scale: float = 1.0, bias: float = 0.0, index: int = 0):
        self.out_channels = channels
        self.scale = scale
        self.bias = bias
        self.index = index

    def forward(self, x: Tensor) -> Tensor:
        if x.channels != self.out_channels:
            raise ShapeError(
                f"AffineTransform {self.index} expects {self.out_channels} channels, got {x.channels}."
            )
        shift = Tensor.full(x.shape, self.bias, dtype=x.dtype)
        return ops.add(ops.scale(x, self.scale), shift)


class ConvReluTransform(ITransform):
    """relu(conv3x3(x)) with a He-scaled random kernel that takes part in backpropagation."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        index: int = 0,
        dtype=np.float64,
    ):
        self.out_channels = out_channels
        self.index = index
        std = np.sqrt(2.0 / (in_channels * 9))
        self.kernel = Tensor(
            rng.normal(0.0, std, size=(out_channels, in_channels, 3, 3)),
            requires_grad=True,
            dtype=dtype,
        )

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(ops.conv2d(x, self.kernel, stride=1, pad=1))


class PairTransform(ITransform):
    """
    Stacks an inner and an outer transform into one layer output.

    Either part may be None (zero width). The inner features occupy the
    leading channels, matching the mixed connection function.
    """

    def __init__(self, inner: "ITransform | None", outer: "ITransform | None", index: int = 0):
        self.inner = inner
        self.outer = outer
        self.index = index
        self.out_channels = (inner.out_channels if inner else 0) + (
            outer.out_channels if outer else 0
        )

    def forward(self, x: Tensor) -> Tensor:
        parts = [t(x) for t in (self.inner, self.outer) if t is not None]
        if len(parts) == 1:
            return parts[0]
        return ops.channel_concat(parts[0], parts[1])
