from dataclasses import dataclass, field
from typing import Annotated, Literal, Sequence, Union

from pydantic import BaseModel, ConfigDict, Field

from mixlink_toolbox import MixedLinkConfig, Position
from mixlink_toolbox.errors import ChannelRangeError, ShapeError
from mixlink_toolbox.tensor_core import ops
from mixlink_toolbox.tensor_core.tensor import Tensor


class SumConnection(BaseModel):
    """Element-wise addition of all previous outputs (ResNet family)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["sum"] = "sum"


class ConcatConnection(BaseModel):
    """Channel concatenation of all previous outputs (DenseNet family)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["concat"] = "concat"


ConnectionKind = Annotated[
    Union[SumConnection, ConcatConnection, MixedLinkConfig],
    Field(discriminator="kind"),
]


@dataclass
class TopologyTrace:
    """
    Record of one evaluation of a dense topology.

    - xs: layer outputs X_0 .. X_L (X_0 is the input)
    - ss: running feature embeddings S_0 .. S_L, S_0 = X_0
    - rs: residual states R_0 .. R_L of the recursive ResNet form, R_0 = X_0
    """

    xs: list[Tensor] = field(default_factory=list)
    ss: list[Tensor] = field(default_factory=list)
    rs: list[Tensor] = field(default_factory=list)

    @property
    def num_layers(self) -> int:
        return len(self.xs) - 1

    @property
    def output(self) -> Tensor:
        """The final running embedding S_L (R_L for the recursive form)."""
        if self.rs:
            return self.rs[-1]
        return self.ss[-1]

    def widths(self) -> list[int]:
        return [s.channels for s in self.ss]


def inner_offset(width: int, k1: int, position: Position) -> int:
    """
    Channel offset of the inner link addition window.

    Fixed windows cover the leading k1 channels; unfixed windows cover the
    trailing k1 channels and so follow the growing boundary of the embedding.
    """
    if k1 > width:
        raise ChannelRangeError(f"Inner link width {k1} exceeds embedding width {width}.")
    if Position(position) == Position.FIXED:
        return 0
    return width - k1


def off_by_one_offset(width: int, k1: int, position: Position) -> int:
    """A deliberately broken offset rule, shifted by one channel, for failure-path checks."""
    offset = inner_offset(width, k1, position)
    return offset - 1 if offset > 0 else offset + 1


def connection_function(previous: Sequence[Tensor], connect: ConnectionKind) -> Tensor:
    """
    Combine X_0 .. X_{l-1} into the input of layer l by a left fold.

    For a mixed connection every X_i (i >= 1) carries k1 inner channels followed
    by k2 outer channels: the inner part is added into the running embedding at
    the configured offset and the outer part is appended.

    Raises
    ------
    ShapeError
        If a sum connection receives inputs of different widths.
    ChannelRangeError
        If a mixed inner window does not fit the running embedding.
    """
    if not previous:
        raise ValueError("The connection function needs at least X_0.")
    running = previous[0]
    for x in previous[1:]:
        if isinstance(connect, SumConnection):
            if x.channels != running.channels:
                raise ShapeError(
                    f"Sum connection needs equal widths, got {running.channels} and {x.channels}."
                )
            running = ops.add(running, x)
        elif isinstance(connect, ConcatConnection):
            running = ops.channel_concat(running, x)
        else:
            k1, k2 = connect.k1, connect.k2
            if x.channels != k1 + k2:
                raise ShapeError(
                    f"Mixed connection expects layer outputs of width {k1 + k2}, got {x.channels}."
                )
            if k1 > 0:
                offset = inner_offset(running.channels, k1, connect.position)
                running = ops.channel_add_at(
                    running, ops.slice_channels(x, 0, k1), offset
                )
            if k2 > 0:
                running = ops.channel_concat(
                    running, ops.slice_channels(x, k1, k1 + k2)
                )
    return running
