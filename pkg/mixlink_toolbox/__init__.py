__version__ = "0.1.0"

from enum import Enum
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, model_validator


class Position(str, Enum):
    """Placement of the inner link addition window inside the feature embedding."""

    FIXED = "fixed"
    UNFIXED = "unfixed"

    def __str__(self):
        return self.value


class Arch(str, Enum):
    """The four representative architectures reachable from the mixed link architecture."""

    RESNET = "arch1"
    DENSENET = "arch2"
    DUAL_PATH = "arch3"
    MIXNET = "arch4"

    def __str__(self):
        return self.value


class MixedLinkConfig(BaseModel):
    """
    Model defining one mixed link connection.

    - k1: number of channels produced by the inner link transform (added in place)
    - k2: number of channels produced by the outer link transform (appended)
    - position: where the inner link window sits ('fixed' leading channels or
      'unfixed' trailing channels that follow the growing boundary)
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["mixed"] = "mixed"
    k1: int
    k2: int
    position: Position = Position.UNFIXED

    @model_validator(mode="after")
    def _check_sizes(self) -> "MixedLinkConfig":
        if self.k1 < 0 or self.k2 < 0:
            raise ValueError(
                f"Link sizes must be non-negative, got k1={self.k1}, k2={self.k2}."
            )
        if self.k1 + self.k2 == 0:
            raise ValueError("At least one of k1 and k2 must be positive.")
        return self

    def stem_width(self) -> int:
        """Width of the stem convolution, max(k1, 2 * k2)."""
        return max(self.k1, 2 * self.k2)


def arch_preset(
    which: Union[Arch, str],
    width: Optional[int] = None,
    k1: Optional[int] = None,
    k2: Optional[int] = None,
) -> MixedLinkConfig:
    """
    Returns the mixed link configuration of one of the four representative architectures.

    Parameters:
    which (Arch | str): The architecture, one of 'arch1' (ResNet), 'arch2' (DenseNet),
        'arch3' (dual path) or 'arch4' (MixNet).
    width (int, optional): Trunk width; required for 'arch1', whose inner link spans the whole trunk.
    k1 (int, optional): Inner link size; required for 'arch3' and 'arch4'.
    k2 (int, optional): Outer link size; required for 'arch2', 'arch3' and 'arch4'.
    Returns:
    MixedLinkConfig: The configuration of the selected architecture.
    Raises:
    ValueError: If the architecture is unknown or a required size is missing.
    """
    which = Arch(which)
    if which == Arch.RESNET:
        if width is None:
            raise ValueError("arch1 needs the trunk width.")
        return MixedLinkConfig(k1=width, k2=0, position=Position.FIXED)
    elif which == Arch.DENSENET:
        if k2 is None:
            raise ValueError("arch2 needs the outer link size k2.")
        # Position is irrelevant without an inner link
        return MixedLinkConfig(k1=0, k2=k2, position=Position.FIXED)
    elif which in (Arch.DUAL_PATH, Arch.MIXNET):
        if k1 is None or k2 is None:
            raise ValueError(f"{which} needs both k1 and k2.")
        if k1 <= 0 or k2 <= 0:
            raise ValueError(f"{which} needs k1 > 0 and k2 > 0.")
        position = Position.FIXED if which == Arch.DUAL_PATH else Position.UNFIXED
        return MixedLinkConfig(k1=k1, k2=k2, position=position)
    else:
        raise ValueError(f"Unsupported architecture: {which}")
