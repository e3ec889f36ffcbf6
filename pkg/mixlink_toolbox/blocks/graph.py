import logging
from typing import Callable, Optional, Union

import numpy as np

from mixlink_toolbox import Position
from mixlink_toolbox.blocks.layers import Classifier, MixedLinkBlock, Stem, Transition
from mixlink_toolbox.blocks.network_spec import (
    NetworkSpec,
    cifar_network_spec,
    imagenet_network_spec,
)
from mixlink_toolbox.blocks.units import ForwardContext
from mixlink_toolbox.dense_topology.evaluators import OffsetFn
from mixlink_toolbox.tensor_core.params import ParamStore
from mixlink_toolbox.tensor_core.tensor import DTYPES, Tensor
from mixlink_toolbox.utils import spawn_rngs


class LayerGraph:
    """
    A built network: executable nodes in topological order bound to one ParamStore.

    Every parameter is used by exactly one node, and every node runs exactly
    once per forward pass.
    """

    def __init__(
        self,
        spec: NetworkSpec,
        seed: int = 0,
        dtype: str = "64bit",
        logger: logging.Logger = logging.getLogger(__name__),
    ):
        self.spec = spec
        self.logger = logger
        init_rng, dropout_rng = spawn_rngs(seed, 2)
        self.params = ParamStore(logger=logger)
        self.ctx = ForwardContext(
            training=True, dropout=spec.dropout, rng=dropout_rng, dtype=dtype
        )
        self.stem = Stem(spec.stem, self.params, self.ctx, init_rng)
        self.blocks: list[MixedLinkBlock] = []
        self.transitions: list[Transition] = []
        self.nodes: list[tuple[str, Callable[[Tensor], Tensor]]] = [("stem", self.stem)]

        width = spec.stem.out_channels
        for b, block_spec in enumerate(spec.blocks, start=1):
            block = MixedLinkBlock(
                width,
                block_spec.layers,
                block_spec.config,
                block_spec.multiplier,
                self.params,
                self.ctx,
                init_rng,
                name=f"block{b}",
            )
            self.blocks.append(block)
            self.nodes.append((f"block{b}", block))
            width = block.out_channels
            if b <= len(spec.transitions):
                transition = Transition(
                    width,
                    spec.transitions[b - 1].compression,
                    self.params,
                    self.ctx,
                    init_rng,
                    name=f"transition{b}",
                    next_k1=spec.blocks[b].config.k1,
                )
                self.transitions.append(transition)
                self.nodes.append((f"transition{b}", transition))
                width = transition.out_channels
        self.classifier = Classifier(width, spec.classifier, self.params, self.ctx, init_rng)
        self.nodes.append(("classifier", self.classifier))
        self.logger.debug(
            f"Built {spec.name} with {len(self.params)} parameter tensors "
            f"({self.params.num_elements()} elements)"
        )

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        """Logits of shape (N, classes, 1, 1)."""
        for _, node in self.nodes:
            x = node(x)
        return x

    def train(self) -> "LayerGraph":
        self.ctx.training = True
        return self

    def eval(self) -> "LayerGraph":
        self.ctx.training = False
        return self

    @property
    def training(self) -> bool:
        return self.ctx.training

    @property
    def dtype(self) -> str:
        return self.ctx.dtype

    def as_input(self, images: np.ndarray) -> Tensor:
        return Tensor(images, dtype=DTYPES[self.ctx.dtype])

    def set_offset_fn(self, offset_fn: Optional[OffsetFn]) -> None:
        """Replace the inner link offset rule of every block (None restores the default)."""
        for block in self.blocks:
            block.offset_fn = offset_fn


def build_network(
    spec: NetworkSpec, seed: int = 0, dtype: str = "64bit"
) -> tuple[NetworkSpec, LayerGraph]:
    """
    Build an executable graph for a network spec.

    Raises
    ------
    ChannelRangeError
        If a block's k1 exceeds the width entering it.
    """
    spec.stage_rows()
    return spec, LayerGraph(spec, seed=seed, dtype=dtype)


def build_cifar_network(
    depth: int,
    k1: int,
    k2: int,
    position: Union[Position, str] = Position.UNFIXED,
    multiplier: int = 4,
    compression: float = 1.0,
    classes: int = 10,
    input_size: int = 32,
    dropout: float = 0.0,
    seed: int = 0,
    dtype: str = "64bit",
) -> tuple[NetworkSpec, LayerGraph]:
    """
    Stem, three mixed link blocks with two transitions, and a classifier.

    Feature maps are input_size, input_size / 2 and input_size / 4 in the
    three blocks (32, 16, 8 for CIFAR inputs).
    """
    spec = cifar_network_spec(
        depth,
        k1,
        k2,
        position=Position(position),
        multiplier=multiplier,
        compression=compression,
        classes=classes,
        input_size=input_size,
        dropout=dropout,
    )
    return build_network(spec, seed=seed, dtype=dtype)


def build_imagenet_network(
    preset: int,
    multiplier: int = 4,
    compression: float = 1.0,
    classes: int = 1000,
    seed: int = 0,
    dtype: str = "64bit",
) -> tuple[NetworkSpec, LayerGraph]:
    """The four-block family: 105, 121 or 141."""
    spec = imagenet_network_spec(
        preset, multiplier=multiplier, compression=compression, classes=classes
    )
    return build_network(spec, seed=seed, dtype=dtype)

