from typing import Optional

from mixlink_toolbox import Position
from mixlink_toolbox.blocks.network_spec import (
    NetworkSpec,
    cifar_network_spec,
    imagenet_network_spec,
)

# Published model sizes in millions of parameters
PUBLISHED_PARAMS = {
    "mixnet-100": 1.5,
    "mixnet-250": 29.0,
    "mixnet-190": 48.5,
    "mixnet-105": 11.16,
    "mixnet-121": 21.86,
    "mixnet-141": 41.07,
}

# CIFAR-family presets: depth label -> k1 = k2
CIFAR_PRESETS = {"mixnet-100": (100, 12), "mixnet-250": (250, 24), "mixnet-190": (190, 40)}
IMAGENET_NAMES = {"mixnet-105": 105, "mixnet-121": 121, "mixnet-141": 141}

PRESETS = [*CIFAR_PRESETS, *IMAGENET_NAMES, "toy"]


class NetworkFactory:
    @staticmethod
    def create_network(
        preset: str,
        multiplier: int = 4,
        compression: float = 1.0,
        classes: Optional[int] = None,
        position: Position = Position.UNFIXED,
        input_size: Optional[int] = None,
        dropout: float = 0.0,
    ) -> NetworkSpec:
        """
        Create the spec of a named network.

        Parameters
        ----------
        preset : str
            One of 'mixnet-100', 'mixnet-250', 'mixnet-190' (CIFAR family),
            'mixnet-105', 'mixnet-121', 'mixnet-141' (ImageNet family) or 'toy'
            (16x16 inputs, 2 layers per block, k1 = k2 = 4, 4 classes).
        multiplier : int
            Bottleneck intermediate multiplier m.
        compression : float
            Transition compression theta.
        classes : int, optional
            Classifier width; 10 for CIFAR, 1000 for ImageNet and 4 for toy by default.
        input_size : int, optional
            Spatial override for the CIFAR family and the toy preset.

        Returns
        -------
        NetworkSpec
            The network description.
        """
        if preset in CIFAR_PRESETS:
            depth, k = CIFAR_PRESETS[preset]
            return cifar_network_spec(
                depth,
                k,
                k,
                position=position,
                multiplier=multiplier,
                compression=compression,
                classes=classes or 10,
                input_size=input_size or 32,
                dropout=dropout,
                name=preset,
            )
        elif preset in IMAGENET_NAMES:
            if input_size is not None:
                raise ValueError("The ImageNet presets have a fixed 224x224 input.")
            return imagenet_network_spec(
                IMAGENET_NAMES[preset],
                multiplier=multiplier,
                compression=compression,
                classes=classes or 1000,
                position=position,
            ).model_copy(update={"dropout": dropout})
        elif preset == "toy":
            return cifar_network_spec(
                16,
                4,
                4,
                position=position,
                multiplier=multiplier,
                compression=compression,
                classes=classes or 4,
                input_size=input_size or 16,
                dropout=dropout,
                name="toy",
            )
        else:
            raise ValueError(f"Network preset {preset} not supported, choose from {PRESETS}")
