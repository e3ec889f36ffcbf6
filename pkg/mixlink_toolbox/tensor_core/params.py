import logging
from pathlib import Path
from typing import Iterator, Union

import numpy as np
from packaging import version

from mixlink_toolbox import __version__
from mixlink_toolbox.errors import ShapeError
from mixlink_toolbox.tensor_core.tensor import Tensor
from mixlink_toolbox.utils import check_extension

_PARAM_PREFIX = "param/"
_BUFFER_PREFIX = "buffer/"
_VERSION_KEY = "format_version"


class ParamStore:
    """
    Named trainable tensors plus their non-trainable buffers.

    Parameters keep insertion order, so iteration (and therefore optimizer
    updates and saved files) is deterministic. Buffers hold BN running
    statistics; velocities hold momentum state for the optimizer.
    """

    def __init__(self, logger: logging.Logger = logging.getLogger(__name__)):
        self.logger = logger
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self.velocity: dict[str, np.ndarray] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        """Register a trainable tensor under a unique name and give it a zero gradient slot."""
        if name in self._params:
            raise ValueError(f"Parameter '{name}' is already registered.")
        tensor.requires_grad = True
        tensor.zero_grad()
        self._params[name] = tensor
        return tensor

    def add_buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        if name in self._buffers:
            raise ValueError(f"Buffer '{name}' is already registered.")
        self._buffers[name] = array
        return array

    def __getitem__(self, name: str) -> Tensor:
        if name not in self._params:
            raise KeyError(f"Unknown parameter '{name}'.")
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def items(self):
        return self._params.items()

    def buffer(self, name: str) -> np.ndarray:
        if name not in self._buffers:
            raise KeyError(f"Unknown buffer '{name}'.")
        return self._buffers[name]

    def buffers(self):
        return self._buffers.items()

    def num_elements(self) -> int:
        """Total number of trainable scalars."""
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.zero_grad()

    def velocity_for(self, name: str) -> np.ndarray:
        """Momentum buffer of a parameter, created as zeros on first use."""
        if name not in self.velocity:
            self.velocity[name] = np.zeros_like(self[name].data)
        return self.velocity[name]

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copies of every parameter and buffer, keyed like the saved file."""
        arrays = {_PARAM_PREFIX + k: t.numpy() for k, t in self._params.items()}
        arrays.update({_BUFFER_PREFIX + k: b.copy() for k, b in self._buffers.items()})
        return arrays

    def save(self, path: Union[str, Path]) -> Path:
        """
        Save the final weights (parameters and BN running statistics) as .npz.

        Parameters
        ----------
        path : Union[str, Path]
            Destination, must end in '.npz'.

        Returns
        -------
        Path
            The written file.
        """
        path = Path(path)
        check_extension(path, ".npz")
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, **self.snapshot(), **{_VERSION_KEY: np.array(__version__)})
        self.logger.info(f"Saved {len(self)} parameters to {path}")
        return path

    def load(self, path: Union[str, Path]) -> None:
        """
        Load weights saved by ``save`` into the already registered tensors.

        Raises
        ------
        FileNotFoundError
            If the file does not exist.
        KeyError
            If a registered parameter or buffer is missing from the file.
        ShapeError
            If a stored array does not match the registered shape.
        ValueError
            If the file was written by a newer major version of the toolbox.
        """
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Weights file '{path}' does not exist.")
        with np.load(path) as stored:
            if _VERSION_KEY in stored:
                written = version.parse(str(stored[_VERSION_KEY]))
                if written.major > version.parse(__version__).major:
                    raise ValueError(
                        f"{path} was written by version {written}, this is {__version__}."
                    )
            for name, tensor in self._params.items():
                key = _PARAM_PREFIX + name
                if key not in stored:
                    raise KeyError(f"Parameter '{name}' missing from {path}.")
                tensor.data = stored[key]
            for name, array in self._buffers.items():
                key = _BUFFER_PREFIX + name
                if key not in stored:
                    raise KeyError(f"Buffer '{name}' missing from {path}.")
                if stored[key].shape != array.shape:
                    raise ShapeError(
                        f"Buffer '{name}' has shape {stored[key].shape} in {path}, expected {array.shape}."
                    )
                array[...] = stored[key]
        self.velocity.clear()
