from typing import Optional, Sequence

import numpy as np

from mixlink_toolbox.tensor_core.tensor import Tensor


def he_init(
    shape: Sequence[int],
    rng: np.random.Generator,
    fan_in: Optional[int] = None,
    dtype=np.float64,
) -> Tensor:
    """
    Zero-mean normal weights with variance 2 / fan_in.

    Parameters
    ----------
    shape : Sequence[int]
        Weight shape, (F, C, kh, kw) for convolutions or (K, C) for linear layers.
    rng : np.random.Generator
        Source of randomness; the same generator state gives the same weights.
    fan_in : int, optional
        Defaults to the product of all but the first dimension (C * kh * kw).

    Returns
    -------
    Tensor
        The initialized weights.

    Raises
    ------
    ValueError
        If fan_in is not positive.
    """
    if fan_in is None:
        fan_in = int(np.prod(shape[1:]))
    if fan_in <= 0:
        raise ValueError(f"He initialization needs a positive fan-in, got {fan_in}.")
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=tuple(shape)), dtype=dtype)
