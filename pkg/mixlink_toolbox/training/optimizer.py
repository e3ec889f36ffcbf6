import numpy as np

from mixlink_toolbox.errors import ShapeError
from mixlink_toolbox.tensor_core.params import ParamStore
from mixlink_toolbox.training.config import TrainConfig


def sgd_nesterov_step(
    params: ParamStore,
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 1e-4,
    nesterov: bool = True,
) -> ParamStore:
    """
    One SGD step with weight decay and (Nesterov) momentum, no dampening.

    For every parameter p with gradient grad and velocity v:

        g = grad + weight_decay * p
        v = momentum * v + g
        p = p - lr * (g + momentum * v)    # nesterov
        p = p - lr * v                     # classical momentum

    Raises
    ------
    ShapeError
        If a gradient does not match its parameter.
    """
    for name, tensor in params.items():
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if grad.shape != tensor.shape:
            raise ShapeError(
                f"Gradient of '{name}' has shape {grad.shape}, parameter has {tensor.shape}."
            )
        velocity = params.velocity_for(name)
        g = grad + weight_decay * tensor.data
        velocity[...] = momentum * velocity + g
        update = g + momentum * velocity if nesterov else velocity
        tensor.data = tensor.data - lr * update
    return params


def lr_schedule(epoch: int, total_epochs: int, config: TrainConfig) -> float:
    """
    Piecewise-constant learning rate.

    The rate is multiplied by ``config.factor`` once for every milestone m with
    epoch >= round(m * total_epochs).

    Raises
    ------
    ValueError
        If epoch is outside [0, total_epochs).
    """
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"Epoch {epoch} outside [0, {total_epochs}).")
    drops = sum(epoch >= round(m * total_epochs) for m in config.milestones)
    return config.lr * config.factor**drops
