from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator

# Dropout rate used when dropout is switched on without an explicit rate
DEFAULT_DROPOUT = 0.2


class TrainConfig(BaseModel):
    """
    Model defining the optimization recipe.

    - lr: initial learning rate, multiplied by ``factor`` at each milestone
    - milestones: fractions of the total epochs at which the rate drops
    - momentum / nesterov: Nesterov momentum without dampening
    - weight_decay: L2 coefficient added to every gradient
    - dropout: rate after every non-stem convolution (0 disables)
    - recalibrate_bn: recompute BN running statistics on the full training
      split after each epoch, before evaluation
    """

    model_config = ConfigDict(extra="forbid")

    batch_size: PositiveInt = 64
    epochs: PositiveInt = 60
    lr: float = Field(default=0.1, ge=0.0)
    milestones: tuple[float, ...] = (0.5, 0.75)
    factor: float = Field(default=0.1, gt=0.0, lt=1.0)
    weight_decay: float = Field(default=1e-4, ge=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    nesterov: bool = True
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)
    seed: int = 0
    recalibrate_bn: bool = True

    @field_validator("milestones")
    @classmethod
    def _check_milestones(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if any(not 0.0 < m < 1.0 for m in value):
            raise ValueError(f"Milestones must lie in (0, 1), got {value}.")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError(f"Milestones must be strictly increasing, got {value}.")
        return value


class DatasetConfig(BaseModel):
    """
    Model defining the synthetic grating dataset.

    - per_class: images per class before the train/test split
    - noise: standard deviation of the additive Gaussian noise
    - max_shift: largest random circular shift (pixels, per axis)
    - seed: defaults to the training seed
    """

    model_config = ConfigDict(extra="forbid")

    classes: int = Field(default=4, ge=2)
    per_class: PositiveInt = 96
    size: PositiveInt = 16
    channels: PositiveInt = 3
    noise: float = Field(default=0.5, ge=0.0)
    max_shift: int = Field(default=3, ge=0)
    test_fraction: float = Field(default=1 / 3, gt=0.0, lt=1.0)
    seed: Optional[int] = None
