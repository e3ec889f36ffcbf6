import json
import os
from pathlib import Path
from typing import Literal, Optional, Union

import tomli
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveInt,
    ValidationError,
    field_validator,
    model_validator,
)

from mixlink_toolbox import Arch, MixedLinkConfig, Position
from mixlink_toolbox.blocks.network_factory import NetworkFactory
from mixlink_toolbox.blocks.network_spec import (
    BlockSpec,
    ClassifierSpec,
    NetworkSpec,
    StemSpec,
    TransitionSpec,
    cifar_network_spec,
)
from mixlink_toolbox.dense_topology.verification import SUITES, UNROLLING_TOLERANCE
from mixlink_toolbox.errors import ConfigError
from mixlink_toolbox.training.config import DatasetConfig, TrainConfig
from mixlink_toolbox.utils import check_extension

DEFAULT_PRESET = "mixnet-100"


class NetworkSection(BaseModel):
    """
    Either a named preset or an explicit network.

    An explicit network gives its depth label L (three equal blocks, L = 6n + 4)
    or the layer count of every block. Without either, the default preset is used.
    """

    model_config = ConfigDict(extra="forbid")

    preset: Optional[str] = None
    depth: Optional[PositiveInt] = None
    blocks: Optional[list[PositiveInt]] = Field(default=None, min_length=1)
    k1: int = Field(default=12, ge=0)
    k2: int = Field(default=12, ge=0)
    position: Position = Position.UNFIXED
    multiplier: PositiveInt = 4
    compression: float = Field(default=0.5, gt=0.0, le=1.0)
    classes: Optional[PositiveInt] = None
    input_size: Optional[PositiveInt] = None
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_choice(self) -> "NetworkSection":
        given = [k for k in ("preset", "depth", "blocks") if getattr(self, k) is not None]
        if len(given) > 1:
            raise ValueError(f"Give only one of preset, depth and blocks, got {given}.")
        return self

    def preset_name(self) -> Optional[str]:
        """The named preset the section resolves to, None for an explicit network."""
        if self.depth is None and self.blocks is None:
            return self.preset or DEFAULT_PRESET
        return None

    def to_spec(self) -> NetworkSpec:
        """
        Raises
        ------
        ConfigError
            If the described network cannot be built.
        """
        try:
            if self.depth is not None:
                return cifar_network_spec(
                    self.depth,
                    self.k1,
                    self.k2,
                    position=self.position,
                    multiplier=self.multiplier,
                    compression=self.compression,
                    classes=self.classes or 10,
                    input_size=self.input_size or 32,
                    dropout=self.dropout,
                )
            if self.blocks is not None:
                spec = self._custom_spec()
            else:
                spec = NetworkFactory.create_network(
                    self.preset or DEFAULT_PRESET,
                    multiplier=self.multiplier,
                    compression=self.compression,
                    classes=self.classes,
                    position=self.position,
                    input_size=self.input_size,
                    dropout=self.dropout,
                )
            spec.stage_rows()
            return spec
        except (ValueError, KeyError) as e:
            raise ConfigError(f"Invalid network: {e}", key="network") from e

    def _custom_spec(self) -> NetworkSpec:
        config = MixedLinkConfig(k1=self.k1, k2=self.k2, position=self.position)
        return NetworkSpec(
            name="custom",
            family="custom",
            input_size=self.input_size or 32,
            stem=StemSpec(out_channels=config.stem_width()),
            blocks=[
                BlockSpec(layers=n, config=config, multiplier=self.multiplier)
                for n in self.blocks
            ],
            transitions=[
                TransitionSpec(compression=self.compression) for _ in self.blocks[1:]
            ],
            classifier=ClassifierSpec(classes=self.classes or 10),
            dropout=self.dropout,
        )


class VerifySection(BaseModel):
    """Topology suites; ``min_layers``..``max_layers`` is the unrolling depth range."""

    model_config = ConfigDict(extra="forbid")

    suites: Optional[list[str]] = None
    archs: Optional[list[Arch]] = None
    trials: Optional[PositiveInt] = None
    min_layers: PositiveInt = 2
    max_layers: PositiveInt = 8
    tolerance: float = Field(default=UNROLLING_TOLERANCE, gt=0.0)
    seed: int = 0
    inject_offset_bug: bool = False

    @model_validator(mode="after")
    def _check_ranges(self) -> "VerifySection":
        if self.min_layers > self.max_layers:
            raise ValueError(
                f"min_layers {self.min_layers} exceeds max_layers {self.max_layers}."
            )
        unknown = [s for s in self.suites or [] if s not in SUITES]
        if unknown:
            raise ValueError(f"Unknown suites {unknown}, choose from {SUITES}.")
        return self


class GradcheckSection(BaseModel):
    """Finite-difference checks; ``ops`` selects cases (all primitives and blocks by default)."""

    model_config = ConfigDict(extra="forbid")

    ops: Optional[list[str]] = None
    trials: PositiveInt = 1
    seed: int = 0
    dtype: Literal["64bit", "32bit"] = "64bit"
    max_coords: Optional[PositiveInt] = None


class TrainSection(TrainConfig):
    """
    The training recipe plus the toy network and dataset.

    - k1, k2, position, multiplier: link configuration of the toy network
    - ablate: train the cells of an ablation instead of one network
    - ablation_k: base link size of the ablation cells
    - plot: optional path of a PNG with the test accuracy curves
    - save_weights: optional .npz path of the final weights (single runs only)
    """

    dataset: DatasetConfig = DatasetConfig()
    k1: int = Field(default=4, ge=0)
    k2: int = Field(default=4, ge=0)
    position: Position = Position.UNFIXED
    multiplier: PositiveInt = 4
    ablate: Optional[Literal["position", "k2", "arch"]] = None
    ablation_k: PositiveInt = 4
    plot: Optional[str] = None
    save_weights: Optional[str] = None

    @field_validator("save_weights")
    @classmethod
    def _check_weights_path(cls, value: Optional[str]) -> Optional[str]:
        if value is not None:
            check_extension(value, ".npz")
        return value

    @model_validator(mode="after")
    def _check_single_run(self) -> "TrainSection":
        if self.save_weights and self.ablate:
            raise ValueError("save_weights applies to single runs, not to ablations.")
        return self

    def recipe(self) -> TrainConfig:
        return TrainConfig(**self.model_dump(include=set(TrainConfig.model_fields)))

    def link_config(self) -> MixedLinkConfig:
        return MixedLinkConfig(k1=self.k1, k2=self.k2, position=self.position)


class OutputSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    path: Optional[str] = None
    format: Literal["json", "csv", "table"] = "table"


class RunConfig(BaseModel):
    """Configuration of every command; each command reads its own section."""

    model_config = ConfigDict(extra="forbid")

    network: NetworkSection = NetworkSection()
    verify: VerifySection = VerifySection()
    gradcheck: GradcheckSection = GradcheckSection()
    train: TrainSection = TrainSection()
    output: OutputSection = OutputSection()


def _error_key(error: ValidationError) -> str:
    first = error.errors()[0]
    return ".".join(str(part) for part in first["loc"]) or "<root>"


def validate_section(model: type[BaseModel], values: dict, key: str) -> BaseModel:
    """Validate a mapping, converting validation errors into ConfigError naming the key."""
    try:
        return model.model_validate(values)
    except ValidationError as e:
        inner = _error_key(e)
        full = f"{key}.{inner}" if key else inner
        raise ConfigError(
            f"Invalid value for '{full}': {e.errors()[0]['msg']}", key=full
        ) from e


def load_config(config_file: Union[str, Path]) -> RunConfig:
    """
    Read a run configuration from a .json or .toml file.

    Raises
    ------
    FileNotFoundError
        If the file does not exist.
    ConfigError
        If the file cannot be parsed, has another extension, or holds an
        invalid or unknown key.
    """
    config_file = Path(config_file)
    if not config_file.exists():
        raise FileNotFoundError(f"Config file '{config_file}' not found.")
    _, extension = os.path.splitext(config_file)
    if extension == ".json":
        with open(config_file, "r") as f:
            try:
                values = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(
                    f"Could not parse '{config_file}' at line {e.lineno}, column {e.colno}: {e.msg}"
                ) from e
    elif extension == ".toml":
        with open(config_file, "rb") as f:
            try:
                values = tomli.load(f)
            except tomli.TOMLDecodeError as e:
                raise ConfigError(f"Could not parse '{config_file}': {e}") from e
    else:
        raise ConfigError(
            f"Config file '{config_file}' has an invalid extension. Only .json and .toml are supported."
        )
    if not isinstance(values, dict):
        raise ConfigError(f"Config file '{config_file}' must hold an object at the top level.")
    return validate_section(RunConfig, values, key="")
