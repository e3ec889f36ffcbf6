import logging
from pathlib import Path
from typing import Literal, Optional, Union

import matplotlib.pyplot as plt
import pandas as pd
import seaborn as sns
from pydantic import BaseModel

from mixlink_toolbox import Arch, MixedLinkConfig, Position, arch_preset
from mixlink_toolbox.blocks.graph import build_network
from mixlink_toolbox.blocks.network_spec import NetworkSpec, cifar_network_spec
from mixlink_toolbox.training.config import DatasetConfig, TrainConfig
from mixlink_toolbox.training.dataset import (
    ToyDataset,
    make_toy_dataset,
    nearest_pattern_accuracy,
)
from mixlink_toolbox.training.trainer import train_loop

logger = logging.getLogger(__name__)

# Two layers per block
TOY_DEPTH = 16

AblationKind = Literal["position", "k2", "arch"]
ABLATIONS = ["position", "k2", "arch"]


class AblationSetting(BaseModel):
    """One cell of an ablation: a label and the link configuration it trains."""

    label: str
    config: MixedLinkConfig


class ToyRun(BaseModel):
    """Final metrics of one toy training run."""

    label: str
    k1: int
    k2: int
    position: str
    params: int
    final_loss: float
    final_train_acc: float
    final_test_acc: float
    oracle_test_acc: float
    seed: int

    @property
    def beats_oracle(self) -> bool:
        return self.final_test_acc > self.oracle_test_acc


def toy_dataset(dataset_config: DatasetConfig, seed: int) -> ToyDataset:
    """The grating dataset of a config; the training seed is used unless one is set."""
    return make_toy_dataset(
        classes=dataset_config.classes,
        per_class=dataset_config.per_class,
        size=dataset_config.size,
        noise=dataset_config.noise,
        seed=dataset_config.seed if dataset_config.seed is not None else seed,
        channels=dataset_config.channels,
        test_fraction=dataset_config.test_fraction,
        max_shift=dataset_config.max_shift,
    )


def toy_network_spec(
    config: MixedLinkConfig,
    dataset_config: DatasetConfig,
    dropout: float = 0.0,
    multiplier: int = 4,
    name: Optional[str] = None,
) -> NetworkSpec:
    return cifar_network_spec(
        TOY_DEPTH,
        config.k1,
        config.k2,
        position=config.position,
        multiplier=multiplier,
        compression=1.0,
        classes=dataset_config.classes,
        input_size=dataset_config.size,
        dropout=dropout,
        name=name,
    )


def run_toy_training(
    train_config: TrainConfig,
    dataset_config: DatasetConfig,
    config: Optional[MixedLinkConfig] = None,
    multiplier: int = 4,
    label: str = "toy",
    data: Optional[ToyDataset] = None,
    dtype: str = "64bit",
    weights_path: Optional[Union[str, Path]] = None,
) -> tuple[pd.DataFrame, ToyRun]:
    """
    Build a toy network, train it and compare it with the nearest-pattern oracle.

    Parameters
    ----------
    train_config : TrainConfig
        The optimization recipe; its seed also seeds the weights.
    dataset_config : DatasetConfig
        The grating dataset.
    config : MixedLinkConfig, optional
        Link sizes, k1 = k2 = 4 unfixed by default.
    data : ToyDataset, optional
        A dataset to reuse instead of generating one.
    weights_path : str or Path, optional
        Save the final weights to this .npz file.

    Returns
    -------
    tuple[pd.DataFrame, ToyRun]
        The per-epoch history and the final metrics.
    """
    config = config or MixedLinkConfig(k1=4, k2=4, position=Position.UNFIXED)
    data = data if data is not None else toy_dataset(dataset_config, train_config.seed)
    spec = toy_network_spec(config, dataset_config, train_config.dropout, multiplier, name=label)
    _, graph = build_network(spec, seed=train_config.seed, dtype=dtype)
    history = train_loop(graph, data, train_config)
    if weights_path is not None:
        graph.params.save(weights_path)
    last = history.iloc[-1]
    run = ToyRun(
        label=label,
        k1=config.k1,
        k2=config.k2,
        position=str(config.position),
        params=graph.params.num_elements(),
        final_loss=float(last["loss"]),
        final_train_acc=float(last["train_acc"]),
        final_test_acc=float(last["test_acc"]),
        oracle_test_acc=nearest_pattern_accuracy(data, "test"),
        seed=train_config.seed,
    )
    logger.info(
        f"{label}: train {run.final_train_acc:.3f} test {run.final_test_acc:.3f} "
        f"(nearest pattern {run.oracle_test_acc:.3f})"
    )
    return history, run


def ablation_settings(kind: AblationKind, k: int = 4) -> list[AblationSetting]:
    """
    The cells of an ablation at base link size k.

    - position: a k1 = 0 control cell, then k1 in {k/2, k, 2k} at k2 = k, each
      fixed and unfixed (without an inner link the position has no effect)
    - k2: k2 in {k/2, k, 2k} at k1 = k, unfixed
    - arch: the four representative architectures (arch1 with trunk width 2k)
    """
    if kind == "position":
        sizes = sorted({k // 2, k, 2 * k} - {0})
        control = AblationSetting(label="k1=0", config=MixedLinkConfig(k1=0, k2=k))
        return [control] + [
            AblationSetting(
                label=f"{position}-k1={k1}",
                config=MixedLinkConfig(k1=k1, k2=k, position=position),
            )
            for position in Position
            for k1 in sizes
        ]
    if kind == "k2":
        return [
            AblationSetting(label=f"k2={k2}", config=MixedLinkConfig(k1=k, k2=k2))
            for k2 in sorted({max(k // 2, 1), k, 2 * k})
        ]
    if kind == "arch":
        return [
            AblationSetting(
                label=str(arch),
                config=arch_preset(arch, width=2 * k)
                if arch == Arch.RESNET
                else arch_preset(arch, k1=k, k2=k),
            )
            for arch in Arch
        ]
    raise ValueError(f"Unknown ablation '{kind}', expected one of {ABLATIONS}.")


def run_ablation(
    kind: AblationKind,
    train_config: TrainConfig,
    dataset_config: DatasetConfig,
    k: int = 4,
    multiplier: int = 4,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """
    Train every cell of an ablation on one shared dataset.

    Returns
    -------
    tuple[pd.DataFrame, pd.DataFrame]
        The stacked histories with a leading 'setting' column (cell order
        preserved), and one summary row per cell.
    """
    data = toy_dataset(dataset_config, train_config.seed)
    histories, runs = [], []
    for setting in ablation_settings(kind, k):
        history, run = run_toy_training(
            train_config,
            dataset_config,
            config=setting.config,
            multiplier=multiplier,
            label=setting.label,
            data=data,
        )
        histories.append(history.assign(setting=setting.label))
        runs.append(run.model_dump())
    stacked = pd.concat(histories, ignore_index=True)
    stacked = stacked[["setting", *[c for c in stacked.columns if c != "setting"]]]
    return stacked, pd.DataFrame(runs)


def plot_history(
    history: pd.DataFrame, metric: str = "test_acc", ax: Optional[plt.Axes] = None
) -> Optional[plt.Figure]:
    """
    Plot one history metric against the epoch, one curve per ablation setting.

    Parameters
    ----------
    history : pd.DataFrame
        A training history, optionally with a 'setting' column.
    metric : str
        The column to plot.
    ax : matplotlib.axes.Axes, optional
        The axes on which to plot. If None, a new figure and axes are created.

    Returns
    -------
    Optional[plt.Figure]
        The figure if ax is None, otherwise None.

    Raises
    ------
    ValueError
        If the metric is not a history column.
    """
    if metric not in history.columns or metric in ("epoch", "setting"):
        raise ValueError(f"'{metric}' is not a history metric.")
    if ax is None:
        ax_given = False
        fig, ax = plt.subplots(figsize=(8, 6))
    else:
        ax_given = True
    hue = "setting" if "setting" in history.columns else None
    sns.lineplot(x="epoch", y=metric, hue=hue, data=history, ax=ax)
    ax.set_xlabel("Epoch")
    ax.set_ylabel(metric)
    if hue is not None:
        ax.legend(title="setting")

    if not ax_given:
        return fig
