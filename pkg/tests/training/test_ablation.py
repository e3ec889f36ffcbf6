import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd
import pytest

from mixlink_toolbox import Position
from mixlink_toolbox.training.ablation import (
    ablation_settings,
    plot_history,
    run_ablation,
)
from mixlink_toolbox.training.config import DatasetConfig, TrainConfig


def test_position_settings():
    settings = ablation_settings("position", k=4)
    assert len(settings) == 7
    assert settings[0].label == "k1=0"
    assert settings[0].config.k1 == 0
    assert [s.config.k1 for s in settings[1:4]] == [2, 4, 8]
    assert [s.config.k1 for s in settings[4:]] == [2, 4, 8]
    assert {s.config.position for s in settings[1:]} == set(Position)
    assert all(s.config.k2 == 4 for s in settings)
    assert settings[1].label == "fixed-k1=2"


def test_position_settings_have_no_duplicate_networks():
    settings = ablation_settings("position", k=4)
    configs = [(s.config.k1, s.config.k2, s.config.position) for s in settings]
    assert len(set(configs)) == len(configs)
    assert sum(s.config.k1 == 0 for s in settings) == 1


def test_k2_settings():
    settings = ablation_settings("k2", k=4)
    assert [s.config.k2 for s in settings] == [2, 4, 8]
    assert all(s.config.k1 == 4 for s in settings)
    assert [s.label for s in settings] == ["k2=2", "k2=4", "k2=8"]


def test_arch_settings():
    settings = {s.label: s.config for s in ablation_settings("arch", k=4)}
    assert list(settings) == ["arch1", "arch2", "arch3", "arch4"]
    assert (settings["arch1"].k1, settings["arch1"].k2) == (8, 0)
    assert (settings["arch2"].k1, settings["arch2"].k2) == (0, 4)
    assert settings["arch3"].position == Position.FIXED
    assert settings["arch4"].position == Position.UNFIXED


def test_unknown_ablation():
    with pytest.raises(ValueError):
        ablation_settings("depth")


@pytest.fixture(scope="module")
def k2_ablation():
    return run_ablation(
        "k2",
        TrainConfig(epochs=2, batch_size=16),
        DatasetConfig(per_class=6, size=8),
        k=2,
        multiplier=2,
    )


def test_ablation_history(k2_ablation):
    history, _ = k2_ablation
    assert history.columns[0] == "setting"
    assert history["setting"].unique().tolist() == ["k2=1", "k2=2", "k2=4"]
    assert len(history) == 6


def test_ablation_summary(k2_ablation):
    _, summary = k2_ablation
    assert summary["label"].tolist() == ["k2=1", "k2=2", "k2=4"]
    assert summary["oracle_test_acc"].nunique() == 1
    assert summary["params"].is_monotonic_increasing


def test_plot_history_creates_figure(k2_ablation):
    history, _ = k2_ablation
    fig = plot_history(history, metric="train_acc")
    ax = fig.axes[0]
    assert ax.get_xlabel() == "Epoch"
    assert ax.get_ylabel() == "train_acc"
    assert ax.get_legend().get_title().get_text() == "setting"
    plt.close(fig)


def test_plot_history_on_given_axes():
    history = pd.DataFrame(
        {"epoch": [0, 1], "lr": [0.1, 0.1], "loss": [1.0, 0.5], "train_acc": [0.4, 0.8], "test_acc": [0.3, 0.6]}
    )
    fig, ax = plt.subplots()
    assert plot_history(history, ax=ax) is None
    assert ax.get_legend() is None
    plt.close(fig)


@pytest.mark.parametrize("metric", ["epoch", "setting", "accuracy"])
def test_plot_history_rejects_metric(k2_ablation, metric):
    with pytest.raises(ValueError):
        plot_history(k2_ablation[0], metric=metric)
