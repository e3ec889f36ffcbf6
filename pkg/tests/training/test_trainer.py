from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from mixlink_toolbox import MixedLinkConfig
from mixlink_toolbox.blocks.graph import build_network
from mixlink_toolbox.errors import DivergenceError
from mixlink_toolbox.tensor_core import ops
from mixlink_toolbox.training.ablation import run_toy_training, toy_dataset, toy_network_spec
from mixlink_toolbox.training.config import DatasetConfig, TrainConfig
from mixlink_toolbox.training.trainer import (
    HISTORY_COLUMNS,
    evaluate,
    recalibrate_batch_norm,
    train_loop,
)

SMALL_DATA = DatasetConfig(per_class=12, size=8)
SMALL_LINK = MixedLinkConfig(k1=2, k2=2)


def _graph(dataset_config=SMALL_DATA, seed=0):
    spec = toy_network_spec(SMALL_LINK, dataset_config, multiplier=2)
    return build_network(spec, seed=seed)[1]


@pytest.fixture
def data():
    return toy_dataset(SMALL_DATA, seed=0)


def test_history_layout(data):
    history = train_loop(_graph(), data, TrainConfig(epochs=2, batch_size=16))
    assert list(history.columns) == HISTORY_COLUMNS
    assert history["epoch"].tolist() == [0, 1]
    assert history["train_acc"].between(0.0, 1.0).all()
    assert np.isfinite(history["loss"]).all()


def test_zero_learning_rate_gives_constant_history(data):
    history = train_loop(_graph(), data, TrainConfig(epochs=3, batch_size=16, lr=0.0))
    for column in ["loss", "train_acc", "test_acc"]:
        assert history[column].nunique() == 1, column
    assert (history["lr"] == 0.0).all()


def test_zero_learning_rate_keeps_parameters(data):
    graph = _graph()
    before = graph.params.snapshot()
    train_loop(graph, data, TrainConfig(epochs=1, batch_size=16, lr=0.0))
    for name, tensor in graph.params.items():
        np.testing.assert_array_equal(tensor.data, before[f"param/{name}"])


def test_same_seed_same_history(data):
    config = TrainConfig(epochs=2, batch_size=16, seed=4)
    first = train_loop(_graph(seed=4), data, config)
    second = train_loop(_graph(seed=4), data, config)
    pd.testing.assert_frame_equal(first, second)


def test_training_changes_parameters(data):
    graph = _graph()
    before = graph.params["classifier.linear.weight"].numpy()
    train_loop(graph, data, TrainConfig(epochs=1, batch_size=16))
    assert not np.array_equal(graph.params["classifier.linear.weight"].data, before)
    assert graph.training


def test_evaluate_restores_mode(data):
    graph = _graph()
    images, labels = data.split("test")
    loss, acc = evaluate(graph, images, labels, batch_size=5)
    assert graph.training
    assert loss > 0 and 0.0 <= acc <= 1.0
    graph.eval()
    assert evaluate(graph, images, labels) == pytest.approx((loss, acc))
    assert not graph.training


def test_recalibration_uses_full_batch_statistics(data):
    graph = _graph()
    images, _ = data.split("train")
    graph.eval()
    recalibrate_batch_norm(graph, images)
    stem = ops.conv2d(graph.as_input(images), graph.params["stem.conv.weight"], stride=1, pad=1)
    np.testing.assert_allclose(
        graph.params.buffer("block1.layer1.inner.bn1.running_mean"),
        stem.data.mean(axis=(0, 2, 3)),
        atol=1e-12,
    )
    assert not graph.training
    assert graph.ctx.bn_momentum == ops.BN_MOMENTUM


def test_mismatched_image_size(data):
    graph = _graph(DatasetConfig(per_class=12, size=16))
    with pytest.raises(ValueError):
        train_loop(graph, data, TrainConfig(epochs=1))


def test_too_many_classes():
    many = DatasetConfig(per_class=6, size=8, classes=5)
    graph = _graph()
    with pytest.raises(ValueError):
        train_loop(graph, toy_dataset(many, seed=0), TrainConfig(epochs=1))


def test_divergence_keeps_partial_history(data):
    finite = (1.0, 0.5)
    with patch(
        "mixlink_toolbox.training.trainer.evaluate",
        side_effect=[finite, finite, (float("nan"), 0.0)],
    ):
        with pytest.raises(DivergenceError) as excinfo:
            train_loop(_graph(), data, TrainConfig(epochs=3, batch_size=16))
    history = excinfo.value.history
    assert history["epoch"].tolist() == [0]
    assert "epoch 1" in str(excinfo.value)


def test_non_finite_batch_loss_diverges(data):
    def nan_loss(logits, labels):
        return ops.scale(ops.sum_all(logits), float("nan"))

    with patch.object(ops, "softmax_cross_entropy", side_effect=nan_loss):
        with pytest.raises(DivergenceError) as excinfo:
            train_loop(_graph(), data, TrainConfig(epochs=1, batch_size=16))
    assert excinfo.value.history.empty


def test_toy_run_summary():
    history, run = run_toy_training(
        TrainConfig(epochs=1, batch_size=16), SMALL_DATA, config=SMALL_LINK, multiplier=2
    )
    assert run.final_test_acc == history["test_acc"].iloc[-1]
    assert run.k1 == 2 and run.position == "unfixed"
    assert run.params == _graph().params.num_elements()
    assert run.beats_oracle == (run.final_test_acc > run.oracle_test_acc)


@pytest.mark.slow
def test_toy_network_learns_and_beats_template_matching():
    history, run = run_toy_training(TrainConfig(epochs=200), DatasetConfig())
    assert run.final_train_acc >= 0.95
    assert run.beats_oracle, run
