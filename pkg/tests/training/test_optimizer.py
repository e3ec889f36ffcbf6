import numpy as np
import pytest
from pydantic import ValidationError

from mixlink_toolbox.errors import ShapeError
from mixlink_toolbox.tensor_core.params import ParamStore
from mixlink_toolbox.tensor_core.tensor import Tensor
from mixlink_toolbox.training.config import DatasetConfig, TrainConfig
from mixlink_toolbox.training.optimizer import lr_schedule, sgd_nesterov_step


def _store(value, grad=None):
    params = ParamStore()
    tensor = params.add("w", Tensor(np.array([value])))
    if grad is not None:
        tensor.grad = np.array([grad])
    return params


def test_nesterov_two_steps():
    params = _store(1.0, 0.5)
    sgd_nesterov_step(params, lr=0.1, momentum=0.9, weight_decay=0.0)
    assert params["w"].data[0] == pytest.approx(0.905)
    params["w"].grad = np.array([0.5])
    sgd_nesterov_step(params, lr=0.1, momentum=0.9, weight_decay=0.0)
    assert params["w"].data[0] == pytest.approx(0.7695)
    assert params.velocity["w"][0] == pytest.approx(0.95)


def test_classical_momentum_two_steps():
    params = _store(1.0, 0.5)
    sgd_nesterov_step(params, lr=0.1, momentum=0.9, weight_decay=0.0, nesterov=False)
    assert params["w"].data[0] == pytest.approx(0.95)
    sgd_nesterov_step(params, lr=0.1, momentum=0.9, weight_decay=0.0, nesterov=False)
    assert params["w"].data[0] == pytest.approx(0.855)


def test_weight_decay_shrinks_without_gradient():
    params = _store(2.0, 0.0)
    sgd_nesterov_step(params, lr=0.1, momentum=0.9, weight_decay=1e-4)
    assert params["w"].data[0] == pytest.approx(2.0 - 0.1 * 1.9 * 2e-4)


def test_missing_gradient_counts_as_zero():
    params = _store(3.0)
    params["w"].grad = None
    sgd_nesterov_step(params, lr=0.5, momentum=0.9, weight_decay=0.0)
    assert params["w"].data[0] == 3.0


def test_zero_learning_rate_keeps_parameters():
    params = _store(1.5, 10.0)
    sgd_nesterov_step(params, lr=0.0)
    assert params["w"].data[0] == 1.5


def test_gradient_shape_mismatch():
    params = _store(1.0)
    params["w"].grad = np.zeros(3)
    with pytest.raises(ShapeError):
        sgd_nesterov_step(params, lr=0.1)


@pytest.mark.parametrize(
    "epoch, expected", [(0, 0.1), (149, 0.1), (150, 0.01), (224, 0.01), (225, 0.001), (299, 0.001)]
)
def test_step_schedule(epoch, expected):
    assert lr_schedule(epoch, 300, TrainConfig(lr=0.1)) == pytest.approx(expected)


@pytest.mark.parametrize(
    "epoch, expected", [(29, 0.1), (30, 0.01), (60, 0.001), (90, 0.0001), (99, 0.0001)]
)
def test_three_milestone_schedule(epoch, expected):
    config = TrainConfig(lr=0.1, milestones=(0.3, 0.6, 0.9))
    assert lr_schedule(epoch, 100, config) == pytest.approx(expected)


@pytest.mark.parametrize("epoch", [-1, 300])
def test_schedule_rejects_epoch(epoch):
    with pytest.raises(ValueError):
        lr_schedule(epoch, 300, TrainConfig())


@pytest.mark.parametrize(
    "values",
    [
        {"milestones": (0.75, 0.5)},
        {"milestones": (0.0, 0.5)},
        {"milestones": (0.5, 1.0)},
        {"momentum": 1.0},
        {"factor": 0.0},
        {"lr": -0.1},
        {"batch_size": 0},
        {"learning_rate": 0.1},
    ],
)
def test_train_config_rejects(values):
    with pytest.raises(ValidationError):
        TrainConfig(**values)


def test_train_config_defaults():
    config = TrainConfig()
    assert config.nesterov and config.recalibrate_bn
    assert config.milestones == (0.5, 0.75)
    assert TrainConfig(lr=0.0).lr == 0.0


@pytest.mark.parametrize(
    "values", [{"classes": 1}, {"noise": -1.0}, {"max_shift": -1}, {"test_fraction": 1.0}]
)
def test_dataset_config_rejects(values):
    with pytest.raises(ValidationError):
        DatasetConfig(**values)


@pytest.mark.parametrize("seed", range(50))
def test_small_step_decreases_loss(seed):
    from mixlink_toolbox.blocks.graph import build_cifar_network
    from mixlink_toolbox.tensor_core import ops

    _, graph = build_cifar_network(10, 2, 2, multiplier=2, classes=3, input_size=8, seed=seed)
    graph.eval()
    rng = np.random.default_rng(seed)
    images = graph.as_input(rng.standard_normal((6, 3, 8, 8)))
    labels = rng.integers(0, 3, size=6).tolist()

    graph.params.zero_grad()
    before = ops.softmax_cross_entropy(graph(images), labels)
    before.backward()
    sgd_nesterov_step(graph.params, lr=1e-4, momentum=0.9, weight_decay=0.0)

    after = ops.softmax_cross_entropy(graph(images), labels)
    assert after.item() < before.item()
