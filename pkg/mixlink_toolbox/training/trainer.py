import logging

import numpy as np
import pandas as pd

from mixlink_toolbox.blocks.graph import LayerGraph
from mixlink_toolbox.errors import DivergenceError
from mixlink_toolbox.tensor_core import ops
from mixlink_toolbox.tensor_core.tensor import no_grad
from mixlink_toolbox.training.config import TrainConfig
from mixlink_toolbox.training.dataset import ToyDataset
from mixlink_toolbox.training.optimizer import lr_schedule, sgd_nesterov_step
from mixlink_toolbox.utils import make_rng

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "lr", "loss", "train_acc", "test_acc"]


def evaluate(
    graph: LayerGraph, images: np.ndarray, labels: np.ndarray, batch_size: int = 256
) -> tuple[float, float]:
    """
    Mean cross-entropy and accuracy in eval mode.

    The graph's previous mode is restored afterwards.
    """
    was_training = graph.training
    graph.eval()
    total_loss, correct = 0.0, 0
    try:
        with no_grad():
            for start in range(0, len(labels), batch_size):
                x = graph.as_input(images[start : start + batch_size])
                y = labels[start : start + batch_size]
                logits = graph(x)
                loss = ops.softmax_cross_entropy(logits, y)
                total_loss += loss.item() * len(y)
                predicted = np.argmax(logits.data.reshape(len(y), -1), axis=1)
                correct += int(np.sum(predicted == y))
    finally:
        if was_training:
            graph.train()
    return total_loss / len(labels), correct / len(labels)


def recalibrate_batch_norm(graph: LayerGraph, images: np.ndarray) -> None:
    """
    Set every BN running statistic to the full-batch statistic of ``images``.

    Runs one train-mode forward pass without gradients, with momentum 1 and
    dropout off.
    """
    ctx = graph.ctx
    saved = ctx.training, ctx.bn_momentum, ctx.dropout
    ctx.training, ctx.bn_momentum, ctx.dropout = True, 1.0, 0.0
    try:
        with no_grad():
            graph(graph.as_input(images))
    finally:
        ctx.training, ctx.bn_momentum, ctx.dropout = saved


def _history_frame(rows: list[dict]) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=HISTORY_COLUMNS)


def train_loop(
    graph: LayerGraph,
    data: ToyDataset,
    config: TrainConfig,
    logger: logging.Logger = logger,
) -> pd.DataFrame:
    """
    Train a built graph with SGD, Nesterov momentum and a step schedule.

    Every epoch shuffles the training split with a generator seeded from
    ``config.seed``, takes one optimizer step per mini-batch, optionally
    recalibrates BN statistics, then evaluates both splits in eval mode.

    Parameters
    ----------
    graph : LayerGraph
        The network; its parameters are updated in place.
    data : ToyDataset
        Training and test splits matching the graph's input shape and classes.
    config : TrainConfig
        The optimization recipe.

    Returns
    -------
    pd.DataFrame
        One row per epoch: epoch, lr, loss (eval-mode training loss),
        train_acc and test_acc.

    Raises
    ------
    DivergenceError
        If a loss becomes non-finite; the history up to the last finished epoch
        is attached.
    ValueError
        If the data does not match the graph.
    """
    expected = (graph.spec.stem.in_channels, graph.spec.input_size, graph.spec.input_size)
    if tuple(data.image_shape) != expected:
        raise ValueError(f"Images of shape {data.image_shape} do not fit a {expected} input.")
    if data.classes > graph.spec.classifier.classes:
        raise ValueError(
            f"{data.classes} classes do not fit a {graph.spec.classifier.classes}-way classifier."
        )

    images, labels = data.split("train")
    shuffle_rng = make_rng(config.seed)
    rows: list[dict] = []
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config.epochs, config)
        graph.train()
        order = shuffle_rng.permutation(len(labels))
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            graph.params.zero_grad()
            loss = ops.softmax_cross_entropy(graph(graph.as_input(images[batch])), labels[batch])
            if not np.isfinite(loss.item()):
                raise DivergenceError(
                    f"Non-finite batch loss at epoch {epoch}.", history=_history_frame(rows)
                )
            loss.backward()
            sgd_nesterov_step(
                graph.params,
                lr,
                momentum=config.momentum,
                weight_decay=config.weight_decay,
                nesterov=config.nesterov,
            )

        if config.recalibrate_bn:
            recalibrate_batch_norm(graph, images)
        train_loss, train_acc = evaluate(graph, images, labels)
        if not np.isfinite(train_loss):
            raise DivergenceError(
                f"Non-finite training loss at epoch {epoch}.", history=_history_frame(rows)
            )
        _, test_acc = evaluate(graph, *data.split("test"))
        rows.append(
            {"epoch": epoch, "lr": lr, "loss": train_loss, "train_acc": train_acc, "test_acc": test_acc}
        )
        logger.info(
            f"epoch {epoch}: lr {lr:.4g} loss {train_loss:.4f} "
            f"train {train_acc:.3f} test {test_acc:.3f}"
        )
    graph.train()
    return _history_frame(rows)
