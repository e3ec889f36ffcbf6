import itertools
import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from mixlink_toolbox.utils import make_rng

logger = logging.getLogger(__name__)


@dataclass
class ToyDataset:
    """
    Seeded synthetic image classification data.

    Images are (N, C, H, W) float64 arrays and labels are int64 class indices.
    ``patterns`` holds the noiseless, unshifted (C, H, W) template of every class.
    """

    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray
    patterns: np.ndarray

    @property
    def classes(self) -> int:
        return self.patterns.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.patterns.shape[1:]

    def split(self, name: Literal["train", "test"]) -> tuple[np.ndarray, np.ndarray]:
        if name == "train":
            return self.train_images, self.train_labels
        if name == "test":
            return self.test_images, self.test_labels
        raise KeyError(f"Unknown split '{name}', expected 'train' or 'test'.")

    def summary(self) -> dict:
        return {
            "classes": self.classes,
            "image_shape": list(self.image_shape),
            "train": int(self.train_labels.size),
            "test": int(self.test_labels.size),
        }


def _frequencies(classes: int, size: int) -> list[tuple[int, int]]:
    """
    Distinct spatial frequencies (fy, fx) whose cosines are mutually orthogonal
    on a size x size grid: no pair is equal or opposite and none aliases.
    """
    limit = size // 2
    radii = sorted(range(1, limit), key=lambda r: (abs(r - size // 4), r))
    chosen = []
    for r in radii:
        for f in [(r, 0), (0, r), (r, r), (r, -r)]:
            if all(abs(c) < limit for c in f):
                chosen.append(f)
    for fy, fx in itertools.product(range(limit), range(-limit + 1, limit)):
        if (fy, fx) == (0, 0) or (fy == 0 and fx < 0):
            continue
        if (fy, fx) not in chosen:
            chosen.append((fy, fx))
    if len(chosen) < classes:
        raise ValueError(f"A {size}x{size} grid supports at most {len(chosen)} classes.")
    return chosen[:classes]


def grating_patterns(classes: int, size: int, channels: int = 3) -> np.ndarray:
    """
    One cosine grating per class with amplitude sqrt(2), i.e. unit mean square.

    Returns
    -------
    np.ndarray
        (classes, channels, size, size); every channel of a class holds the same grating.
    """
    grid = np.arange(size)
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    patterns = np.stack(
        [
            np.sqrt(2.0) * np.cos(2.0 * np.pi * (fy * yy + fx * xx) / size)
            for fy, fx in _frequencies(classes, size)
        ]
    )
    return np.repeat(patterns[:, None], channels, axis=1)


def make_toy_dataset(
    classes: int = 4,
    per_class: int = 96,
    size: int = 16,
    noise: float = 0.5,
    seed: int = 0,
    channels: int = 3,
    test_fraction: float = 1 / 3,
    max_shift: int = 0,
) -> ToyDataset:
    """
    Noisy oriented gratings, one orientation/frequency per class.

    Each sample is its class grating, circularly shifted by a random offset in
    [0, max_shift] along both spatial axes, plus Gaussian noise of standard
    deviation ``noise``. Every class is split into the same number of train and
    test samples; both splits are shuffled.

    Parameters
    ----------
    classes : int
        Number of classes (>= 2).
    per_class : int
        Samples per class before splitting.
    size : int
        Height and width of the images.
    noise : float
        Standard deviation of the additive noise (>= 0).
    seed : int
        Seed of every random draw.
    channels : int
        Image channels.
    test_fraction : float
        Share of each class held out for testing, in (0, 1).
    max_shift : int
        Largest circular shift in pixels.

    Returns
    -------
    ToyDataset
        The two splits and the class templates.

    Raises
    ------
    ValueError
        If an argument is out of range or a split would be empty.
    """
    if classes < 2:
        raise ValueError(f"At least two classes are required, got {classes}.")
    if noise < 0:
        raise ValueError(f"Noise must be non-negative, got {noise}.")
    if max_shift < 0:
        raise ValueError(f"Shift must be non-negative, got {max_shift}.")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"Test fraction must lie in (0, 1), got {test_fraction}.")
    n_test = int(round(per_class * test_fraction))
    n_train = per_class - n_test
    if n_test < 1 or n_train < 1:
        raise ValueError(
            f"{per_class} samples per class leave an empty split at test fraction {test_fraction}."
        )

    rng = make_rng(seed)
    patterns = grating_patterns(classes, size, channels)
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    shifts = rng.integers(0, max_shift + 1, size=(labels.size, 2))
    images = np.stack(
        [np.roll(patterns[c], tuple(s), axis=(1, 2)) for c, s in zip(labels, shifts)]
    )
    images = images + noise * rng.standard_normal(images.shape)

    order = np.concatenate([rng.permutation(per_class) + c * per_class for c in range(classes)])
    per_class_order = order.reshape(classes, per_class)
    train_idx = rng.permutation(per_class_order[:, :n_train].ravel())
    test_idx = rng.permutation(per_class_order[:, n_train:].ravel())

    data = ToyDataset(
        train_images=images[train_idx],
        train_labels=labels[train_idx],
        test_images=images[test_idx],
        test_labels=labels[test_idx],
        patterns=patterns,
    )
    logger.debug(f"Toy dataset {data.summary()} (noise {noise}, max shift {max_shift})")
    return data


def nearest_pattern_accuracy(data: ToyDataset, split: Literal["train", "test"] = "test") -> float:
    """Accuracy of assigning every image to the template with the largest inner product."""
    images, labels = data.split(split)
    scores = images.reshape(len(images), -1) @ data.patterns.reshape(data.classes, -1).T
    return float(np.mean(np.argmax(scores, axis=1) == labels))
