from typing import Optional

import pandas as pd


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


class ChannelRangeError(ShapeError):
    """Raised when a channel window does not fit inside the feature embedding."""


class BackwardError(RuntimeError):
    """Raised when a second backward pass is requested on one forward pass."""


class ConfigError(ValueError):
    """Raised for invalid run configurations. Carries the offending key."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class DivergenceError(RuntimeError):
    """Raised when the training loss stops being finite. Carries the partial history."""

    def __init__(self, message: str, history: Optional[pd.DataFrame] = None):
        super().__init__(message)
        self.history = history if history is not None else pd.DataFrame()
