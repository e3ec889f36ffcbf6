import contextlib
import threading
from typing import Iterator, Optional, Sequence

import numpy as np

from mixlink_toolbox.errors import BackwardError, ShapeError

DTYPES = {"64bit": np.float64, "32bit": np.float32}

_state = threading.local()


def is_grad_enabled() -> bool:
    """Whether newly created op results record their producing function."""
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread (evaluation, BN recalibration)."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """
    Dense array with reverse-mode gradient bookkeeping.

    Activations are 4-D (batch, channels, height, width); parameters may have any
    rank (e.g. a K x C linear weight or a per-channel BN scale). The shape of a
    tensor never changes after construction.

    Parameters
    ----------
    data : array-like
        The values. Copied into a contiguous array of ``dtype``.
    requires_grad : bool
        Whether backward passes should deliver a gradient to this tensor.
    dtype : np.dtype, optional
        Element type, float64 (verification mode) by default.
    """

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        dtype: Optional[np.dtype] = None,
    ):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) else np.float64
        if np.dtype(dtype) not in (np.dtype(np.float64), np.dtype(np.float32)):
            dtype = np.float64
        self._data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._ctx: Optional["Function"] = None
        self._backward_done = False

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    @property
    def data(self) -> np.ndarray:
        return self._data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=self._data.dtype)
        if value.shape != self._data.shape:
            raise ShapeError(
                f"Cannot change tensor shape from {self._data.shape} to {value.shape}."
            )
        self._data = np.ascontiguousarray(value)

    @property
    def shape(self) -> tuple:
        return self._data.shape

    @property
    def dtype(self) -> np.dtype:
        return self._data.dtype

    @property
    def size(self) -> int:
        return int(self._data.size)

    @property
    def channels(self) -> int:
        """Channel count of a (batch, channels, height, width) tensor."""
        self._require_4d()
        return self._data.shape[1]

    def _require_4d(self) -> None:
        if self._data.ndim != 4:
            raise ShapeError(
                f"Expected a 4-D (batch, channels, height, width) tensor, got shape {self.shape}."
            )

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self._data.copy(), requires_grad=False)

    def item(self) -> float:
        return float(self._data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self._data)

    def backward(self) -> None:
        backward(self)

    @classmethod
    def zeros(cls, shape: Sequence[int], dtype=np.float64, requires_grad=False):
        return cls(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @classmethod
    def full(cls, shape: Sequence[int], value: float, dtype=np.float64):
        return cls(np.full(shape, value, dtype=dtype))


class Function:
    """
    One differentiable primitive.

    Subclasses implement ``forward`` on raw arrays and ``backward`` returning one
    gradient (or None) per tensor argument, in argument order.
    """

    def __init__(self, *parents: Tensor):
        self.parents = parents
        self.saved: tuple = ()

    def save_for_backward(self, *arrays) -> None:
        self.saved = arrays

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_output: np.ndarray) -> tuple:
        raise NotImplementedError

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs) -> Tensor:
        ctx = cls(*tensors)
        out = ctx.forward(*[t.data for t in tensors], **kwargs)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        result = Tensor(out, requires_grad=requires_grad, dtype=out.dtype)
        if requires_grad:
            result._ctx = ctx
        return result


def _topological_order(root: Tensor) -> list[Tensor]:
    # Iterative DFS over parents in argument order; deterministic for a fixed graph.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for parent in reversed(node._ctx.parents):
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """
    Accumulate d(loss)/d(tensor) into ``grad`` of every tensor reachable from ``loss``.

    Leaf tensors (parameters, inputs) accumulate into their existing gradient
    slot; intermediate results receive their gradient fresh.

    Parameters
    ----------
    loss : Tensor
        A single-element tensor produced by a recorded forward pass.

    Raises
    ------
    BackwardError
        If backward was already run for this forward pass, or the loss does not
        depend on any tensor that requires a gradient.
    ShapeError
        If the loss is not a single element.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a single-element loss, got shape {loss.shape}.")
    if loss._backward_done:
        raise BackwardError("backward was already invoked on this forward pass.")
    if not loss.requires_grad:
        raise BackwardError("The loss does not depend on any tensor requiring grad.")
    loss._backward_done = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node._ctx is None:
            # Leaf
            if node.grad is None:
                node.grad = grad.copy()
            else:
                node.grad = node.grad + grad
            continue
        node.grad = grad
        parent_grads = node._ctx.backward(grad)
        for parent, parent_grad in zip(node._ctx.parents, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + parent_grad
            else:
                grads[id(parent)] = parent_grad
