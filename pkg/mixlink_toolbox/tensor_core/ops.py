"""
Differentiable primitives on (batch, channels, height, width) tensors.

Every public function validates its arguments, then dispatches to a
``Function`` subclass holding the forward and backward rules.
"""

from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from mixlink_toolbox.errors import ChannelRangeError, ShapeError
from mixlink_toolbox.tensor_core.tensor import Function, Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


# im2col / col2im


def im2col(
    x: np.ndarray, kh: int, kw: int, stride: int = 1, pad: int = 0
) -> np.ndarray:
    """
    Expand (N, C, H, W) input into a patch matrix of shape (N*OH*OW, C*kh*kw).

    Rows are ordered batch-major then row-major over output positions; columns
    follow the (C, kh, kw) layout of a convolution kernel.
    """
    n, c, h, w = x.shape
    oh = _output_size(h, kh, stride, pad)
    ow = _output_size(w, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="constant")
    cols = np.zeros((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        i_max = i + stride * oh
        for j in range(kw):
            j_max = j + stride * ow
            cols[:, :, i, j, :, :] = xp[:, :, i:i_max:stride, j:j_max:stride]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, -1)


def col2im(
    cols: np.ndarray,
    x_shape: Sequence[int],
    kh: int,
    kw: int,
    stride: int = 1,
    pad: int = 0,
) -> np.ndarray:
    """Adjoint of ``im2col``: scatter-add patch rows back onto the (N, C, H, W) grid."""
    n, c, h, w = x_shape
    oh = _output_size(h, kh, stride, pad)
    ow = _output_size(w, kw, stride, pad)
    cols = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        i_max = i + stride * oh
        for j in range(kw):
            j_max = j + stride * ow
            img[:, :, i:i_max:stride, j:j_max:stride] += cols[:, :, i, j, :, :]
    return img[:, :, pad : pad + h, pad : pad + w]


# Elementwise and bookkeeping


class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, grad_output):
        return grad_output, grad_output


class Mul(Function):
    def forward(self, a, b):
        self.save_for_backward(a, b)
        return a * b

    def backward(self, grad_output):
        a, b = self.saved
        return grad_output * b, grad_output * a


class Scale(Function):
    def forward(self, x, factor: float = 1.0):
        self.factor = factor
        return x * x.dtype.type(factor)

    def backward(self, grad_output):
        return (grad_output * grad_output.dtype.type(self.factor),)


class SumAll(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.sum(), dtype=x.dtype).reshape(1)

    def backward(self, grad_output):
        return (np.full(self.shape, grad_output.reshape(-1)[0], dtype=grad_output.dtype),)


class ChannelSlice(Function):
    def forward(self, x, start: int = 0, stop: int = 0):
        self.shape, self.start, self.stop = x.shape, start, stop
        return x[:, start:stop].copy()

    def backward(self, grad_output):
        grad = np.zeros(self.shape, dtype=grad_output.dtype)
        grad[:, self.start : self.stop] = grad_output
        return (grad,)


class ChannelConcat(Function):
    def forward(self, a, b):
        self.split = a.shape[1]
        return np.concatenate([a, b], axis=1)

    def backward(self, grad_output):
        return (
            grad_output[:, : self.split].copy(),
            grad_output[:, self.split :].copy(),
        )


class ChannelAddAt(Function):
    def forward(self, base, delta, offset: int = 0):
        self.offset, self.width = offset, delta.shape[1]
        out = base.copy()
        window = out[:, offset : offset + self.width]
        # Zero deltas leave the stored bits alone, so -0.0 survives
        np.add(window, delta, out=window, where=delta != 0)
        return out

    def backward(self, grad_output):
        grad_delta = grad_output[:, self.offset : self.offset + self.width].copy()
        return grad_output, grad_delta


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, x.dtype.type(0))

    def backward(self, grad_output):
        return (np.where(self.mask, grad_output, grad_output.dtype.type(0)),)


class Dropout(Function):
    def forward(self, x, mask: Optional[np.ndarray] = None):
        self.mask = mask.astype(x.dtype)
        return x * self.mask

    def backward(self, grad_output):
        return (grad_output * self.mask,)


# Convolution and normalization


class Conv2d(Function):
    def forward(self, x, kernel, stride: int = 1, pad: int = 0):
        n = x.shape[0]
        f, _, kh, kw = kernel.shape
        oh = _output_size(x.shape[2], kh, stride, pad)
        ow = _output_size(x.shape[3], kw, stride, pad)
        cols = im2col(x, kh, kw, stride, pad)
        self.save_for_backward(cols, kernel)
        self.x_shape, self.stride, self.pad = x.shape, stride, pad
        out = cols @ kernel.reshape(f, -1).T
        return out.reshape(n, oh, ow, f).transpose(0, 3, 1, 2).copy()

    def backward(self, grad_output):
        cols, kernel = self.saved
        f, _, kh, kw = kernel.shape
        grad = grad_output.transpose(0, 2, 3, 1).reshape(-1, f)
        grad_kernel = (grad.T @ cols).reshape(kernel.shape)
        grad_cols = grad @ kernel.reshape(f, -1)
        grad_x = col2im(grad_cols, self.x_shape, kh, kw, self.stride, self.pad)
        return grad_x, grad_kernel


class BatchNorm(Function):
    def forward(
        self,
        x,
        scale,
        shift,
        running_mean: Optional[np.ndarray] = None,
        running_var: Optional[np.ndarray] = None,
        training: bool = True,
        eps: float = BN_EPS,
        momentum: float = BN_MOMENTUM,
    ):
        axes = (0, 2, 3)
        self.training = training
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            if running_mean is not None and running_var is not None:
                count = x.shape[0] * x.shape[2] * x.shape[3]
                unbiased = var * count / (count - 1) if count > 1 else var
                running_mean[...] = (1 - momentum) * running_mean + momentum * mean
                running_var[...] = (1 - momentum) * running_var + momentum * unbiased
        else:
            mean, var = running_mean, running_var
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self.save_for_backward(x_hat, inv_std, scale)
        return (
            x_hat * scale[None, :, None, None] + shift[None, :, None, None]
        ).astype(x.dtype)

    def backward(self, grad_output):
        x_hat, inv_std, scale = self.saved
        axes = (0, 2, 3)
        grad_scale = (grad_output * x_hat).sum(axis=axes)
        grad_shift = grad_output.sum(axis=axes)
        grad_x_hat = grad_output * scale[None, :, None, None]
        if self.training:
            count = grad_output.shape[0] * grad_output.shape[2] * grad_output.shape[3]
            grad_x = (
                inv_std[None, :, None, None]
                / count
                * (
                    count * grad_x_hat
                    - grad_x_hat.sum(axis=axes)[None, :, None, None]
                    - x_hat * (grad_x_hat * x_hat).sum(axis=axes)[None, :, None, None]
                )
            )
        else:
            grad_x = grad_x_hat * inv_std[None, :, None, None]
        return grad_x, grad_scale, grad_shift


# Pooling and head


class AvgPool(Function):
    def forward(self, x, window: int = 2, stride: int = 2):
        n, c, h, w = x.shape
        oh, ow = _output_size(h, window, stride, 0), _output_size(w, window, stride, 0)
        self.x_shape, self.window, self.stride, self.oh, self.ow = x.shape, window, stride, oh, ow
        out = np.zeros((n, c, oh, ow), dtype=x.dtype)
        for i in range(window):
            for j in range(window):
                out += x[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
        return out / x.dtype.type(window * window)

    def backward(self, grad_output):
        s, oh, ow = self.stride, self.oh, self.ow
        grad = grad_output / grad_output.dtype.type(self.window * self.window)
        grad_x = np.zeros(self.x_shape, dtype=grad_output.dtype)
        for i in range(self.window):
            for j in range(self.window):
                grad_x[:, :, i : i + s * oh : s, j : j + s * ow : s] += grad
        return (grad_x,)


class MaxPool(Function):
    def forward(self, x, window: int = 2, stride: int = 2, pad: int = 0):
        n, c, h, w = x.shape
        oh, ow = _output_size(h, window, stride, pad), _output_size(w, window, stride, pad)
        xp = np.pad(
            x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf
        )
        # Window elements stacked in row-major scan order; argmax keeps the first maximum.
        patches = np.stack(
            [
                xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
                for i in range(window)
                for j in range(window)
            ],
            axis=-1,
        )
        self.argmax = patches.argmax(axis=-1)
        self.xp_shape, self.x_shape = xp.shape, x.shape
        self.window, self.stride, self.pad, self.oh, self.ow = window, stride, pad, oh, ow
        return np.take_along_axis(patches, self.argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad_output):
        s, oh, ow, p = self.stride, self.oh, self.ow, self.pad
        grad_xp = np.zeros(self.xp_shape, dtype=grad_output.dtype)
        for k in range(self.window * self.window):
            i, j = divmod(k, self.window)
            routed = np.where(self.argmax == k, grad_output, grad_output.dtype.type(0))
            grad_xp[:, :, i : i + s * oh : s, j : j + s * ow : s] += routed
        h, w = self.x_shape[2], self.x_shape[3]
        return (grad_xp[:, :, p : p + h, p : p + w].copy(),)


class GlobalAvgPool(Function):
    def forward(self, x):
        self.x_shape = x.shape
        return x.mean(axis=(2, 3), keepdims=True)

    def backward(self, grad_output):
        area = self.x_shape[2] * self.x_shape[3]
        return (
            np.broadcast_to(grad_output / grad_output.dtype.type(area), self.x_shape).copy(),
        )


class Linear(Function):
    def forward(self, x, weight, bias):
        n = x.shape[0]
        flat = x.reshape(n, -1)
        self.save_for_backward(flat, weight)
        self.x_shape = x.shape
        out = flat @ weight.T + bias[None, :]
        return out.reshape(n, -1, 1, 1)

    def backward(self, grad_output):
        flat, weight = self.saved
        grad = grad_output.reshape(grad_output.shape[0], -1)
        grad_x = (grad @ weight).reshape(self.x_shape)
        return grad_x, grad.T @ flat, grad.sum(axis=0)


class SoftmaxCrossEntropy(Function):
    def forward(self, logits, labels: Optional[np.ndarray] = None):
        n = logits.shape[0]
        z = logits.reshape(n, -1)
        lse = logsumexp(z, axis=1)
        self.probs = np.exp(z - lse[:, None])
        self.labels, self.logits_shape = labels, logits.shape
        loss = (lse - z[np.arange(n), labels]).mean()
        return np.asarray(loss, dtype=logits.dtype).reshape(1)

    def backward(self, grad_output):
        n = self.probs.shape[0]
        grad = self.probs.copy()
        grad[np.arange(n), self.labels] -= 1.0
        grad *= grad_output.reshape(-1)[0] / n
        return (grad.reshape(self.logits_shape).astype(grad_output.dtype),)


# Functional API


def _check_same_grid(a: Tensor, b: Tensor, op: str) -> None:
    a._require_4d()
    b._require_4d()
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeError(
            f"{op}: batch/spatial mismatch between {a.shape} and {b.shape}."
        )


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a + b of equally shaped tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch between {a.shape} and {b.shape}.")
    return Add.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a * b of equally shaped tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch between {a.shape} and {b.shape}.")
    return Mul.apply(a, b)


def scale(x: Tensor, factor: float) -> Tensor:
    return Scale.apply(x, factor=factor)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements as a single-element tensor."""
    return SumAll.apply(x)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Channels [start, stop) of x."""
    x._require_4d()
    if not 0 <= start <= stop <= x.channels:
        raise ChannelRangeError(
            f"Channel slice [{start}, {stop}) outside width {x.channels}."
        )
    return ChannelSlice.apply(x, start=start, stop=stop)


def channel_concat(a: Tensor, b: Tensor) -> Tensor:
    """
    Concatenate along channels; ``a`` occupies the leading channel range.

    Raises
    ------
    ShapeError
        If batch or spatial sizes disagree.
    """
    _check_same_grid(a, b, "channel_concat")
    return ChannelConcat.apply(a, b)


def channel_add_at(base: Tensor, delta: Tensor, offset: int) -> Tensor:
    """
    Add ``delta`` into channels [offset, offset + delta.channels) of ``base``.

    Channels outside the window, and window entries whose delta is zero, keep
    the exact bits of ``base``.

    Raises
    ------
    ChannelRangeError
        If the window does not fit inside ``base``.
    """
    _check_same_grid(base, delta, "channel_add_at")
    if offset < 0 or offset + delta.channels > base.channels:
        raise ChannelRangeError(
            f"Cannot add {delta.channels} channels at offset {offset} into width {base.channels}."
        )
    return ChannelAddAt.apply(base, delta, offset=offset)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is 0."""
    return ReLU.apply(x)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """
    2-D convolution (cross-correlation) without bias.

    Parameters
    ----------
    x : Tensor
        Input of shape (N, C, H, W).
    kernel : Tensor
        Filters of shape (F, C, kh, kw).
    stride : int
        Step between windows, >= 1.
    pad : int
        Zero padding on every side, >= 0.

    Returns
    -------
    Tensor
        Output of shape (N, F, (H + 2 pad - kh) // stride + 1, (W + 2 pad - kw) // stride + 1).

    Raises
    ------
    ShapeError
        On channel mismatch or a non-positive output size.
    ValueError
        If stride < 1 or pad < 0.
    """
    x._require_4d()
    if kernel.data.ndim != 4:
        raise ShapeError(f"conv2d kernel must be 4-D, got shape {kernel.shape}.")
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d needs stride >= 1 and pad >= 0, got {stride}, {pad}.")
    if x.channels != kernel.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input has {x.channels}, kernel expects {kernel.shape[1]}."
        )
    kh, kw = kernel.shape[2], kernel.shape[3]
    if (
        _output_size(x.shape[2], kh, stride, pad) < 1
        or _output_size(x.shape[3], kw, stride, pad) < 1
    ):
        raise ShapeError(
            f"conv2d output would be empty for input {x.shape}, kernel {kernel.shape}, pad {pad}."
        )
    return Conv2d.apply(x, kernel, stride=stride, pad=pad)


def batch_norm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool = True,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """
    Per-channel batch normalization.

    In training mode the statistics are taken over (batch, height, width) and the
    running statistics are updated in place with ``momentum`` (the variance
    update uses the unbiased estimate). In eval mode the running statistics are
    used.

    Raises
    ------
    ShapeError
        If scale/shift do not match the channel count.
    ValueError
        If eps <= 0 or the normalization set is empty.
    """
    x._require_4d()
    if scale.shape != (x.channels,) or shift.shape != (x.channels,):
        raise ShapeError(
            f"batch_norm scale/shift must have shape ({x.channels},), got {scale.shape} and {shift.shape}."
        )
    if eps <= 0:
        raise ValueError(f"batch_norm eps must be positive, got {eps}.")
    if x.shape[0] * x.shape[2] * x.shape[3] == 0:
        raise ValueError(f"batch_norm normalization set is empty for shape {x.shape}.")
    return BatchNorm.apply(
        x,
        scale,
        shift,
        running_mean=running_mean,
        running_var=running_var,
        training=training,
        eps=eps,
        momentum=momentum,
    )


def avg_pool(x: Tensor, window: int, stride: int) -> Tensor:
    """Mean over each window; the gradient spreads 1/window**2 to window elements."""
    x._require_4d()
    if window < 1 or stride < 1:
        raise ValueError(f"avg_pool needs window >= 1 and stride >= 1, got {window}, {stride}.")
    if window > x.shape[2] or window > x.shape[3]:
        raise ShapeError(f"avg_pool window {window} larger than spatial extent {x.shape[2:]}.")
    return AvgPool.apply(x, window=window, stride=stride)


def max_pool(x: Tensor, window: int, stride: int, pad: int = 0) -> Tensor:
    """
    Max over each window (padding counts as -inf).

    Ties go to the first element in row-major scan order of the window, which
    also receives the whole gradient.
    """
    x._require_4d()
    if window < 1 or stride < 1 or pad < 0:
        raise ValueError(
            f"max_pool needs window >= 1, stride >= 1, pad >= 0, got {window}, {stride}, {pad}."
        )
    if window > x.shape[2] + 2 * pad or window > x.shape[3] + 2 * pad:
        raise ShapeError(f"max_pool window {window} larger than spatial extent {x.shape[2:]}.")
    if pad >= window:
        raise ValueError(f"max_pool pad {pad} must be smaller than window {window}.")
    return MaxPool.apply(x, window=window, stride=stride, pad=pad)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean, shape (N, C, 1, 1)."""
    x._require_4d()
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeError(f"global_avg_pool needs a non-empty spatial extent, got {x.shape}.")
    return GlobalAvgPool.apply(x)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """
    Affine map of (N, C, 1, 1) features to (N, K, 1, 1) outputs.

    Raises
    ------
    ShapeError
        If x is not (N, C, 1, 1) or weight/bias do not match (K, C) / (K,).
    """
    x._require_4d()
    if x.shape[2:] != (1, 1):
        raise ShapeError(f"linear expects (N, C, 1, 1) input, got {x.shape}.")
    if weight.data.ndim != 2 or weight.shape[1] != x.channels:
        raise ShapeError(
            f"linear weight shape {weight.shape} does not match {x.channels} input channels."
        )
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear bias shape {bias.shape} does not match {weight.shape[0]} outputs.")
    return Linear.apply(x, weight, bias)


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """
    Mean over the batch of -log softmax(logits)[label].

    Raises
    ------
    ValueError
        If a label is outside [0, K) or the label count differs from the batch size.
    """
    logits._require_4d()
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape[0], logits.shape[1]
    if labels.shape != (n,):
        raise ValueError(f"Expected {n} labels, got shape {labels.shape}.")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"Labels must lie in [0, {k}), got {labels.tolist()}.")
    return SoftmaxCrossEntropy.apply(logits, labels=labels)


def dropout(
    x: Tensor,
    rate: float,
    training: bool = True,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """
    Inverted dropout: zero elements with probability ``rate`` and scale the
    survivors by 1 / (1 - rate). Identity in eval mode or when rate == 0.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"Dropout rate must lie in [0, 1), got {rate}.")
    if not training or rate == 0.0:
        return x
    if rng is None:
        rng = np.random.default_rng()
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return Dropout.apply(x, mask=mask)
