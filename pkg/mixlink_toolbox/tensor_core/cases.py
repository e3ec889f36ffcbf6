"""
Random gradcheck cases for every differentiable primitive.

Each case builder takes a generator and an element mode and returns the
function under test together with the tensors to differentiate against.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from mixlink_toolbox.tensor_core import ops
from mixlink_toolbox.tensor_core.gradcheck import GradcheckResult, gradcheck, random_input
from mixlink_toolbox.tensor_core.tensor import DTYPES, Tensor
from mixlink_toolbox.utils import make_rng


@dataclass
class GradcheckCase:
    fn: Callable[..., Tensor]
    inputs: list[Tensor]
    names: list[str]


CaseBuilder = Callable[[np.random.Generator, str], GradcheckCase]


def _conv2d(rng, dtype):
    x = random_input((2, 3, 5, 5), rng, dtype)
    k = random_input((4, 3, 3, 3), rng, dtype)
    return GradcheckCase(lambda x, k: ops.conv2d(x, k, stride=1, pad=1), [x, k], ["x", "kernel"])


def _conv2d_stride2(rng, dtype):
    x = random_input((2, 2, 6, 6), rng, dtype)
    k = random_input((3, 2, 3, 3), rng, dtype)
    return GradcheckCase(lambda x, k: ops.conv2d(x, k, stride=2, pad=1), [x, k], ["x", "kernel"])


def _batch_norm(rng, dtype):
    x = random_input((4, 3, 3, 3), rng, dtype)
    scale = random_input((3,), rng, dtype)
    shift = random_input((3,), rng, dtype)
    np_dtype = DTYPES[dtype]

    def fn(x, scale, shift):
        return ops.batch_norm(
            x, scale, shift, np.zeros(3, dtype=np_dtype), np.ones(3, dtype=np_dtype)
        )

    return GradcheckCase(fn, [x, scale, shift], ["x", "scale", "shift"])


def _batch_norm_eval(rng, dtype):
    x = random_input((2, 3, 3, 3), rng, dtype)
    scale = random_input((3,), rng, dtype)
    shift = random_input((3,), rng, dtype)
    mean = rng.standard_normal(3).astype(DTYPES[dtype])
    var = rng.uniform(0.5, 2.0, size=3).astype(DTYPES[dtype])

    def fn(x, scale, shift):
        return ops.batch_norm(x, scale, shift, mean, var, training=False)

    return GradcheckCase(fn, [x, scale, shift], ["x", "scale", "shift"])


def _relu(rng, dtype):
    x = random_input((2, 3, 4, 4), rng, dtype, margin=0.05)
    return GradcheckCase(ops.relu, [x], ["x"])


def _channel_concat(rng, dtype):
    a = random_input((2, 3, 3, 3), rng, dtype)
    b = random_input((2, 2, 3, 3), rng, dtype)
    return GradcheckCase(ops.channel_concat, [a, b], ["a", "b"])


def _channel_add_at(rng, dtype):
    base = random_input((2, 5, 3, 3), rng, dtype)
    delta = random_input((2, 2, 3, 3), rng, dtype)
    return GradcheckCase(
        lambda base, delta: ops.channel_add_at(base, delta, 2), [base, delta], ["base", "delta"]
    )


def _slice_channels(rng, dtype):
    x = random_input((2, 5, 3, 3), rng, dtype)
    return GradcheckCase(lambda x: ops.slice_channels(x, 1, 4), [x], ["x"])


def _avg_pool(rng, dtype):
    x = random_input((2, 2, 4, 4), rng, dtype)
    return GradcheckCase(lambda x: ops.avg_pool(x, 2, 2), [x], ["x"])


def _max_pool(rng, dtype):
    x = random_input((2, 2, 5, 5), rng, dtype)
    return GradcheckCase(lambda x: ops.max_pool(x, 3, 2, pad=1), [x], ["x"])


def _global_avg_pool(rng, dtype):
    x = random_input((2, 3, 4, 4), rng, dtype)
    return GradcheckCase(ops.global_avg_pool, [x], ["x"])


def _linear(rng, dtype):
    x = random_input((3, 4, 1, 1), rng, dtype)
    weight = random_input((5, 4), rng, dtype)
    bias = random_input((5,), rng, dtype)
    return GradcheckCase(ops.linear, [x, weight, bias], ["x", "weight", "bias"])


def _softmax_cross_entropy(rng, dtype):
    logits = random_input((4, 5, 1, 1), rng, dtype)
    labels = rng.integers(0, 5, size=4)
    return GradcheckCase(
        lambda z: ops.softmax_cross_entropy(z, labels), [logits], ["logits"]
    )


def _add(rng, dtype):
    a = random_input((2, 2, 3, 3), rng, dtype)
    b = random_input((2, 2, 3, 3), rng, dtype)
    return GradcheckCase(ops.add, [a, b], ["a", "b"])


def _mul(rng, dtype):
    a = random_input((2, 2, 3, 3), rng, dtype)
    b = random_input((2, 2, 3, 3), rng, dtype)
    return GradcheckCase(ops.mul, [a, b], ["a", "b"])


def _scale(rng, dtype):
    x = random_input((2, 2, 3, 3), rng, dtype)
    return GradcheckCase(lambda x: ops.scale(x, -1.5), [x], ["x"])


def _sum_all(rng, dtype):
    x = random_input((2, 2, 3, 3), rng, dtype)
    return GradcheckCase(ops.sum_all, [x], ["x"])


def _dropout(rng, dtype):
    x = random_input((2, 3, 4, 4), rng, dtype)
    mask_seed = int(rng.integers(0, 2**31))
    return GradcheckCase(
        lambda x: ops.dropout(x, 0.2, training=True, rng=make_rng(mask_seed)), [x], ["x"]
    )


OP_CASES: dict[str, CaseBuilder] = {
    "conv2d": _conv2d,
    "conv2d_stride2": _conv2d_stride2,
    "batch_norm": _batch_norm,
    "batch_norm_eval": _batch_norm_eval,
    "relu": _relu,
    "channel_concat": _channel_concat,
    "channel_add_at": _channel_add_at,
    "slice_channels": _slice_channels,
    "avg_pool": _avg_pool,
    "max_pool": _max_pool,
    "global_avg_pool": _global_avg_pool,
    "linear": _linear,
    "softmax_cross_entropy": _softmax_cross_entropy,
    "add": _add,
    "mul": _mul,
    "scale": _scale,
    "sum_all": _sum_all,
    "dropout": _dropout,
}


def run_case(
    name: str,
    builder: CaseBuilder,
    seed: int = 0,
    dtype: str = "64bit",
    max_coords: Optional[int] = None,
) -> GradcheckResult:
    """Build a case from ``seed`` and gradcheck it with the same seed."""
    case = builder(make_rng(seed), dtype)
    return gradcheck(
        case.fn,
        case.inputs,
        names=case.names,
        op=name,
        seed=seed,
        dtype=dtype,
        max_coords=max_coords,
    )
