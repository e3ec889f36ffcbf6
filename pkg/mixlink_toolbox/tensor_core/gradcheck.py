import logging
from typing import Callable, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from mixlink_toolbox.tensor_core import ops
from mixlink_toolbox.tensor_core.tensor import DTYPES, Tensor, no_grad
from mixlink_toolbox.utils import make_rng, relative_error

logger = logging.getLogger(__name__)

# Step size and pass threshold per element mode
STEPS = {"64bit": 1e-5, "32bit": 1e-2}
TOLERANCES = {"64bit": 1e-4, "32bit": 1e-2}

# A coordinate whose one-sided slopes disagree this much sits on a kink
_KINK_RTOL = 0.1
_KINK_ATOL = {"64bit": 1e-6, "32bit": 1e-3}
_MAX_SKIPPED_FRACTION = 0.2
# Spawn key of the output weights, kept apart from streams seeded with the bare seed
_WEIGHT_STREAM = 1


class GradcheckResult(BaseModel):
    """Outcome of comparing backpropagated gradients with central finite differences."""

    op: str
    dtype: str
    seed: int
    tolerance: float
    max_rel_error: float
    worst_input: Optional[str] = None
    worst_coordinate: Optional[list[int]] = None
    checked: int = 0
    skipped: int = 0
    passed: bool

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        where = (
            f" worst at {self.worst_input}{tuple(self.worst_coordinate)}"
            if self.worst_coordinate is not None
            else ""
        )
        return (
            f"{status} {self.op}: rel err {self.max_rel_error:.3e} "
            f"(tol {self.tolerance:.0e}, seed {self.seed}){where}"
        )


def random_input(
    shape: Sequence[int],
    rng: np.random.Generator,
    dtype: str = "64bit",
    margin: float = 0.0,
) -> Tensor:
    """
    Standard normal tensor, optionally pushed at least ``margin`` away from zero.

    The margin keeps ReLU and max-pool inputs off their kinks.
    """
    values = rng.standard_normal(shape)
    if margin > 0:
        values = np.where(values >= 0, values + margin, values - margin)
    return Tensor(values, dtype=DTYPES[dtype])


def _weighted_sum(out: np.ndarray, weights: np.ndarray) -> float:
    return float(np.sum(out.astype(np.float64) * weights))


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    names: Optional[Sequence[str]] = None,
    op: str = "fn",
    seed: int = 0,
    dtype: str = "64bit",
    h: Optional[float] = None,
    tol: Optional[float] = None,
    max_coords: Optional[int] = None,
) -> GradcheckResult:
    """
    Check the analytic gradient of ``fn`` against central finite differences.

    The scalar under test is sum(out * W) for a fixed random W, so every output
    element contributes with a distinct weight.

    Parameters
    ----------
    fn : Callable[..., Tensor]
        Deterministic function of the input tensors.
    inputs : Sequence[Tensor]
        Tensors to differentiate against. Their ``requires_grad`` is switched on
        and their gradients are reset.
    names : Sequence[str], optional
        Labels of the inputs in the result, defaults to 'input0', 'input1', ...
    op : str
        Name echoed in the result.
    seed : int
        Seed of the output weights and of the coordinate sampling.
    dtype : str
        '64bit' or '32bit'; selects the default step and tolerance.
    h : float, optional
        Finite-difference step.
    tol : float, optional
        Pass threshold on the norm-wise relative error.
    max_coords : int, optional
        Check at most this many randomly chosen coordinates per input.

    Returns
    -------
    GradcheckResult
        Worst relative error over the inputs and where it occurred.
    """
    h = STEPS[dtype] if h is None else h
    tol = TOLERANCES[dtype] if tol is None else tol
    names = list(names) if names is not None else [f"input{i}" for i in range(len(inputs))]
    rng = make_rng(np.random.SeedSequence([seed, _WEIGHT_STREAM]))

    for tensor in inputs:
        tensor.requires_grad = True
        tensor.grad = None

    out = fn(*inputs)
    weights = rng.standard_normal(out.shape)
    loss = ops.sum_all(ops.mul(out, Tensor(weights, dtype=out.dtype)))
    loss.backward()

    def evaluate() -> float:
        with no_grad():
            return _weighted_sum(fn(*inputs).data, weights)

    worst = GradcheckResult(
        op=op, dtype=dtype, seed=seed, tolerance=tol, max_rel_error=0.0, passed=True
    )
    total_checked, total_skipped = 0, 0
    for name, tensor in zip(names, inputs):
        analytic_full = (
            tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        )
        coords = np.arange(tensor.size)
        if max_coords is not None and tensor.size > max_coords:
            coords = np.sort(rng.choice(tensor.size, size=max_coords, replace=False))

        array = tensor.data
        analytic, numeric, kept = [], [], []
        for index in coords:
            original = array.flat[index]
            array.flat[index] = original + h
            plus_step = float(array.flat[index]) - float(original)
            f_plus = evaluate()
            array.flat[index] = original - h
            minus_step = float(original) - float(array.flat[index])
            f_minus = evaluate()
            array.flat[index] = original
            f_zero = evaluate()

            slope_fwd = (f_plus - f_zero) / plus_step
            slope_bwd = (f_zero - f_minus) / minus_step
            if abs(slope_fwd - slope_bwd) > _KINK_RTOL * (
                abs(slope_fwd) + abs(slope_bwd)
            ) + _KINK_ATOL[dtype]:
                total_skipped += 1
                continue
            numeric.append((f_plus - f_minus) / (plus_step + minus_step))
            analytic.append(float(analytic_full.flat[index]))
            kept.append(int(index))

        total_checked += len(kept)
        if not kept:
            continue
        analytic_arr, numeric_arr = np.array(analytic), np.array(numeric)
        error = relative_error(analytic_arr, numeric_arr)
        logger.debug(f"gradcheck {op}/{name}: rel err {error:.3e} over {len(kept)} coords")
        if error >= worst.max_rel_error:
            flat = kept[int(np.argmax(np.abs(analytic_arr - numeric_arr)))]
            worst.max_rel_error = error
            worst.worst_input = name
            worst.worst_coordinate = [int(i) for i in np.unravel_index(flat, tensor.shape)]

    worst.checked = total_checked
    worst.skipped = total_skipped
    attempted = total_checked + total_skipped
    too_many_kinks = attempted > 0 and total_skipped > _MAX_SKIPPED_FRACTION * attempted
    if too_many_kinks:
        logger.warning(
            f"gradcheck {op}: {total_skipped} of {attempted} coordinates sit on kinks."
        )
    worst.passed = worst.max_rel_error <= tol and not too_many_kinks
    return worst
