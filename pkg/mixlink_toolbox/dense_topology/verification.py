"""
Numerical suites witnessing the structural properties of the dense topology.

Every suite draws random networks from per-trial seeds and reports the
largest deviation it observed together with the first failing seed.
"""

import logging
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from mixlink_toolbox import Arch, MixedLinkConfig, Position, arch_preset
from mixlink_toolbox.blocks.bottleneck import Bottleneck, BottleneckSpec
from mixlink_toolbox.blocks.units import ForwardContext
from mixlink_toolbox.dense_topology.connections import inner_offset
from mixlink_toolbox.dense_topology.evaluators import (
    OffsetFn,
    eval_densenet,
    eval_dual_path_reference,
    eval_mixed,
    eval_resnet_recursive,
    eval_resnet_unrolled,
    mixed_step,
)
from mixlink_toolbox.dense_topology.transforms import ConstantTransform, ConvReluTransform
from mixlink_toolbox.errors import ChannelRangeError, ShapeError
from mixlink_toolbox.tensor_core.params import ParamStore
from mixlink_toolbox.tensor_core.tensor import Tensor
from mixlink_toolbox.utils import make_rng

logger = logging.getLogger(__name__)

SUITES = ["unrolling", "reduction", "width", "witness", "locality"]
REDUCIBLE_ARCHS = [Arch.RESNET, Arch.DENSENET, Arch.DUAL_PATH]

UNROLLING_TOLERANCE = 1e-10
MAX_WIDTH = 16


class SuiteResult(BaseModel):
    name: str
    passed: bool
    trials: int
    max_deviation: float = 0.0
    tolerance: float = 0.0
    failing_seed: Optional[int] = None
    message: str = ""


def _trial_rng(seed: int, *salt: int) -> np.random.Generator:
    return make_rng(np.random.SeedSequence([seed, *salt]))


def _random_input(rng: np.random.Generator, channels: int, spatial: int, batch: int = 2) -> Tensor:
    return Tensor(rng.standard_normal((batch, channels, spatial, spatial)))


def _bottlenecks(
    in_widths: Sequence[int], out_width: int, rng: np.random.Generator
) -> list[Optional[Bottleneck]]:
    if out_width == 0:
        return [None] * len(in_widths)
    params, ctx = ParamStore(), ForwardContext(training=True)
    return [
        Bottleneck(
            BottleneckSpec(in_channels=w, out_channels=out_width, multiplier=2),
            params,
            ctx,
            rng,
            name=f"layer{i + 1}",
            index=i + 1,
        )
        for i, w in enumerate(in_widths)
    ]


def _max_abs_diff(a: Tensor, b: Tensor) -> float:
    if a.shape != b.shape:
        return float("inf")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a.data - b.data)))


def _run_trials(
    name: str,
    trial: Callable[[int], tuple[bool, float, str]],
    seeds: Iterable[int],
    tolerance: float,
) -> SuiteResult:
    """Run ``trial(seed) -> (ok, deviation, detail)`` over seeds, stopping at the first failure."""
    count, worst = 0, 0.0
    for seed in seeds:
        count += 1
        try:
            ok, deviation, detail = trial(seed)
        except (ShapeError, ValueError) as e:
            ok, deviation, detail = False, float("inf"), str(e)
        worst = max(worst, deviation)
        if not ok:
            return SuiteResult(
                name=name,
                passed=False,
                trials=count,
                max_deviation=worst,
                tolerance=tolerance,
                failing_seed=seed,
                message=detail,
            )
    return SuiteResult(
        name=name, passed=True, trials=count, max_deviation=worst, tolerance=tolerance
    )


def verify_unrolling(
    trials: int = 100,
    layer_counts: Sequence[int] = range(2, 9),
    seed: int = 0,
    spatial: int = 8,
    tolerance: float = UNROLLING_TOLERANCE,
) -> SuiteResult:
    """The recursive residual form and its unrolled sum agree on every X_l."""
    results = []
    for layers in layer_counts:

        def trial(trial_seed: int, layers=layers):
            rng = _trial_rng(trial_seed, layers)
            width = int(rng.integers(1, MAX_WIDTH + 1))
            transforms = _bottlenecks([width] * layers, width, rng)
            x0 = _random_input(rng, width, spatial)
            recursive = eval_resnet_recursive(transforms, x0)
            unrolled = eval_resnet_unrolled(transforms, x0)
            deviation = max(
                _max_abs_diff(a, b) for a, b in zip(recursive.xs, unrolled.xs)
            )
            return (
                deviation <= tolerance,
                deviation,
                f"unrolling equivalence broken at L={layers}, width={width}: deviation {deviation:.3e}",
            )

        results.append(
            _run_trials("unrolling", trial, range(seed, seed + trials), tolerance)
        )
        if not results[-1].passed:
            break
    worst = max(r.max_deviation for r in results)
    failed = next((r for r in results if not r.passed), None)
    merged = (failed or results[-1]).model_copy(
        update={"trials": sum(r.trials for r in results), "max_deviation": worst}
    )
    return merged


def _reduction_trial(arch: Arch, spatial: int, offset_fn: Optional[OffsetFn]):
    def trial(trial_seed: int):
        rng = _trial_rng(trial_seed, list(Arch).index(arch))
        layers = int(rng.integers(1, 5))
        if arch == Arch.RESNET:
            width = int(rng.integers(1, MAX_WIDTH + 1))
            config = arch_preset(arch, width=width)
            x0 = _random_input(rng, width, spatial)
            h_in = _bottlenecks([width] * layers, width, rng)
            mixed = eval_mixed(h_in, [None] * layers, x0, config, offset_fn=offset_fn)
            reference = eval_resnet_recursive(h_in, x0).rs
        elif arch == Arch.DENSENET:
            c0 = int(rng.integers(1, MAX_WIDTH + 1))
            k2 = int(rng.integers(1, 9))
            config = arch_preset(arch, k2=k2)
            x0 = _random_input(rng, c0, spatial)
            h_out = _bottlenecks([c0 + i * k2 for i in range(layers)], k2, rng)
            mixed = eval_mixed([None] * layers, h_out, x0, config, offset_fn=offset_fn)
            reference = eval_densenet(h_out, x0).ss
        else:
            c0 = int(rng.integers(1, MAX_WIDTH + 1))
            k1 = int(rng.integers(1, c0 + 1))
            k2 = int(rng.integers(1, 9))
            config = arch_preset(arch, k1=k1, k2=k2)
            x0 = _random_input(rng, c0, spatial)
            widths = [c0 + i * k2 for i in range(layers)]
            h_in = _bottlenecks(widths, k1, rng)
            h_out = _bottlenecks(widths, k2, rng)
            mixed = eval_mixed(h_in, h_out, x0, config, offset_fn=offset_fn)
            reference = [eval_dual_path_reference(h_in, h_out, x0, k1, k2)]
            mixed.ss = mixed.ss[-1:]
        exact = all(
            a.shape == b.shape and np.array_equal(a.data, b.data)
            for a, b in zip(mixed.ss, reference)
        )
        deviation = max(_max_abs_diff(a, b) for a, b in zip(mixed.ss, reference))
        return exact, deviation, f"{arch} reduction is not bit-exact: deviation {deviation:.3e}"

    return trial


def verify_reductions(
    archs: Optional[Sequence[Arch]] = None,
    trials: int = 50,
    seed: int = 0,
    spatial: int = 8,
    offset_fn: Optional[OffsetFn] = None,
) -> list[SuiteResult]:
    """
    Mixed link steps reproduce the DenseNet, ResNet and dual-path evaluators bit-exactly.

    Raises
    ------
    ValueError
        If an architecture without a reference evaluator (arch4) is requested.
    """
    archs = [Arch(a) for a in (archs or REDUCIBLE_ARCHS)]
    results = []
    for arch in archs:
        if arch not in REDUCIBLE_ARCHS:
            raise ValueError(f"No reference evaluator for {arch}; choose from arch1, arch2, arch3.")
        results.append(
            _run_trials(
                f"reduction-{arch}",
                _reduction_trial(arch, spatial, offset_fn),
                range(seed, seed + trials),
                0.0,
            )
        )
    return results


def verify_width_law(
    trials: int = 50,
    seed: int = 0,
    spatial: int = 4,
    offset_fn: Optional[OffsetFn] = None,
) -> SuiteResult:
    """After l mixed steps the embedding width is width(S_0) + l * k2."""

    def trial(trial_seed: int):
        rng = _trial_rng(trial_seed)
        c0 = int(rng.integers(1, MAX_WIDTH + 1))
        k1 = int(rng.integers(0, c0 + 1))
        k2 = int(rng.integers(0 if k1 > 0 else 1, 9))
        position = Position.FIXED if rng.random() < 0.5 else Position.UNFIXED
        layers = int(rng.integers(1, 6))
        config = MixedLinkConfig(k1=k1, k2=k2, position=position)
        widths = [c0 + i * k2 for i in range(layers)]
        h_in = [ConvReluTransform(w, k1, rng, index=i) if k1 else None for i, w in enumerate(widths)]
        h_out = [ConvReluTransform(w, k2, rng, index=i) if k2 else None for i, w in enumerate(widths)]
        trace = eval_mixed(h_in, h_out, _random_input(rng, c0, spatial), config, offset_fn=offset_fn)
        expected = [c0 + i * k2 for i in range(layers + 1)]
        deviation = float(max(abs(a - b) for a, b in zip(trace.widths(), expected)))
        return deviation == 0.0, deviation, f"width law broken: {trace.widths()} != {expected}"

    return _run_trials("width", trial, range(seed, seed + trials), 0.0)


def verify_witness(seed: int = 0, offset_fn: Optional[OffsetFn] = None) -> SuiteResult:
    """
    Fixed and unfixed positioning give different outputs on a width-8 embedding
    with k1 = k2 = 2 and a constant-one inner transform.
    """
    rng = _trial_rng(seed)
    s_prev = _random_input(rng, 8, 4)
    h_in, h_out = ConstantTransform(2, 1.0), ConstantTransform(2, 0.0)
    outputs = {
        position: mixed_step(
            s_prev, h_in, h_out, MixedLinkConfig(k1=2, k2=2, position=position), offset_fn
        )
        for position in Position
    }
    expected_ranges = {Position.FIXED: range(0, 2), Position.UNFIXED: range(6, 8)}
    for position, out in outputs.items():
        changed = [
            c for c in range(8) if not np.array_equal(out.data[:, c], s_prev.data[:, c])
        ]
        if changed != list(expected_ranges[position]):
            return SuiteResult(
                name="witness",
                passed=False,
                trials=1,
                failing_seed=seed,
                message=f"{position} mode perturbed channels {changed}, expected {list(expected_ranges[position])}",
            )
    deviation = _max_abs_diff(outputs[Position.FIXED], outputs[Position.UNFIXED])
    return SuiteResult(
        name="witness",
        passed=deviation > 0.0,
        trials=1,
        max_deviation=deviation,
        failing_seed=None if deviation > 0.0 else seed,
        message="" if deviation > 0.0 else "fixed and unfixed outputs are identical",
    )


def verify_locality(
    trials: int = 50, seed: int = 0, spatial: int = 4, offset_fn: Optional[OffsetFn] = None
) -> SuiteResult:
    """Channels outside the inner link window are bit-identical before and after the step."""

    def trial(trial_seed: int):
        rng = _trial_rng(trial_seed)
        width = int(rng.integers(1, MAX_WIDTH + 1))
        k1 = int(rng.integers(1, width + 1))
        position = Position.FIXED if rng.random() < 0.5 else Position.UNFIXED
        s_prev = _random_input(rng, width, spatial)
        value = float(rng.uniform(0.5, 1.5))
        where = f"{position}, width {width}, k1 {k1}"
        try:
            out = mixed_step(
                s_prev,
                ConstantTransform(k1, value),
                None,
                MixedLinkConfig(k1=k1, k2=0, position=position),
                offset_fn=offset_fn,
            )
        except ChannelRangeError as e:
            return False, float("inf"), f"locality of the inner link broken ({where}): {e}"
        offset = inner_offset(width, k1, position)
        window = np.zeros(width, dtype=bool)
        window[offset : offset + k1] = True
        outside = np.max(np.abs(out.data[:, ~window] - s_prev.data[:, ~window]), initial=0.0)
        inside = np.max(
            np.abs(out.data[:, window] - (s_prev.data[:, window] + value)), initial=0.0
        )
        deviation = float(max(outside, inside))
        return (
            outside == 0.0 and inside == 0.0,
            deviation,
            f"locality of the inner link broken ({where}): deviation {deviation:.3e}",
        )

    return _run_trials("locality", trial, range(seed, seed + trials), 0.0)


def run_verification(
    suites: Optional[Sequence[str]] = None,
    archs: Optional[Sequence[Arch]] = None,
    trials: Optional[int] = None,
    seed: int = 0,
    offset_fn: Optional[OffsetFn] = None,
    layer_counts: Sequence[int] = range(2, 9),
    tolerance: float = UNROLLING_TOLERANCE,
) -> list[SuiteResult]:
    """
    Run the selected suites (all by default) and log one line per result.

    Parameters
    ----------
    suites : Sequence[str], optional
        Any of 'unrolling', 'reduction', 'width', 'witness', 'locality'.
    archs : Sequence[Arch], optional
        Architectures of the reduction suite (arch1..arch3).
    trials : int, optional
        Trials per suite; 100 per depth for unrolling and 50 elsewhere by default.
    offset_fn : Callable, optional
        Replacement inner link offset rule, e.g. ``off_by_one_offset``.
    tolerance : float
        Largest accepted deviation of the unrolling suite.
    """
    suites = list(suites or SUITES)
    unknown = [s for s in suites if s not in SUITES]
    if unknown:
        raise ValueError(f"Unknown suites {unknown}, choose from {SUITES}.")
    results: list[SuiteResult] = []
    for suite in suites:
        if suite == "unrolling":
            results.append(
                verify_unrolling(
                    trials=trials or 100,
                    layer_counts=layer_counts,
                    seed=seed,
                    tolerance=tolerance,
                )
            )
        elif suite == "reduction":
            results.extend(
                verify_reductions(archs, trials=trials or 50, seed=seed, offset_fn=offset_fn)
            )
        elif suite == "width":
            results.append(verify_width_law(trials=trials or 50, seed=seed, offset_fn=offset_fn))
        elif suite == "witness":
            results.append(verify_witness(seed=seed, offset_fn=offset_fn))
        elif suite == "locality":
            results.append(verify_locality(trials=trials or 50, seed=seed, offset_fn=offset_fn))
    for result in results:
        level = logging.INFO if result.passed else logging.WARNING
        logger.log(
            level,
            f"{result.name}: {'pass' if result.passed else 'FAIL'} over {result.trials} trials, "
            f"max deviation {result.max_deviation:.3e}",
        )
    return results
