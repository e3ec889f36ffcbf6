import logging
import sys
from typing import Optional, TextIO

import matplotlib.pyplot as plt
import pandas as pd

from mixlink_toolbox.analysis.grid import arch_efficiency_table, grid_search
from mixlink_toolbox.analysis.param_report import compare_to_reference, count_params
from mixlink_toolbox.blocks.checks import BLOCK_CASES
from mixlink_toolbox.blocks.network_factory import PUBLISHED_PARAMS
from mixlink_toolbox.cli.config import RunConfig
from mixlink_toolbox.dense_topology.connections import off_by_one_offset
from mixlink_toolbox.dense_topology.verification import run_verification
from mixlink_toolbox.errors import ConfigError, DivergenceError
from mixlink_toolbox.tensor_core.cases import OP_CASES, run_case
from mixlink_toolbox.training.ablation import plot_history, run_ablation, run_toy_training
from mixlink_toolbox.utils import render_frame, write_frame

logger = logging.getLogger(__name__)

GRADCHECK_CASES = {**OP_CASES, **BLOCK_CASES}


def _emit(
    df: pd.DataFrame, config: RunConfig, metadata: dict, out: Optional[TextIO] = None
) -> None:
    """Write the frame to the configured output file, or render it to ``out``."""
    if config.output.path:
        path = write_frame(
            df, config.output.path, file_format=config.output.format, metadata=metadata
        )
        logger.info(f"Wrote {len(df)} rows to {path}")
    else:
        (out or sys.stdout).write(
            render_frame(df, file_format=config.output.format, metadata=metadata)
        )


def _network_echo(config: RunConfig) -> dict:
    return config.network.model_dump(mode="json", exclude_none=True)


def cmd_describe(config: RunConfig, out: Optional[TextIO] = None) -> int:
    """Stage table of the configured network: widths and spatial sizes from stem to classifier."""
    spec = config.network.to_spec()
    df = pd.DataFrame([row.model_dump() for row in spec.stage_rows()])
    metadata = {"network": spec.name, "depth": spec.depth_label(), **_network_echo(config)}
    _emit(df, config, metadata, out)
    return 0


def cmd_count_params(
    config: RunConfig,
    grid: bool = False,
    arch_table: bool = False,
    by_stage: bool = False,
    out: Optional[TextIO] = None,
) -> int:
    """
    Per-layer parameter report of the configured network, compared with its
    published size when it has one.

    With ``grid`` the (m, theta) grid is swept instead, with ``arch_table`` the
    four representative architectures are compared at the configured depth
    (100 by default), and with ``by_stage`` the report is summed per stage.
    """
    if grid:
        preset = config.network.preset
        presets = [preset] if preset in PUBLISHED_PARAMS else None
        df, selection = grid_search(presets=presets)
        _emit(df, config, selection.model_dump(), out)
        return 0
    if arch_table:
        return _emit_arch_table(config, out)

    spec = config.network.to_spec()
    preset = config.network.preset_name()
    report = count_params(spec)
    metadata = report.metadata()
    if preset in PUBLISHED_PARAMS:
        comparison = compare_to_reference(report, PUBLISHED_PARAMS[preset])
        metadata.update(
            reference_millions=comparison.reference_millions,
            rel_error=round(comparison.rel_error, 6),
            within_tolerance=comparison.passed,
        )
        if not comparison.passed:
            logger.warning(
                f"{preset}: {report.total_millions:.3f}M parameters, published "
                f"{comparison.reference_millions}M ({comparison.rel_error:.1%} off)"
            )
    df = report.stage_summary() if by_stage else report.to_dataframe()
    _emit(df, config, metadata, out)
    return 0


def _emit_arch_table(config: RunConfig, out: Optional[TextIO]) -> int:
    section = config.network
    if section.k2 < 1:
        raise ConfigError("The architecture table needs network.k2 >= 1.", key="network.k2")
    metadata = {
        "depth": section.depth or 100,
        "k": section.k2,
        "multiplier": section.multiplier,
        "compression": section.compression,
        "classes": section.classes or 10,
    }
    try:
        df = arch_efficiency_table(**metadata)
    except ValueError as e:
        raise ConfigError(f"Invalid network for the architecture table: {e}", key="network") from e
    _emit(df, config, metadata, out)
    return 0


def cmd_verify_topology(config: RunConfig, out: Optional[TextIO] = None) -> int:
    """Run the topology suites; exit code 1 when any suite fails."""
    section = config.verify
    offset_fn = off_by_one_offset if section.inject_offset_bug else None
    try:
        results = run_verification(
            suites=section.suites,
            archs=section.archs,
            trials=section.trials,
            seed=section.seed,
            offset_fn=offset_fn,
            layer_counts=range(section.min_layers, section.max_layers + 1),
            tolerance=section.tolerance,
        )
    except ValueError as e:
        raise ConfigError(str(e), key="verify") from e
    df = pd.DataFrame([r.model_dump() for r in results])
    metadata = section.model_dump(mode="json")
    _emit(df, config, metadata, out)
    failures = [r for r in results if not r.passed]
    for failure in failures:
        print(
            f"FAIL {failure.name} (seed {failure.failing_seed}): {failure.message}",
            file=sys.stderr,
        )
    return 1 if failures else 0


def cmd_gradcheck(config: RunConfig, out: Optional[TextIO] = None) -> int:
    """Finite-difference check of the selected cases; exit code 1 when any fails."""
    section = config.gradcheck
    names = section.ops or list(GRADCHECK_CASES)
    unknown = [n for n in names if n not in GRADCHECK_CASES]
    if unknown:
        raise ConfigError(
            f"Unknown gradcheck cases {unknown}, choose from {list(GRADCHECK_CASES)}.",
            key="gradcheck.ops",
        )
    rows, failed = [], False
    for name in names:
        results = [
            run_case(
                name,
                GRADCHECK_CASES[name],
                seed=section.seed + trial,
                dtype=section.dtype,
                max_coords=section.max_coords,
            )
            for trial in range(section.trials)
        ]
        worst = max(results, key=lambda r: r.max_rel_error)
        passed = all(r.passed for r in results)
        rows.append(
            {
                "op": name,
                "trials": len(results),
                "max_rel_error": worst.max_rel_error,
                "tolerance": worst.tolerance,
                "worst_seed": worst.seed,
                "worst_input": worst.worst_input,
                "worst_coordinate": worst.worst_coordinate,
                "passed": passed,
            }
        )
        if not passed:
            failed = True
            print(worst.summary(), file=sys.stderr)
    _emit(pd.DataFrame(rows), config, section.model_dump(mode="json"), out)
    return 1 if failed else 0


def cmd_train_toy(config: RunConfig, out: Optional[TextIO] = None) -> int:
    """
    Train the toy network (or every cell of an ablation) and emit the history.

    A diverging run emits its partial history and returns exit code 1.
    """
    section = config.train
    recipe = section.recipe()
    metadata = section.model_dump(mode="json", exclude={"dataset"})
    metadata.update({f"dataset.{k}": v for k, v in section.dataset.model_dump().items()})
    try:
        if section.ablate:
            history, summary = run_ablation(
                section.ablate,
                recipe,
                section.dataset,
                k=section.ablation_k,
                multiplier=section.multiplier,
            )
            for row in summary.itertuples():
                metadata[f"final_train_acc[{row.label}]"] = row.final_train_acc
                metadata[f"final_test_acc[{row.label}]"] = row.final_test_acc
            metadata["oracle_test_acc"] = float(summary["oracle_test_acc"].iloc[0])
        else:
            history, run = run_toy_training(
                recipe,
                section.dataset,
                config=section.link_config(),
                multiplier=section.multiplier,
                weights_path=section.save_weights,
            )
            metadata.update(
                params=run.params,
                final_train_acc=run.final_train_acc,
                final_test_acc=run.final_test_acc,
                oracle_test_acc=run.oracle_test_acc,
                beats_oracle=run.beats_oracle,
            )
    except DivergenceError as e:
        metadata["diverged"] = str(e)
        _emit(e.history, config, metadata, out)
        print(f"Training diverged: {e}", file=sys.stderr)
        return 1

    _emit(history, config, metadata, out)
    if section.plot:
        fig = plot_history(history, metric="test_acc")
        fig.savefig(section.plot)
        plt.close(fig)
        logger.info(f"Saved accuracy curves to {section.plot}")
    return 0
