import itertools
import logging
from typing import Optional, Sequence

import pandas as pd
from pydantic import BaseModel

from mixlink_toolbox import Arch, arch_preset
from mixlink_toolbox.analysis.param_report import compare_to_reference, count_params
from mixlink_toolbox.blocks.network_factory import PUBLISHED_PARAMS, NetworkFactory
from mixlink_toolbox.blocks.network_spec import cifar_network_spec

logger = logging.getLogger(__name__)

MULTIPLIERS = (1, 2, 4)
COMPRESSIONS = (0.5, 1.0)


class GridSelection(BaseModel):
    """The (m, theta) setting chosen by the grid search."""

    multiplier: int
    compression: float
    worst_rel_error: float
    all_within_tolerance: bool


def grid_search(
    presets: Optional[Sequence[str]] = None,
    multipliers: Sequence[int] = MULTIPLIERS,
    compressions: Sequence[float] = COMPRESSIONS,
    tolerance: float = 0.10,
) -> tuple[pd.DataFrame, GridSelection]:
    """
    Count parameters of every preset under every (m, theta) setting.

    The selected setting is the one with the smallest worst-case relative
    error over the presets; a warning is logged when it does not bring every
    preset within the tolerance.

    Parameters
    ----------
    presets : Sequence[str], optional
        Named presets with a published size, all six by default.
    multipliers : Sequence[int]
        Bottleneck multipliers m to try.
    compressions : Sequence[float]
        Transition compressions theta to try.
    tolerance : float
        Relative error accepted as a match.

    Returns
    -------
    tuple[pd.DataFrame, GridSelection]
        One row per (preset, m, theta) with a 'selected' flag, and the selection.
    """
    presets = list(presets or PUBLISHED_PARAMS)
    unknown = [p for p in presets if p not in PUBLISHED_PARAMS]
    if unknown:
        raise KeyError(f"No published size for presets {unknown}.")

    rows = []
    for m, theta in itertools.product(multipliers, compressions):
        for preset in presets:
            report = count_params(
                NetworkFactory.create_network(preset, multiplier=m, compression=theta)
            )
            comparison = compare_to_reference(report, PUBLISHED_PARAMS[preset], tolerance)
            rows.append(
                {
                    "preset": preset,
                    "multiplier": m,
                    "compression": theta,
                    "depth": report.depth,
                    "total_params": report.total_params,
                    "total_millions": round(report.total_millions, 4),
                    "reference_millions": PUBLISHED_PARAMS[preset],
                    "rel_error": round(comparison.rel_error, 6),
                    "passed": comparison.passed,
                }
            )
    df = pd.DataFrame(rows)

    worst = df.groupby(["multiplier", "compression"], sort=False)["rel_error"].max()
    best_m, best_theta = worst.idxmin()
    selection = GridSelection(
        multiplier=int(best_m),
        compression=float(best_theta),
        worst_rel_error=float(worst.min()),
        all_within_tolerance=bool(worst.min() <= tolerance),
    )
    df["selected"] = (df["multiplier"] == best_m) & (df["compression"] == best_theta)
    if selection.all_within_tolerance:
        logger.info(
            f"Selected m={best_m}, theta={best_theta}: worst relative error {selection.worst_rel_error:.4f}"
        )
    else:
        logger.warning(
            f"No (m, theta) setting matches every published size within {tolerance:.0%}; "
            f"closest is m={best_m}, theta={best_theta} with worst error {selection.worst_rel_error:.4f}"
        )
    return df, selection


def arch_efficiency_table(
    depth: int = 100,
    k: int = 12,
    multiplier: int = 4,
    compression: float = 0.5,
    classes: int = 10,
) -> pd.DataFrame:
    """
    Parameters and FLOPs of the four representative architectures at matched depth.

    The residual architecture keeps a constant trunk of width 2k and therefore
    uses no transition compression.
    """
    rows = []
    for arch in Arch:
        if arch == Arch.RESNET:
            config = arch_preset(arch, width=2 * k)
            theta = 1.0
        else:
            config = arch_preset(arch, k1=k, k2=k)
            theta = compression
        spec = cifar_network_spec(
            depth,
            config.k1,
            config.k2,
            position=config.position,
            multiplier=multiplier,
            compression=theta,
            classes=classes,
            name=str(arch),
        )
        report = count_params(spec)
        rows.append(
            {
                "arch": str(arch),
                "k1": config.k1,
                "k2": config.k2,
                "position": str(config.position),
                "compression": theta,
                "total_params": report.total_params,
                "total_millions": round(report.total_millions, 4),
                "flops": report.total_flops,
            }
        )
    return pd.DataFrame(rows)
