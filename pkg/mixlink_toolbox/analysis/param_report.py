import logging
from typing import Optional, Union

import pandas as pd
from pydantic import BaseModel

from mixlink_toolbox.blocks.network_spec import NetworkSpec

logger = logging.getLogger(__name__)

COLUMNS = [
    "name",
    "kind",
    "stage",
    "in_channels",
    "in_size",
    "out_channels",
    "out_size",
    "params",
    "flops",
]


class LayerRow(BaseModel):
    name: str
    kind: str
    stage: str
    in_channels: int
    in_size: int
    out_channels: int
    out_size: int
    params: int = 0
    flops: int = 0


class ParamReport(BaseModel):
    """
    Per-layer parameter and FLOP accounting of one network.

    Rows follow the execution order and the parameter naming of the built
    graph; FLOPs are per batch item.
    """

    name: str
    depth: int
    config: dict
    rows: list[LayerRow]

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_flops(self) -> int:
        return sum(r.flops for r in self.rows)

    @property
    def total_millions(self) -> float:
        return self.total_params / 1e6

    @property
    def classifier_params(self) -> int:
        return sum(r.params for r in self.rows if r.stage == "classifier")

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump() for r in self.rows], columns=COLUMNS)

    def stage_summary(self) -> pd.DataFrame:
        """Parameters and FLOPs summed per stage, in execution order."""
        df = self.to_dataframe()
        return (
            df.groupby("stage", sort=False)
            .agg(
                in_channels=("in_channels", "first"),
                out_channels=("out_channels", "last"),
                in_size=("in_size", "first"),
                out_size=("out_size", "last"),
                params=("params", "sum"),
                flops=("flops", "sum"),
            )
            .reset_index()
        )

    def metadata(self) -> dict:
        return {
            **self.config,
            "depth": self.depth,
            "total_params": self.total_params,
            "total_params_millions": round(self.total_millions, 4),
            "classifier_params": self.classifier_params,
            "total_flops": self.total_flops,
        }


class ReferenceComparison(BaseModel):
    name: str
    total_millions: float
    reference_millions: float
    rel_error: float
    tolerance: float
    passed: bool


class _RowBuilder:
    def __init__(self):
        self.rows: list[LayerRow] = []

    def add(self, name, kind, stage, c_in, s_in, c_out, s_out, params=0, flops=0):
        self.rows.append(
            LayerRow(
                name=name,
                kind=kind,
                stage=stage,
                in_channels=c_in,
                in_size=s_in,
                out_channels=c_out,
                out_size=s_out,
                params=params,
                flops=flops,
            )
        )

    def bn_relu(self, prefix, stage, channels, size, suffix=""):
        elements = channels * size * size
        self.add(f"{prefix}.bn{suffix}", "batch_norm", stage, channels, size, channels, size, 2 * channels, 2 * elements)
        self.add(f"{prefix}.relu{suffix}", "relu", stage, channels, size, channels, size, 0, elements)

    def conv(self, name, stage, c_in, c_out, kernel, s_in, s_out):
        weights = c_out * c_in * kernel * kernel
        self.add(name, "conv", stage, c_in, s_in, c_out, s_out, weights, 2 * weights * s_out * s_out)

    def bottleneck(self, name, stage, c_in, c_out, multiplier, size):
        mid = multiplier * c_out
        self.bn_relu(name, stage, c_in, size, "1")
        self.conv(f"{name}.conv1", stage, c_in, mid, 1, size, size)
        self.bn_relu(name, stage, mid, size, "2")
        self.conv(f"{name}.conv2", stage, mid, c_out, 3, size, size)


def _config_echo(spec: NetworkSpec) -> dict:
    first = spec.blocks[0]
    return {
        "network": spec.name,
        "k1": first.config.k1,
        "k2": first.config.k2,
        "position": str(first.config.position),
        "multiplier": first.multiplier,
        "compression": spec.transitions[0].compression if spec.transitions else 1.0,
        "classes": spec.classifier.classes,
        "input_size": spec.input_size,
    }


def count_params(spec: NetworkSpec) -> ParamReport:
    """
    Per-layer parameter and FLOP report of a network spec.

    Convolutions carry no bias, batch norms count scale and shift (running
    statistics excluded) and the linear layer counts K * C + K.

    Parameters
    ----------
    spec : NetworkSpec
        The network description.

    Returns
    -------
    ParamReport
        Rows in execution order; totals equal the elements of the built ParamStore.
    """
    b = _RowBuilder()
    stages = {row.stage: row for row in spec.stage_rows()}

    stem_row = stages["stem"]
    stem = spec.stem
    conv_size = (spec.input_size + 2 * stem.pad - stem.kernel_size) // stem.stride + 1
    b.conv("stem.conv", "stem", stem.in_channels, stem.out_channels, stem.kernel_size, spec.input_size, conv_size)
    if stem.max_pool:
        b.bn_relu("stem", "stem", stem.out_channels, conv_size)
        b.add(
            "stem.max_pool",
            "max_pool",
            "stem",
            stem.out_channels,
            conv_size,
            stem.out_channels,
            stem_row.out_size,
            0,
            stem.out_channels * stem_row.out_size**2 * 9,
        )

    for i, block in enumerate(spec.blocks, start=1):
        row = stages[f"block{i}"]
        stage, size = f"block{i}", row.in_size
        k1, k2 = block.config.k1, block.config.k2
        for layer in range(block.layers):
            width = row.in_channels + layer * k2
            name = f"block{i}.layer{layer + 1}"
            if k1 > 0:
                b.bottleneck(f"{name}.inner", stage, width, k1, block.multiplier, size)
                b.add(f"{name}.add", "add", stage, width, size, width, size, 0, k1 * size * size)
            if k2 > 0:
                b.bottleneck(f"{name}.outer", stage, width, k2, block.multiplier, size)
                b.add(f"{name}.concat", "concat", stage, width, size, width + k2, size)
        if f"transition{i}" in stages:
            t = stages[f"transition{i}"]
            stage = f"transition{i}"
            b.bn_relu(stage, stage, t.in_channels, t.in_size)
            b.conv(f"{stage}.conv", stage, t.in_channels, t.out_channels, 1, t.in_size, t.in_size)
            b.add(
                f"{stage}.avg_pool",
                "avg_pool",
                stage,
                t.out_channels,
                t.in_size,
                t.out_channels,
                t.out_size,
                0,
                t.out_channels * t.in_size**2,
            )

    head = stages["classifier"]
    c, k = head.in_channels, head.out_channels
    b.bn_relu("classifier", "classifier", c, head.in_size)
    b.add("classifier.pool", "global_avg_pool", "classifier", c, head.in_size, c, 1, 0, c * head.in_size**2)
    b.add("classifier.linear", "linear", "classifier", c, 1, k, 1, k * c + k, 2 * k * c)

    report = ParamReport(
        name=spec.name, depth=spec.depth_label(), config=_config_echo(spec), rows=b.rows
    )
    logger.debug(f"{spec.name}: {report.total_params} parameters")
    return report


def count_flops(spec: NetworkSpec, input_size: Optional[int] = None) -> ParamReport:
    """
    The same report evaluated at another input resolution.

    Raises
    ------
    ValueError
        If the input size is not positive.
    """
    if input_size is not None:
        if input_size < 1:
            raise ValueError(f"Input size must be positive, got {input_size}.")
        spec = spec.model_copy(update={"input_size": input_size})
    return count_params(spec)


def depth_label(spec: NetworkSpec) -> int:
    """L = 2 * sum(layers per block) + 1 + transitions + 1."""
    return spec.depth_label()


def compare_to_reference(
    report: Union[ParamReport, float],
    reference_millions: float,
    tolerance: float = 0.10,
    name: Optional[str] = None,
) -> ReferenceComparison:
    """
    Compare a parameter total with a published size in millions.

    Parameters
    ----------
    report : Union[ParamReport, float]
        A report, or a total already expressed in millions.
    reference_millions : float
        The published size.
    tolerance : float
        Maximum relative error for a pass.

    Raises
    ------
    ValueError
        If the tolerance or the reference is not positive.
    """
    if tolerance <= 0:
        raise ValueError(f"Tolerance must be positive, got {tolerance}.")
    if reference_millions <= 0:
        raise ValueError(f"Reference size must be positive, got {reference_millions}.")
    if isinstance(report, ParamReport):
        total, name = report.total_millions, name or report.name
    else:
        total = float(report)
    rel_error = abs(total - reference_millions) / reference_millions
    return ReferenceComparison(
        name=name or "network",
        total_millions=total,
        reference_millions=reference_millions,
        rel_error=rel_error,
        tolerance=tolerance,
        passed=rel_error <= tolerance,
    )
