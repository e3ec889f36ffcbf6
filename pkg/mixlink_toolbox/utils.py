import json
import logging
import os
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

_FORMATS = ["json", "csv", "table"]

logger = logging.getLogger(__name__)


def make_rng(seed: Union[int, np.random.SeedSequence]) -> np.random.Generator:
    """
    Create a seeded random generator.

    Parameters
    ----------
    seed : Union[int, np.random.SeedSequence]
        The seed or seed sequence.

    Returns
    -------
    np.random.Generator
        A PCG64 generator, deterministic for a given seed.
    """
    return np.random.default_rng(seed)


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """
    Create ``n`` independent generators derived from one seed.

    Streams are independent of each other, so consuming one (e.g. dropout masks)
    never shifts another (e.g. batch shuffling).
    """
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """
    Norm-wise relative error between two arrays.

    Parameters
    ----------
    analytic : np.ndarray
        Reference values, e.g. a gradient from backpropagation.
    numeric : np.ndarray
        Values to compare, e.g. a finite-difference gradient.

    Returns
    -------
    float
        ||analytic - numeric|| / max(||analytic||, ||numeric||), or 0.0 when both are zero.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_extension(out_path: Union[str, Path], ext: str) -> None:
    """
    Checks if the file extension of the given path matches the specified extension.

    Parameters:
    out_path (str or Path): The path to the file.
    ext (str): The expected file extension (including the dot, e.g., '.csv').

    Raises:
    ValueError: If the file extension of out_path does not match the specified ext.
    """
    out_path = Path(out_path)
    if out_path.suffix != ext:
        raise ValueError(
            f"File extension given: '{out_path.suffix}' does not match the file format specified: {ext}."
        )


def render_frame(
    df: pd.DataFrame, file_format: str = "table", metadata: Optional[dict] = None
) -> str:
    """
    Render a dataframe as json, csv or an aligned plain-text table.

    Parameters
    ----------
    df : pd.DataFrame
        The rows to render.
    file_format : str
        One of 'json', 'csv' or 'table'.
    metadata : dict, optional
        Extra key/value pairs (config echo, seed, totals). Written as a 'meta'
        object in json and as leading '# key: value' lines in the table format.

    Returns
    -------
    str
        The rendered text. Identical inputs always give identical text.

    Raises
    ------
    ValueError
        If the given file format is not implemented.
    """
    metadata = metadata or {}
    if file_format == "json":
        payload = {"meta": metadata, "rows": df.to_dict(orient="records")}
        return json.dumps(payload, indent=2, default=str) + "\n"
    elif file_format == "csv":
        return df.to_csv(index=False, lineterminator="\n")
    elif file_format == "table":
        header = "".join(f"# {key}: {value}\n" for key, value in metadata.items())
        return header + df.to_string(index=False) + "\n"
    else:
        raise ValueError(
            f"File format specified: {file_format} not in implemented formats: {(*_FORMATS,)}."
        )


def write_frame(
    df: pd.DataFrame,
    out_path: Union[str, Path],
    file_format: str = "csv",
    metadata: Optional[dict] = None,
    overwrite: bool = True,
) -> Path:
    """
    Write a dataframe to a file in one of the supported formats.

    Parameters
    ----------
    df : pd.DataFrame
        The rows to write.
    out_path : Union[str, Path]
        The destination file.
    file_format : str
        One of 'json', 'csv' or 'table'.
    metadata : dict, optional
        See ``render_frame``.
    overwrite : bool
        Whether to overwrite the file if it already exists.

    Returns
    -------
    Path
        The resolved output path.
    """
    out_path = Path(out_path).resolve()
    if os.path.exists(out_path):
        if not overwrite:
            raise FileExistsError(f"Output file '{out_path}' already exists.")
        logger.warning(f"Output file '{out_path}' already exists. Overwriting...")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    text = render_frame(df, file_format=file_format, metadata=metadata)
    with open(out_path, "w", newline="") as f:
        f.write(text)
    return out_path
