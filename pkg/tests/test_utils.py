import json

import numpy as np
import pandas as pd
import pytest

from mixlink_toolbox.utils import (
    check_extension,
    make_rng,
    relative_error,
    render_frame,
    spawn_rngs,
    write_frame,
)


@pytest.fixture
def frame():
    return pd.DataFrame({"stage": ["stem", "block1"], "params": [648, 351360]})


def test_make_rng_is_deterministic():
    np.testing.assert_array_equal(make_rng(3).random(4), make_rng(3).random(4))


def test_spawned_streams_differ():
    a, b = spawn_rngs(0, 2)
    assert not np.array_equal(a.random(4), b.random(4))
    np.testing.assert_array_equal(spawn_rngs(0, 2)[1].random(4), spawn_rngs(0, 2)[1].random(4))


@pytest.mark.parametrize(
    "analytic, numeric, expected",
    [
        ([0.0, 0.0], [0.0, 0.0], 0.0),
        ([1.0, 0.0], [1.0, 0.0], 0.0),
        ([3.0, 4.0], [0.0, 0.0], 1.0),
        ([2.0], [1.0], 0.5),
    ],
)
def test_relative_error(analytic, numeric, expected):
    assert relative_error(np.array(analytic), np.array(numeric)) == pytest.approx(expected)


def test_check_extension():
    check_extension("report.csv", ".csv")
    with pytest.raises(ValueError):
        check_extension("report.json", ".csv")


def test_render_json(frame):
    payload = json.loads(render_frame(frame, "json", metadata={"seed": 0}))
    assert payload["meta"] == {"seed": 0}
    assert payload["rows"][1] == {"stage": "block1", "params": 351360}


def test_render_csv(frame):
    assert render_frame(frame, "csv", metadata={"seed": 0}) == "stage,params\nstem,648\nblock1,351360\n"


def test_render_table_header(frame):
    text = render_frame(frame, "table", metadata={"network": "mixnet-100", "seed": 0})
    lines = text.splitlines()
    assert lines[:2] == ["# network: mixnet-100", "# seed: 0"]
    assert lines[2].split() == ["stage", "params"]


def test_render_unknown_format(frame):
    with pytest.raises(ValueError):
        render_frame(frame, "xlsx")


def test_write_frame(tmp_path, frame):
    path = write_frame(frame, tmp_path / "out" / "report.csv", file_format="csv")
    assert path.read_text() == render_frame(frame, "csv")
    with pytest.raises(FileExistsError):
        write_frame(frame, path, overwrite=False)


def test_write_frame_twice_is_byte_identical(tmp_path, frame):
    path = tmp_path / "report.json"
    first = write_frame(frame, path, file_format="json", metadata={"seed": 1}).read_bytes()
    second = write_frame(frame, path, file_format="json", metadata={"seed": 1}).read_bytes()
    assert first == second
