import enum
import json

import numpy as np

from app.models.reports import CheckResult, VerificationReport
from app.utils.parallel import parallel_map
from app.utils.serialization import render, to_plain, write_csv, write_json


class Color(str, enum.Enum):
    RED = "red"


def test_to_plain_reduces_numpy_and_complex_values():
    plain = to_plain({"a": np.array([1.5, 2.0]), "z": 1 + 2j, "n": np.int64(3), "b": np.bool_(True), "c": Color.RED})
    assert plain == {"a": [1.5, 2.0], "z": [1.0, 2.0], "n": 3, "b": True, "c": "red"}


def test_render_uses_seventeen_digits_and_nulls_non_finite_values():
    text = render({"third": 1 / 3, "bad": float("nan"), "inf": np.inf})
    assert "0.33333333333333331" in text
    assert json.loads(text) == {"third": 1 / 3, "bad": None, "inf": None}


def test_render_is_deterministic():
    report = VerificationReport(seed=1, height_mode="mobius", checks=[
        CheckResult(name="a", description="d", claim="c", statistic=0.1, threshold=1.0, passed=True),
    ])
    assert render(report) == render(report)
    data = json.loads(render(report))
    assert data["passed"] is True
    assert data["checks"][0]["statistic"] == 0.1


def test_write_json_and_csv(tmp_path):
    path = write_json(tmp_path / "nested" / "out.json", {"values": [1.0, 2.5]})
    assert json.loads(path.read_text()) == {"values": [1.0, 2.5]}
    csv_path = write_csv(tmp_path / "out.csv", ["a", "b"], [[0.1, 2], [3.0, 4]])
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "a,b"
    assert lines[1] == "0.10000000000000001,2"
    assert len(lines) == 3


def test_parallel_map_preserves_order():
    assert parallel_map(lambda v: v * v, range(10), threads=4) == [v * v for v in range(10)]
    assert parallel_map(lambda v: v + 1, [1], threads=4) == [2]
