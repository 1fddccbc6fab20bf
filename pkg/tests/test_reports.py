"""Tests for reports module."""

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from hamfin.evolution import EvolutionConfig
from hamfin.reports import to_jsonable, write_csv, write_json


def test_to_jsonable_converts_numpy_and_models():
    """Test NumPy scalars, arrays, paths and pydantic models."""
    data = {
        "n": np.int64(3),
        "x": np.float32(0.5),
        "flag": np.bool_(True),
        "values": np.array([1.0, 2.0]),
        "path": Path("out/price.csv"),
        "evolution": EvolutionConfig(T=1.0),
        1.5: "key",
    }

    result = to_jsonable(data)

    assert result["n"] == 3 and type(result["n"]) is int
    assert result["flag"] is True
    assert result["values"] == [1.0, 2.0]
    assert result["path"] == "out/price.csv"
    assert result["evolution"]["scheme"] == "crank-nicolson"
    assert result["1.5"] == "key"


def test_write_json_maps_non_finite_to_null(tmp_path):
    """Test that NaN and infinity are written as null."""
    path = write_json(tmp_path / "report.json", {"a": float("nan"), "b": [np.inf, 1.0]})
    text = path.read_text(encoding="utf-8")

    assert json.loads(text) == {"a": None, "b": [None, 1.0]}
    assert text.endswith("}\n")
    assert '  "a"' in text


def test_write_json_creates_parent_and_leaves_no_temp(tmp_path):
    """Test the atomic write into a fresh directory."""
    out = tmp_path / "nested" / "dir"
    write_json(out / "vacuum.json", {"ok": True})

    assert sorted(p.name for p in out.iterdir()) == ["vacuum.json"]


def test_failed_write_keeps_previous_file(tmp_path):
    """Test that an unserializable payload does not clobber the target."""
    path = tmp_path / "report.json"
    write_json(path, {"version": 1})

    with pytest.raises(TypeError):
        write_json(path, {"bad": object()})

    assert json.loads(path.read_text()) == {"version": 1}
    assert sorted(p.name for p in tmp_path.iterdir()) == ["report.json"]


def test_write_csv_header_without_index(tmp_path):
    """Test the CSV layout."""
    frame = pd.DataFrame({"S": [90.0, 100.0], "price": [3.5, 10.25]})
    path = write_csv(tmp_path / "price.csv", frame)

    assert path.read_text(encoding="utf-8") == "S,price\n90.0,3.5\n100.0,10.25\n"
