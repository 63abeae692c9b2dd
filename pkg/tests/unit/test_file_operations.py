"""
Unit tests for the file operations module.
"""

import json
import math

import numpy as np

from monodrift import file_operations


def test_format_float():
    """Test CSV cells carry full double precision."""
    assert file_operations.format_float(0.1) == "0.10000000000000001"
    assert file_operations.format_float(np.float64(1.0) / 3.0) == "0.33333333333333331"
    assert file_operations.format_float(np.int64(3)) == "3"
    assert file_operations.format_float(True) == "true"
    assert file_operations.format_float(None) == ""
    assert float(file_operations.format_float(math.pi)) == math.pi


def test_dumps_is_canonical():
    """Test sorted keys, strict JSON and a trailing newline."""
    text = file_operations.dumps({"b": np.array([1.0, np.nan]), "a": np.int32(2)})
    assert text.endswith("\n")
    data = json.loads(text)
    assert list(data) == ["a", "b"]
    assert data["b"] == [1.0, None]


def test_config_hash_ignores_key_order():
    """Test the hash depends on content only."""
    a = file_operations.config_hash({"x": 1, "y": [1.5, 2.0]})
    b = file_operations.config_hash({"y": [1.5, 2.0], "x": 1})
    assert a == b
    assert a != file_operations.config_hash({"x": 2, "y": [1.5, 2.0]})


def test_write_csv(tmp_path):
    """Test the table layout."""
    path = file_operations.write_csv(
        str(tmp_path / "out" / "t.csv"), ["eps", "p"], [[0.1, 0.5], [0.2, None]]
    )
    with open(path, encoding="utf-8") as f:
        assert f.read() == "eps,p\n0.10000000000000001,0.5\n0.20000000000000001,\n"


def test_run_writer_manifest(tmp_path):
    """Test the manifest lists files, the config and its hash."""
    writer = file_operations.RunWriter(str(tmp_path), plots=False)
    writer.csv("a.csv", ["x"], [[1.0]])
    writer.json("a.json", {"value": 1.0})
    assert writer.plot("a.svg", [0.0, 1.0], {"y": [1.0, 2.0]}, "t", "y") is None
    config = {"model": "linear", "seed": 3}
    path = writer.finish("check", config, 3)
    with open(path, encoding="utf-8") as f:
        manifest = json.load(f)
    assert manifest["files"] == ["a.csv", "a.json"]
    assert manifest["config_hash"] == file_operations.config_hash(config)
    assert manifest["command"] == "check"
    assert "numpy" in manifest["versions"]


def test_svg_is_deterministic(tmp_path):
    """Test two renders of the same data are byte-identical."""
    args = ([0.0, 1.0, 2.0], {"gap": [1.0, 0.1, 0.01]}, "n", "gap")
    first = file_operations.write_line_plot(str(tmp_path / "a.svg"), *args, logy=True)
    second = file_operations.write_line_plot(str(tmp_path / "b.svg"), *args, logy=True)
    with open(first, "rb") as fa, open(second, "rb") as fb:
        assert fa.read() == fb.read()
