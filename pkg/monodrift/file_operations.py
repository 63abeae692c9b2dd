"""
File operations module for writing run outputs.

This module writes the CSV tables, JSON reports, optional SVG line plots and the
run manifest into an output directory. All writers are deterministic: floats are
printed with 17 significant digits, JSON keys are sorted and SVG output carries
no timestamp, so rerunning a config reproduces every file byte for byte.
"""

import csv
import hashlib
import json
import logging
import math
import os
import platform
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
SVG_HASH_SALT = "monodrift"


def format_float(value: Any) -> str:
    """Full double precision text for one CSV cell."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    if value is None:
        return ""
    return str(value)


def to_jsonable(obj: Any) -> Any:
    """Convert numpy values and containers to plain JSON types.

    Non-finite floats become ``None`` so the output stays strict JSON.
    """
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return obj


def dumps(data: Any) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return (
        json.dumps(to_jsonable(data), sort_keys=True, indent=2, ensure_ascii=False,
                   allow_nan=False)
        + "\n"
    )


def config_hash(config: Dict[str, Any]) -> str:
    """sha256 of the canonical JSON form of a resolved config."""
    return hashlib.sha256(dumps(config).encode("utf-8")).hexdigest()


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """Write a comma-separated table with a header row.

    Args:
        path: Target file
        header: Column names
        rows: Row sequences, one value per column

    Returns:
        The path written
    """
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) for v in row])
    return path


def write_json(path: str, data: Any) -> str:
    """Write ``data`` as canonical JSON."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps(data))
    return path


def write_line_plot(
    path: str,
    x: Sequence[float],
    series: Dict[str, Sequence[float]],
    xlabel: str,
    ylabel: str,
    title: str = "",
    logy: bool = False,
) -> str:
    """Write a self-contained SVG line plot without timestamps."""
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib.figure import Figure

    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
        fig = Figure(figsize=(6.0, 4.0))
        ax = fig.add_subplot(1, 1, 1)
        for label in sorted(series):
            ax.plot(x, series[label], marker="o", markersize=3, label=label)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend()
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def package_versions() -> Dict[str, str]:
    """Versions recorded in the manifest."""
    import pydantic
    import scipy

    from monodrift import __version__

    return {
        "monodrift": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pydantic": pydantic.VERSION,
        "python": platform.python_version(),
    }


class RunWriter:
    """Collects the files of one run in ``out_dir`` and writes the manifest.

    Args:
        out_dir: Output directory (created on first write)
        plots: Whether :meth:`plot` writes anything
    """

    def __init__(self, out_dir: str, plots: bool = False):
        self.out_dir = out_dir
        self.plots = plots
        self.files: List[str] = []

    def _path(self, name: str) -> str:
        self.files.append(name)
        return os.path.join(self.out_dir, name)

    def csv(
        self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]
    ) -> str:
        return write_csv(self._path(name), header, rows)

    def json(self, name: str, data: Any) -> str:
        return write_json(self._path(name), data)

    def plot(self, name: str, *args: Any, **kwargs: Any) -> Optional[str]:
        if not self.plots:
            return None
        return write_line_plot(self._path(name), *args, **kwargs)

    def finish(self, command: str, config: Dict[str, Any], seed: int) -> str:
        """Write ``manifest.json`` with the resolved config and its hash."""
        manifest = {
            "command": command,
            "config": config,
            "config_hash": config_hash(config),
            "seed": seed,
            "versions": package_versions(),
            "files": sorted(self.files),
        }
        path = write_json(os.path.join(self.out_dir, MANIFEST_NAME), manifest)
        logger.info(
            "wrote %d files and %s to %s", len(self.files), MANIFEST_NAME, self.out_dir
        )
        return path
