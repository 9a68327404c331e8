"""Export experiment results to CSV, JSON and YAML."""

import csv
import io
import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import numpy as np
import yaml

from .control import TaskResult
from .errors import ContractViolation, DatasetError
from .types import Demonstration

PathLike = Union[str, Path]

TRACE_COLUMNS = ["t", "Fx", "Fy", "Fz", "Fx_hat", "Fy_hat", "Fz_hat", "depth_cmd"]
DEMO_COLUMNS = ["t", "x", "y", "z"]


def _is_yaml(path: PathLike) -> bool:
    return Path(path).suffix.lower() in (".yaml", ".yml")


def _plain(value: Any) -> Any:
    """Convert numpy scalars/arrays and enums to JSON-safe Python values."""
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


class DataExporter:
    def __init__(self, precision: int = 10):
        self.precision = precision

    def _fmt(self, value: Any) -> str:
        if isinstance(value, (float, np.floating)):
            return format(float(value), f".{self.precision}g")
        return str(_plain(value))

    def _write_csv(self, path: PathLike, header: Sequence[str], rows: Sequence[Sequence[Any]]):
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([self._fmt(v) for v in row])
        Path(path).write_text(buffer.getvalue())

    def export_table(self, rows: List[Dict[str, Any]], output_file: PathLike):
        """Write result rows as CSV, or as a JSON/YAML list when the suffix asks for it."""
        suffix = Path(output_file).suffix.lower()
        if suffix == ".json":
            Path(output_file).write_text(json.dumps(_plain(rows), indent=2) + "\n")
        elif _is_yaml(output_file):
            Path(output_file).write_text(yaml.safe_dump(_plain(rows), sort_keys=False))
        else:
            header = list(rows[0].keys()) if rows else []
            self._write_csv(output_file, header, [[row[k] for k in header] for row in rows])

    def export_trace(self, result: TaskResult, output_file: PathLike):
        rows = [
            [p.t, *p.true_force, *p.estimated_force, p.depth_cmd] for p in result.trace
        ]
        self._write_csv(output_file, TRACE_COLUMNS, rows)

    def export_metrics(self, result: TaskResult, output_file: PathLike):
        """Metrics summary; YAML for .yaml/.yml, JSON otherwise."""
        metrics = _plain(result.metrics)
        if _is_yaml(output_file):
            Path(output_file).write_text(yaml.safe_dump(metrics, sort_keys=True))
        else:
            Path(output_file).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")

    def export_demonstration(self, demo: Demonstration, output_file: PathLike):
        rows = [[t, *p] for t, p in zip(demo.times, demo.points)]
        self._write_csv(output_file, DEMO_COLUMNS, rows)


def load_demonstration(path: PathLike) -> Demonstration:
    """Read a ``t,x,y,z`` CSV written by ``export_demonstration``."""
    try:
        text = Path(path).read_text()
    except FileNotFoundError as exc:
        raise DatasetError(f"demonstration not found: {path}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != DEMO_COLUMNS:
        raise ContractViolation(f"{path}: expected columns {','.join(DEMO_COLUMNS)}")
    try:
        values = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
    except ValueError as exc:
        raise ContractViolation(f"{path}: {exc}") from exc
    if values.shape[0] == 0:
        raise ContractViolation(f"{path}: demonstration is empty")
    return Demonstration(values[:, 0], values[:, 1:4])
