import csv
import json

import numpy as np
import pytest
import yaml

from moe_sim.control import TaskResult, TracePoint
from moe_sim.errors import ContractViolation, DatasetError
from moe_sim.exporter import DataExporter, load_demonstration
from moe_sim.models import DemoStyle, FeedbackMode, TaskKind
from moe_sim.scene import synth_demonstration


def _result():
    trace = [
        TracePoint(0.0, np.array([0.0, 0.0, 0.0]), np.zeros(3), -0.005, "approach"),
        TracePoint(0.1, np.array([0.1, -0.2, 1.9]), np.array([0.0, 0.0, 2.05]), 0.0035, "hold", 0),
    ]
    metrics = {"task": "pat", "max_true_force_N": np.float64(1.9131), "contact_episodes": 1}
    return TaskResult(TaskKind.PAT, FeedbackMode.FORCE_FEEDBACK, trace, metrics)


def test_trace_columns(tmp_path):
    path = tmp_path / "trace.csv"
    DataExporter().export_trace(_result(), path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "Fx", "Fy", "Fz", "Fx_hat", "Fy_hat", "Fz_hat", "depth_cmd"]
    assert len(rows) == 3
    assert [float(v) for v in rows[2]] == pytest.approx([0.1, 0.1, -0.2, 1.9, 0.0, 0.0, 2.05, 0.0035])


def test_metrics_as_json_and_yaml(tmp_path):
    exporter = DataExporter()
    exporter.export_metrics(_result(), tmp_path / "m.json")
    exporter.export_metrics(_result(), tmp_path / "m.yaml")
    as_json = json.loads((tmp_path / "m.json").read_text())
    as_yaml = yaml.safe_load((tmp_path / "m.yaml").read_text())
    assert as_json == as_yaml
    assert as_json["max_true_force_N"] == pytest.approx(1.9131)
    assert list(as_json) == sorted(as_json)


def test_table_formats(tmp_path):
    rows = [
        {"end_effector": "rigid", "depth_mm": 2.0, "max_force_N": np.float64(1.6), "strand_count": 0},
        {"end_effector": "moe", "depth_mm": 2.0, "max_force_N": 0.4, "strand_count": np.int64(12)},
    ]
    exporter = DataExporter(precision=4)
    exporter.export_table(rows, tmp_path / "t.csv")
    exporter.export_table(rows, tmp_path / "t.json")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "end_effector,depth_mm,max_force_N,strand_count"
    assert lines[2] == "moe,2,0.4,12"
    assert json.loads((tmp_path / "t.json").read_text())[1]["strand_count"] == 12


def test_empty_table(tmp_path):
    DataExporter().export_table([], tmp_path / "empty.csv")
    assert (tmp_path / "empty.csv").read_text().strip() == ""


def test_demonstration_file(tmp_path, head):
    demo = synth_demonstration(head, DemoStyle.ZIGZAG, 3.0, seed=8)
    path = tmp_path / "demo.csv"
    DataExporter().export_demonstration(demo, path)
    loaded = load_demonstration(path)
    assert len(loaded) == len(demo)
    np.testing.assert_allclose(loaded.points, demo.points, rtol=1e-9)
    np.testing.assert_allclose(loaded.times, demo.times, rtol=1e-9)


def test_demonstration_errors(tmp_path):
    with pytest.raises(DatasetError):
        load_demonstration(tmp_path / "none.csv")
    wrong = tmp_path / "wrong.csv"
    wrong.write_text("time,x,y,z\n0,0,0,0.1\n")
    with pytest.raises(ContractViolation):
        load_demonstration(wrong)
    empty = tmp_path / "empty.csv"
    empty.write_text("t,x,y,z\n")
    with pytest.raises(ContractViolation):
        load_demonstration(empty)
    backwards = tmp_path / "backwards.csv"
    backwards.write_text("t,x,y,z\n1,0,0,0.1\n0,0,0,0.1\n")
    with pytest.raises(ContractViolation):
        load_demonstration(backwards)
