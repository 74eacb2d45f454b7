import io
import json

import pytest

from spatialchain.cli import cmd_batch, cmd_export, cmd_run, export_rows, main, summarize, worker_count
from spatialchain.config import ConfigError, ScenarioConfig, WorldSection, parse_config

TRIVIAL = """
[world]
kind = custom
[task]
start = 1 1
goal = 1 1
max_steps = 5
"""

WALL = """
[world]
kind = custom
boxes = 3.0 5.0 0.5  0.1 5.0 0.5
[task]
start = 1 5
goal = 6 5
max_steps = 60
"""

EMPTY_SHORT = """
[world]
kind = custom
[task]
start = 1 5
goal = 2 5
max_steps = 60
"""


def write(tmp_path, text, name="scenario.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_round_trip():
    cfg = parse_config(WALL)
    again = parse_config(cfg.to_text())
    assert again == cfg
    full = ScenarioConfig(world=WorldSection(kind="forest", seed=3, density=0.7))
    assert parse_config(full.to_text()) == full


@pytest.mark.parametrize(
    "text, key",
    [
        ("[world]\nseed = 1\n", "world.kind"),
        ("[world]\nkind = forest\ncolour = red\n", "world.colour"),
        ("[world]\nkind = forest\n[extra]\na = 1\n", "extra"),
        ("[world]\nkind = moon\n", "world.kind"),
        ("[world]\nkind = forest\ndensity = lots\n", "world.density"),
        ("[world]\nkind = forest\n[task]\nstart = 1 2 3\n", "task.start"),
        ("[world]\nkind = forest\n[task]\ngoal_kind = ee\n", "task.ee_goal"),
        ("[world]\nkind = forest\n[controller]\ndt = 0\n", "controller.dt"),
    ],
)
def test_config_errors_name_key(text, key):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.key == key
    assert key in str(err.value)


def test_run_trivial(tmp_path, capsys):
    code = cmd_run(write(tmp_path, TRIVIAL), tmp_path / "out")
    assert code == 0
    metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert metrics["success"] is True and metrics["path_length"] == 0.0
    assert (tmp_path / "out" / "log.jsonl").exists()
    assert (tmp_path / "out" / "regions.txt").exists()


def test_run_missing_kind(tmp_path, capsys):
    code = cmd_run(write(tmp_path, "[world]\nseed = 2\n"), tmp_path / "out")
    assert code == 1
    assert "world.kind" in capsys.readouterr().err


def test_run_blocked_wall(tmp_path):
    code = cmd_run(write(tmp_path, WALL), tmp_path / "out")
    assert code == 2
    metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert metrics["collision_count"] == 0 and not metrics["success"]
    regions = (tmp_path / "out" / "regions.txt").read_text()
    assert regions.count("center") == 7


def test_batch_and_export(tmp_path, monkeypatch):
    monkeypatch.setenv("SPATIALCHAIN_THREADS", "1")
    cfg = write(tmp_path, EMPTY_SHORT)
    assert cmd_batch(cfg, [0, 1, 2], tmp_path / "a") == 0
    assert cmd_batch(cfg, [0, 1, 2], tmp_path / "b") == 0
    a = json.loads((tmp_path / "a" / "summary.json").read_text())
    b = json.loads((tmp_path / "b" / "summary.json").read_text())
    a.pop("timing"), b.pop("timing")
    assert a == b and a["success_rate"] == 1.0
    records = [json.loads((tmp_path / "a" / f"seed_{s}" / "metrics.json").read_text()) for s in (0, 1, 2)]
    again = summarize(records)
    again.pop("timing")
    assert again == a

    log = tmp_path / "a" / "seed_0" / "log.jsonl"
    buf = io.StringIO()
    assert cmd_export(log, "path_xy", buf) == 0
    lines = buf.getvalue().splitlines()
    n_ticks = len(log.read_text().splitlines())
    assert lines[0] == "tick,x,y" and len(lines) == n_ticks + 1
    buf = io.StringIO()
    cmd_export(log, "alphas", buf)
    assert len(buf.getvalue().splitlines()[0].split(",")) == 7 + 1
    buf = io.StringIO()
    cmd_export(log, "solve_times", buf)
    assert buf.getvalue().startswith("tick,ms")


def test_export_small_logs(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    buf = io.StringIO()
    assert cmd_export(empty, "path_xy", buf) == 0
    assert buf.getvalue() == "tick,x,y\n"
    rec = {"tick": 1, "poses": [[0] * 7] * 3, "alphas": [0.5] * 7, "solve_ms": 1.0}
    rows = export_rows([dict(rec, tick=i) for i in range(1, 4)], "path_xy")
    assert len(rows) == 4
    assert cmd_export(empty, "nonsense", io.StringIO()) == 1


def test_main_usage_errors():
    assert main(["export"]) == 1
    assert main(["bogus"]) == 1


def test_worker_count(monkeypatch):
    monkeypatch.setenv("SPATIALCHAIN_THREADS", "3")
    assert worker_count(10) == 3 and worker_count(2) == 2
    monkeypatch.setenv("SPATIALCHAIN_THREADS", "junk")
    assert worker_count(1) == 1
