"""Command-line front end.

``spatialchain run <config> --out <dir>`` runs one episode;
``spatialchain batch <config> --seeds 0,1,2 --out <dir>`` runs one episode
per seed (in parallel, capped by ``SPATIALCHAIN_THREADS``);
``spatialchain export <log> --what path_xy`` prints a table from a run log.

Exit codes: 0 task success, 2 task failure, 1 configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioConfig, load_config
from .controller import Controller
from .free_region import regions_to_text
from .world import run_episode

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAILURE = 2

EXPORTS = ("path_xy", "alphas", "solve_times")
THREADS_ENV = "SPATIALCHAIN_THREADS"


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def run_scenario(cfg: ScenarioConfig, out: Path) -> dict:
    """Run one episode and write ``metrics.json``, ``log.jsonl`` and ``regions.txt``."""
    model = cfg.build_robot()
    world = cfg.build_world()
    task = cfg.build_task(model)
    ctl_cfg = cfg.build_controller(model)
    controller = Controller(model, ctl_cfg)
    log: list = []
    metrics = run_episode(world, model, task, ctl_cfg, cfg.task.max_steps, log=log, controller=controller)
    record = metrics.as_dict()
    record["seed"] = cfg.world.seed
    _write_atomic(out / "log.jsonl", "".join(json.dumps(r) + "\n" for r in log))
    regions = [controller.last_regions[k] for k in sorted(controller.last_regions)]
    _write_atomic(out / "regions.txt", regions_to_text(regions) if regions else "")
    _write_atomic(out / "metrics.json", json.dumps(record, indent=2) + "\n")
    return record


def cmd_run(config_path, out_dir) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    record = run_scenario(cfg, Path(out_dir))
    print(json.dumps(record))
    return EXIT_OK if record["success"] else EXIT_FAILURE


def _batch_worker(args):
    text, seed, out = args
    from .config import parse_config

    cfg = parse_config(text).with_seed(seed)
    return run_scenario(cfg, Path(out) / f"seed_{seed}")


def summarize(records: list) -> dict:
    """Aggregate episode records; timing lives under ``timing``."""
    n = len(records)
    wins = [r for r in records if r["success"]]
    summary = {
        "episodes": n,
        "seeds": [r["seed"] for r in records],
        "success_rate": len(wins) / n if n else 0.0,
        "path_length": float(np.mean([r["path_length"] for r in wins])) if wins else None,
        "collisions": int(sum(r["collision_count"] for r in records)),
        "collisions_in_successes": int(sum(r["collision_count"] for r in wins)),
        "certified_collisions": int(sum(r["certified_collisions"] for r in records)),
    }
    steps = sum(r["steps"] for r in records)
    summary["timing"] = {
        "mean_solve_ms": float(sum(r["mean_solve_ms"] * r["steps"] for r in records) / steps) if steps else 0.0,
        "max_solve_ms": float(max((r["max_solve_ms"] for r in records), default=0.0)),
    }
    return summary


def worker_count(n_jobs: int) -> int:
    raw = os.environ.get(THREADS_ENV)
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = max(1, int(raw))
        except ValueError:
            pass
    return max(1, min(cap, n_jobs))


def cmd_batch(config_path, seeds, out_dir) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not seeds:
        print("batch needs at least one seed", file=sys.stderr)
        return EXIT_CONFIG
    text = cfg.to_text()
    jobs = [(text, s, str(out_dir)) for s in seeds]
    workers = worker_count(len(jobs))
    if workers == 1:
        records = [_batch_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_batch_worker, jobs))
    summary = summarize(records)
    _write_atomic(Path(out_dir) / "summary.json", json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return EXIT_OK


def read_log(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def export_rows(records: list, what: str) -> list:
    if what not in EXPORTS:
        raise ValueError(f"unknown export {what!r}; choose from {', '.join(EXPORTS)}")
    if what == "path_xy":
        rows = [["tick", "x", "y"]]
        rows += [[r["tick"], r["poses"][2][0], r["poses"][2][1]] for r in records]
    elif what == "solve_times":
        rows = [["tick", "ms"]]
        rows += [[r["tick"], r["solve_ms"]] for r in records]
    else:
        n = len(records[0]["alphas"]) if records else 7
        rows = [["tick"] + [f"alpha_{k}" for k in range(3, 3 + n)]]
        rows += [[r["tick"]] + list(r["alphas"]) for r in records]
    return rows


def cmd_export(log_path, what, stream=None) -> int:
    stream = stream or sys.stdout
    try:
        rows = export_rows(read_log(log_path), what)
    except (OSError, ValueError) as exc:
        print(f"export error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        csv.writer(stream, lineterminator="\n").writerows(rows)
        stream.flush()
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the exit-time flush
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
    return EXIT_OK


def _seed_list(text: str) -> list:
    return [int(s) for s in text.split(",") if s.strip()]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="spatialchain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one episode")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p = sub.add_parser("batch", help="run one episode per seed")
    p.add_argument("config")
    p.add_argument("--seeds", required=True, type=_seed_list)
    p.add_argument("--out", required=True)
    p = sub.add_parser("export", help="print a table from a run log")
    p.add_argument("log")
    p.add_argument("--what", required=True)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command == "run":
        return cmd_run(args.config, args.out)
    if args.command == "batch":
        return cmd_batch(args.config, args.seeds, args.out)
    return cmd_export(args.log, args.what)


if __name__ == "__main__":
    sys.exit(main())
