"""Batch execution over (cell x seed), per-run artifacts and the aggregate table."""

from __future__ import annotations

import csv
import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import yaml

from .config import ScenarioConfig, to_document
from .simengine import RunMetrics, Simulation

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RUN_COLUMNS = ["schema_version", "config_hash", "seed", "density", "n_r", "comm_range",
               "policy", "clustering", "ticks", "coverage", "total_path_m", "overlaps",
               "termination", "prioritize_calls", "max_active_components", "error"]
# wall-clock columns live apart so the run rows stay byte-identical across reruns
TIMING_COLUMNS = ["config_hash", "seed", "mean_prioritize_latency_s", "prioritize_calls"]
CELL_KEYS = ["density", "n_r", "comm_range", "policy", "clustering"]


@dataclass
class RunResult:
    cell: int
    seed: int
    row: dict
    timing: dict
    metrics: Optional[RunMetrics] = None


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def run_dir(out: Union[str, Path], cfg: ScenarioConfig, seed: int) -> Path:
    return Path(out) / "runs" / f"{cfg.config_hash()}_s{seed}"


def _base_row(cfg: ScenarioConfig, seed: int) -> dict:
    return {"schema_version": SCHEMA_VERSION, "config_hash": cfg.config_hash(), "seed": seed,
            "density": cfg.density, "n_r": cfg.n_r,
            "comm_range": "inf" if math.isinf(cfg.comm_range) else f"{cfg.comm_range:g}",
            "policy": cfg.policy_label, "clustering": cfg.clustering}


def write_run_artifacts(sim: Simulation, path: Path) -> None:
    """Everything ``render`` needs: config, trace, metrics and the final team map."""
    path.mkdir(parents=True, exist_ok=True)
    doc = to_document(sim.config)
    doc["seeds"] = [sim.seed]
    (path / "config.yaml").write_text(yaml.safe_dump(doc, sort_keys=True))
    sim.write_trace(path / "trace.jsonl")
    m = sim.metrics
    record = {
        "seed": sim.seed, "ticks": m.ticks, "termination": m.termination,
        "coverage_trace": m.coverage_trace, "path_lengths": m.path_lengths,
        "overlaps": m.overlaps, "newly_known": m.newly_known,
        "cells": [[[t, int(c[0]), int(c[1])] for t, c in tr] for tr in sim.cell_traces],
    }
    (path / "metrics.json").write_text(json.dumps(record, sort_keys=True))
    np.save(path / "belief_final.npy", sim.team_belief().cells)


def execute(cfg: ScenarioConfig, seed: int, out: Optional[Union[str, Path]] = None,
            cell: int = 0, keep_metrics: bool = False) -> RunResult:
    row = _base_row(cfg, seed)
    timing = {"config_hash": row["config_hash"], "seed": seed}
    try:
        sim = Simulation(cfg, seed, record_trace=out is not None)
        m = sim.run()
        if out is not None:
            write_run_artifacts(sim, run_dir(out, cfg, seed))
    except Exception as exc:  # recorded per row, the batch keeps going
        log.error("run %s seed %d failed: %s", row["config_hash"], seed, exc)
        row.update(ticks="", coverage="", total_path_m="", overlaps="", termination="error",
                   prioritize_calls="", max_active_components="",
                   error=f"{type(exc).__name__}: {exc}".replace("\n", " "))
        timing.update(mean_prioritize_latency_s="", prioritize_calls="")
        log.debug("%s", traceback.format_exc())
        return RunResult(cell, seed, row, timing)
    row.update(ticks=m.ticks, coverage=_fmt(m.coverage), total_path_m=_fmt(m.total_path),
               overlaps=m.overlaps, termination=m.termination,
               prioritize_calls=m.prioritize_calls,
               max_active_components=m.max_active_components, error="")
    timing.update(mean_prioritize_latency_s=f"{m.mean_latency:.9f}",
                  prioritize_calls=m.prioritize_calls)
    return RunResult(cell, seed, row, timing, m if keep_metrics else None)


def _execute_job(job):
    return execute(*job)


def run_batch(cells: Sequence[ScenarioConfig], out: Optional[Union[str, Path]] = None,
              workers: int = 1, keep_metrics: bool = False) -> list[RunResult]:
    """Run every (cell, seed) pair; results sorted by cell then seed.

    With ``out`` set, writes ``runs.csv``, ``timings.csv``, ``aggregate.md`` and
    per-run artifacts under ``out/runs``. Paired cells share their seed lists.
    """
    jobs = [(cfg, seed, out, i, keep_metrics) for i, cfg in enumerate(cells) for seed in cfg.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_execute_job, jobs))
    else:
        results = [_execute_job(j) for j in jobs]
    results.sort(key=lambda r: (r.cell, r.seed))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "runs.csv", RUN_COLUMNS, [r.row for r in results])
        write_csv(out / "timings.csv", TIMING_COLUMNS, [r.timing for r in results])
        (out / "aggregate.md").write_text(aggregate_table(r.row for r in results))
    return results


def write_csv(path: Path, columns: list[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in columns})


def read_csv(path: Union[str, Path]) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _mean_std(values: list[float]) -> str:
    if not values:
        return "n/a"
    a = np.asarray(values, dtype=float)
    return f"{a.mean():.2f} ± {a.std(ddof=1) if a.size > 1 else 0.0:.2f}"


def aggregate(rows: Iterable[dict]) -> list[dict]:
    """Mean and sample std per cell over the successful runs, in first-seen cell order."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault(tuple(str(row[k]) for k in CELL_KEYS), []).append(row)
    out = []
    for key, members in groups.items():
        ok = [r for r in members if r["termination"] not in ("error", "")]
        entry = dict(zip(CELL_KEYS, key))
        entry["runs"] = len(members)
        entry["failed"] = len(members) - len(ok)
        entry["timeouts"] = sum(r["termination"] == "timeout" for r in ok)
        for col in ("ticks", "total_path_m", "overlaps", "coverage"):
            entry[col] = _mean_std([float(r[col]) for r in ok])
        out.append(entry)
    return out


def aggregate_table(rows: Iterable[dict]) -> str:
    """Markdown table of ``mean ± std`` per cell."""
    entries = aggregate(rows)
    cols = CELL_KEYS + ["runs", "failed", "timeouts", "ticks", "total_path_m", "overlaps",
                        "coverage"]
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for e in entries:
        lines.append("| " + " | ".join(str(e[c]) for c in cols) + " |")
    return "\n".join(lines) + "\n"
