"""Run artifacts: trajectory and coverage SVGs, final-map PGMs."""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path
from typing import Union
from xml.sax.saxutils import escape

import numpy as np
import yaml

from .config import from_document
from .mapping import BeliefGrid, export_belief_pgm
from .simengine import overlap_events
from .worldgen import export_world_pgm, generate_world

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b",
          "#e377c2", "#7f7f7f", "#bcbd22"]


class RenderError(RuntimeError):
    pass


def _load(run: Path):
    need = ["config.yaml", "metrics.json", "trace.jsonl"]
    missing = [n for n in need if not (run / n).is_file()]
    if missing:
        raise RenderError(f"{run}: missing {', '.join(missing)}")
    doc = yaml.safe_load((run / "config.yaml").read_text())
    return from_document(doc), json.loads((run / "metrics.json").read_text())


def trajectory_svg(cfg, metrics: dict, scale: float = 12.0) -> str:
    """Tree discs, one polyline per robot, and a cross at every overlap event."""
    world = generate_world(_world_spec(cfg, metrics["seed"]))
    res = world.resolution
    w, h = cfg.world.width * scale, cfg.world.height * scale

    def xy(r, c):
        return (c + 0.5) * res * scale, h - (r + 0.5) * res * scale

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" '
           f'viewBox="0 0 {w:.2f} {h:.2f}">',
           f'<rect width="{w:.2f}" height="{h:.2f}" fill="white" stroke="black"/>']
    for (x, y), rad in zip(world.tree_centers, world.tree_radii):
        out.append(f'<circle cx="{x * scale:.2f}" cy="{h - y * scale:.2f}" '
                   f'r="{rad * scale:.2f}" fill="#6b8e23"/>')
    traces = [[(t, (r, c)) for t, r, c in tr] for tr in metrics["cells"]]
    for i, tr in enumerate(traces):
        pts = " ".join("%.2f,%.2f" % xy(*cell) for _, cell in tr)
        color = COLORS[i % len(COLORS)]
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2" '
                   f'stroke-linejoin="round"><title>robot {i}</title></polyline>')
        sx, sy = xy(*tr[0][1])
        out.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="4" fill="{color}"/>')
    events = overlap_events(traces)
    for robot, (r, c), tick in events:
        x, y = xy(r, c)
        d = 0.35 * scale
        out.append(f'<path d="M{x - d:.2f},{y - d:.2f}L{x + d:.2f},{y + d:.2f}'
                   f'M{x - d:.2f},{y + d:.2f}L{x + d:.2f},{y - d:.2f}" stroke="black" '
                   f'stroke-width="1.5"><title>overlap robot {robot} tick {tick}</title></path>')
    label = escape(f"{cfg.policy_label} / {cfg.clustering} / n_r={cfg.n_r} / "
                   f"overlaps={len(events)}")
    out.append(f'<text x="6" y="16" font-family="sans-serif" font-size="13">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def coverage_svg(metrics: dict, threshold: float, width: float = 480,
                 height: float = 300) -> str:
    trace = metrics["coverage_trace"]
    pad = 40.0
    t_max = max(trace[-1][0], 1) if trace else 1

    def xy(t, f):
        return pad + (width - 2 * pad) * t / t_max, height - pad - (height - 2 * pad) * f

    pts = " ".join("%.2f,%.2f" % xy(t, f) for t, f in trace)
    _, ty = xy(0, threshold)
    x0, y0 = xy(0, 0)
    x1, y1 = xy(t_max, 1)
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<path d="M{x0:.2f},{y1:.2f}L{x0:.2f},{y0:.2f}L{x1:.2f},{y0:.2f}" fill="none" '
        f'stroke="black"/>',
        f'<line x1="{x0:.2f}" y1="{ty:.2f}" x2="{x1:.2f}" y2="{ty:.2f}" stroke="gray" '
        f'stroke-dasharray="4 3"/>',
        f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="2"/>',
        f'<text x="{x0:.2f}" y="{y0 + 28:.2f}" font-family="sans-serif" font-size="12">'
        f'tick (0 to {t_max})</text>',
        f'<text x="4" y="{y1 - 8:.2f}" font-family="sans-serif" font-size="12">'
        f'coverage (threshold {threshold:g})</text>',
        "</svg>",
    ]) + "\n"


def _world_spec(cfg, seed):
    return replace(cfg.world, seed=seed)


def render_run(run: Union[str, Path]) -> list[Path]:
    """Write ``trajectories.svg``, ``coverage.svg``, ``world.pgm`` and ``final_map.pgm``."""
    run = Path(run)
    cfg, metrics = _load(run)
    written = []
    p = run / "trajectories.svg"
    p.write_text(trajectory_svg(cfg, metrics))
    written.append(p)
    p = run / "coverage.svg"
    p.write_text(coverage_svg(metrics, cfg.coverage_threshold))
    written.append(p)
    p = run / "world.pgm"
    export_world_pgm(generate_world(_world_spec(cfg, metrics["seed"])), p)
    written.append(p)
    belief = run / "belief_final.npy"
    if belief.is_file():
        p = run / "final_map.pgm"
        export_belief_pgm(BeliefGrid(np.load(belief), cfg.world.resolution), p)
        written.append(p)
    return written


def render_all(out: Union[str, Path]) -> tuple[list[Path], dict[str, str]]:
    """Render every run under ``out/runs``; failures are collected per run."""
    done, failed = [], {}
    runs = Path(out) / "runs"
    for run in sorted(p for p in runs.iterdir() if p.is_dir()) if runs.is_dir() else []:
        try:
            done.extend(render_run(run))
        except (RenderError, OSError, ValueError) as exc:
            failed[run.name] = str(exc)
    return done, failed
