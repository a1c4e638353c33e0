"""Command line: ``fpexplore {run,sweep,render,report}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .batch import aggregate_table, read_csv, run_batch
from .config import ConfigError, parse_config, parse_sweep
from .render import render_all

log = logging.getLogger("fpexplore")


def _seeds(text: str) -> list[int]:
    """``3`` or ``0,2,5`` or ``0-9``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty seed list")
    return out


def _out_dir(args, cfg_out) -> Path:
    out = args.out or cfg_out
    if out is None:
        raise ConfigError(["--out: required (or set output_dir in the config)"])
    return Path(out)


def _summarize(results, out: Path) -> int:
    failed = [r for r in results if r.row["termination"] == "error"]
    print(f"{len(results)} runs, {len(failed)} failed -> {out / 'runs.csv'}")
    print(aggregate_table(r.row for r in results), end="")
    return 0


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.seed_override:
        cfg = cfg.with_seed_override(args.seed_override)
    out = _out_dir(args, cfg.output_dir)
    return _summarize(run_batch([cfg], out, workers=args.workers), out)


def cmd_sweep(args) -> int:
    sweep = parse_sweep(args.config)
    cells = sweep.cells()
    if args.seed_override:
        cells = [c.with_seed_override(args.seed_override) for c in cells]
    out = _out_dir(args, sweep.base.get("output_dir"))
    log.info("%d cells x %d seeds", len(cells), len(cells[0].seeds))
    return _summarize(run_batch(cells, out, workers=args.workers), out)


def cmd_render(args) -> int:
    done, failed = render_all(args.out)
    print(f"wrote {len(done)} files")
    for run, msg in failed.items():
        print(f"render failed for {run}: {msg}", file=sys.stderr)
    return 1 if failed and not done else 0


def cmd_report(args) -> int:
    path = Path(args.out) / "runs.csv"
    if not path.is_file():
        print(f"{path}: no such file", file=sys.stderr)
        return 2
    table = aggregate_table(read_csv(path))
    (Path(args.out) / "aggregate.md").write_text(table)
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpexplore",
                                description="Multi-robot frontier exploration simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)
    for name, fn, needs_config in (("run", cmd_run, True), ("sweep", cmd_sweep, True),
                                   ("render", cmd_render, False),
                                   ("report", cmd_report, False)):
        sp = sub.add_parser(name)
        sp.set_defaults(fn=fn)
        if needs_config:
            sp.add_argument("--config", required=True, help="scenario (run) or sweep file, YAML")
            sp.add_argument("--out", help="output directory")
            sp.add_argument("--workers", type=int, default=1)
            sp.add_argument("--seed-override", type=_seeds, metavar="SEEDS",
                            help="replace the configured seeds, e.g. 0-9 or 1,4,7")
        else:
            sp.add_argument("--out", required=True, help="directory written by run/sweep")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("--workers: must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
