"""Command line entry point: ``magspde simulate|convergence|validate-noise``."""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, build_problem, load_config, study_config
from .harness import default_threads, run_study
from .noise import TimeGrid, sample_noise_path
from .schemes import simulate_path
from .validation import noise_report

log = logging.getLogger("magspde")


def _header(cfg) -> list[str]:
    return [f"magspde {__version__}",
            "config: " + json.dumps(cfg.echo(), sort_keys=True, separators=(",", ":"))]


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _json(cfg, payload: dict) -> str:
    doc = {"version": __version__, "config": cfg.echo(), **payload}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def cmd_simulate(cfg, out: Path) -> int:
    problem = build_problem(cfg)
    d = cfg.discretization
    model = problem.discretize(d.n_interior)
    grid = TimeGrid(problem.T, d.M_ref)
    path = sample_noise_path(model.fbm, model.jump, grid, cfg.study.seed, 0)
    traj = simulate_path(model, d.scheme, grid, path)
    times = cfg.output.times
    if times is None:
        times = list(np.linspace(0.0, problem.T, 11))
    idx = sorted({int(round(t / grid.dt)) for t in times if 0.0 <= t <= problem.T})
    x = model.mesh.interior_nodes
    buf = io.StringIO(newline="")
    for line in _header(cfg):
        buf.write(f"# {line}\n")
    buf.write("t,x,value\n")
    for m in idx:
        t = float(traj.times[m])
        for xi, v in zip(x.tolist(), traj.states[m].tolist()):
            buf.write(f"{t!r},{xi!r},{v!r}\n")
    if "csv" in cfg.output.formats:
        _write(out / "trajectory.csv", buf.getvalue())
    if "json" in cfg.output.formats:
        norms = np.sqrt(np.sum(traj.states * (model.mass @ traj.states.T).T, axis=1))
        _write(out / "trajectory.json", _json(cfg, {
            "scheme": d.scheme,
            "steps": d.M_ref,
            "noise_checksum": path.checksum(),
            "times": [float(traj.times[m]) for m in idx],
            "l2_norms": [float(norms[m]) for m in idx],
        }))
    return 0


def cmd_convergence(cfg, out: Path, threads: int) -> int:
    scfg = study_config(cfg, threads=threads)
    table = run_study(scfg)
    if "csv" in cfg.output.formats:
        _write(out / "error_table.csv", table.to_csv(_header(cfg)))
    summary = table.summary()
    if "json" in cfg.output.formats:
        _write(out / "summary.json", _json(cfg, summary))
    log.info("slope %.4f +- %.4f (band %s, floor-limited %s)", table.fitted_slope,
             table.slope_stderr, table.band, table.floor_limited)
    return 0 if table.passed else 1


def cmd_validate_noise(cfg, out: Path) -> int:
    report = noise_report(cfg)
    _write(out / "noise_report.json", _json(cfg, report))
    for c in report["checks"]:
        log.info("%-32s %s", c["name"], "pass" if c["passed"] else "FAIL")
    return 0 if report["passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magspde", description=__doc__)
    parser.add_argument("--version", action="version", version=f"magspde {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "convergence", "validate-noise"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML or JSON run configuration")
        p.add_argument("--out", default=None, help="output directory (overrides output.directory)")
        p.add_argument("--samples", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: $MAGSPDE_THREADS or 1)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.samples is not None:
            overrides["samples"] = args.samples
        if args.seed is not None:
            overrides["seed"] = args.seed
        if overrides:
            from .config import parse_config
            doc = cfg.echo()
            doc["study"].update(overrides)
            cfg = parse_config(doc)
    except (ConfigError, OSError) as exc:
        print(f"magspde: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out if args.out is not None else cfg.output.directory)
    threads = args.threads if args.threads is not None else default_threads()
    try:
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "convergence":
            return cmd_convergence(cfg, out, threads)
        return cmd_validate_noise(cfg, out)
    except OSError as exc:
        print(f"magspde: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
