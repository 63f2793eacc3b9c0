"""Command-line entry point.

Subcommands::

    flashcollapse run <config.toml>      ensemble of trajectories -> flashes CSV + summary JSON
    flashcollapse verify <suite>         completeness | bayes | timesym | foliation |
                                         sprinkle | energy | all
    flashcollapse figure <spec.toml>     three-panel pointillist CSV
    flashcollapse sprinkle --sites L --steps T --mu MU

Exit codes: 0 success, 1 validation failure, 2 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .config import RunConfig
from .engine import run_ensemble
from .errors import CollapseError, ConfigError
from .figure import FigureSpec, emit_figure_data
from .spacetime import LatticeRegion, sprinkle
from .verify import DEFAULT_SEED, SUITES, execute_verify

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_flashes_csv(trajectories, fh):
    fh.write("trajectory_id,time,label,position,z\n")
    for i, traj in enumerate(trajectories):
        for f in traj.flashes:
            fh.write(f"{i},{_fmt(f.time)},{_fmt(f.label)},{_fmt(f.position)},{_fmt(f.z)}\n")


def execute_run(config: RunConfig, out_dir: Path, threads: int | None = None) -> dict:
    """Run the configured ensemble, write the flash CSV and the JSON summary."""
    started = time.perf_counter()
    model, initial, schedule = config.build()
    n = int(config.ensemble["n_trajectories"])
    threads = threads or config.ensemble.get("threads") or os.cpu_count() or 1
    trajs = run_ensemble(model, initial, schedule, n, config.seed, threads=threads)
    out_dir.mkdir(parents=True, exist_ok=True)
    flashes_path = out_dir / config.output["flashes"]
    with open(flashes_path, "w", encoding="utf-8", newline="\n") as fh:
        write_flashes_csv(trajs, fh)
    counts = [len(t.flashes) for t in trajs]
    e0 = model.energy(initial)
    e1 = [model.energy(t.final) for t in trajs]
    summary = {
        "model": model.name,
        "n_trajectories": n,
        "total_flashes": int(sum(counts)),
        "mean_flashes_per_trajectory": float(np.mean(counts)) if counts else 0.0,
        "mean_energy_before": float(e0),
        "mean_energy_after": float(np.mean(e1)) if e1 else float(e0),
        "rescales": int(sum(len(t.rescale_log) for t in trajs)),
        "notes": sorted({note for t in trajs for note in t.notes}),
        "seed": config.seed,
        "config": config.as_dict(),
        "flashes_csv": str(flashes_path),
        "wall_time_s": round(time.perf_counter() - started, 4),
    }
    with open(out_dir / config.output["summary"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary


def _error(kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return EXIT_INVALID


def _load_toml(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error in {path}: {exc}") from exc


def cmd_run(args) -> int:
    try:
        raw = _load_toml(args.config)
        if args.seed is not None:
            raw["seed"] = args.seed
        cfg = RunConfig.from_dict(raw)
    except ConfigError as exc:
        return _error("config", str(exc))
    try:
        summary = execute_run(cfg, Path(args.out_dir), args.threads)
    except CollapseError as exc:
        return _error(type(exc).__name__, str(exc))
    print(json.dumps({k: summary[k] for k in ("model", "n_trajectories", "total_flashes",
                                              "mean_energy_before", "mean_energy_after",
                                              "seed", "flashes_csv")}))
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.suite != "all" and args.suite not in SUITES:
        return _error("suite", f"unknown suite {args.suite!r}; choose from "
                               f"{sorted(SUITES) + ['all']}")
    seed = DEFAULT_SEED if args.seed is None else args.seed
    report = execute_verify(args.suite, seed=seed, threads=args.threads or 1)
    report["seed"] = seed
    text = json.dumps(report, indent=2)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"verify_{args.suite}.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK if report["passed"] else EXIT_FAILED


def cmd_figure(args) -> int:
    try:
        raw = _load_toml(args.spec)
        raw = raw.get("figure", raw)
        if args.seed is not None:
            raw["seed"] = args.seed
        spec = FigureSpec.from_dict(raw)
    except (ConfigError, TypeError) as exc:
        return _error("config", str(exc))
    data = emit_figure_data(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "figure.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        data.to_csv(fh)
    print(json.dumps({"figure_csv": str(path), "dense": len(data.dense),
                      "points": len(data.points), "seed": spec.seed}))
    return EXIT_OK


def cmd_sprinkle(args) -> int:
    try:
        region = LatticeRegion(args.sites, args.steps, args.spacing, args.dt)
        if args.mu < 0:
            raise ConfigError("mu must be non-negative")
    except (CollapseError, ValueError) as exc:
        return _error("config", str(exc))
    seed = DEFAULT_SEED if args.seed is None else args.seed
    s = sprinkle(region, args.mu, np.random.default_rng(seed))
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sprinkling.csv", "w", encoding="utf-8", newline="\n") as fh:
            s.to_csv(fh)
    else:
        s.to_csv(sys.stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: machine parallelism); never changes results")
    common.add_argument("--out-dir", default=None, help="directory for output files")

    p = argparse.ArgumentParser(prog="flashcollapse", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run a configured ensemble")
    r.add_argument("config")
    r.set_defaults(func=cmd_run, default_out=".")

    v = sub.add_parser("verify", parents=[common], help="run a verification suite")
    v.add_argument("suite")
    v.set_defaults(func=cmd_verify, default_out=None)

    f = sub.add_parser("figure", parents=[common], help="emit pointillist figure data")
    f.add_argument("spec")
    f.set_defaults(func=cmd_figure, default_out=".")

    s = sub.add_parser("sprinkle", parents=[common], help="sprinkle events into a lattice region")
    s.add_argument("--sites", type=int, required=True)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--spacing", type=float, default=1.0)
    s.add_argument("--dt", type=float, default=1.0)
    s.add_argument("--mu", type=float, required=True)
    s.set_defaults(func=cmd_sprinkle, default_out=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.out_dir is None:
        args.out_dir = args.default_out
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
