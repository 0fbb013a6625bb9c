"""Command-line entry point.

Subcommands: simulate | limit | compare | kernel | doeblin | rates |
recollisions.  Every command reads a `key = value` config file, writes CSV
outputs with fixed column orders plus a JSON manifest that pins everything
needed to reproduce the run bit-exactly (wall-clock fields aside).

Exit codes: 0 success, 2 configuration error, 3 numerical-contract failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .core import ConfigError, GibbsRejectionError, SystemConfig, config_from_file, make_stream
from .limit_process import (
    StateSpaceCapError,
    build_chain,
    gillespie_run,
    solve_distribution,
)
from .microsim import SimulationConsistencyError, run_replicas
from .stats import (
    InsufficientDataError,
    empirical_distribution,
    recollision_stats,
    swap_rate_estimate,
    tv_ci_halfwidth,
    tv_distance,
)
from .telegraph_kernel import KernelQuery, doeblin_scan, kernel_f, mixing_decay

SCHEMA_VERSION = "1"


class _OutputTracker:
    """Collects files written by a command so failures can clean them up."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: list[Path] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.files.append(p)
        return p

    def discard_all(self):
        for p in self.files:
            p.unlink(missing_ok=True)
            Path(str(p) + ".tmp").unlink(missing_ok=True)


def _atomic_write_text(path: Path, text: str):
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_csv(path: Path, header: list[str], rows):
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


def _write_manifest(
    tracker: _OutputTracker,
    command: str,
    config: SystemConfig,
    started: float,
    parameters: dict,
):
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "command": command,
        "config": dataclasses.asdict(config),
        "parameters": parameters,
        "outputs": [p.name for p in tracker.files],
        "started_utc": datetime.fromtimestamp(started, tz=timezone.utc).isoformat(),
        "finished_utc": datetime.now(tz=timezone.utc).isoformat(),
        "duration_s": round(time.time() - started, 3),
    }
    _atomic_write_text(tracker.path("manifest.json"), json.dumps(manifest, indent=2) + "\n")


def _load_config(args) -> tuple[SystemConfig, dict[str, str]]:
    config, extras = config_from_file(args.config, seed=args.seed, replicas=args.replicas)
    if config.lam <= 0.0:
        raise ConfigError("lambda", "must be > 0")
    return config, extras


def _parse_floats(key: str, raw: str) -> list[float]:
    try:
        vals = [float(tok) for tok in raw.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(key, f"cannot parse {raw!r} as a float list") from exc
    if not vals:
        raise ConfigError(key, "empty list")
    return vals


def _horizon(args, extras) -> float:
    if args.horizon is not None:
        return args.horizon
    return float(extras.get("horizon_macro", 1.0))


def _fmt(x) -> str:
    return repr(float(x))


def _write_paths_csv(tracker: _OutputTracker, name: str, paths):
    """Rows `replica,time,e_1..e_N`: the initial vector at time 0, then one
    row per jump, grouped by replica."""
    n = paths[0].values.shape[1]
    header = ["replica", "time"] + [f"e_{k}" for k in range(1, n + 1)]
    rows = []
    for rep, path in enumerate(paths):
        rows.append([rep, _fmt(0.0)] + [_fmt(v) for v in path.values[0]])
        for i, t in enumerate(path.times):
            rows.append([rep, _fmt(t)] + [_fmt(v) for v in path.values[i + 1]])
    _write_csv(tracker.path(name), header, rows)


def _write_collisions_csv(tracker: _OutputTracker, name: str, logs):
    header = ["replica", "clock", "time", "k", "e_before_k", "e_before_k1"]
    rows = []
    for rep, log in enumerate(logs):
        for i in range(log.n_collisions):
            rows.append(
                [
                    rep,
                    "micro",
                    _fmt(log.times[i]),
                    int(log.pairs[i]),
                    _fmt(log.e_before_left[i]),
                    _fmt(log.e_before_right[i]),
                ]
            )
    _write_csv(tracker.path(name), header, rows)


# --- commands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    config, extras = _load_config(args)
    if config.epsilon <= 0.0:
        raise ConfigError("epsilon", "must be > 0 for macro-clock simulation")
    horizon = _horizon(args, extras)
    started = time.time()
    tracker = _OutputTracker(Path(args.out))
    try:
        results = run_replicas(config, horizon, threads=args.threads, engine=args.engine)
        _write_paths_csv(tracker, "paths.csv", [r.path for r in results])
        _write_collisions_csv(tracker, "collisions.csv", [r.log for r in results])
        _write_manifest(
            tracker,
            "simulate",
            config,
            started,
            {
                "horizon_macro": horizon,
                "threads": args.threads,
                "engine": args.engine,
                "events": sum(r.n_events for r in results),
                "simultaneous_event_ties": sum(r.ties for r in results),
            },
        )
    except Exception:
        tracker.discard_all()
        raise
    return 0


def cmd_limit(args) -> int:
    config, extras = _load_config(args)
    times = _parse_floats("times", args.times or extras.get("times", "0.25, 0.5"))
    started = time.time()
    tracker = _OutputTracker(Path(args.out))
    try:
        chain = build_chain(config.energies)
        n = config.n_particles
        header = ["state_index", *[f"e_{k}" for k in range(1, n + 1)], "probability"]
        for t in times:
            dist = solve_distribution(chain, t)
            rows = [
                [i, *[_fmt(e) for e in s], _fmt(dist[i])] for i, s in enumerate(chain.states)
            ]
            _write_csv(tracker.path(f"distribution_t{t:g}.csv"), header, rows)
        if args.gillespie_replicas:
            paths = [
                gillespie_run(config.energies, max(times), make_stream(config.seed, r))
                for r in range(args.gillespie_replicas)
            ]
            _write_paths_csv(tracker, "gillespie_paths.csv", paths)
        _write_manifest(
            tracker,
            "limit",
            config,
            started,
            {"times": times, "gillespie_replicas": args.gillespie_replicas},
        )
    except Exception:
        tracker.discard_all()
        raise
    return 0


def cmd_compare(args) -> int:
    config, extras = _load_config(args)
    times = sorted(_parse_floats("times", args.times or extras.get("times", "0.25, 0.5")))
    ladder = _parse_floats(
        "epsilon_ladder",
        args.epsilon_ladder or extras.get("epsilon_ladder", "0.08, 0.04, 0.02, 0.01"),
    )
    started = time.time()
    tracker = _OutputTracker(Path(args.out))
    try:
        chain = build_chain(config.energies)
        horizon = max(times)
        rows = []
        for eps in ladder:
            cfg = dataclasses.replace(config, epsilon=eps)
            results = run_replicas(cfg, horizon, threads=args.threads, engine=args.engine)
            paths = [r.path for r in results]
            for t in times:
                emp = empirical_distribution(paths, t, chain)
                tv = tv_distance(emp, solve_distribution(chain, t))
                rows.append([_fmt(eps), _fmt(t), _fmt(tv), _fmt(tv_ci_halfwidth(emp))])
        _write_csv(tracker.path("compare.csv"), ["epsilon", "t", "tv", "ci"], rows)
        _write_manifest(
            tracker,
            "compare",
            config,
            started,
            {"times": times, "epsilon_ladder": ladder, "replicas": config.replicas},
        )
    except Exception:
        tracker.discard_all()
        raise
    return 0


def cmd_kernel(args) -> int:
    config, _ = _load_config(args)
    if args.t <= 0.0:
        raise ConfigError("t", "must be > 0")
    if not (0.0 <= args.q0 <= 1.0):
        raise ConfigError("q0", "must lie in [0, 1]")
    energy = args.energy if args.energy is not None else config.energies[0]
    if energy <= 0.0:
        raise ConfigError("energy", "must be > 0")
    speed = math.sqrt(2.0 * energy)
    p0 = args.p_sign * speed
    started = time.time()
    tracker = _OutputTracker(Path(args.out))
    try:
        grid = np.linspace(0.0, 1.0, args.grid)
        rows = []
        for sign in (1, -1):
            for qp in grid:
                val = kernel_f(
                    KernelQuery(
                        q=args.q0, p=p0, q_prime=float(qp), p_prime=sign * speed,
                        t=args.t, lam=config.lam,
                    )
                )
                rows.append(
                    [
                        _fmt(args.q0),
                        args.p_sign,
                        _fmt(qp),
                        sign,
                        _fmt(args.t),
                        _fmt(val.atom_weight),
                        _fmt(val.smooth_density),
                    ]
                )
        _write_csv(
            tracker.path("kernel.csv"),
            ["q", "p_sign", "q_prime", "p_prime_sign", "t", "atom_weight", "smooth_density"],
            rows,
        )
        _write_manifest(
            tracker,
            "kernel",
            config,
            started,
            {"q0": args.q0, "p_sign": args.p_sign, "energy": energy, "t": args.t, "grid": args.grid},
        )
    except Exception:
        tracker.discard_all()
        raise
    return 0


def cmd_doeblin(args) -> int:
    config, _ = _load_config(args)
    if args.t0 <= 0.0:
        raise ConfigError("t0", "must be > 0")
    speeds = (
        _parse_floats("speeds", args.speeds)
        if args.speeds
        else [math.sqrt(2.0 * e) for e in sorted(set(config.energies))]
    )
    mixing_times = _parse_floats("mixing_times", args.mixing_times)
    started = time.time()
    tracker = _OutputTracker(Path(args.out))
    try:
        rows = []
        for speed in speeds:
            cert = doeblin_scan(config.lam, speed, args.t0, args.resolution)
            _, rate = mixing_decay(config.lam, speed, 0.25, 1, mixing_times)
            rows.append(
                [
                    _fmt(config.lam),
                    _fmt(speed),
                    _fmt(args.t0),
                    args.resolution,
                    _fmt(cert.alpha),
                    _fmt(rate),
                ]
            )
        _write_csv(
            tracker.path("doeblin.csv"),
            ["lambda", "speed", "t0", "grid_resolution", "alpha", "decay_rate"],
            rows,
        )
        _write_manifest(
            tracker,
            "doeblin",
            config,
            started,
            {
                "t0": args.t0,
                "resolution": args.resolution,
                "speeds": speeds,
                "mixing_times": mixing_times,
            },
        )
    except Exception:
        tracker.discard_all()
        raise
    return 0


def cmd_rates(args) -> int:
    config, extras = _load_config(args)
    if config.n_particles != 2:
        raise ConfigError("n_particles", "rate fits require N = 2")
    ladder = _parse_floats(
        "epsilon_ladder",
        args.epsilon_ladder or extras.get("epsilon_ladder", "0.08, 0.04, 0.02, 0.01"),
    )
    lambdas = _parse_floats("lambdas", args.lambdas or extras.get("lambdas", str(config.lam)))
    horizon = _horizon(args, extras)
    started = time.time()
    tracker = _OutputTracker(Path(args.out))
    try:
        rows = []
        for eps in ladder:
            for lam in lambdas:
                cfg = dataclasses.replace(config, epsilon=eps, lam=lam)
                results = run_replicas(cfg, horizon, threads=args.threads, engine=args.engine)
                est = swap_rate_estimate([r.log for r in results])
                rows.append([_fmt(eps), _fmt(lam), _fmt(est.rate), _fmt(est.ci_lo), _fmt(est.ci_hi)])
        _write_csv(
            tracker.path("rates.csv"), ["epsilon", "lambda", "rate", "ci_lo", "ci_hi"], rows
        )
        _write_manifest(
            tracker,
            "rates",
            config,
            started,
            {
                "epsilon_ladder": ladder,
                "lambdas": lambdas,
                "horizon_macro": horizon,
                "replicas": config.replicas,
            },
        )
    except Exception:
        tracker.discard_all()
        raise
    return 0


def cmd_recollisions(args) -> int:
    config, extras = _load_config(args)
    if config.n_particles != 2:
        raise ConfigError("n_particles", "recollision stats require N = 2")
    ladder = _parse_floats(
        "epsilon_ladder",
        args.epsilon_ladder or extras.get("epsilon_ladder", "0.08, 0.04, 0.02, 0.01"),
    )
    window = args.window if args.window is not None else float(extras.get("window_micro", 4.0))
    horizon = _horizon(args, extras)
    speeds = sorted(math.sqrt(2.0 * e) for e in config.energies)
    label = f"{speeds[-1] / speeds[0]:.6g}"
    started = time.time()
    tracker = _OutputTracker(Path(args.out))
    try:
        rows = []
        for eps in ladder:
            cfg = dataclasses.replace(config, epsilon=eps)
            results = run_replicas(cfg, horizon, threads=args.threads, engine=args.engine)
            rep = recollision_stats([r.log for r in results], window, ratio_label=label)
            rows.append([_fmt(eps), label, _fmt(rep.fraction), _fmt(rep.ci_halfwidth)])
        _write_csv(
            tracker.path("recollisions.csv"), ["epsilon", "ratio_label", "fraction", "ci"], rows
        )
        _write_manifest(
            tracker,
            "recollisions",
            config,
            started,
            {
                "epsilon_ladder": ladder,
                "window_micro": window,
                "horizon_macro": horizon,
                "replicas": config.replicas,
            },
        )
    except Exception:
        tracker.discard_all()
        raise
    return 0


# --- parser -----------------------------------------------------------------


def _add_common(sub):
    sub.add_argument("--config", required=True, help="path to the key = value config file")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub.add_argument("--replicas", type=int, default=None, help="override the replica count")
    sub.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sub.add_argument("--out", default="out", help="output directory")
    sub.add_argument("--engine", default="auto", choices=["auto", "numba", "python"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cellchain", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("simulate", help="event-driven chain runs; paths and collision logs")
    _add_common(p)
    p.add_argument("--horizon", type=float, default=None, help="macro horizon (default: config)")
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("limit", help="limiting jump process: transient distributions")
    _add_common(p)
    p.add_argument("--times", default=None, help="comma list of macro times")
    p.add_argument("--gillespie-replicas", type=int, default=0)
    p.set_defaults(func=cmd_limit)

    p = subs.add_parser("compare", help="TV distance of microsim vs limit process")
    _add_common(p)
    p.add_argument("--times", default=None)
    p.add_argument("--epsilon-ladder", default=None)
    p.set_defaults(func=cmd_compare)

    p = subs.add_parser("kernel", help="single-particle kernel values on a grid")
    _add_common(p)
    p.add_argument("--q0", type=float, required=True, help="start position")
    p.add_argument("--p-sign", type=int, default=1, choices=[1, -1])
    p.add_argument("--energy", type=float, default=None, help="default: first config energy")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--grid", type=int, default=101)
    p.set_defaults(func=cmd_kernel)

    p = subs.add_parser("doeblin", help="Doeblin lower bound and mixing rate")
    _add_common(p)
    p.add_argument("--t0", type=float, default=2.0)
    p.add_argument("--resolution", type=int, default=33)
    p.add_argument("--speeds", default=None, help="comma list; default from config energies")
    p.add_argument("--mixing-times", default="1, 2, 4, 8")
    p.set_defaults(func=cmd_doeblin)

    p = subs.add_parser("rates", help="first-collision macro rate fits (N = 2)")
    _add_common(p)
    p.add_argument("--epsilon-ladder", default=None)
    p.add_argument("--lambdas", default=None)
    p.add_argument("--horizon", type=float, default=None)
    p.set_defaults(func=cmd_rates)

    p = subs.add_parser("recollisions", help="same-pair recollision fractions (N = 2)")
    _add_common(p)
    p.add_argument("--epsilon-ladder", default=None)
    p.add_argument("--window", type=float, default=None, help="micro-time window")
    p.add_argument("--horizon", type=float, default=None)
    p.set_defaults(func=cmd_recollisions)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # argparse errors already print usage
        return 2 if exc.code not in (0, None) else 0
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (
        SimulationConsistencyError,
        StateSpaceCapError,
        InsufficientDataError,
        GibbsRejectionError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
