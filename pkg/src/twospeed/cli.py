"""Command-line entry point: ``twospeed <subcommand> ...``.

Exit codes: 0 success, 2 configuration error (and usage errors), 3 resource cap
hit, 4 statistical threshold failed under ``--strict``.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import tempfile
from pathlib import Path

from . import fkpp
from .auxiliary import AtomCapError, build_auxiliary, sample_eta_thinned
from .engine import (ConditioningError, PopulationCapError, RngStream, map_replicas,
                     simulate_first_stage)
from .experiments import EXPERIMENTS, ExperimentDescriptor, execute, list_experiments
from .model import CANONICAL_BELOW, ConfigError, load_plan
from .observables import mckean_martingale, write_martingale_csv
from .stats import StatsError

EXIT_CONFIG = 2
EXIT_RESOURCE = 3
EXIT_STRICT = 4


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


_FILE_SUFFIXES = {".csv", ".json"}


def _emit_dir(args) -> Path | None:
    """``--emit`` as a directory (created on demand); a file path yields its parent."""
    if args.emit is None:
        return None
    out = Path(args.emit)
    if out.suffix in _FILE_SUFFIXES:
        out = out.parent
    out.mkdir(parents=True, exist_ok=True)
    return out


def _target(args, default: str) -> Path | None:
    """Where the primary artifact goes: ``--emit`` itself if it names a file."""
    out = _emit_dir(args)
    if out is None:
        return None
    emit = Path(args.emit)
    return emit if emit.suffix in _FILE_SUFFIXES else out / default


def _write(target: Path | None, text: str) -> None:
    if target is None:
        sys.stdout.write(text)
    else:
        target.write_text(text)


def _plan(args):
    if args.config is None:
        raise ConfigError("--config is required")
    return load_plan(args.config, seed=args.seed, replicas=args.replicas)


# ---------------------------------------------------------------- subcommands

def cmd_list(args) -> int:
    names = list_experiments()
    if args.json:
        print(json.dumps(names))
    else:
        for name in names:
            print(f"{name:30s} {EXPERIMENTS[name].summary}")
    return 0


def cmd_simulate(args) -> int:
    plan = _plan(args)
    target = _target(args, "particles.csv")
    out = None if target is None else target.parent

    runs = map_replicas(lambda run: run, plan, threads=args.threads)
    rows, summary = [], []
    for rep, run in enumerate(runs):
        term = run.terminal
        anc = run.ancestor_at_split
        rows.extend((rep, i, repr(float(x)), int(anc[i])) for i, x in enumerate(term.positions))
        summary.append({"replica": rep, "seed": plan.seed, "n": term.n,
                        "max": term.max() if term.n else None, "extinct": term.extinct,
                        "attempts": term.attempts})
    if target is not None:
        with open(target, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replica", "index", "position", "ancestor_split_index"])
            w.writerows(rows)
    _write(None if out is None else out / "summary.json",
           json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_martingale(args) -> int:
    plan = _plan(args)
    times = _floats(args.s)
    if not times:
        raise ConfigError("--s needs at least one time")
    target = _target(args, "martingale.csv")
    rows = []
    for rep in range(plan.replicas):
        snaps = simulate_first_stage(plan.profile, max(times), RngStream(plan.seed, rep), times,
                                     plan.offspring)
        for snap in snaps:
            if any(math.isclose(snap.time, s) for s in times):
                rows.append((rep, mckean_martingale(snap, plan.profile)))
    if target is not None:
        write_martingale_csv(target, rows)
        return 0
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "martingale.csv"
        write_martingale_csv(path, rows)
        sys.stdout.write(path.read_text())
    return 0


def cmd_fkpp(args) -> int:
    """Solve to each ``--t``; the (x, u) profile at the last time is the main artifact.

    ``x`` is the lab-frame coordinate.  With a directory ``--emit`` the front
    positions at every time also go to ``fronts.csv``.
    """
    times = sorted(_floats(args.t))
    if not times or times[0] <= 0:
        raise ConfigError("--t needs positive times")
    target = _target(args, "front.csv")
    kw = {} if args.init == "heaviside" else {"phi": args.phi, "delta": args.delta}
    sol = fkpp.make_initial(args.init, fkpp.Grid(dx=args.dx), dt=args.dt, **kw)
    fronts = []
    for t in times:
        sol = fkpp.advance(sol, t - sol.t)
        fronts.append(f"{t!r},{fkpp.front_position(sol, args.level)!r}")
    profile = "x,u\n" + "".join(f"{x!r},{u!r}\n" for x, u in zip(sol.lab_nodes().tolist(),
                                                                 sol.u.tolist()))
    _write(target, profile)
    if target is not None and Path(args.emit).suffix not in _FILE_SUFFIXES:
        (target.parent / "fronts.csv").write_text("t,front\n" + "\n".join(fronts) + "\n")
    return 0


def cmd_constant(args) -> int:
    target = _target(args, "c_of_a.json")
    schedule = tuple(_floats(args.r))
    if args.phi is None:
        est = fkpp.constant_C(args.a, schedule, strict=args.strict)
    else:
        est = fkpp.constant_C_phi(args.a, args.phi, args.delta, schedule, strict=args.strict)
    _write(target, json.dumps(est.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_auxiliary(args) -> int:
    profile = CANONICAL_BELOW if args.config is None else load_plan(args.config, seed=0).profile
    if args.seed is None:
        raise ConfigError("--seed is required")
    if args.replicas is not None and args.replicas < 1:
        raise ConfigError(f"replicas must be >= 1, got {args.replicas}")
    target = _target(args, "auxiliary.csv")
    n = args.replicas or 1
    lines = ["replica,atoms,max"]
    for rep in range(n):
        rs = RngStream(args.seed, rep)
        atoms = sample_eta_thinned(args.t, profile, args.B, args.Y, args.y_min, rs.generator())
        mx = build_auxiliary(atoms, args.Y, args.t, profile, rs).max
        lines.append(f"{rep},{len(atoms)},{mx!r}")
    _write(target, "\n".join(lines) + "\n")
    return 0


def _descriptor(args) -> ExperimentDescriptor:
    doc = {}
    if args.config is not None:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read descriptor {args.config}: {exc}") from exc
    name = args.name or doc.get("name")
    if name is None:
        raise ConfigError("experiment name required")
    seed = args.seed if args.seed is not None else doc.get("seed")
    if seed is None:
        raise ConfigError("a seed is required (--seed or descriptor 'seed')")
    replicas = args.replicas if args.replicas is not None else doc.get("replicas")
    return ExperimentDescriptor(name, seed, replicas, args.threads, dict(doc.get("params", {})))


def cmd_compare(args) -> int:
    result = execute(_descriptor(args))
    out = _emit_dir(args)
    if out is not None:
        for fname, text in sorted(result.artifacts.items()):
            (out / fname).write_text(text)
    for e in result.entries:
        print(f"[{'PASS' if e.passed else 'FAIL'}] {e.experiment}: {e.statistic} = "
              f"{e.value:.4g} ({e.threshold})")
    return EXIT_STRICT if args.strict and not result.passed else 0


def cmd_report(args) -> int:
    root = Path(args.path)
    files = sorted(root.rglob("report.json")) if root.is_dir() else [root]
    if not files:
        raise ConfigError(f"no report.json under {root}")
    failed = 0
    for f in files:
        doc = json.loads(f.read_text())
        for r in doc["results"]:
            failed += not r["pass"]
            print(f"[{'PASS' if r['pass'] else 'FAIL'}] {r['experiment']}: {r['statistic']} = "
                  f"{r['value']} ({r['threshold']})")
    return EXIT_STRICT if args.strict and failed else 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twospeed", description="Two-speed BBM experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_help="model config (key=value)"):
        sp.add_argument("--config", metavar="PATH", help=config_help)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replicas", type=int)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--strict", action="store_true")
        sp.add_argument("--emit", metavar="DIR", help="output directory, or a .csv/.json file")

    sp = sub.add_parser("list", help="built-in experiments")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(func=cmd_list)

    sp = sub.add_parser("simulate", help="two-speed runs from a model config")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("martingale", help="McKean martingale along first-stage runs")
    common(sp)
    sp.add_argument("--s", default="4,8", help="comma-separated times")
    sp.set_defaults(func=cmd_martingale)

    sp = sub.add_parser("fkpp", help="F-KPP front positions")
    common(sp)
    sp.add_argument("--init", choices=["heaviside", "laplace"], default="heaviside")
    sp.add_argument("--phi", choices=sorted(fkpp.BUMPS), default="bump-top",
                    help="bump for --init laplace")
    sp.add_argument("--delta", type=float, default=math.inf, help="truncation for --init laplace")
    sp.add_argument("--t", default="50")
    sp.add_argument("--level", type=float, default=0.5)
    sp.add_argument("--dx", type=float, default=fkpp.DEFAULT_DX)
    sp.add_argument("--dt", type=float, default=fkpp.DEFAULT_DT)
    sp.set_defaults(func=cmd_fkpp)

    sp = sub.add_parser("constant", help="tail constant C(a) or C(a, phi, delta)")
    common(sp)
    sp.add_argument("--a", type=float, default=2.0 - math.sqrt(2.0))
    sp.add_argument("--r", default="20,40")
    sp.add_argument("--phi", choices=sorted(fkpp.BUMPS))
    sp.add_argument("--delta", type=float, default=5.0)
    sp.set_defaults(func=cmd_constant)

    sp = sub.add_parser("auxiliary", help="maxima of the auxiliary process")
    common(sp)
    sp.add_argument("--t", type=float, default=10.0)
    sp.add_argument("--B", type=float, default=6.0)
    sp.add_argument("--Y", type=float, default=1.0)
    sp.add_argument("--y-min", dest="y_min", type=float, default=-4.0)
    sp.set_defaults(func=cmd_auxiliary)

    sp = sub.add_parser("compare", help="run a built-in experiment")
    common(sp, "JSON experiment descriptor")
    sp.add_argument("name", nargs="?", choices=list_experiments())
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("report", help="summarize report.json files")
    sp.add_argument("path")
    sp.add_argument("--strict", action="store_true")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, StatsError, fkpp.FKPPError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        # unreadable config or report paths
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PopulationCapError, AtomCapError, ConditioningError, MemoryError) as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
