"""Command line entry point ``vpme``.

Subcommands: simulate, fluid, w1, penrose, sweep, stability, dirac-limit.
Scenario-driven commands read a TOML file (``--config``); any value can be
overridden with ``--set section.key=value`` (the value is parsed as TOML,
falling back to a bare string).  Results go to ``--output-dir``, else
$VPME_OUTPUT_DIR, else the working directory.

Exit codes: 0 success, 2 invalid scenario or arguments, 3 numerical
failure (a JSON error report is printed to stderr and written as
``error.json``).
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import diagnostics as diag
from .dynamics import SimulationConfig, run, write_trajectory_binary
from .experiments import (Scenario, ScenarioError, emit, initial_ensemble, run_dirac_limit,
                          run_quasineutral_sweep, run_stability_pair)
from .fluid import FluidState, integrate_fluid, write_monitor_jsonl, write_snapshot_csv
from .measures import grid_nodes, read_binary, read_csv
from .poisson import PoissonError
from .transport import dual_certificate, w1_exact, write_plan_csv

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
OUTPUT_ENV = "VPME_OUTPUT_DIR"


def _toml():
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    return tomllib


def _parse_value(text: str):
    try:
        return _toml().loads(f"v = {text}")["v"]
    except Exception:
        return text


def _apply_overrides(d: dict, overrides) -> dict:
    for item in overrides or []:
        if "=" not in item:
            raise ScenarioError(f"override {item!r} is not of the form key=value")
        key, val = item.split("=", 1)
        parts = key.strip().split(".")
        node = d
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ScenarioError(f"cannot override inside non-table {p!r}")
        node[parts[-1]] = _parse_value(val.strip())
    return d


def _scenario(args, defaults: dict | None = None) -> Scenario:
    d = dict(defaults or {})
    if args.config:
        if not os.path.exists(args.config):
            raise ScenarioError(f"config file {args.config!r} does not exist")
        with open(args.config, "rb") as fh:
            try:
                loaded = _toml().load(fh)
            except _toml().TOMLDecodeError as exc:
                raise ScenarioError(f"malformed config: {exc}") from exc
        for k, v in loaded.items():
            if isinstance(v, dict) and isinstance(d.get(k), dict):
                d[k] = {**d[k], **v}
            else:
                d[k] = v
    if args.eps:
        d["eps"] = [float(e) for e in args.eps.split(",")]
    if args.seed is not None:
        d["seed"] = args.seed
    d = _apply_overrides(d, args.set)
    return Scenario.from_dict(d)


def _outdir(args) -> str:
    out = args.output_dir or os.environ.get(OUTPUT_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _emit_all(report, sc: Scenario, out: str) -> list:
    return [emit(report, fmt, out) for fmt in sc.outputs]


# -- subcommands ------------------------------------------------------------------

def cmd_simulate(args) -> int:
    sc = _scenario(args, {"name": "simulate", "eps": [1.0],
                          "solver": {"n_particles": 10000, "n": 256, "t_final": 1.0,
                                     "dt": 1e-3, "snapshot_dt": 0.1}})
    s = sc.solver
    eps = sc.eps[0]
    per = max(1, int(round(s["snapshot_dt"] / s["dt"])))
    cfg = SimulationConfig(eps=eps, dt=float(s["dt"]), t_final=float(s["t_final"]), n=int(s["n"]),
                           integrator=s["integrator"], self_force=s["self_force"], mode=s["mode"],
                           snapshot_every=per)
    traj = run(initial_ensemble(sc, eps), cfg)
    out = _outdir(args)
    diag.write_jsonl(traj.records, os.path.join(out, f"{sc.name}_diagnostics.jsonl"))
    diag.write_summary_csv(traj.records, os.path.join(out, f"{sc.name}_diagnostics.csv"))
    write_trajectory_binary(traj, os.path.join(out, f"{sc.name}_trajectory.bin"))
    e = np.array([r.energy for r in traj.records])
    print(json.dumps({"steps": len(traj.records) - 1, "energy_initial": float(e[0]),
                      "energy_relative_drift": float(np.max(np.abs(e - e[0])) / max(abs(e[0]), 1e-300)),
                      "output_dir": out}, sort_keys=True))
    return EXIT_OK


def cmd_fluid(args) -> int:
    sc = _scenario(args, {"name": "fluid", "eps": [0.5]})
    ini, s = sc.initial, sc.solver
    n = int(s.get("fluid_n", 64))
    vel = ini.get("species_velocities", [0.0])
    a = float(ini.get("amplitude", 0.05))
    x = grid_nodes(n)
    base = (1.0 + a * np.cos(2 * np.pi * int(ini.get("mode", 1)) * x)) / len(vel)
    rho = np.array([base for _ in vel])
    v = np.array([np.full(n, float(u)) for u in vel])
    out = _outdir(args)
    summary = []
    for eps in [*sc.eps, *([0.0] if ini.get("include_limit", True) else [])]:
        state = FluidState(rho, v, eps)
        T, dt = float(s["t_final"]), float(s.get("fluid_dt", 0.0025))
        res = integrate_fluid(state, T, dt, snapshot_every=max(1, int(round(T / dt / 10))))
        tag = f"{sc.name}_eps{eps:g}"
        write_snapshot_csv(res.final, os.path.join(out, f"{tag}_final.csv"))
        write_monitor_jsonl(res.monitor, os.path.join(out, f"{tag}_monitor.jsonl"))
        summary.append({"eps": eps, "aborted": res.aborted, "reason": res.reason,
                        "t_end": float(res.times[-1])})
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _load_ensemble(path):
    with open(path, "rb") as fh:
        head = fh.read(8)
    return read_binary(path) if head == b"VPME0001" else read_csv(path)


def cmd_w1(args) -> int:
    for p in (args.source, args.target):
        if not os.path.exists(p):
            raise ScenarioError(f"ensemble file {p!r} does not exist")
    a, b = _load_ensemble(args.source), _load_ensemble(args.target)
    cost, plan = w1_exact(a, b, subsample=args.subsample, seed=args.seed)
    result = {"w1": cost, "source_size": a.size, "target_size": b.size,
              "subsample_error": plan.subsample_error}
    if args.plan:
        write_plan_csv(plan, args.plan)
    if args.certificate:
        cert = dual_certificate(plan)
        result.update({"certified": cert["optimal"], "duality_gap": cert["gap"]})
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_penrose(args) -> int:
    if args.profile == "maxwellian":
        prof = diag.maxwellian(args.sigma)
    else:
        prof = diag.two_bump(args.a, args.sigma)
    report = diag.penrose_criterion(prof)
    report["delta_condition"] = diag.delta_condition(prof, v_max=20.0)
    print(json.dumps(report, sort_keys=True, default=float))
    return EXIT_OK


def cmd_sweep(args) -> int:
    sc = _scenario(args, {"name": "quasineutral", "eps": [0.4, 0.2, 0.1]})
    report = run_quasineutral_sweep(sc)
    paths = _emit_all(report, sc, _outdir(args))
    print(json.dumps({"summary": report["summary"], "files": paths}, sort_keys=True))
    return EXIT_OK if not report["summary"]["errors"] else EXIT_NUMERICAL


def cmd_stability(args) -> int:
    sc = _scenario(args, {"name": "stability", "eps": [1.0],
                          "initial": {"family": "cosine", "amplitude": 0.2, "thermal_speed": 1.0},
                          "solver": {"n_particles": 10000, "n": 256, "t_final": 0.5,
                                     "dt": 0.01, "snapshot_dt": 0.05},
                          "perturbation": {"kind": "velocity-kick", "size": 1e-3}})
    report = run_stability_pair(sc)
    paths = _emit_all(report, sc, _outdir(args))
    print(json.dumps({"summary": report["summary"], "files": paths}, sort_keys=True))
    return EXIT_OK


def cmd_dirac(args) -> int:
    sc = _scenario(args, {"name": "dirac-limit", "eps": [0.4, 0.2, 0.1, 0.05],
                          "initial": {"family": "cosine", "amplitude": 0.05,
                                      "entropy_constant": 0.5}})
    report = run_dirac_limit(sc)
    paths = _emit_all(report, sc, _outdir(args))
    print(json.dumps({"summary": report["summary"], "files": paths}, sort_keys=True))
    return EXIT_OK if not report["summary"]["errors"] else EXIT_NUMERICAL


# -- parser -------------------------------------------------------------------------

def _scenario_args(p):
    p.add_argument("--config", help="TOML scenario file")
    p.add_argument("--eps", help="comma-separated eps values")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a scenario value, e.g. solver.n=128")
    p.add_argument("--output-dir", help=f"output directory (default ${OUTPUT_ENV} or .)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vpme", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the particle system and log diagnostics")
    _scenario_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fluid", help="integrate the multi-fluid system and its limit")
    _scenario_args(p)
    p.set_defaults(func=cmd_fluid)

    p = sub.add_parser("w1", help="exact W1 distance between two ensemble files")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--plan", help="write the transport plan CSV here")
    p.add_argument("--certificate", action="store_true", help="check the dual certificate")
    p.add_argument("--subsample", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_w1)

    p = sub.add_parser("penrose", help="evaluate the instability criterion of a profile")
    p.add_argument("--profile", choices=["maxwellian", "two-bump"], default="two-bump")
    p.add_argument("--a", type=float, default=1.0, help="bump separation")
    p.add_argument("--sigma", type=float, default=0.2)
    p.set_defaults(func=cmd_penrose)

    for name, func, text in (
        ("sweep", cmd_sweep, "quasineutral sweep against the limit fluid"),
        ("stability", cmd_stability, "coupled runs against the stability bound"),
        ("dirac-limit", cmd_dirac, "cold-limit rate study"),
    ):
        p = sub.add_parser(name, help=text)
        _scenario_args(p)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError, KeyError, TypeError) as exc:
        print(json.dumps({"error": "invalid scenario", "detail": str(exc)}), file=sys.stderr)
        return EXIT_INVALID
    except (PoissonError, FloatingPointError, ArithmeticError, RuntimeError) as exc:
        report = {"error": "numerical failure", "type": type(exc).__name__, "detail": str(exc)}
        print(json.dumps(report), file=sys.stderr)
        try:
            with open(os.path.join(_outdir(args) if hasattr(args, "output_dir") else ".",
                                   "error.json"), "w") as fh:
                json.dump(report, fh)
        except OSError:
            pass
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(json.dumps({"error": "invalid input", "detail": str(exc)}), file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
