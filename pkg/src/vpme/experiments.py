"""Scenario-driven experiments: quasineutral sweeps, coupled stability pairs
and cold-limit rate studies, with deterministic CSV/JSON reports.

A report is a plain dictionary ``{"name", "kind", "columns", "rows",
"summary"}`` whose values are JSON scalars, so that ``json.loads`` of the
emitted file gives back the same dictionary.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import diagnostics as diag
from .dynamics import SimulationConfig, run
from .fluid import FluidState, integrate_fluid
from .measures import GridField, ParticleEnsemble, deposit, grid_nodes, read_csv, sample
from .poisson import PoissonError, solve_full
from .transport import DENSE_CAP, LP_CAP, _uniform, coupling_cost, w1_exact

__all__ = [
    "Scenario",
    "ScenarioError",
    "load_scenario",
    "initial_ensemble",
    "run_quasineutral_sweep",
    "run_stability_pair",
    "run_dirac_limit",
    "emit",
]

DEFAULT_SOLVER = {
    "n_particles": 2048,
    "n": 128,
    "dt": None,  # None: 0.05 eps
    "t_final": 0.3,
    "snapshot_dt": 0.05,
    "integrator": "kdk",
    "self_force": "energy",
    "mode": "semilinear",
}
DEFAULT_REFERENCE = {"kind": "fluid-limit", "n": 64, "dt": 0.001}


class ScenarioError(ValueError):
    """The scenario description is invalid (CLI exit code 2)."""


@dataclass
class Scenario:
    name: str
    eps: list
    initial: dict = field(default_factory=lambda: {"family": "cosine", "amplitude": 0.05})
    solver: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)
    perturbation: dict = field(default_factory=dict)
    outputs: list = field(default_factory=lambda: ["csv", "json"])
    seed: int | None = None
    workers: int = 1

    def __post_init__(self):
        if not isinstance(self.eps, (list, tuple)) or not self.eps:
            raise ScenarioError("eps list must be nonempty")
        self.eps = [float(e) for e in self.eps]
        for e in self.eps:
            if not (0.0 < e <= 1.0):
                raise ScenarioError(f"eps={e} outside (0, 1]")
        self.solver = {**DEFAULT_SOLVER, **self.solver}
        self.reference = {**DEFAULT_REFERENCE, **self.reference}
        fam = self.initial.get("family", "cosine")
        if fam not in ("cosine", "two-bump", "file"):
            raise ScenarioError(f"unknown initial family {fam!r}")
        if fam == "file":
            path = self.initial.get("path")
            if not path or not os.path.exists(path):
                raise ScenarioError(f"initial data file {path!r} does not exist")
        for fmt in self.outputs:
            if fmt not in ("csv", "json"):
                raise ScenarioError(f"unknown output format {fmt!r}")
        if int(self.workers) < 1:
            raise ScenarioError("workers must be >= 1")
        s = self.solver
        if s["t_final"] < 0 or s["snapshot_dt"] <= 0 or s["n_particles"] < 1:
            raise ScenarioError("t_final >= 0, snapshot_dt > 0 and n_particles >= 1 required")

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = {"name", "eps", "initial", "solver", "reference", "perturbation", "outputs",
                 "seed", "workers"}
        extra = set(d) - known - {"kind"}
        if extra:
            raise ScenarioError(f"unknown scenario keys {sorted(extra)}")
        if "eps" not in d:
            raise ScenarioError("scenario needs an eps list")
        return cls(**{k: v for k, v in d.items() if k in known and k != "name"},
                   name=str(d.get("name", "scenario")))


def load_scenario(path) -> Scenario:
    """Read a TOML scenario file."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    if not os.path.exists(path):
        raise ScenarioError(f"scenario file {path!r} does not exist")
    with open(path, "rb") as fh:
        try:
            d = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError(f"malformed scenario file: {exc}") from exc
    return Scenario.from_dict(d)


# -- initial data ---------------------------------------------------------------

def _profile(initial: dict):
    a = float(initial.get("amplitude", 0.05))
    m = int(initial.get("mode", 1))
    b = float(initial.get("velocity_amplitude", 0.0))
    rho = lambda x: 1.0 + a * np.cos(2 * np.pi * m * x)  # noqa: E731
    u = lambda x: b * np.sin(2 * np.pi * m * x)  # noqa: E731
    return rho, u


def initial_ensemble(sc: Scenario, eps: float, thermal_speed: float | None = None) -> ParticleEnsemble:
    ini = sc.initial
    fam = ini.get("family", "cosine")
    n_part = int(sc.solver["n_particles"])
    strategy = ini.get("strategy", "deterministic-quantile")
    if fam == "file":
        return read_csv(ini["path"])
    rho, u = _profile(ini)
    if fam == "cosine":
        sig = float(ini.get("thermal_speed", 0.0)) if thermal_speed is None else thermal_speed
        return sample(rho, n_part, strategy, velocity=u, thermal_speed=sig, seed=sc.seed)
    # homogeneous two-bump equilibrium with a spatial density perturbation
    a, s = float(ini.get("separation", 1.0)), float(ini.get("sigma", 0.2))

    def quantile(q):
        # vectorized bisection on the mixture CDF
        lo = np.full(q.shape, -abs(a) - 40 * s)
        hi = np.full(q.shape, abs(a) + 40 * s)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            below = 0.5 * (ndtr((mid + a) / s) + ndtr((mid - a) / s)) < q
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    return sample(rho, n_part, strategy, velocity=u, velocity_quantile=quantile, seed=sc.seed)


def _sim_config(sc: Scenario, eps: float) -> SimulationConfig:
    s = sc.solver
    dt = s["dt"] if s["dt"] is not None else 0.05 * eps
    dt = min(float(dt), 0.1 * eps)
    # align the step with the snapshot interval
    per = max(1, int(math.ceil(s["snapshot_dt"] / dt - 1e-9)))
    dt = s["snapshot_dt"] / per
    return SimulationConfig(eps=eps, dt=dt, t_final=float(s["t_final"]), n=int(s["n"]),
                            integrator=s["integrator"], self_force=s["self_force"],
                            mode=s["mode"], snapshot_every=per)


# -- fluid reference -------------------------------------------------------------

def _fourier_eval(values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Trigonometric interpolant of nodal values on grid_nodes(n), at x."""
    n = values.size
    c = np.fft.fft(values) / n
    k = np.fft.fftfreq(n, 1.0 / n)
    if n % 2 == 0:
        c = c.copy()
        c[n // 2] *= 0.5
        k = np.append(k, n // 2)
        c = np.append(c, c[n // 2])
    phase = np.exp(2j * np.pi * np.outer(x + 0.5, k))
    return np.real(phase @ c)


def _limit_reference(sc: Scenario, times):
    """Isothermal limit fluid (rho, u) on its grid at the requested times."""
    ref = sc.reference
    n = int(ref["n"])
    rho, u = _profile(sc.initial)
    x = grid_nodes(n)
    r0 = rho(x)
    state = FluidState.single(r0 / r0.mean(), u(x), 0.0)
    dt = float(ref["dt"])
    out = []
    current, t_now = state, 0.0
    for t in times:
        span = t - t_now
        if span > 1e-12:
            steps = max(1, int(round(span / dt)))
            res = integrate_fluid(current, span, span / steps, snapshot_every=steps)
            if res.aborted:
                raise FloatingPointError(f"limit fluid aborted: {res.reason}")
            current = res.final
            t_now = t
        out.append(current)
    return out


def _sample_fluid(state: FluidState, n_particles: int) -> ParticleEnsemble:
    rho = GridField(state.rho[0] / state.rho[0].mean(), "density")
    vel = state.v[0]
    return sample(rho, n_particles, velocity=lambda x: _fourier_eval(vel, x))


def _w1(a: ParticleEnsemble, b: ParticleEnsemble):
    if max(a.size, b.size) <= DENSE_CAP:
        if (a.size == b.size and _uniform(a) and _uniform(b)) or a.size * b.size <= LP_CAP:
            return w1_exact(a, b)[0]
    return None


# -- quasineutral sweep ---------------------------------------------------------

def _kinetic_vs_limit(sc: Scenario, eps: float, thermal_speed=None):
    cfg = _sim_config(sc, eps)
    ens0 = initial_ensemble(sc, eps, thermal_speed)
    traj = run(ens0, cfg)
    refs = _limit_reference(sc, list(traj.snapshot_times))
    rows = []
    for t, snap, ref in zip(traj.snapshot_times, traj.snapshots, refs):
        g = _sample_fluid(ref, snap.size)
        rows.append({"eps": eps, "t": float(t), "w1": float(w1_exact(snap, g)[0])})
    return ens0, traj, refs, rows


def _sweep_entry(args):
    sc, eps = args
    try:
        _, _, _, rows = _kinetic_vs_limit(sc, eps)
        return {"eps": eps, "rows": rows, "error": None}
    except (PoissonError, FloatingPointError, ArithmeticError, ValueError, RuntimeError) as exc:
        return {"eps": eps, "rows": [], "error": f"{type(exc).__name__}: {exc}"}


def _map(sc: Scenario, fn, items):
    if sc.workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=int(sc.workers)) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _trend(values) -> str:
    v = [x for x in values if x is not None]
    if len(v) < 2:
        return "n/a"
    d = np.diff(v)
    if np.all(d < 0):
        return "strictly decreasing"
    if np.all(d > 0):
        return "strictly increasing"
    return "mixed"


def run_quasineutral_sweep(sc: Scenario) -> dict:
    """sup_t W1(f_eps(t), g(t)) for each eps, with g the quasineutral limit.

    The eps list is processed in the given order; sup values are reported
    in a summary keyed by eps together with the trend for eps decreasing.
    """
    results = _map(sc, _sweep_entry, [(sc, e) for e in sc.eps])
    rows, sups, errors = [], [], {}
    for res in results:
        rows.extend(res["rows"])
        if res["error"]:
            errors[repr(res["eps"])] = res["error"]
            sups.append(None)
        else:
            sups.append(max(r["w1"] for r in res["rows"]))
    order = np.argsort(sc.eps)[::-1]
    return {
        "name": sc.name,
        "kind": "quasineutral-sweep",
        "columns": ["eps", "t", "w1"],
        "rows": rows,
        "summary": {
            "eps": list(sc.eps),
            "sup_w1": sups,
            "trend_as_eps_decreases": _trend([sups[i] for i in order]),
            "errors": errors,
        },
    }


# -- cold-limit rate ---------------------------------------------------------------

def run_dirac_limit(sc: Scenario) -> dict:
    """Thermal spread sigma = sqrt(2 c eps) so the initial modulated energy is ~ c eps.

    ``sc.initial["entropy_constant"]`` sets c (default 0.5).  For each eps
    the kinetic run is compared with the cold quasineutral fluid; the
    exponent of sup_t W1 against eps is fitted by least squares in log-log.
    """
    c = float(sc.initial.get("entropy_constant", 0.5))
    rows, table, errors = [], [], {}
    for eps in sc.eps:
        sigma = math.sqrt(2.0 * c * eps) if c > 0 else 0.0
        try:
            ens0, traj, refs, r = _kinetic_vs_limit(sc, eps, thermal_speed=sigma)
            n = traj.config.n
            x = grid_nodes(n)
            rho, u = _profile(sc.initial)
            r0 = rho(x)
            sol = solve_full(deposit(ens0, n, "tsc"), eps)
            h0 = diag.relative_entropy(ens0, sol, GridField(r0 / r0.mean(), "density"),
                                       GridField(u(x), "field"))
            sup = max(row["w1"] for row in r)
            rows.extend(r)
            table.append({"eps": eps, "sigma": sigma, "h0": h0, "sup_w1": sup})
        except (PoissonError, FloatingPointError, ValueError, RuntimeError) as exc:
            errors[repr(eps)] = f"{type(exc).__name__}: {exc}"
    ok = [t for t in table if t["sup_w1"] > 0]
    exponent = None
    if len(ok) >= 2:
        exponent = float(np.polyfit(np.log([t["eps"] for t in ok]),
                                    np.log([t["sup_w1"] for t in ok]), 1)[0])
    return {
        "name": sc.name,
        "kind": "dirac-limit",
        "columns": ["eps", "t", "w1"],
        "rows": rows,
        "summary": {"table": table, "fitted_exponent": exponent, "target": 0.5,
                    "errors": errors},
    }


# -- coupled stability pair -----------------------------------------------------------

def _perturb(base: ParticleEnsemble, pert: dict, seed):
    kind = pert.get("kind", "velocity-kick")
    size = float(pert.get("size", 1e-3))
    if kind == "none":
        return base
    if kind == "velocity-kick":
        # nonnegative kicks with mean exactly `size` (profile: constant or random)
        if pert.get("profile", "constant") == "constant":
            kick = np.full(base.size, size)
        else:
            if seed is None:
                raise ScenarioError("random kick profile needs a seed")
            rng = np.random.default_rng(np.uint64(seed))
            r = rng.exponential(size=base.size)
            kick = size * r / r.mean()
        return base.replace(v=base.v + kick)
    if kind == "oscillatory":
        # reweight by 1 + cos(K v): L1 size O(1), W1 size O(1/K)
        K = float(pert.get("wavenumber", 50.0))
        w = base.w * (1.0 + np.cos(K * base.v))
        return ParticleEnsemble(base.x, base.v, w / w.sum())
    raise ScenarioError(f"unknown perturbation kind {kind!r}")


def _velocity_pairing(a: ParticleEnsemble, b: ParticleEnsemble) -> float:
    # phi(x, v) = v is 1-Lipschitz, so this is a lower bound for W1
    return abs(float(np.dot(b.w, b.v) - np.dot(a.w, a.v)))


def run_stability_pair(sc: Scenario, perturbation: dict | None = None) -> dict:
    """Base and perturbed runs with shared labels; the bound is checked per snapshot.

    The measured distance is the labelled coupling cost (an upper bound for
    W1) when weights match, otherwise the exact W1.  The initial distance in
    the bound is exact: either certified by the velocity test function
    (coupling cost equals its pairing) or computed by ``w1_exact``.
    """
    pert = dict(sc.perturbation if perturbation is None else perturbation)
    eps = sc.eps[0]
    cfg = _sim_config(sc, eps)
    base0 = initial_ensemble(sc, eps)
    pert0 = _perturb(base0, pert, sc.seed)
    same_w = np.array_equal(base0.w, pert0.w)

    lower = _velocity_pairing(base0, pert0)
    exact0 = _w1(base0, pert0) if base0.size <= DENSE_CAP else None
    if same_w:
        c0 = coupling_cost(base0, pert0)
        certified = abs(c0 - lower) <= 1e-14 * max(1.0, c0)
        w1_initial = exact0 if exact0 is not None else (c0 if certified else None)
    else:
        w1_initial = exact0
    if w1_initial is None:
        raise ScenarioError("initial W1 cannot be determined exactly for this perturbation")

    ta = run(base0, cfg)
    tb = run(pert0, cfg)
    rho_sup = np.array([r.rho_sup for r in ta.records])
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (rho_sup[1:] + rho_sup[:-1]) * cfg.dt)])
    rows, violations = [], 0
    for k, (t, a, b) in enumerate(zip(ta.snapshot_times, ta.snapshots, tb.snapshots)):
        step = int(round(t / cfg.dt))
        cc = coupling_cost(a, b) if same_w else None
        ex = _w1(a, b) if a.size <= 1024 else None
        measured = cc if cc is not None else ex
        bound = diag.gronwall_bound_log(eps, float(t), float(integral[step]), w1_initial) \
            if sc.solver["mode"] != "classical" else \
            diag.gronwall_bound_log_classical(eps, float(t), float(integral[step]), w1_initial)
        # at t = 0 the bound reads log W1(0) - log eps; allow rounding there
        holds = measured is None or w1_initial == 0 or math.log(max(measured, 1e-300)) <= bound + 1e-12
        if measured == 0.0:
            holds = True
        violations += not holds
        rows.append({
            "t": float(t),
            "coupling_cost": cc,
            "w1_exact": ex,
            "log_w1": math.log(measured) if measured else None,
            "gronwall_bound_log": bound if math.isfinite(bound) else None,
            "holds": bool(holds),
        })
    return {
        "name": sc.name,
        "kind": "stability-pair",
        "columns": ["t", "coupling_cost", "w1_exact", "log_w1", "gronwall_bound_log", "holds"],
        "rows": rows,
        "summary": {
            "eps": eps,
            "perturbation": {k: v for k, v in pert.items()},
            "w1_initial": w1_initial,
            "w1_initial_lower_bound": lower,
            "l1_perturbation": float(np.sum(np.abs(pert0.w - base0.w))) if not same_w else None,
            "violations": violations,
        },
    }


# -- output ------------------------------------------------------------------

def emit(report: dict, fmt: str, directory=None, stem: str | None = None) -> str:
    """Write ``report`` as CSV (rows) or JSON (everything); returns the path.

    The output directory defaults to $VPME_OUTPUT_DIR or the working
    directory.  Content depends only on the report.
    """
    directory = directory or os.environ.get("VPME_OUTPUT_DIR", ".")
    os.makedirs(directory, exist_ok=True)
    stem = stem or report.get("name", "report")
    if fmt == "csv":
        path = os.path.join(directory, f"{stem}.csv")
        cols = list(report.get("columns") or [])
        for r in report.get("rows", []):
            for k in r:
                if k not in cols:
                    cols.append(k)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in report.get("rows", []):
                w.writerow(["" if r.get(c) is None else
                            (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in cols])
        return path
    if fmt == "json":
        path = os.path.join(directory, f"{stem}.json")
        with open(path, "w") as fh:
            json.dump(report, fh, sort_keys=True, indent=2, allow_nan=False)
            fh.write("\n")
        return path
    raise ValueError(f"unknown format {fmt!r}")
