"""Lagrangian N-particle system for the massless-electron Vlasov-Poisson model.

Particles move by X' = V, V' = E(X) where E is obtained from a grid solve
of the Poisson problem on the deposited density.  The default coupling is
energy conserving: densities are deposited with quadratic splines and the
force is minus the exact derivative of the spline interpolant of the grid
potential, so the discrete energy returned by ``diagnostics.energy`` is a
first integral of the semi-discrete system.  The momentum-conserving
alternative (same stencil for deposit and field interpolation) and an exact
pairwise kernel sum for the linear field part are also available.
"""
from __future__ import annotations

import csv
import math
import os
import struct
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import diagnostics as diag
from .measures import ParticleEnsemble, deposit, wrap
from .poisson import MODES, PoissonOptions, PoissonSolution, field_at, kernel_w_prime, solve_full

INTEGRATORS = ("kdk", "symplectic-euler", "rk4")
SELF_FORCE_POLICIES = {
    # name: (deposit shape, interpolation passed to field_at)
    "energy": ("tsc", "gradient-tsc"),
    "symmetric": ("cic", "linear"),
    "symmetric-tsc": ("tsc", "tsc"),
}
FIELD_SOLVERS = ("grid", "pairwise")
TRAJECTORY_MAGIC = b"VPMT0001"

__all__ = [
    "SimulationConfig",
    "Trajectory",
    "step",
    "run",
    "acceleration",
    "pairwise_kernel_force",
    "rescale_trajectory",
    "write_trajectory_csv",
    "write_trajectory_binary",
    "read_trajectory_binary",
]


class CFLWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    """Run parameters.

    ``dt`` is capped at 0.1*eps in original time (0.1 in rescaled time)
    because the fastest linear oscillation has period of order eps.
    ``self_force`` selects the particle-grid coupling.  ``"energy"`` (default)
    conserves the discrete energy but leaves an O(h) self-force on an
    isolated particle; ``"symmetric"`` deposits and interpolates with the
    same cloud-in-cell stencil, which cancels the self-force of the linear
    field part exactly and conserves momentum instead.
    ``field_solver="pairwise"`` replaces the grid kernel part by the exact
    O(N^2) sum.  ``snapshot_every`` thins the stored snapshots.
    """

    eps: float = 1.0
    dt: float = 1e-3
    t_final: float = 1.0
    n: int = 256
    integrator: str = "kdk"
    mode: str = "semilinear"
    rescaled: bool = False
    self_force: str = "energy"
    field_solver: str = "grid"
    snapshot_every: int = 1
    poisson: PoissonOptions = field(default_factory=PoissonOptions)

    def __post_init__(self):
        if not (0.0 < self.eps <= 1.0):
            raise ValueError(f"eps must lie in (0, 1], got {self.eps!r}")
        if not (self.dt > 0) or not (self.t_final >= 0):
            raise ValueError("need dt > 0 and t_final >= 0")
        if self.dt > self.dt_cap * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} exceeds the stability cap {self.dt_cap}")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown Poisson mode {self.mode!r}")
        if self.self_force not in SELF_FORCE_POLICIES:
            raise ValueError(f"unknown self-force policy {self.self_force!r}")
        if self.field_solver not in FIELD_SOLVERS:
            raise ValueError(f"unknown field solver {self.field_solver!r}")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")

    @property
    def dt_cap(self) -> float:
        return 0.1 if self.rescaled else 0.1 * self.eps

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_final / self.dt + 1e-9))


@dataclass(eq=False)
class Trajectory:
    """Time stamps, stored snapshots and one diagnostic record per step."""

    config: SimulationConfig
    times: np.ndarray
    snapshots: list
    snapshot_times: np.ndarray
    solver_info: list
    records: list

    @property
    def final(self) -> ParticleEnsemble:
        return self.snapshots[-1]


# -- forces ----------------------------------------------------------------

def pairwise_kernel_force(positions, weights, self_force: str = "exclude") -> np.ndarray:
    """Exact kernel field  -sum_j w_j W'(X_i - X_j)  (rescaled units).

    At coincident positions the jump of W' is resolved by its midpoint 0,
    so the self term vanishes whether it is excluded or included.
    """
    x = np.asarray(positions, dtype=float)
    w = np.asarray(weights, dtype=float)
    if self_force not in ("exclude", "include"):
        raise ValueError(f"unknown self-force policy {self_force!r}")
    out = np.empty_like(x)
    block = max(1, 2**22 // max(x.size, 1))
    for s in range(0, x.size, block):
        d = x[s:s + block, None] - x[None, :]
        out[s:s + block] = -(kernel_w_prime(d) @ w)
    return out


def _solve(ens: ParticleEnsemble, cfg: SimulationConfig, guess=None) -> PoissonSolution:
    shape = SELF_FORCE_POLICIES[cfg.self_force][0]
    rho = deposit(ens, cfg.n, shape)
    return solve_full(rho, cfg.eps, cfg.mode, rescaled=cfg.rescaled, options=cfg.poisson,
                      guess=guess)


def acceleration(ens: ParticleEnsemble, cfg: SimulationConfig, guess=None):
    """Field at the particles and the Poisson solution it came from."""
    sol = _solve(ens, cfg, guess)
    interp = SELF_FORCE_POLICIES[cfg.self_force][1]
    if cfg.field_solver == "grid":
        acc = field_at(sol, ens.x, interp)
    else:
        scale = 1.0 if cfg.rescaled else 1.0 / cfg.eps**2
        acc = scale * pairwise_kernel_force(ens.x, ens.w)
        if cfg.mode != "classical":
            sub = PoissonSolution(sol.eps, sol.U_hat, sol.U_hat, sol.U_hat, sol.E_hat, sol.E_hat,
                                  sol.E_hat, sol.residual, sol.iterations, sol.mode, sol.rescaled)
            acc = acc + field_at(sub, ens.x, interp)
    return acc, sol


def _warm(sol: PoissonSolution | None):
    if sol is None or sol.mode != "semilinear":
        return None
    return sol.to_rescaled().U_hat.values


def _check_cfl(ens: ParticleEnsemble, cfg: SimulationConfig) -> None:
    vmax = float(np.max(np.abs(ens.v)))
    if vmax * cfg.dt > 4.0 / cfg.n:
        warnings.warn(f"particles cross more than 4 cells per step (max|v| dt = {vmax * cfg.dt:.3g})",
                      CFLWarning, stacklevel=3)


def _advance(ens, cfg, acc, sol):
    """One step from a state whose acceleration is already known."""
    dt = cfg.dt
    x, v = ens.x, ens.v
    if cfg.integrator == "kdk":
        vh = v + 0.5 * dt * acc
        mid = ens.replace(x=wrap(x + dt * vh), v=vh)
        acc1, sol1 = acceleration(mid, cfg, _warm(sol))
        return mid.replace(v=vh + 0.5 * dt * acc1), acc1, sol1
    if cfg.integrator == "symplectic-euler":
        v1 = v + dt * acc
        new = ens.replace(x=wrap(x + dt * v1), v=v1)
        acc1, sol1 = acceleration(new, cfg, _warm(sol))
        return new, acc1, sol1
    # classical RK4 on (x, v); x is unwrapped inside the step
    g = _warm(sol)

    def f(xs, vs):
        a, s = acceleration(ens.replace(x=wrap(xs), v=vs), cfg, g)
        return vs, a

    k1x, k1v = v, acc
    k2x, k2v = f(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v)
    k3x, k3v = f(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v)
    k4x, k4v = f(x + dt * k3x, v + dt * k3v)
    new = ens.replace(x=wrap(x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)),
                      v=v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v))
    acc1, sol1 = acceleration(new, cfg, g)
    return new, acc1, sol1


def step(ens: ParticleEnsemble, cfg: SimulationConfig) -> ParticleEnsemble:
    """Advance the ensemble by one time step of the configured integrator."""
    _check_cfl(ens, cfg)
    acc, sol = acceleration(ens, cfg)
    return _advance(ens, cfg, acc, sol)[0]


def _record(t, ens, sol, cfg) -> diag.DiagnosticRecord:
    e_field = sol.to_original().E_total.values
    rho = deposit(ens, cfg.n, SELF_FORCE_POLICIES[cfg.self_force][0])
    return diag.DiagnosticRecord(
        t=float(t),
        energy=diag.energy(ens, sol),
        rho_sup=float(np.max(rho.values)),
        field_sup=float(np.max(np.abs(e_field))),
    )


def run(ens0: ParticleEnsemble, cfg: SimulationConfig, callback=None) -> Trajectory:
    """Integrate from ``ens0`` up to ``cfg.t_final``.

    ``callback(k, t, ens, sol)`` is called after every step (k = 0 for the
    initial state) and may return extra fields for the diagnostic record as
    a dictionary.
    """
    steps = cfg.n_steps
    acc, sol = acceleration(ens0, cfg)
    ens = ens0
    times = cfg.dt * np.arange(steps + 1)
    snaps, snap_t, info, recs = [ens0], [0.0], [], []

    def log(k, ens, sol):
        info.append({"residual": sol.residual, "iterations": sol.iterations})
        rec = _record(times[k], ens, sol, cfg)
        if callback is not None:
            extra = callback(k, times[k], ens, sol) or {}
            for key, val in extra.items():
                setattr(rec, key, val)
        recs.append(rec)

    log(0, ens, sol)
    for k in range(1, steps + 1):
        _check_cfl(ens, cfg)
        ens, acc, sol = _advance(ens, cfg, acc, sol)
        log(k, ens, sol)
        if k % cfg.snapshot_every == 0 or k == steps:
            snaps.append(ens)
            snap_t.append(times[k])
    return Trajectory(cfg, times, snaps, np.array(snap_t), info, recs)


# -- time rescaling --------------------------------------------------------

def rescale_trajectory(traj: Trajectory, direction: str = "to-rescaled") -> Trajectory:
    """Map between the original and rescaled time/velocity normalizations.

    ``"to-rescaled"`` sends (t, v) to (t/eps, eps v); ``"to-original"`` is the
    inverse.  Positions and weights are untouched.
    """
    eps = traj.config.eps
    if direction == "to-rescaled":
        ts, vs, flag = 1.0 / eps, eps, True
    elif direction == "to-original":
        ts, vs, flag = eps, 1.0 / eps, False
    else:
        raise ValueError(f"unknown direction {direction!r}")
    if traj.config.rescaled == flag:
        raise ValueError(f"trajectory is already in the {'rescaled' if flag else 'original'} normalization")
    cfg = replace(traj.config, rescaled=flag, dt=traj.config.dt * ts,
                  t_final=traj.config.t_final * ts)
    snaps = [s.replace(v=s.v * vs) for s in traj.snapshots]
    recs = [replace(r, t=r.t * ts) for r in traj.records]
    return Trajectory(cfg, traj.times * ts, snaps, traj.snapshot_times * ts,
                      list(traj.solver_info), recs)


# -- export ------------------------------------------------------------------

def write_trajectory_csv(traj: Trajectory, directory, prefix: str = "snapshot") -> list:
    """One CSV (x, v, w) per stored snapshot plus an index file of times."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for k, (t, s) in enumerate(zip(traj.snapshot_times, traj.snapshots)):
        p = os.path.join(directory, f"{prefix}_{k:05d}.csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "v", "w"])
            for row in zip(s.x, s.v, s.w):
                w.writerow([repr(float(c)) for c in row])
        paths.append(p)
    with open(os.path.join(directory, f"{prefix}_times.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "t"])
        for k, t in enumerate(traj.snapshot_times):
            w.writerow([k, repr(float(t))])
    return paths


def write_trajectory_binary(traj: Trajectory, path) -> None:
    """Stream layout: magic, uint64 N, uint64 count, then per snapshot
    float64 t followed by the x, v, w blocks (little endian)."""
    n = traj.snapshots[0].size
    with open(path, "wb") as fh:
        fh.write(TRAJECTORY_MAGIC)
        fh.write(struct.pack("<QQ", n, len(traj.snapshots)))
        for t, s in zip(traj.snapshot_times, traj.snapshots):
            fh.write(struct.pack("<d", float(t)))
            for a in (s.x, s.v, s.w):
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_trajectory_binary(path):
    """Returns (times, list of ParticleEnsemble)."""
    with open(path, "rb") as fh:
        if fh.read(8) != TRAJECTORY_MAGIC:
            raise ValueError("not a trajectory stream")
        n, count = struct.unpack("<QQ", fh.read(16))
        times, snaps = [], []
        for _ in range(count):
            (t,) = struct.unpack("<d", fh.read(8))
            arr = np.frombuffer(fh.read(24 * n), dtype="<f8").reshape(3, n)
            times.append(t)
            snaps.append(ParticleEnsemble(arr[0].copy(), arr[1].copy(), arr[2].copy()))
    return np.array(times), snaps
