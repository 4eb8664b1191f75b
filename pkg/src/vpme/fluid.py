"""Multi-fluid pressureless Euler-Poisson systems on the torus.

Each species i carries a density rho_i and a velocity v_i and obeys

    d_t rho_i + d_x(rho_i v_i) = 0,     d_t v_i + v_i d_x v_i = E,

with the shared field E = -U' where eps^2 U'' = e^U - sum_i rho_i (eps > 0)
or U = log(sum_i rho_i) in the quasineutral limit eps = 0.  Space is
discretized by Fourier collocation with 2/3-rule dealiasing of the quadratic
terms and time by classical RK4.  Runs are monitored by the analytic norms
sum_k |g_k| delta^|k| and aborted once the top third of the spectrum
carries more than a small fraction of the non-constant spectral mass.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .measures import GridField, ParticleEnsemble, grid_nodes
from .poisson import PoissonOptions, solve_full, spectral_derivative

POSITIVITY_FLOOR = 1e-6
TAIL_TOL = 1e-6
FLUID_POISSON = PoissonOptions(tol=1e-13)

__all__ = [
    "FluidState",
    "FluidRun",
    "AnalyticNormMonitor",
    "fluid_rhs",
    "limit_rhs",
    "integrate_fluid",
    "dirac_superposition",
    "analytic_norm",
    "spectral_tail",
    "theta_quadrature",
    "fields",
    "write_snapshot_csv",
    "write_monitor_jsonl",
]


@dataclass(frozen=True, eq=False)
class FluidState:
    """Species densities and velocities, arrays of shape (species, n)."""

    rho: np.ndarray
    v: np.ndarray
    eps: float

    def __post_init__(self):
        rho = np.atleast_2d(np.asarray(self.rho, dtype=float)).copy()
        v = np.atleast_2d(np.asarray(self.v, dtype=float)).copy()
        if rho.shape != v.shape:
            raise ValueError("rho and v must have the same shape")
        n = rho.shape[1]
        if n < 4 or n & (n - 1):
            raise ValueError("grid size must be a power of two >= 4")
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(v))):
            raise FloatingPointError("non-finite fluid state")
        if np.any(rho < 0):
            raise ValueError("species densities must be nonnegative")
        if abs(rho.sum(axis=0).mean() - 1.0) > 1e-10:
            raise ValueError("total mass must be 1")
        if not (0.0 <= self.eps <= 1.0):
            raise ValueError(f"eps must lie in [0, 1], got {self.eps!r}")
        rho.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "v", v)

    @property
    def species(self) -> int:
        return self.rho.shape[0]

    @property
    def n(self) -> int:
        return self.rho.shape[1]

    @property
    def total_density(self) -> GridField:
        return GridField(self.rho.sum(axis=0), "density")

    def density(self, i: int) -> GridField:
        return GridField(self.rho[i], "density")

    def velocity(self, i: int) -> GridField:
        return GridField(self.v[i], "field")

    def masses(self) -> np.ndarray:
        return self.rho.mean(axis=1)

    @classmethod
    def single(cls, rho, v, eps: float) -> "FluidState":
        return cls(np.asarray(rho)[None, :], np.asarray(v)[None, :], eps)


# -- spectral helpers ---------------------------------------------------------

def _dealias_mask(n: int) -> np.ndarray:
    k = np.abs(np.fft.fftfreq(n, 1.0 / n))
    return k <= n / 3.0


def _ddx_dealiased(q: np.ndarray) -> np.ndarray:
    """d/dx of a quadratic product with the top third of modes removed."""
    n = q.shape[-1]
    k = 2.0 * np.pi * np.fft.fftfreq(n, 1.0 / n)
    qh = np.fft.fft(q, axis=-1) * _dealias_mask(n)
    return np.real(np.fft.ifft(1j * k * qh, axis=-1))


def analytic_norm(g, delta: float) -> float:
    """sum_k |g_k| delta^|k| over the resolved Fourier modes of g."""
    if not (0.0 < delta <= 1.0):
        raise ValueError(f"delta must lie in (0, 1], got {delta!r}")
    vals = g.values if isinstance(g, GridField) else np.asarray(g, dtype=float)
    n = vals.size
    gh = np.fft.fft(vals) / n
    k = np.abs(np.fft.fftfreq(n, 1.0 / n))
    return float(np.sum(np.abs(gh) * delta**k))


def spectral_tail(g) -> float:
    """Share of the non-constant spectral mass carried by the top third of modes."""
    vals = g.values if isinstance(g, GridField) else np.asarray(g, dtype=float)
    n = vals.size
    a = np.abs(np.fft.fft(vals))
    k = np.abs(np.fft.fftfreq(n, 1.0 / n))
    total = float(np.sum(a[k > 0]))
    if total <= 1e-14 * n:
        return 0.0
    return float(np.sum(a[k > n / 3.0]) / total)


# -- right-hand sides -------------------------------------------------------

def _transport(rho: np.ndarray, v: np.ndarray):
    return -_ddx_dealiased(rho * v), -_ddx_dealiased(0.5 * v * v)


def fields(state: FluidState, options: PoissonOptions | None = None, guess=None):
    """Shared potential and field (U, E) in original units, plus the Poisson solution."""
    total = state.rho.sum(axis=0)
    if state.eps == 0:
        if np.min(total) < POSITIVITY_FLOOR:
            raise FloatingPointError(
                f"total density {np.min(total):.3g} below the positivity floor {POSITIVITY_FLOOR}")
        u = np.log(total)
        return u, -spectral_derivative(u), None
    sol = solve_full(GridField(total, "density"), state.eps, "semilinear",
                     options=options or FLUID_POISSON, guess=guess, discretization="spectral")
    return sol.U_total.values, sol.E_total.values, sol


def fluid_rhs(state: FluidState, options: PoissonOptions | None = None, guess=None):
    """(d_t rho, d_t v) for eps > 0, with E from the semilinear Poisson solve."""
    if state.eps <= 0:
        raise ValueError("fluid_rhs needs eps > 0; use limit_rhs for eps = 0")
    _, e, _ = fields(state, options, guess)
    drho, dv = _transport(state.rho, state.v)
    return drho, dv + e[None, :]


def limit_rhs(state: FluidState):
    """(d_t rho, d_t v) for the quasineutral system with U = log(sum_i rho_i)."""
    if state.eps != 0:
        raise ValueError("limit_rhs needs eps = 0")
    _, e, _ = fields(state)
    drho, dv = _transport(state.rho, state.v)
    return drho, dv + e[None, :]


# -- integration ---------------------------------------------------------------

@dataclass
class AnalyticNormMonitor:
    deltas: tuple = (0.25, 0.5, 0.75, 1.0)
    records: list = field(default_factory=list)

    def observe(self, t: float, state: FluidState) -> dict:
        total = state.rho.sum(axis=0)
        rec = {
            "t": float(t),
            "eta": {repr(d): analytic_norm(total - 1.0, d) for d in self.deltas},
            "rho": [{repr(d): analytic_norm(r, d) for d in self.deltas} for r in state.rho],
            "v": [{repr(d): analytic_norm(u, d) for d in self.deltas} for u in state.v],
            "tail": max(max(spectral_tail(r) for r in state.rho),
                        max(spectral_tail(u) for u in state.v)),
            "mass": float(total.mean()),
        }
        self.records.append(rec)
        return rec


@dataclass(eq=False)
class FluidRun:
    times: np.ndarray
    states: list
    monitor: AnalyticNormMonitor
    aborted: bool = False
    reason: str = ""

    @property
    def final(self) -> FluidState:
        return self.states[-1]


def dt_cap(state: FluidState) -> float:
    vmax = float(np.max(np.abs(state.v)))
    cell = 1.0 / state.n
    lim = cell / vmax if vmax > 0 else math.inf
    if state.eps > 0:
        lim = min(lim, state.eps)
    return 0.25 * lim


def integrate_fluid(state0: FluidState, T: float, dt: float, scheme: str = "rk4",
                    monitor: AnalyticNormMonitor | None = None, snapshot_every: int = 1,
                    tail_tol: float = TAIL_TOL, options: PoissonOptions | None = None) -> FluidRun:
    """RK4 integration up to time T with analytic-norm monitoring.

    The number of steps is round(T/dt) (T must be a multiple of dt up to
    1e-9).  A step larger than 0.25 min(cell/max|v|, eps) triggers a warning.
    The run stops early, with ``aborted`` set, when the spectral tail
    exceeds ``tail_tol`` or a state becomes non-finite.
    """
    if scheme != "rk4":
        raise ValueError(f"unknown scheme {scheme!r}")
    if dt <= 0 or T < 0:
        raise ValueError("need dt > 0 and T >= 0")
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be an integer multiple of dt")
    if dt > dt_cap(state0) * (1 + 1e-12):
        warnings.warn(f"dt={dt} exceeds the recommended cap {dt_cap(state0):.3g}", stacklevel=2)
    monitor = monitor or AnalyticNormMonitor()
    eps = state0.eps
    guess = [None]

    def rhs(rho, v):
        if eps == 0:
            return _limit_raw(rho, v)
        u, e, sol = _fields_raw(rho.sum(axis=0), eps, options, guess[0])
        guess[0] = sol.to_rescaled().U_hat.values
        drho, dv = _transport(rho, v)
        return drho, dv + e[None, :]

    rho, v = state0.rho.copy(), state0.v.copy()
    times, states = [0.0], [state0]
    monitor.observe(0.0, state0)
    for k in range(1, steps + 1):
        try:
            k1 = rhs(rho, v)
            k2 = rhs(rho + 0.5 * dt * k1[0], v + 0.5 * dt * k1[1])
            k3 = rhs(rho + 0.5 * dt * k2[0], v + 0.5 * dt * k2[1])
            k4 = rhs(rho + dt * k3[0], v + dt * k3[1])
            rho = rho + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            v = v + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(v))):
                raise FloatingPointError("non-finite fluid state")
            state = FluidState(rho, v, eps)
        except (FloatingPointError, ValueError) as exc:
            return FluidRun(np.array(times), states, monitor, True, f"step {k}: {exc}")
        rec = monitor.observe(k * dt, state) if (k % snapshot_every == 0 or k == steps) else None
        if rec is None:
            tail = max(max(spectral_tail(r) for r in rho), max(spectral_tail(u) for u in v))
        else:
            tail = rec["tail"]
            times.append(k * dt)
            states.append(state)
        if tail > tail_tol:
            if rec is None:
                times.append(k * dt)
                states.append(state)
            return FluidRun(np.array(times), states, monitor, True,
                            f"spectral tail {tail:.3g} exceeds {tail_tol:g} at t={k * dt:.6g}")
    return FluidRun(np.array(times), states, monitor)


def _fields_raw(total: np.ndarray, eps: float, options=None, guess=None):
    sol = solve_full(GridField(total, "density"), eps, "semilinear",
                     options=options or FLUID_POISSON, guess=guess, discretization="spectral")
    return sol.U_total.values, sol.E_total.values, sol


def _limit_raw(rho, v):
    total = rho.sum(axis=0)
    if np.min(total) < POSITIVITY_FLOOR:
        raise FloatingPointError("total density below the positivity floor")
    e = -spectral_derivative(np.log(total))
    drho, dv = _transport(rho, v)
    return drho, dv + e[None, :]


# -- kinetic adapters ----------------------------------------------------------

def dirac_superposition(state: FluidState) -> ParticleEnsemble:
    """One particle per (species, node) with weight rho_i(x_j)/n and velocity v_i(x_j)."""
    n, s = state.n, state.species
    x = np.tile(grid_nodes(n), s)
    w = state.rho.ravel() / n
    return ParticleEnsemble(x, state.v.ravel(), w / w.sum())


def theta_quadrature(rho_profile, v_profile, nodes: int, n: int, eps: float) -> FluidState:
    """Finite-species approximation of a fiber family parametrized by theta.

    ``rho_profile(x, theta)`` is the fiber density with respect to the
    Cauchy measure dtheta / (pi (1 + theta^2)) and ``v_profile(x, theta)``
    its velocity.  With theta = tan(phi) that measure is dphi/pi on
    (-pi/2, pi/2), where Gauss-Legendre nodes are used.
    """
    t, w = np.polynomial.legendre.leggauss(nodes)
    phi = 0.5 * np.pi * t
    wq = 0.5 * w  # dphi/pi = (pi/2) dt / pi
    theta = np.tan(phi)
    x = grid_nodes(n)
    rho = np.array([wq[k] * rho_profile(x, theta[k]) for k in range(nodes)])
    v = np.array([v_profile(x, theta[k]) * np.ones(n) for k in range(nodes)])
    rho = rho / rho.sum(axis=0).mean()
    return FluidState(rho, v, eps)


# -- output ---------------------------------------------------------------------

def write_snapshot_csv(state: FluidState, path, options: PoissonOptions | None = None) -> None:
    """Columns x, rho1..rhoN, v1..vN, U, E."""
    u, e, _ = fields(state, options)
    s = state.species
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x"] + [f"rho{i + 1}" for i in range(s)] + [f"v{i + 1}" for i in range(s)]
                   + ["U", "E"])
        for j, xj in enumerate(grid_nodes(state.n)):
            row = [xj] + list(state.rho[:, j]) + list(state.v[:, j]) + [u[j], e[j]]
            w.writerow([repr(float(c)) for c in row])


def write_monitor_jsonl(monitor: AnalyticNormMonitor, path) -> None:
    with open(path, "w") as fh:
        for rec in monitor.records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
