"""Functionals, stability bounds and stability criteria.

Every bound involving constants of size exp(15/(2 eps^2)) is returned as a
natural logarithm so that nothing overflows for small eps.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize

from .measures import GridField, ParticleEnsemble, _stencil
from .poisson import PoissonSolution

__all__ = [
    "DiagnosticRecord",
    "HomogeneousProfile",
    "maxwellian",
    "two_bump",
    "energy",
    "relative_entropy",
    "gronwall_bound_log",
    "gronwall_bound_log_classical",
    "phi_log",
    "phi_log_classical",
    "penrose_criterion",
    "penrose_integral",
    "delta_condition",
    "sobolev_w1_comparison",
    "write_jsonl",
    "read_jsonl",
    "write_summary_csv",
]


@dataclass
class DiagnosticRecord:
    t: float
    energy: float
    rho_sup: float
    relative_entropy: Optional[float] = None
    w1_to_reference: Optional[float] = None
    gronwall_bound_log: Optional[float] = None
    field_sup: Optional[float] = None
    bdelta_norms: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        d["bdelta_norms"] = {repr(float(k)): v for k, v in self.bdelta_norms.items()}
        return json.dumps(d, sort_keys=True)


def write_jsonl(records, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_jsonl(path) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                d["bdelta_norms"] = {float(k): v for k, v in d["bdelta_norms"].items()}
                out.append(DiagnosticRecord(**d))
    return out


def write_summary_csv(records, path) -> None:
    cols = ["t", "energy", "rho_sup", "relative_entropy", "w1_to_reference",
            "gronwall_bound_log", "field_sup"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in records:
            w.writerow(["" if getattr(r, c) is None else repr(getattr(r, c)) for c in cols])


# -- energy and relative entropy -------------------------------------------

def _original_units(ens: ParticleEnsemble, sol: PoissonSolution, rescaled):
    if rescaled is None:
        rescaled = sol.rescaled
    v = ens.v / sol.eps if rescaled else ens.v
    return v, sol.to_original()


def _potential_terms(sol: PoissonSolution, log_ref=None, ref=None) -> float:
    """Gibbs and field terms on the grid (trapezoid = nodal mean on the torus)."""
    u = sol.U_total.values
    n = u.size
    if sol.mode == "semilinear":
        eu = np.exp(u)
        if log_ref is None:
            gibbs = u * eu - eu + 1.0
        else:
            gibbs = eu * (u - log_ref) - eu + ref
    elif sol.mode == "linearized":
        gibbs = 0.5 * u * u if log_ref is None else 0.5 * (u - log_ref) ** 2
    else:
        gibbs = np.zeros(n)
    du = (np.roll(u, -1) - u) * n
    return float(np.mean(gibbs) + 0.5 * sol.eps**2 * np.mean(du * du))


def energy(ens: ParticleEnsemble, sol: PoissonSolution, eps: float | None = None,
           *, rescaled: bool | None = None) -> float:
    """Total energy: kinetic + Gibbs (U e^U - e^U + 1) + eps^2/2 |U'|^2.

    Reported in original units.  ``sol`` must be solved on the deposit of
    ``ens``; if it is in rescaled units the particle velocities are taken to
    be rescaled too (override with ``rescaled``).  The field term uses
    forward differences so that the value is the quantity conserved by the
    energy-conserving particle scheme.  For the linearized and classical
    models the Gibbs term is replaced by U^2/2 and 0.
    """
    if eps is not None and not math.isclose(eps, sol.eps):
        raise ValueError("eps does not match the Poisson solution")
    v, sol = _original_units(ens, sol, rescaled)
    kinetic = 0.5 * float(np.dot(ens.w, v * v))
    return kinetic + _potential_terms(sol)


def relative_entropy(ens: ParticleEnsemble, sol: PoissonSolution, rho_ref: GridField,
                     u_ref: GridField, eps: float | None = None,
                     *, rescaled: bool | None = None) -> float:
    """Modulated energy of the ensemble relative to the fluid state (rho_ref, u_ref)."""
    if eps is not None and not math.isclose(eps, sol.eps):
        raise ValueError("eps does not match the Poisson solution")
    ref = rho_ref.values
    if np.any(ref <= 0):
        raise ValueError("reference density must be positive")
    if rho_ref.n != sol.n or u_ref.n != sol.n:
        raise ValueError("reference fields must live on the Poisson grid")
    v, sol = _original_units(ens, sol, rescaled)
    idx, wts = _stencil(ens.x, u_ref.n, "cic")
    u_at = np.sum(u_ref.values[idx] * wts, axis=0)
    kinetic = 0.5 * float(np.dot(ens.w, (v - u_at) ** 2))
    return kinetic + _potential_terms(sol, np.log(ref), ref)


# -- stability bounds ---------------------------------------------------------

def _check_bound_args(eps, t, rho_sup_integral, w1_initial):
    if not (0.0 < eps <= 1.0):
        raise ValueError(f"eps must lie in (0, 1], got {eps!r}")
    if t < 0 or rho_sup_integral < 0 or w1_initial < 0:
        raise ValueError("t, rho_sup_integral and w1_initial must be nonnegative")


def gronwall_bound_log(eps: float, t: float, rho_sup_integral: float, w1_initial: float) -> float:
    """log of (1/eps) exp{(1/eps)[(1 + 3/eps^2) t + (8 + eps^-2 e^{15/(2 eps^2)}) I]} W1(0).

    ``I`` is the time integral of the sup norm of the bounded density.  The
    huge constant is carried as a logarithm; the result is -inf for W1(0) = 0.
    """
    _check_bound_args(eps, t, rho_sup_integral, w1_initial)
    if w1_initial == 0:
        return -math.inf
    a = (1.0 + 3.0 / eps**2) * t + 8.0 * rho_sup_integral
    # (1/eps) * eps^-2 e^{15/(2eps^2)} * I, in log space when I > 0
    if rho_sup_integral > 0:
        lb = -3.0 * math.log(eps) + 7.5 / eps**2 + math.log(rho_sup_integral)
        expo = a / eps + math.exp(lb) if lb < 700 else math.inf
    else:
        expo = a / eps
    return -math.log(eps) + expo + math.log(w1_initial)


def gronwall_bound_log_classical(eps: float, t: float, rho_sup_integral: float,
                                 w1_initial: float) -> float:
    """Classical Vlasov-Poisson variant: log of (1/eps) e^{(1/eps)[t + 8 I]} W1(0)."""
    _check_bound_args(eps, t, rho_sup_integral, w1_initial)
    if w1_initial == 0:
        return -math.inf
    return -math.log(eps) + (t + 8.0 * rho_sup_integral) / eps + math.log(w1_initial)


def phi_log(eps: float, lam: float) -> float:
    """log phi(eps) = -log eps + (lam / eps^3) exp(15 / (2 eps^2)), lam < 0."""
    if lam >= 0:
        raise ValueError("lambda must be negative")
    if not (0.0 < eps <= 1.0):
        raise ValueError(f"eps must lie in (0, 1], got {eps!r}")
    lg = math.log(-lam) - 3.0 * math.log(eps) + 7.5 / eps**2
    return -math.log(eps) - (math.exp(lg) if lg < 709 else math.inf)


def phi_log_classical(eps: float, lam: float) -> float:
    """log phi(eps) = -log eps + lam / eps for the classical system."""
    if lam >= 0:
        raise ValueError("lambda must be negative")
    if not (0.0 < eps <= 1.0):
        raise ValueError(f"eps must lie in (0, 1], got {eps!r}")
    return -math.log(eps) + lam / eps


# -- homogeneous profiles -----------------------------------------------------

@dataclass(frozen=True)
class HomogeneousProfile:
    """Spatially homogeneous velocity profile mu(v) with derivatives.

    ``d2`` is optional; when absent the second derivative is taken by
    central differences of ``d1``.  ``score`` optionally gives mu'/mu in a
    form that stays finite where mu itself underflows; a profile with a
    score is taken to be positive everywhere.
    """

    mu: Callable
    d1: Callable
    d2: Optional[Callable] = None
    name: str = "profile"
    support: tuple = (-np.inf, np.inf)
    check: bool = True
    score: Optional[Callable] = None

    def __post_init__(self):
        if self.check:
            lo, hi = self.support
            mass = integrate.quad(self.mu, lo, hi, epsabs=1e-12, epsrel=1e-12, limit=200)[0]
            if abs(mass - 1.0) > 1e-8:
                raise ValueError(f"profile mass is {mass!r}, expected 1")

    def second(self, v):
        if self.d2 is not None:
            return self.d2(v)
        h = 1e-5 * max(1.0, abs(v))
        return (self.d1(v + h) - self.d1(v - h)) / (2 * h)

    def shifted(self, c: float) -> "HomogeneousProfile":
        d2 = None if self.d2 is None else (lambda v: self.d2(v - c))
        sc = None if self.score is None else (lambda v: self.score(v - c))
        lo, hi = self.support
        return HomogeneousProfile(lambda v: self.mu(v - c), lambda v: self.d1(v - c), d2,
                                  f"{self.name}+{c}", (lo + c, hi + c), False, sc)

    def reflected(self) -> "HomogeneousProfile":
        d2 = None if self.d2 is None else (lambda v: self.d2(-v))
        sc = None if self.score is None else (lambda v: -self.score(-v))
        lo, hi = self.support
        return HomogeneousProfile(lambda v: self.mu(-v), lambda v: -self.d1(-v), d2,
                                  f"reflected {self.name}", (-hi, -lo), False, sc)


def _gauss(v, m, s):
    z = (v - m) / s
    return np.exp(-0.5 * z * z) / (s * math.sqrt(2 * math.pi))


def maxwellian(sigma: float = 1.0, mean: float = 0.0) -> HomogeneousProfile:
    return HomogeneousProfile(
        lambda v: _gauss(v, mean, sigma),
        lambda v: -(v - mean) / sigma**2 * _gauss(v, mean, sigma),
        lambda v: ((v - mean) ** 2 / sigma**4 - 1 / sigma**2) * _gauss(v, mean, sigma),
        name=f"maxwellian(sigma={sigma})",
        score=lambda v: -(np.asarray(v, dtype=float) - mean) / sigma**2,
    )


def two_bump(a: float, sigma: float) -> HomogeneousProfile:
    """Symmetric mixture (N(-a, sigma^2) + N(a, sigma^2)) / 2."""

    def mu(v):
        return 0.5 * (_gauss(v, -a, sigma) + _gauss(v, a, sigma))

    def d1(v):
        return -0.5 * ((v + a) * _gauss(v, -a, sigma) + (v - a) * _gauss(v, a, sigma)) / sigma**2

    def d2(v):
        s2 = sigma**2
        return 0.5 * (((v + a) ** 2 / s2 - 1) * _gauss(v, -a, sigma)
                      + ((v - a) ** 2 / s2 - 1) * _gauss(v, a, sigma)) / s2

    def score(v):
        # mu is proportional to exp(-v^2/(2 sigma^2)) cosh(a v / sigma^2)
        v = np.asarray(v, dtype=float)
        return (a * np.tanh(a * v / sigma**2) - v) / sigma**2

    return HomogeneousProfile(mu, d1, d2, name=f"two_bump(a={a}, sigma={sigma})", score=score)


# -- Penrose criterion ----------------------------------------------------------

TAYLOR_RADIUS = 1e-3


def penrose_integral(profile: HomogeneousProfile, vbar: float, tol: float = 1e-9) -> float:
    """int (mu(v) - mu(vbar)) / (v - vbar)^2 dv at a critical point vbar.

    Near u = v - vbar the integrand is replaced by its Taylor value
    mu''(vbar)/2 (the first-order term integrates to zero by symmetry).
    """
    m0 = float(profile.mu(vbar))

    def g(u):
        return (profile.mu(vbar + u) - m0) / (u * u)

    total = float(profile.second(vbar)) * TAYLOR_RADIUS
    for sign in (1.0, -1.0):
        lo, hi = TAYLOR_RADIUS, 50.0

        def gs(u, sign=sign):
            return g(sign * u)

        near = integrate.quad(gs, lo, hi, epsabs=tol / 4, epsrel=1e-12, limit=500)[0]
        # the tail is exactly -m0/hi up to the mass of mu beyond hi
        far = integrate.quad(gs, hi, np.inf, epsabs=tol / 4, limit=200)[0]
        total += near + far
    return total


def _local_minima(profile: HomogeneousProfile, interval, resolution):
    vs = np.linspace(interval[0], interval[1], resolution)
    m = np.array([float(profile.mu(v)) for v in vs])
    # flat means equal to rounding relative to the local values
    flat = np.abs(np.diff(m)) <= 1e-13 * np.maximum(np.abs(m[1:]), np.abs(m[:-1]))
    minima = []  # list of (left, right) intervals; left == right for strict minima
    i = 1
    while i < len(vs) - 1:
        if flat[i - 1] or flat[i]:
            j = i
            while j < len(vs) - 1 and flat[j]:
                j += 1
            k = i if not flat[i - 1] else i - 1
            left, right = k, j
            if (left > 0 and right < len(vs) - 1 and m[left - 1] > m[left]
                    and m[right + 1] > m[right]):
                minima.append((vs[left], vs[right]))
            i = j + 1
            continue
        if m[i] < m[i - 1] and m[i] < m[i + 1]:
            res = optimize.minimize_scalar(lambda v: float(profile.mu(v)),
                                           bounds=(vs[i - 1], vs[i + 1]), method="bounded",
                                           options={"xatol": 1e-12})
            vbar = float(res.x)
            # polish on the derivative when it brackets a sign change
            a, b = vs[i - 1], vs[i + 1]
            if profile.d1(a) < 0 < profile.d1(b):
                vbar = optimize.brentq(profile.d1, a, b, xtol=1e-14)
            minima.append((vbar, vbar))
        i += 1
    return minima


def penrose_criterion(profile: HomogeneousProfile, interval=(-10.0, 10.0),
                      resolution: int = 4001) -> dict:
    """Locate local minima of mu and evaluate the instability integral at each.

    A flat minimum [v1, v2] is unstable only if the criterion holds at both
    endpoints and at the midpoint.  Returns a report dictionary; when no
    interior minimum exists ``applicable`` is False and ``unstable`` False.
    """
    minima = _local_minima(profile, interval, resolution)
    rows = []
    for left, right in minima:
        points = [left] if left == right else [left, 0.5 * (left + right), right]
        values = [penrose_integral(profile, p) for p in points]
        rows.append({"vbar": points, "integral": values, "unstable": all(v > 1.0 for v in values)})
    return {
        "profile": profile.name,
        "applicable": bool(rows),
        "minima": rows,
        "unstable": any(r["unstable"] for r in rows),
    }


# -- delta condition --------------------------------------------------------------

def delta_condition(profile: HomogeneousProfile, v_max: float = 20.0, points: int = 20001,
                    tail_bound: float | None = None) -> dict:
    """sup |mu'| / ((1 + |v|) mu) over a graded grid on [-v_max, v_max].

    The grid is uniform in arcsinh(v) so both the core and the tails are
    resolved.  A supplied ``tail_bound`` (a bound on the ratio beyond v_max)
    is folded into the reported supremum.  Profiles with a ``score`` are
    evaluated through it, so Gaussian tails do not underflow.
    """
    s = np.linspace(-np.arcsinh(v_max), np.arcsinh(v_max), points)
    vs = np.sinh(s)
    if profile.score is not None:
        ratio = np.abs(np.asarray(profile.score(vs), dtype=float)) / (1.0 + np.abs(vs))
        sup = max(float(np.max(ratio)), -math.inf if tail_bound is None else float(tail_bound))
        return {"sup": sup, "satisfied": bool(np.isfinite(sup)), "offending_v": None,
                "tail_checked": tail_bound is not None}
    mu = np.asarray(profile.mu(vs), dtype=float)
    bad = np.flatnonzero(~(mu > 0))
    if bad.size:
        return {"sup": math.inf, "satisfied": False, "offending_v": float(vs[bad[0]]),
                "tail_checked": tail_bound is not None}
    ratio = np.abs(np.asarray(profile.d1(vs), dtype=float)) / ((1.0 + np.abs(vs)) * mu)
    sup = float(np.max(ratio))
    if tail_bound is not None:
        sup = max(sup, float(tail_bound))
    return {"sup": sup, "satisfied": bool(np.isfinite(sup)), "offending_v": None,
            "tail_checked": tail_bound is not None}


# -- W1 lower bound by Lipschitz test functions ------------------------------------

def _dictionary(max_mode: int = 4, clamps=(0.5, 1.0, 2.0, 4.0), shifts=(-2, -1, 0, 1, 2)):
    """Separable test functions, each 1-Lipschitz for d_T(x, x') + |v - v'|."""
    out = [("v", None, lambda v: v)]
    for c in clamps:
        for s in shifts:
            out.append((f"clamp(v-{s},{c})", None, lambda v, c=c, s=s: np.clip(v - s, -c, c)))
    for s in shifts:
        out.append((f"tanh(v-{s})", None, lambda v, s=s: np.tanh(v - s)))
    for k in range(1, max_mode + 1):
        w = 2 * np.pi * k
        out.append((f"cos{k}", lambda x, w=w: np.cos(w * x) / w, None))
        out.append((f"sin{k}", lambda x, w=w: np.sin(w * x) / w, None))
    out.append(("tent", lambda x: 0.25 - np.abs(x), None))
    return out


def sobolev_w1_comparison(f: ParticleEnsemble, profile: HomogeneousProfile,
                          max_mode: int = 4) -> dict:
    """Certified lower bound max_phi <f - mu, phi> over a fixed Lipschitz dictionary.

    ``mu`` is the homogeneous measure dx mu(v)dv.  x-only test functions
    integrate to their torus mean against it; v-only ones by adaptive
    quadrature.  Each dictionary element and its negative are used.
    """
    lo, hi = profile.support
    best, best_name = 0.0, None
    for name, fx, fv in _dictionary(max_mode):
        if fv is not None:
            emp = float(np.dot(f.w, fv(f.v)))
            ref = integrate.quad(lambda v: fv(v) * profile.mu(v), lo, hi,
                                 epsabs=1e-12, limit=400)[0]
        else:
            emp = float(np.dot(f.w, fx(f.x)))
            ref = integrate.quad(fx, -0.5, 0.5, epsabs=1e-14)[0]
        val = abs(emp - ref)
        if val > best:
            best, best_name = val, name
    return {"lower_bound": best, "argmax": best_name}
