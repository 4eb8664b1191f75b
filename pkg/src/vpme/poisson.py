"""Semilinear Poisson solver eps^2 U'' = e^U - rho on the unit torus.

The potential is split as U = U_bar + U_hat where U_bar solves the linear
problem eps^2 U_bar'' = 1 - rho (a convolution with the kernel W) and U_hat is
the smooth nonlinear correction.  In the rescaled normalization every
potential is multiplied by eps^2, so that

    U_bar'' = 1 - rho,    U_hat'' = exp((U_bar + U_hat) / eps^2) - 1.

The correction is the minimizer of the strictly convex functional

    E[h] = int ( |h'|^2 / 2 + eps^2 exp((U_bar + h) / eps^2) - h ) dx

and is computed by damped Newton on second-order central differences, with
Armijo backtracking on the discrete version of E.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded
from scipy.special import logsumexp

from .measures import GridField, _stencil, _stencil_derivative, grid_nodes

EXP_CLAMP = 700.0
MODES = ("semilinear", "linearized", "classical")

__all__ = [
    "PoissonError",
    "NewtonDivergenceError",
    "ExponentOverflowError",
    "PoissonOptions",
    "PoissonSolution",
    "kernel_w",
    "kernel_w_prime",
    "solve_linear_part",
    "solve_nonlinear_correction",
    "solve_full",
    "field_at",
    "correction_bounds",
    "spectral_derivative",
    "write_fields_csv",
]


class PoissonError(RuntimeError):
    pass


class NewtonDivergenceError(PoissonError):
    """Newton did not reach the tolerance; grid too coarse or eps too small for it."""


class ExponentOverflowError(PoissonError):
    """The converged iterate still needed the exponential clamp."""


@dataclass(frozen=True)
class PoissonOptions:
    tol: float = 1e-10
    max_iter: int = 50
    initial_guess: str = "zero"  # "zero", "minus-bar" or "quasineutral"
    assert_bounds: bool = False


@dataclass(frozen=True, eq=False)
class PoissonSolution:
    eps: float
    U_bar: GridField
    U_hat: GridField
    U_total: GridField
    E_bar: GridField
    E_hat: GridField
    E_total: GridField
    residual: float
    iterations: int
    mode: str
    rescaled: bool
    bounds: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.U_total.n

    def to_original(self) -> "PoissonSolution":
        """The same solution expressed with potentials in original units."""
        if not self.rescaled:
            return self
        s = 1.0 / self.eps**2
        return _scaled(self, s, rescaled=False)

    def to_rescaled(self) -> "PoissonSolution":
        if self.rescaled:
            return self
        return _scaled(self, self.eps**2, rescaled=True)


def _scaled(sol: PoissonSolution, s: float, rescaled: bool) -> PoissonSolution:
    def sc(g: GridField) -> GridField:
        return GridField(g.values * s, g.quantity)

    return PoissonSolution(
        sol.eps, sc(sol.U_bar), sc(sol.U_hat), sc(sol.U_total), sc(sol.E_bar),
        sc(sol.E_hat), sc(sol.E_total), sol.residual, sol.iterations, sol.mode,
        rescaled, dict(sol.bounds),
    )


# -- kernel ---------------------------------------------------------------

def kernel_w(x):
    """W(x) = (x^2 - |x|)/2 on [-1/2, 1/2), extended periodically."""
    x = np.mod(np.asarray(x, dtype=float) + 0.5, 1.0) - 0.5
    return 0.5 * (x * x - np.abs(x))


def kernel_w_prime(x):
    """W'(x) = x - sign(x)/2, with the midpoint value 0 at the jump x = 0."""
    x = np.mod(np.asarray(x, dtype=float) + 0.5, 1.0) - 0.5
    return x - 0.5 * np.sign(x)


# -- grid operators ---------------------------------------------------------

def _wavenumbers(n: int) -> np.ndarray:
    return 2.0 * np.pi * np.fft.fftfreq(n, 1.0 / n)


def _fd_symbol(n: int) -> np.ndarray:
    """Eigenvalues of the periodic central second difference."""
    j = np.fft.fftfreq(n, 1.0 / n)
    return -4.0 * n * n * np.sin(np.pi * j / n) ** 2


def _d2(u: np.ndarray) -> np.ndarray:
    n = u.size
    return (np.roll(u, -1) - 2.0 * u + np.roll(u, 1)) * (n * n)


def spectral_derivative(u: np.ndarray, order: int = 1) -> np.ndarray:
    n = u.size
    k = _wavenumbers(n)
    uh = np.fft.fft(u)
    if n % 2 == 0 and order % 2 == 1:
        k = k.copy()
        k[n // 2] = 0.0
    return np.real(np.fft.ifft((1j * k) ** order * uh))


def _solve_zero_mean(f: np.ndarray, method: str) -> np.ndarray:
    """Zero-mean solution of u'' = f for zero-mean f."""
    n = f.size
    sym = _fd_symbol(n) if method == "fd" else -_wavenumbers(n) ** 2
    sym[0] = 1.0
    fh = np.fft.fft(f)
    fh[0] = 0.0
    return np.real(np.fft.ifft(fh / sym))


def _cyclic_tridiag_solve(diag: np.ndarray, off: float, rhs: np.ndarray) -> np.ndarray:
    """Solve the periodic tridiagonal system with constant off-diagonal ``off``."""
    n = diag.size
    gamma = -diag[0]
    b = diag.copy()
    b[0] -= gamma
    b[-1] -= off * off / gamma
    ab = np.empty((3, n))
    ab[0, :] = off
    ab[1, :] = b
    ab[2, :] = off
    u = np.zeros(n)
    u[0] = gamma
    u[-1] = off
    sol = solve_banded((1, 1), ab, np.column_stack([rhs, u]), check_finite=False)
    y, z = sol[:, 0], sol[:, 1]
    vy = y[0] + off / gamma * y[-1]
    vz = z[0] + off / gamma * z[-1]
    return y - vy / (1.0 + vz) * z


def _validate_density(rho: GridField, tol: float = 1e-10) -> np.ndarray:
    vals = rho.values
    if np.any(vals < 0):
        raise ValueError("density must be nonnegative")
    if abs(vals.mean() - 1.0) > tol:
        raise ValueError(f"density must have mean 1, got {vals.mean()!r}")
    return vals


def _check_eps(eps: float) -> None:
    if not (0.0 < eps <= 1.0):
        raise ValueError(f"eps must lie in (0, 1], got {eps!r}")


# -- linear part --------------------------------------------------------------

def solve_linear_part(rho: GridField, eps: float, rescaled: bool = True, method: str = "fd"):
    """Kernel part U_bar = W * rho and its field E_bar = -U_bar'.

    The convolution is realized as the periodic inverse of the discrete
    Laplacian (``method="fd"``, consistent with the Newton discretization) or
    of the spectral one (``"spectral"``).  The additive constant is the
    continuum gauge mean(U_bar) = -mean(rho)/12.  In original units
    everything is divided by eps^2.
    """
    _check_eps(eps)
    vals = _validate_density(rho)
    ubar = _solve_zero_mean(1.0 - vals, method) - vals.mean() / 12.0
    if not rescaled:
        ubar = ubar / eps**2
    ebar = -spectral_derivative(ubar)
    return GridField(ubar, "potential"), GridField(ebar, "field")


# -- nonlinear correction ---------------------------------------------------

def _energy(h: np.ndarray, ubar: np.ndarray, eps2: float, dh: np.ndarray | None = None) -> float:
    if dh is None:
        dh = (np.roll(h, -1) - h) * h.size
    psi = np.minimum((ubar + h) / eps2, EXP_CLAMP)
    return float(np.mean(0.5 * dh * dh + eps2 * np.exp(psi) - h))


def _initial_guess(kind, ubar: np.ndarray, rho: np.ndarray, eps2: float) -> np.ndarray:
    if isinstance(kind, np.ndarray):
        h = kind.astype(float).copy()
    elif kind == "zero":
        h = np.zeros_like(ubar)
    elif kind == "minus-bar":
        h = -ubar.copy()
    elif kind == "quasineutral":
        h = -ubar + eps2 * np.log(np.maximum(rho, 1e-300))
        h = np.maximum(h, -ubar - 50.0 * eps2)
    else:
        raise ValueError(f"unknown initial guess {kind!r}")
    # shift so that mean(exp(psi)) = 1, computed in log space
    psi = (ubar + h) / eps2
    return h - eps2 * (logsumexp(psi) - np.log(h.size))


def _damped_newton(h, ubar, eps2, opts, d2, solve_jacobian, energy):
    """Newton on F(h) = h'' - exp((ubar + h)/eps2) + 1 with Armijo backtracking on E.

    Near convergence the energy differences drop below rounding and stop
    being informative; steps are then accepted when they reduce |F|.
    """
    n = h.size
    en = energy(h)

    def residual(h):
        psi = (ubar + h) / eps2
        e = np.exp(np.minimum(psi, EXP_CLAMP))
        return d2(h) - e + 1.0, e, psi

    F, e, psi = residual(h)
    res = float(np.max(np.abs(F)))
    for it in range(opts.max_iter + 1):
        floor = 16.0 * np.finfo(float).eps * n * n * (1.0 + np.max(np.abs(h)))
        if res <= max(opts.tol, floor):
            if np.any(psi > EXP_CLAMP):
                raise ExponentOverflowError("converged iterate exceeds the exponential clamp")
            return h, res, it
        if it == opts.max_iter:
            break
        step = solve_jacobian(e, -F)
        slope = -float(np.mean(F * step))  # directional derivative of E, negative
        noise = 1e-13 * (1.0 + abs(en))
        t = 1.0
        while t >= 1e-10:
            trial = h + t * step
            en_trial = energy(trial)
            if en_trial <= en + 1e-4 * t * slope:
                break
            if abs(en_trial - en) <= noise:
                F_t = residual(trial)[0]
                if np.max(np.abs(F_t)) < res:
                    break
            t *= 0.5
        else:
            break
        h, en = trial, en_trial
        F, e, psi = residual(h)
        res = float(np.max(np.abs(F)))
    raise NewtonDivergenceError(
        f"Newton did not converge in {opts.max_iter} iterations (residual {res:.3e}); "
        "refine the grid or increase eps"
    )


def _newton(rho: np.ndarray, ubar: np.ndarray, eps: float, opts: PoissonOptions, guess=None):
    """Rescaled-unit Newton iteration for U_hat.  Returns (h, residual, iterations)."""
    n = ubar.size
    eps2 = eps * eps
    h = _initial_guess(opts.initial_guess if guess is None else guess, ubar, rho, eps2)
    off = float(n * n)

    def solve_jacobian(e, rhs):
        return _cyclic_tridiag_solve(-2.0 * off - e / eps2, off, rhs)

    return _damped_newton(h, ubar, eps2, opts, _d2, solve_jacobian,
                          lambda h: _energy(h, ubar, eps2))


@lru_cache(maxsize=8)
def _spectral_d2_matrix(n: int) -> np.ndarray:
    k2 = _wavenumbers(n) ** 2
    m = np.real(np.fft.ifft(-k2[:, None] * np.fft.fft(np.eye(n), axis=0), axis=0))
    m.setflags(write=False)
    return m


def _newton_spectral(rho: np.ndarray, ubar: np.ndarray, eps: float, opts: PoissonOptions, guess=None):
    """Dense Newton with the Fourier second derivative; meant for n <= 512."""
    n = ubar.size
    if n > 512:
        raise ValueError("spectral Newton is limited to n <= 512")
    eps2 = eps * eps
    d2 = _spectral_d2_matrix(n)
    h = _initial_guess(opts.initial_guess if guess is None else guess, ubar, rho, eps2)

    def solve_jacobian(e, rhs):
        return np.linalg.solve(d2 - np.diag(e / eps2), rhs)

    return _damped_newton(h, ubar, eps2, opts, lambda h: d2 @ h, solve_jacobian,
                          lambda h: _energy(h, ubar, eps2, spectral_derivative(h)))

def _check_small_eps(n: int, eps: float) -> None:
    if eps < 0.05 and n < 4.0 / eps:
        raise PoissonError(f"eps={eps} needs at least {int(np.ceil(4 / eps))} grid points, got {n}")


def solve_nonlinear_correction(
    rho: GridField,
    U_bar: GridField,
    eps: float,
    *,
    rescaled: bool = True,
    options: PoissonOptions | None = None,
):
    """Nonlinear correction (U_hat, E_hat) for a given kernel part U_bar.

    ``U_bar`` and the outputs are in rescaled units when ``rescaled`` is true
    and in original units otherwise.
    """
    _check_eps(eps)
    opts = options or PoissonOptions()
    if U_bar.n != rho.n:
        raise ValueError("rho and U_bar must live on the same grid")
    _check_small_eps(rho.n, eps)
    ubar = U_bar.values if rescaled else U_bar.values * eps**2
    h, _, _ = _newton(rho.values, ubar, eps, opts)
    if rescaled and opts.assert_bounds:
        _assert_bounds(correction_bounds(h, eps))
    if not rescaled:
        h = h / eps**2
    return GridField(h, "potential"), GridField(-spectral_derivative(h), "field")


def correction_bounds(U_hat_rescaled: np.ndarray, eps: float) -> dict:
    """Sup norms of U_hat, U_hat', U_hat'' (rescaled units) against 3, 2 and 3/eps^2."""
    h = np.asarray(U_hat_rescaled, dtype=float)
    n = h.size
    d1 = (np.roll(h, -1) - h) * n
    d2 = _d2(h)
    sup0, sup1, sup2 = (float(np.max(np.abs(a))) for a in (h, d1, d2))
    return {
        "sup_U_hat": sup0,
        "sup_dU_hat": sup1,
        "sup_d2U_hat": sup2,
        "bound_d2U_hat": 3.0 / eps**2,
        "holds": bool(sup0 <= 3.0 and sup1 <= 2.0 and sup2 <= 3.0 / eps**2),
    }


def _assert_bounds(b: dict) -> None:
    if not b["holds"]:
        raise PoissonError(f"a-priori bounds violated: {b}")


# -- composite solve ----------------------------------------------------------

def solve_full(
    rho: GridField,
    eps: float,
    mode: str = "semilinear",
    *,
    rescaled: bool = False,
    options: PoissonOptions | None = None,
    guess: np.ndarray | None = None,
    discretization: str = "fd",
) -> PoissonSolution:
    """Solve the Poisson problem of the chosen model for the density ``rho``.

    ``mode`` is ``"semilinear"`` (eps^2 U'' = e^U - rho), ``"linearized"``
    (eps^2 U'' = U + 1 - rho, solved spectrally) or ``"classical"``
    (eps^2 U'' = 1 - rho).  ``guess`` optionally warm-starts Newton with a
    previous U_hat given in rescaled units.  ``discretization="spectral"``
    replaces the central differences by Fourier differentiation (dense
    Newton, small grids only), which the fluid solver uses.
    """
    if mode not in MODES:
        raise ValueError(f"unknown Poisson mode {mode!r}")
    if discretization not in ("fd", "spectral"):
        raise ValueError(f"unknown discretization {discretization!r}")
    _check_eps(eps)
    opts = options or PoissonOptions()
    vals = _validate_density(rho)
    eps2 = eps * eps
    n = rho.n

    if mode == "semilinear":
        _check_small_eps(n, eps)
        ubar = _solve_zero_mean(1.0 - vals, discretization) - vals.mean() / 12.0
        solver = _newton if discretization == "fd" else _newton_spectral
        h, res, its = solver(vals, ubar, eps, opts, guess)
        bounds = correction_bounds(h, eps)
        if opts.assert_bounds:
            _assert_bounds(bounds)
    elif mode == "linearized":
        ubar = _solve_zero_mean(1.0 - vals, "spectral") - vals.mean() / 12.0
        k2 = _wavenumbers(n) ** 2
        u = np.real(np.fft.ifft(np.fft.fft(1.0 - vals) / (-eps2 * k2 - 1.0)))
        h = eps2 * u - ubar
        resid = eps2 * spectral_derivative(u, 2) - u - 1.0 + vals
        res, its, bounds = float(np.max(np.abs(resid))), 0, {}
    else:
        ubar = _solve_zero_mean(1.0 - vals, discretization) - vals.mean() / 12.0
        h = np.zeros(n)
        d2u = _d2(ubar) if discretization == "fd" else spectral_derivative(ubar, 2)
        res = float(np.max(np.abs(d2u - 1.0 + vals)))
        its, bounds = 0, {}

    scale = 1.0 if rescaled else 1.0 / eps2
    ub, uh = ubar * scale, h * scale
    ut = ub + uh
    eb, eh = -spectral_derivative(ub), -spectral_derivative(uh)
    return PoissonSolution(
        eps=eps,
        U_bar=GridField(ub, "potential"),
        U_hat=GridField(uh, "potential"),
        U_total=GridField(ut, "potential"),
        E_bar=GridField(eb, "field"),
        E_hat=GridField(eh, "field"),
        E_total=GridField(eb + eh, "field"),
        residual=res,
        iterations=its,
        mode=mode,
        rescaled=rescaled,
        bounds=bounds,
    )


# -- evaluation at particles --------------------------------------------------

INTERPOLATIONS = ("linear", "cubic", "tsc", "gradient-cic", "gradient-tsc")


def field_at(solution: PoissonSolution, positions, interpolation: str = "linear") -> np.ndarray:
    """Electric field of ``solution`` at arbitrary torus positions.

    ``"linear"``, ``"cubic"`` and ``"tsc"`` interpolate the nodal field
    E_total (piecewise linear, periodic cubic spline, quadratic spline).  The
    ``"gradient-*"`` variants instead differentiate the spline interpolant of
    U_total, which is the coupling under which the particle system conserves
    the discrete energy exactly in continuous time.
    """
    x = np.atleast_1d(np.asarray(positions, dtype=float))
    n = solution.n
    if interpolation == "linear":
        idx, wts = _stencil(x, n, "cic")
        return np.sum(solution.E_total.values[idx] * wts, axis=0)
    if interpolation == "tsc":
        idx, wts = _stencil(x, n, "tsc")
        return np.sum(solution.E_total.values[idx] * wts, axis=0)
    if interpolation == "cubic":
        nodes = np.append(grid_nodes(n), 0.5)
        vals = np.append(solution.E_total.values, solution.E_total.values[0])
        spline = CubicSpline(nodes, vals, bc_type="periodic")
        return spline(np.mod(x + 0.5, 1.0) - 0.5)
    if interpolation in ("gradient-cic", "gradient-tsc"):
        idx, dw = _stencil_derivative(x, n, interpolation.split("-")[1])
        return -np.sum(solution.U_total.values[idx] * dw, axis=0)
    raise ValueError(f"unknown interpolation {interpolation!r}")


def write_fields_csv(solution: PoissonSolution, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "U", "E"])
        for row in zip(grid_nodes(solution.n), solution.U_total.values, solution.E_total.values):
            writer.writerow([repr(float(c)) for c in row])
