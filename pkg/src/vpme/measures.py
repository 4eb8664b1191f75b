"""Probability measures on the phase space T x R.

The torus is represented by canonical reals in [-1/2, 1/2).  Two carriers are
provided: :class:`ParticleEnsemble` (weighted point clouds, the Lagrangian
picture) and :class:`GridField` (functions sampled on a uniform periodic grid).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import ndtri

MASS_TOL = 1e-12
BINARY_MAGIC = b"VPME0001"

__all__ = [
    "GridField",
    "ParticleEnsemble",
    "wrap",
    "torus_distance",
    "grid_nodes",
    "deposit",
    "sample",
    "first_moment",
    "velocity_rescale",
    "write_csv",
    "read_csv",
    "write_binary",
    "read_binary",
]


def wrap(x):
    """Map reals onto the canonical torus interval [-1/2, 1/2)."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("wrap: non-finite coordinate")
    r = np.mod(arr + 0.5, 1.0)
    # np.mod may round up to exactly 1.0 for tiny negative inputs
    r = np.where(r >= 1.0, 0.0, r)
    out = r - 0.5
    return float(out) if out.ndim == 0 else out


def torus_distance(x, y):
    """Geodesic distance on the unit torus, always in [0, 1/2]."""
    d = np.mod(np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)), 1.0)
    out = np.minimum(d, 1.0 - d)
    return float(out) if out.ndim == 0 else out


def grid_nodes(n: int) -> np.ndarray:
    return -0.5 + np.arange(n) / n


def _check_grid_size(n: int) -> None:
    if n < 4 or (n & (n - 1)) != 0:
        raise ValueError(f"grid size must be a power of two >= 4, got {n}")


@dataclass(frozen=True, eq=False)
class GridField:
    """Real function sampled at the nodes x_j = -1/2 + j/n of a periodic grid."""

    values: np.ndarray
    quantity: str = "density"

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValueError("GridField values must be one-dimensional")
        _check_grid_size(vals.size)
        if self.quantity not in ("density", "potential", "field"):
            raise ValueError(f"unknown quantity {self.quantity!r}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def dx(self) -> float:
        return 1.0 / self.values.size

    @property
    def x(self) -> np.ndarray:
        return grid_nodes(self.n)

    def mean(self) -> float:
        return float(self.values.mean())

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"GridField(n={self.n}, quantity={self.quantity!r})"


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Weighted point cloud on T x R.

    Positions are stored in canonical form; the weights must be nonnegative
    and sum to one.
    """

    x: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.array(self.x, dtype=float))
        v = np.atleast_1d(np.array(self.v, dtype=float))
        w = np.atleast_1d(np.array(self.w, dtype=float))
        if not (x.ndim == v.ndim == w.ndim == 1):
            raise ValueError("ensemble arrays must be one-dimensional")
        if not (x.size == v.size == w.size) or x.size == 0:
            raise ValueError("positions, velocities and weights need equal nonzero length")
        if not np.all(np.isfinite(v)) or not np.all(np.isfinite(w)):
            raise ValueError("non-finite velocity or weight")
        if np.any(w < 0):
            raise ValueError("negative weight")
        if abs(w.sum() - 1.0) > MASS_TOL * max(1.0, np.sqrt(w.size)):
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        x = np.atleast_1d(wrap(x))
        for a in (x, v, w):
            a.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)

    @classmethod
    def uniform(cls, x, v) -> "ParticleEnsemble":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(x, v, np.full(x.size, 1.0 / x.size))

    @property
    def size(self) -> int:
        return self.x.size

    def __len__(self):
        return self.x.size

    def replace(self, x=None, v=None) -> "ParticleEnsemble":
        return ParticleEnsemble(self.x if x is None else x, self.v if v is None else v, self.w)

    def __repr__(self):
        return f"ParticleEnsemble(N={self.size})"


# -- deposition -------------------------------------------------------------

def _stencil(x: np.ndarray, n: int, shape: str):
    """Node indices and weights of the assignment function at positions x.

    Returns (idx, wts) of shape (m, N) with m = 1, 2, 3 for ngp, cic, tsc.
    """
    s = (np.asarray(x) + 0.5) * n
    if shape == "ngp":
        j = np.floor(s + 0.5).astype(np.int64)
        return (j % n)[None, :], np.ones((1, s.size))
    if shape == "cic":
        j = np.floor(s).astype(np.int64)
        f = s - j
        return np.stack([j % n, (j + 1) % n]), np.stack([1.0 - f, f])
    if shape == "tsc":
        j = np.floor(s + 0.5).astype(np.int64)
        d = s - j
        idx = np.stack([(j - 1) % n, j % n, (j + 1) % n])
        wts = np.stack([0.5 * (0.5 - d) ** 2, 0.75 - d * d, 0.5 * (0.5 + d) ** 2])
        return idx, wts
    raise ValueError(f"unknown deposition shape {shape!r}")


def _stencil_derivative(x: np.ndarray, n: int, shape: str):
    """Derivative in x of the assignment weights (units of 1/length)."""
    s = (np.asarray(x) + 0.5) * n
    if shape == "cic":
        j = np.floor(s).astype(np.int64)
        one = np.ones(s.size)
        return np.stack([j % n, (j + 1) % n]), np.stack([-one, one]) * n
    if shape == "tsc":
        j = np.floor(s + 0.5).astype(np.int64)
        d = s - j
        idx = np.stack([(j - 1) % n, j % n, (j + 1) % n])
        return idx, np.stack([-(0.5 - d), -2.0 * d, 0.5 + d]) * n
    raise ValueError(f"shape {shape!r} has no continuous derivative stencil")


def deposit(ens: ParticleEnsemble, n: int, smoothing: str = "cic") -> GridField:
    """Grid density of an ensemble, normalized to mean exactly one.

    ``smoothing`` is the assignment function: ``"ngp"`` (nearest grid point),
    ``"cic"`` (linear) or ``"tsc"`` (quadratic spline).
    """
    _check_grid_size(n)
    idx, wts = _stencil(ens.x, n, smoothing)
    rho = np.bincount(idx.ravel(), weights=(wts * ens.w[None, :]).ravel(), minlength=n)
    # weights sum to one only to 1e-12; normalize the discrete mean exactly
    rho /= rho.mean()
    return GridField(rho, "density")


# -- sampling ---------------------------------------------------------------

def _van_der_corput(k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=np.int64).copy()
    out = np.zeros(k.size)
    base = 0.5
    while np.any(k > 0):
        out += (k & 1) * base
        k >>= 1
        base *= 0.5
    return out


def _quantile_levels(n_particles: int, strategy: str, rng) -> np.ndarray:
    if strategy == "deterministic-quantile":
        return (np.arange(n_particles) + 0.5) / n_particles
    if strategy == "stratified":
        return (np.arange(n_particles) + rng.random(n_particles)) / n_particles
    if strategy == "iid":
        return rng.random(n_particles)
    raise ValueError(f"unknown sampling strategy {strategy!r}")


def _inverse_cdf(density, levels: np.ndarray, resolution: int = 1 << 14) -> np.ndarray:
    """Positions with prescribed cumulative mass under a periodic density."""
    if density is None:
        return levels - 0.5
    xs = np.linspace(-0.5, 0.5, resolution + 1)
    if isinstance(density, GridField):
        vals = density.values
        vals = np.interp(xs, np.append(density.x, 0.5), np.append(vals, vals[0]))
    else:
        vals = np.asarray(density(xs), dtype=float) * np.ones_like(xs)
    if np.any(vals < 0):
        raise ValueError("density must be nonnegative")
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(xs))])
    if cum[-1] <= 0:
        raise ValueError("density has zero mass")
    cum /= cum[-1]
    # flat stretches of zero density: np.interp needs strictly increasing abscissae
    keep = np.concatenate([[True], np.diff(cum) > 0])
    return np.interp(levels, cum[keep], xs[keep])


def sample(
    density=None,
    n_particles: int = 1000,
    strategy: str = "deterministic-quantile",
    *,
    velocity: Callable | float | None = None,
    thermal_speed: float = 0.0,
    velocity_quantile: Callable | None = None,
    seed: int | None = None,
) -> ParticleEnsemble:
    """Build an ensemble of ``n_particles`` equal-weight particles.

    Parameters
    ----------
    density : callable, GridField or None
        Spatial density on [-1/2, 1/2); ``None`` means the uniform density.
        It is normalized internally.
    strategy : {"deterministic-quantile", "stratified", "iid"}
        How the cumulative-mass levels are drawn.  The random strategies need
        an explicit ``seed``.
    velocity : callable or float, optional
        Mean velocity u0(x).  With ``thermal_speed == 0`` every particle sits
        exactly on the graph v = u0(x).
    thermal_speed : float
        Standard deviation of a Gaussian spread around u0(x).
    velocity_quantile : callable, optional
        Quantile function of a non-Gaussian velocity profile, used instead of
        the Gaussian when given (added to u0(x)).

    Velocity levels are paired with positions through the van der Corput
    permutation in the deterministic case, giving a low-discrepancy cloud.
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    rng = None
    if strategy != "deterministic-quantile":
        if seed is None:
            raise ValueError(f"strategy {strategy!r} requires an explicit seed")
        rng = np.random.default_rng(np.uint64(seed))
    x = _inverse_cdf(density, _quantile_levels(n_particles, strategy, rng))

    if velocity is None:
        u = np.zeros(n_particles)
    elif callable(velocity):
        u = np.asarray(velocity(x), dtype=float) * np.ones(n_particles)
    else:
        u = np.full(n_particles, float(velocity))

    spread = np.zeros(n_particles)
    if thermal_speed > 0 or velocity_quantile is not None:
        if strategy == "deterministic-quantile":
            ranks = np.argsort(np.argsort(_van_der_corput(np.arange(n_particles)), kind="stable"))
            q = (ranks + 0.5) / n_particles
        elif strategy == "stratified":
            q = (rng.permutation(n_particles) + rng.random(n_particles)) / n_particles
        else:
            q = rng.random(n_particles)
        if velocity_quantile is not None:
            spread = np.asarray(velocity_quantile(q), dtype=float)
        else:
            spread = thermal_speed * ndtri(q)
    return ParticleEnsemble.uniform(x, u + spread)


def first_moment(ens: ParticleEnsemble) -> float:
    """Velocity moment sum_i w_i |v_i|."""
    return float(np.sum(ens.w * np.abs(ens.v)))


def velocity_rescale(ens: ParticleEnsemble, eps: float, inverse: bool = False) -> ParticleEnsemble:
    """Push the ensemble forward under (x, v) -> (x, eps v), or (x, v/eps) if ``inverse``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    factor = 1.0 / eps if inverse else eps
    return ParticleEnsemble(ens.x, ens.v * factor, ens.w)


# -- serialization ----------------------------------------------------------

def write_csv(ens: ParticleEnsemble, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "v", "w"])
        for row in zip(ens.x, ens.v, ens.w):
            writer.writerow([repr(float(c)) for c in row])


def read_csv(path) -> ParticleEnsemble:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return ParticleEnsemble(data[:, 0], data[:, 1], data[:, 2])


def write_binary(ens: ParticleEnsemble, path) -> None:
    """Magic ``VPME0001`` followed by x, v, w as little-endian float64 blocks."""
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        for arr in (ens.x, ens.v, ens.w):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_binary(path) -> ParticleEnsemble:
    raw = Path(path).read_bytes()
    if raw[:8] != BINARY_MAGIC:
        raise ValueError("not a VPME0001 ensemble file")
    body = raw[8:]
    if len(body) % 24:
        raise ValueError("truncated ensemble file")
    n = len(body) // 24
    arr = np.frombuffer(body, dtype="<f8").reshape(3, n)
    return ParticleEnsemble(arr[0], arr[1], arr[2])
