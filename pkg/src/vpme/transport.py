"""Exact 1-Wasserstein distance between weighted particle ensembles on T x R.

The ground metric is d((x, v), (x', v')) = d_T(x, x') + |v - v'|.  Equal-size
uniform-weight instances are solved as assignment problems, general weights
as the transportation linear program.  Optimality can be certified by dual
potentials recovered from the residual graph of the plan.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import bellman_ford, csgraph_from_dense, NegativeCycleError

from .measures import ParticleEnsemble, torus_distance, velocity_rescale

DENSE_CAP = 4096
LP_CAP = 400_000  # variables of the transportation LP
CERTIFICATE_CAP = 1024

__all__ = [
    "TransportPlan",
    "phase_metric",
    "cost_matrix",
    "w1_exact",
    "w1_bruteforce",
    "coupling_cost",
    "w1_rescaling_check",
    "dual_certificate",
    "write_plan_csv",
]


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Sparse coupling between ``source`` and ``target``.

    ``rows``/``cols`` index particles and ``mass`` holds the transported
    weight of each pair.  When the plan was computed on subsamples,
    ``subsample_error`` is the spread of the cost over independent draws.
    """

    source: ParticleEnsemble
    target: ParticleEnsemble
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    cost: float
    subsample_error: Optional[float] = None

    @property
    def pairing(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.mass.tolist()))

    def contributions(self) -> np.ndarray:
        a, b = self.source, self.target
        d = phase_metric((a.x[self.rows], a.v[self.rows]), (b.x[self.cols], b.v[self.cols]))
        return self.mass * d

    def marginal_error(self) -> float:
        r = np.bincount(self.rows, self.mass, minlength=self.source.size) - self.source.w
        c = np.bincount(self.cols, self.mass, minlength=self.target.size) - self.target.w
        return float(max(np.max(np.abs(r)), np.max(np.abs(c))))


def phase_metric(p, q):
    """d_T(x, x') + |v - v'| for points or arrays of points given as (x, v)."""
    return torus_distance(np.asarray(p[0], dtype=float), np.asarray(q[0], dtype=float)) + np.abs(
        np.asarray(p[1], dtype=float) - np.asarray(q[1], dtype=float)
    )


def cost_matrix(a: ParticleEnsemble, b: ParticleEnsemble) -> np.ndarray:
    dx = np.abs(a.x[:, None] - b.x[None, :])
    return np.minimum(dx, 1.0 - dx) + np.abs(a.v[:, None] - b.v[None, :])


def _uniform(e: ParticleEnsemble) -> bool:
    return bool(np.all(e.w == e.w[0])) or bool(np.max(np.abs(e.w * e.size - 1.0)) <= 1e-12)


def _solve_dense(a: ParticleEnsemble, b: ParticleEnsemble):
    c = cost_matrix(a, b)
    if a.size == b.size and _uniform(a) and _uniform(b):
        r, k = linear_sum_assignment(c)
        mass = np.full(a.size, 1.0 / a.size)
        return r, k, mass, float(np.sum(c[r, k]) / a.size)
    m, n = c.shape
    if m * n > LP_CAP:
        raise ValueError(f"transportation LP with {m}x{n} variables exceeds the cap {LP_CAP}")
    # equality constraints: row sums (m) and column sums (n), one redundant row dropped
    ii = np.repeat(np.arange(m), n)
    jj = np.tile(np.arange(n), m)
    cols = np.arange(m * n)
    A = coo_matrix(
        (np.ones(2 * m * n), (np.concatenate([ii, m + jj]), np.concatenate([cols, cols]))),
        shape=(m + n, m * n),
    ).tocsr()[:-1]
    rhs = np.concatenate([a.w, b.w])[:-1]
    res = linprog(c.ravel(), A_eq=A, b_eq=rhs, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    x = res.x
    keep = np.flatnonzero(x > 1e-15)
    r, k = keep // n, keep % n
    mass = x[keep]
    return r, k, mass, float(np.dot(mass, c[r, k]))


def w1_exact(a: ParticleEnsemble, b: ParticleEnsemble, *, subsample: int | None = None,
             repeats: int = 5, seed: int | None = None):
    """Optimal transport cost and plan between two ensembles.

    Inputs with more than 4096 particles per side are refused unless
    ``subsample`` is given; then both ensembles are resampled (with
    probabilities equal to the weights) to that many particles ``repeats``
    times, the mean cost is returned and the plan carries the standard
    deviation over draws as ``subsample_error``.  That spread is a
    statistical estimate of the subsampling error, not a bound.
    """
    if a.size == 0 or b.size == 0:
        raise ValueError("empty ensemble")
    if max(a.size, b.size) <= DENSE_CAP and subsample is None:
        r, k, mass, cost = _solve_dense(a, b)
        return cost, TransportPlan(a, b, r, k, mass, cost)
    if subsample is None:
        raise ValueError(f"ensembles larger than {DENSE_CAP} need explicit subsampling")
    if seed is None:
        raise ValueError("subsampling needs an explicit seed")
    if not (1 <= subsample <= DENSE_CAP):
        raise ValueError(f"subsample must lie in [1, {DENSE_CAP}]")
    rng = np.random.default_rng(np.uint64(seed))
    costs, last = [], None
    for _ in range(repeats):
        ia = rng.choice(a.size, subsample, p=a.w / a.w.sum())
        ib = rng.choice(b.size, subsample, p=b.w / b.w.sum())
        sa = ParticleEnsemble.uniform(a.x[ia], a.v[ia])
        sb = ParticleEnsemble.uniform(b.x[ib], b.v[ib])
        r, k, mass, cost = _solve_dense(sa, sb)
        costs.append(cost)
        last = TransportPlan(sa, sb, r, k, mass, cost)
    mean = float(np.mean(costs))
    spread = float(np.std(costs, ddof=1)) if repeats > 1 else math.nan
    return mean, TransportPlan(last.source, last.target, last.rows, last.cols, last.mass, mean, spread)


def w1_bruteforce(a: ParticleEnsemble, b: ParticleEnsemble) -> float:
    """Minimum over all permutations; equal N <= 8 and uniform weights only."""
    if a.size != b.size:
        raise ValueError("brute force needs equal sizes")
    if a.size > 8:
        raise ValueError("brute force is limited to N <= 8")
    if not (_uniform(a) and _uniform(b)):
        raise ValueError("brute force needs uniform weights")
    c = cost_matrix(a, b)
    idx = np.arange(a.size)
    best = min(float(np.sum(c[idx, list(p)])) for p in itertools.permutations(range(a.size)))
    return best / a.size


def coupling_cost(a: ParticleEnsemble, b: ParticleEnsemble) -> float:
    """Cost of the same-label coupling: sum_i w_i d(a_i, b_i)."""
    if a.size != b.size:
        raise ValueError("labelled coupling needs equal sizes")
    if not np.allclose(a.w, b.w, rtol=0, atol=1e-15):
        raise ValueError("labelled coupling needs matching weights")
    return float(np.dot(a.w, phase_metric((a.x, a.v), (b.x, b.v))))


def w1_rescaling_check(a: ParticleEnsemble, b: ParticleEnsemble, eps: float, slack: float = 1e-10):
    """(eps W1(a, b), W1(Sa, Sb), W1(a, b)) with S the velocity scaling v -> eps v.

    Raises ``ArithmeticError`` if the chain lhs <= mid <= rhs fails by more
    than ``slack``.
    """
    if not (0.0 < eps <= 1.0):
        raise ValueError(f"eps must lie in (0, 1], got {eps!r}")
    rhs = w1_exact(a, b)[0]
    mid = w1_exact(velocity_rescale(a, eps), velocity_rescale(b, eps))[0]
    lhs = eps * rhs
    if lhs - mid > slack or mid - rhs > slack:
        raise ArithmeticError(f"scaling chain violated: {lhs} <= {mid} <= {rhs}")
    return lhs, mid, rhs


def dual_certificate(plan: TransportPlan) -> dict:
    """Kantorovich potentials certifying optimality of ``plan``.

    Shortest-path distances pi in the residual graph (forward arcs i -> j of
    cost c_ij, backward arcs j -> i of cost -c_ij on the support) give
    u_i = -pi_i, v_j = pi_j with u_i + v_j <= c_ij and equality on the
    support.  A negative cycle means the plan is not optimal.  The potential
    phi(z) = min_j (d(z, b_j) - v_j) is then 1-Lipschitz on the whole space
    and its pairing with a - b equals the cost.
    """
    a, b = plan.source, plan.target
    m, n = a.size, b.size
    if m + n > CERTIFICATE_CAP:
        raise ValueError(f"certificate limited to {CERTIFICATE_CAP} support points")
    c = cost_matrix(a, b)
    size = m + n + 1
    g = np.full((size, size), np.inf)
    g[:m, m:m + n] = c
    g[m + plan.cols, plan.rows] = -c[plan.rows, plan.cols]
    g[-1, :-1] = 0.0
    graph = csgraph_from_dense(g, null_value=np.inf)
    try:
        dist = bellman_ford(graph, directed=True, indices=size - 1)
    except NegativeCycleError:
        return {"optimal": False, "gap": math.inf}
    u, v = -dist[:m], dist[m:m + n]
    slack = c - u[:, None] - v[None, :]
    phi_a = np.min(c - v[None, :], axis=1)
    phi_b = np.min(cost_matrix(b, b) - v[None, :], axis=1)
    pairing = float(np.dot(a.w, phi_a) - np.dot(b.w, phi_b))
    pts = np.concatenate([a.x, b.x]), np.concatenate([a.v, b.v])
    phi = np.concatenate([phi_a, phi_b])
    d = phase_metric((pts[0][:, None], pts[1][:, None]), (pts[0][None, :], pts[1][None, :]))
    lip = float(np.max(np.abs(phi[:, None] - phi[None, :]) - d))
    return {
        "optimal": True,
        "u": u,
        "v": v,
        "min_reduced_cost": float(np.min(slack)),
        "support_slack": float(np.max(np.abs(slack[plan.rows, plan.cols]))),
        "phi_source": phi_a,
        "phi_target": phi_b,
        "pairing": pairing,
        "gap": abs(plan.cost - pairing),
        "lipschitz_excess": lip,
    }


def write_plan_csv(plan: TransportPlan, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "mass", "cost_contribution"])
        for i, j, mval, cc in zip(plan.rows, plan.cols, plan.mass, plan.contributions()):
            w.writerow([int(i), int(j), repr(float(mval)), repr(float(cc))])
