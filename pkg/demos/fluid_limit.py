"""Two counter-streaming fluids at shrinking eps against the eps = 0 system."""
import numpy as np

from vpme.fluid import FluidState, integrate_fluid
from vpme.measures import grid_nodes

n, T, dt = 32, 0.5, 0.005
x = grid_nodes(n)
rho = 0.5 * (1 + 0.05 * np.cos(2 * np.pi * x))


def state(eps):
    return FluidState([rho, rho], [np.full(n, 1.5), np.full(n, -1.5)], eps)


ref = integrate_fluid(state(0.0), T, dt)
for eps in (0.5, 0.25, 0.125):
    r = integrate_fluid(state(eps), T, dt)
    gap = max(max(np.max(np.abs(a.rho - b.rho)), np.max(np.abs(a.v - b.v)))
              for a, b in zip(r.states, ref.states))
    eta = r.monitor.records[-1]["eta"]["0.5"]
    print(f"eps = {eps:<6} sup gap to limit {gap:.4f}   final B_0.5 norm of rho-1: {eta:.4f}")
