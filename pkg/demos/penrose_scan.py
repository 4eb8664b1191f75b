"""Scan the Penrose criterion across a family of two-bump equilibria.

Bumps of width 0.2 at +-a: below a = sigma there is no interior minimum;
just above it the integral is negative, it crosses 1 near a = 0.27, peaks
around a = 0.4 and decays again for well separated bumps.
"""
import numpy as np
from scipy import optimize

from vpme import diagnostics as diag

print(" a      minimum   integral   unstable")
for a in (0.1, 0.21, 0.25, 0.3, 0.4, 0.6, 1.0, 1.5):
    rep = diag.penrose_criterion(diag.two_bump(a, 0.2))
    if not rep["applicable"]:
        print(f"{a:<6} none")
        continue
    m = rep["minima"][0]
    print(f"{a:<6} {m['vbar'][0]:8.4f}  {m['integral'][0]:9.4f}   {m['unstable']}")


def excess(a):
    return diag.penrose_criterion(diag.two_bump(a, 0.2))["minima"][0]["integral"][0] - 1


print(f"\nlower transition a* = {optimize.brentq(excess, 0.25, 0.3, xtol=1e-6):.5f}")
print(f"upper transition    = {optimize.brentq(excess, 0.8, 1.5, xtol=1e-6):.5f}")
print("delta condition (two bump, a=1):", diag.delta_condition(diag.two_bump(1.0, 0.2)))
