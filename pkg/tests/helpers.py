"""Shared constructions for the tests and the acceptance suite."""
import numpy as np

from vpme.measures import GridField, grid_nodes

TWO_PI = 2 * np.pi

# smooth periodic shapes p and their second derivatives
SHAPES = {
    "cos1": (lambda x: np.cos(TWO_PI * x), lambda x: -TWO_PI**2 * np.cos(TWO_PI * x)),
    "sin2": (lambda x: np.sin(2 * TWO_PI * x), lambda x: -4 * TWO_PI**2 * np.sin(2 * TWO_PI * x)),
    "mix": (lambda x: np.cos(TWO_PI * x) + 0.5 * np.sin(3 * TWO_PI * x),
            lambda x: -TWO_PI**2 * (np.cos(TWO_PI * x) + 4.5 * np.sin(3 * TWO_PI * x))),
    "expsin": (lambda x: np.exp(np.sin(TWO_PI * x)) - 1.0,
               lambda x: TWO_PI**2 * np.exp(np.sin(TWO_PI * x))
               * (np.cos(TWO_PI * x) ** 2 - np.sin(TWO_PI * x))),
    "bump": (lambda x: 1.0 / (1.1 - np.cos(TWO_PI * x)),
             lambda x: TWO_PI**2 * (2 * np.sin(TWO_PI * x) ** 2 / (1.1 - np.cos(TWO_PI * x)) ** 3
                                    - np.cos(TWO_PI * x) / (1.1 - np.cos(TWO_PI * x)) ** 2)),
}


def manufactured(shape: str, eps: float, n: int, amplitude: float | None = None):
    """(rho, U*) with rho = e^{U*} - eps^2 U*'' and U* = a p - log mean e^{a p}.

    The amplitude keeps eps^2 |U*''| <= 1/2 so that rho stays positive.
    """
    p, d2p = SHAPES[shape]
    fine = grid_nodes(1 << 14)
    if amplitude is None:
        amplitude = min(0.5, 0.5 / (eps**2 * np.max(np.abs(d2p(fine)))))
        amplitude = min(amplitude, 0.5 / np.max(np.abs(p(fine))))
    c = np.log(np.mean(np.exp(amplitude * p(fine))))
    x = grid_nodes(n)
    u = amplitude * p(x) - c
    rho = np.exp(u) - eps**2 * amplitude * d2p(x)
    # the continuum mass is 1; remove the (exponentially small) trapezoid error
    rho = rho / rho.mean()
    return GridField(rho), u


def random_density(rng, n: int, kind: str | None = None) -> GridField:
    """Admissible random density: smooth Fourier sum, rough nonnegative, or spiky."""
    kind = kind or rng.choice(["fourier", "rough", "spiky"])
    x = grid_nodes(n)
    if kind == "fourier":
        vals = np.ones(n)
        for k in range(1, 6):
            vals += rng.normal(0, 0.3 / k) * np.cos(TWO_PI * k * x + rng.uniform(0, TWO_PI))
        vals = np.maximum(vals, 0.0)
    elif kind == "rough":
        vals = rng.exponential(1.0, n)
    else:
        vals = np.zeros(n)
        vals[rng.integers(0, n, size=rng.integers(1, 4))] = 1.0
        vals += 0.01
    return GridField(vals / vals.mean())
