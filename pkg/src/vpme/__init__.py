"""Numerical laboratory for the one-dimensional Vlasov-Poisson system with
massless electrons and its quasineutral limit."""
from .measures import GridField, ParticleEnsemble, deposit, sample, torus_distance, wrap
from .poisson import PoissonOptions, PoissonSolution, field_at, solve_full
from .dynamics import SimulationConfig, Trajectory, run, step
from .transport import TransportPlan, coupling_cost, phase_metric, w1_exact
from .fluid import FluidState, integrate_fluid
from .diagnostics import DiagnosticRecord, energy, relative_entropy

__version__ = "0.1.0"

__all__ = [
    "GridField", "ParticleEnsemble", "deposit", "sample", "torus_distance", "wrap",
    "PoissonOptions", "PoissonSolution", "field_at", "solve_full",
    "SimulationConfig", "Trajectory", "run", "step",
    "TransportPlan", "coupling_cost", "phase_metric", "w1_exact",
    "FluidState", "integrate_fluid",
    "DiagnosticRecord", "energy", "relative_entropy",
]
