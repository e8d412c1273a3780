"""Black-box test systems behind one query-counted interface."""

from .analytic import Linear, Quadratic, Rosenbrock, analytic_blackbox
from .base import BlackBox, QueryCounter
from .cnon import Cnon, CnonSystem, cnon_evolve, cnon_exact_gradient
from .optics import OpticalSystem, OpticalWavefront, owms_objective, propagate

__all__ = [
    "BlackBox", "QueryCounter", "Cnon", "CnonSystem", "cnon_evolve", "cnon_exact_gradient",
    "Linear", "Quadratic", "Rosenbrock", "analytic_blackbox",
    "OpticalSystem", "OpticalWavefront", "owms_objective", "propagate",
]
