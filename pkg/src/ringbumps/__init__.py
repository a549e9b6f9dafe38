"""Stationary bumps, neural field flow and finite-N Hawkes simulation on the ring."""
from .errors import *  # noqa: F401,F403
from .model import (  # noqa: F401
    Field,
    FiringFunction,
    RingGrid,
    constant_rate,
    grid_positions,
    heaviside,
    nodes,
    quad_integrate,
    sigmoid,
)
from .stationary import BumpSolution, heaviside_fixed_points, solve_amplitude  # noqa: F401

__version__ = "0.1.0"
