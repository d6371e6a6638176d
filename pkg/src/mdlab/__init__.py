"""Mirror descent, TD learning and mirror flow with executable bound checks."""

from . import bounds, comparators, data, geometry, losses, solvers, verify
from .rng import stream

__version__ = "0.1.0"

__all__ = ["bounds", "comparators", "data", "geometry", "losses", "solvers", "verify", "stream", "__version__"]
