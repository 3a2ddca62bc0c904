"""Markov chains in random environments: mixing, coupling and queue experiments."""

from .laws import FiniteLaw, PointMass, make_law
from .process import (IID, EnvironmentSpec, FiniteMarkov, HiddenChain, IterationMap, MovingSum, Scripted,
                      Trajectory, anchored_window, gen_environment, iterate)
from .rng import derive_stream, replicate

__all__ = [
    "FiniteLaw", "PointMass", "make_law", "IID", "EnvironmentSpec", "FiniteMarkov", "HiddenChain",
    "IterationMap", "MovingSum", "Scripted", "Trajectory", "anchored_window", "gen_environment", "iterate",
    "derive_stream", "replicate",
]

__version__ = "0.1.0"
