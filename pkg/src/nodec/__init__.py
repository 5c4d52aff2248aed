"""Feedback control of networked dynamics, learned by gradient descent
through a differentiable ODE solver, with analytic baselines for comparison."""

__version__ = "0.1.0"

from .autodiff import Tape, Var
from .graphs import DriverMap, Graph, erdos_renyi, lattice2d
from .solve import NumericalInstability, SolveConfig, Trajectory, ode_solve
from .dynamics import KuramotoSystem, SirSystem
from .training import TrainConfig

__all__ = [
    "Tape", "Var", "Graph", "DriverMap", "erdos_renyi", "lattice2d",
    "SolveConfig", "Trajectory", "ode_solve", "NumericalInstability",
    "KuramotoSystem", "SirSystem", "TrainConfig", "__version__",
]
