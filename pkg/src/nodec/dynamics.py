"""Right-hand sides for the two controlled systems.

Coupled phase oscillators: dx_i = omega_i + (B u)_i + K sum_j A_ij sin(x_j - x_i).
Compartmental epidemic with containment: per node, fractions S, I, R, Y evolve
under neighbor-driven infection, recovery, and control-driven removal of
susceptible (preventive) and infected (reactive) population. Both are pure
functions of their inputs and run unchanged on or off tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .graphs import DriverMap, Graph

Array = np.ndarray

SIR_ROWS = ("S", "I", "R", "Y")
QUADRANTS = ("upper_left", "upper_right", "lower_left", "lower_right")


@dataclass
class KuramotoSystem:
    graph: Graph
    coupling: float
    omega: Array
    drivers: DriverMap

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=np.float64)
        if self.omega.shape != (self.graph.n,):
            raise ValueError(f"omega must have length {self.graph.n}")
        if self.drivers.n != self.graph.n:
            raise ValueError("driver map does not match graph size")
        self._b = self.drivers.matrix()

    def rhs(self, t: float, x: Var, u: Var) -> Var:
        return kuramoto_rhs(x, u, self)


def kuramoto_rhs(x: Var, u: Var, sys: KuramotoSystem) -> Var:
    """Phase velocities. The coupling sum uses the identity
    sum_j A_ij sin(x_j - x_i) = cos(x_i) (A sin x)_i - sin(x_i) (A cos x)_i,
    which keeps the cost at two matrix-vector products."""
    if x.shape != (sys.graph.n,):
        raise ValueError(f"state must have length {sys.graph.n}")
    if u.shape != (sys.drivers.m,):
        raise ValueError(f"control must have length {sys.drivers.m}")
    s, c = ad.sin(x), ad.cos(x)
    coupling = ad.mul(c, ad.const_matmul(sys.graph.adjacency, s)) \
        - ad.mul(s, ad.const_matmul(sys.graph.adjacency, c))
    drive = ad.const_matmul(sys._b, u)
    return ad.const_add(sys.omega, drive + ad.scale(coupling, sys.coupling))


def omega_uniform(n: int, seed: int) -> Array:
    """Natural frequencies drawn from U(-sqrt(3), sqrt(3)) (unit variance)."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=n)


# ---------------------------------------------------------------------------
# epidemic dynamics

@dataclass
class SirSystem:
    graph: Graph
    beta: float
    gamma: float
    drivers: DriverMap
    budget: float

    def __post_init__(self):
        if self.beta <= 0 or self.gamma <= 0:
            raise ValueError("beta and gamma must be positive")
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.drivers.n != self.graph.n:
            raise ValueError("driver map does not match graph size")
        self._b = self.drivers.matrix()

    def rhs(self, t: float, x: Var, u: Var) -> Var:
        return sir_rhs(x, u, self)


def _state_row(x: Var, k: int) -> Var:
    n = x.shape[1]
    return ad.reshape(ad.gather(x, [k], axis=0), (n,))


def sir_rhs(x: Var, u: Var, sys: SirSystem) -> Var:
    """Derivative of the 4 x N compartment matrix (rows S, I, R, Y).

    Controls are intervention intensities and must be non-negative. Column
    sums of the result are identically zero: infection moves S -> I, recovery
    I -> R, and control moves S -> R and I -> Y, so total population per node
    is conserved.
    """
    n = sys.graph.n
    if x.shape != (4, n):
        raise ValueError(f"state must be 4 x {n}")
    if u.shape != (sys.drivers.m,):
        raise ValueError(f"control must have length {sys.drivers.m}")
    if np.any(u.value < 0):
        raise ValueError("negative control signal; interventions must be >= 0")
    s = _state_row(x, 0)
    i = _state_row(x, 1)
    pressure = ad.const_matmul(sys.graph.adjacency, i)
    infection = ad.scale(ad.mul(s, pressure), sys.beta)
    recovery = ad.scale(i, sys.gamma)
    bu = ad.const_matmul(sys._b, u)
    ds = -infection - ad.mul(bu, s)
    di = infection - recovery - ad.mul(bu, i)
    dr = recovery + ad.mul(bu, s)
    dy = ad.mul(bu, i)
    return ad.concat([ad.reshape(v, (1, n)) for v in (ds, di, dr, dy)], axis=0)


def quadrant_nodes(g: Graph, quadrant: str) -> list[int]:
    """Node indices of a lattice quadrant (row 0 is the top row)."""
    if g.grid_shape is None:
        raise ValueError("graph has no grid layout; build it with lattice2d")
    if quadrant not in QUADRANTS:
        raise ValueError(f"quadrant must be one of {QUADRANTS}")
    rows, cols = g.grid_shape
    top = range(0, rows // 2)
    bottom = range(rows - rows // 2, rows)
    left = range(0, cols // 2)
    right = range(cols - cols // 2, cols)
    rsel = top if quadrant.startswith("upper") else bottom
    csel = left if quadrant.endswith("left") else right
    return [r * cols + c for r in rsel for c in csel]


def seed_infection(g: Graph, quadrant: str, fraction: float) -> Array:
    """Initial 4 x N state: nodes in ``quadrant`` start with an infected
    fraction, everyone else fully susceptible."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    seeded = quadrant_nodes(g, quadrant)
    state = np.zeros((4, g.n))
    state[0] = 1.0
    state[0, seeded] = 1.0 - fraction
    state[1, seeded] = fraction
    return state


def validate_sir_state(x: Array, n: int, tol: float = 1e-9) -> None:
    x = np.asarray(x)
    if x.shape != (4, n):
        raise ValueError(f"state must be 4 x {n}")
    if np.any(x < -tol) or np.any(x > 1.0 + tol):
        raise ValueError("compartment fractions must lie in [0, 1]")
