"""scikit-learn-compatible facade over the two control benchmarks.

``KuramotoNodec`` and ``EpidemicNodec`` wrap graph construction, driver
selection, training, and closed-loop evaluation behind the estimator API
(``fit`` / ``predict`` / ``score`` / ``get_params``), so the trainers compose
with sklearn tooling (cloning, parameter search). ``predict`` maps system
states to the learned control vector; ``score`` runs the closed loop and
reports the control objective (higher is better).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .autodiff import Tape
from .config import Config
from .metrics import epidemic_loss, kuramoto_stats, peak_infection
from .pipelines import (assemble_kuramoto, assemble_sir, make_controller,
                        solve_config)
from .solve import ode_solve
from .training import TrainConfig, train_adaptive, train_curriculum


def _check_states(X, n_cols: int, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != n_cols:
        raise ValueError(f"{name} must be (n_samples, {n_cols}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite entries")
    return X


class KuramotoNodec(BaseEstimator):
    """Learn feedback control that synchronizes coupled phase oscillators.

    Parameters mirror the experiment configuration; ``fit`` ignores ``X``
    (the curriculum draws its own standard-normal initial states, which is
    part of the training scheme) and trains the controller in place.
    """

    def __init__(self, graph_nodes=64, edge_prob=6 / 63, graph_seed=8,
                 omega_seed=208, coupling=0.4, margin=0.1, hidden=(3, 3),
                 head_init="zero", epochs=27, lr=0.015, batch_size=8,
                 step_size=1.0, max_horizon=40.0, tau=0.05, init_seed=1,
                 train_seed=1, eval_horizon=150.0):
        self.graph_nodes = graph_nodes
        self.edge_prob = edge_prob
        self.graph_seed = graph_seed
        self.omega_seed = omega_seed
        self.coupling = coupling
        self.margin = margin
        self.hidden = hidden
        self.head_init = head_init
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.step_size = step_size
        self.max_horizon = max_horizon
        self.tau = tau
        self.init_seed = init_seed
        self.train_seed = train_seed
        self.eval_horizon = eval_horizon

    def _config(self) -> Config:
        return Config({
            "experiment": "kuramoto",
            "graph.n": self.graph_nodes,
            "graph.p": self.edge_prob,
            "graph.seed": self.graph_seed,
            "dynamics.omega_seed": self.omega_seed,
            "dynamics.coupling": self.coupling,
            "dynamics.margin": self.margin,
            "controller.hidden": tuple(self.hidden),
            "controller.head_init": self.head_init,
            "controller.init_seed": self.init_seed,
            "solver.tau": self.tau,
            "solver.control_interval": self.tau,
        })

    def fit(self, X=None, y=None):
        cfg = self._config()
        self.bench_ = assemble_kuramoto(cfg)
        self.controller_ = make_controller(cfg, "nodec", self.bench_)
        tcfg = TrainConfig(epochs=self.epochs, lr=self.lr,
                           batch_size=self.batch_size, step_size=self.step_size,
                           max_horizon=self.max_horizon, seed=self.train_seed)
        result = train_curriculum(self.controller_, self.bench_.system,
                                  tcfg, solve_config(cfg))
        self.history_ = result.losses
        self.n_features_in_ = self.bench_.graph.n
        return self

    def _require_fitted(self):
        if not hasattr(self, "controller_"):
            raise RuntimeError("estimator is not fitted; call fit() first")

    def predict(self, X) -> np.ndarray:
        """Control vector (one row per driver set entry) for each state row."""
        self._require_fitted()
        X = _check_states(X, self.n_features_in_)
        tape = Tape(record=False)
        return np.stack([self.controller_(tape.leaf(x), 0.0).value for x in X])

    def score(self, X, y=None) -> float:
        """Median closed-loop order parameter reached from the given states."""
        self._require_fitted()
        X = _check_states(X, self.n_features_in_)
        ecfg = solve_config(self._config())
        finals = []
        for x0 in X:
            traj = ode_solve(x0, 0.0, self.eval_horizon, self.bench_.system.rhs,
                             self.controller_, ecfg)
            finals.append(kuramoto_stats(traj)["r_final"])
        return float(np.median(finals))


class EpidemicNodec(BaseEstimator):
    """Learn budget-constrained containment for networked epidemic dynamics.

    ``fit`` trains on the configured outbreak (infection seeded in one lattice
    quadrant, loss on the opposite quadrant's peak infection). ``predict``
    expects flattened 4xN compartment states, one per row.
    """

    def __init__(self, rows=16, cols=16, beta=6.0, gamma=1.8, budget=150.0,
                 rounds=4, epochs=25, lr=0.07, tol_ratio=1.5, shrink=0.5,
                 horizon=5.0, tau=0.01, control_interval=0.02,
                 seed_quadrant="upper_right", target_quadrant="lower_left",
                 seed_fraction=0.5, init_seed=0, train_seed=0):
        self.rows = rows
        self.cols = cols
        self.beta = beta
        self.gamma = gamma
        self.budget = budget
        self.rounds = rounds
        self.epochs = epochs
        self.lr = lr
        self.tol_ratio = tol_ratio
        self.shrink = shrink
        self.horizon = horizon
        self.tau = tau
        self.control_interval = control_interval
        self.seed_quadrant = seed_quadrant
        self.target_quadrant = target_quadrant
        self.seed_fraction = seed_fraction
        self.init_seed = init_seed
        self.train_seed = train_seed

    def _config(self) -> Config:
        return Config({
            "experiment": "sir",
            "graph.rows": self.rows,
            "graph.cols": self.cols,
            "dynamics.beta": self.beta,
            "dynamics.gamma": self.gamma,
            "dynamics.budget": self.budget,
            "dynamics.seed_quadrant": self.seed_quadrant,
            "dynamics.target_quadrant": self.target_quadrant,
            "dynamics.seed_fraction": self.seed_fraction,
            "controller.rounds": self.rounds,
            "controller.init_seed": self.init_seed,
            "solver.tau": self.tau,
            "solver.control_interval": self.control_interval,
            "solver.sample_stride": 1,
            "training.horizon": self.horizon,
        })

    def fit(self, X=None, y=None):
        cfg = self._config()
        self.bench_ = assemble_sir(cfg)
        self.controller_ = make_controller(cfg, "nodec", self.bench_)
        system = self.bench_.system_for(self.controller_.drivers)
        tcfg = TrainConfig(epochs=self.epochs, lr=self.lr,
                           tol_ratio=self.tol_ratio, shrink=self.shrink,
                           seed=self.train_seed)
        result = train_adaptive(
            self.controller_, system.rhs, self.bench_.x0, 0.0, self.horizon,
            lambda traj: epidemic_loss(traj, self.bench_.target_nodes),
            tcfg, solve_config(cfg))
        self.history_ = result.losses
        self.best_loss_ = result.best_loss
        self.n_features_in_ = 4 * self.bench_.graph.n
        return self

    def _require_fitted(self):
        if not hasattr(self, "controller_"):
            raise RuntimeError("estimator is not fitted; call fit() first")

    def predict(self, X) -> np.ndarray:
        self._require_fitted()
        X = _check_states(X, self.n_features_in_)
        n = self.bench_.graph.n
        tape = Tape(record=False)
        return np.stack([self.controller_(tape.leaf(x.reshape(4, n)), 0.0).value
                         for x in X])

    def score(self, X=None, y=None) -> float:
        """Negative squared peak infection of the configured outbreak under
        the learned control (higher is better)."""
        self._require_fitted()
        cfg = self._config()
        system = self.bench_.system_for(self.controller_.drivers)
        traj = ode_solve(self.bench_.x0, 0.0, self.horizon, system.rhs,
                         self.controller_, solve_config(cfg))
        peak, _ = peak_infection(traj, self.bench_.target_nodes)
        return -float(peak) ** 2
