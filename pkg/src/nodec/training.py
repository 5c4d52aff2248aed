"""Training loops: plain gradient descent through the solver, curriculum
training with growing horizons for the oscillator task, and adaptive
learning-rate training with best-checkpoint restore for the epidemic task.
Includes a self-contained Adam optimizer."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tape
from .controllers import Controller
from .solve import NumericalInstability, SolveConfig, ode_solve

Array = np.ndarray

LR_FLOOR = 1e-12


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 0.05
    batch_size: int = 8
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_size: float = 1.0            # curriculum window length (time units)
    max_horizon: float | None = None  # optional cap on the curriculum horizon
    shrink: float = 0.5               # adaptive-lr multiplier on rejection
    tol_ratio: float = 1.5            # adaptive-lr rejection threshold
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")


@dataclass
class HistoryRow:
    epoch: int
    loss: float
    lr: float
    horizon: float
    instability: bool


@dataclass
class TrainResult:
    history: list[HistoryRow] = field(default_factory=list)
    best_loss: float = float("nan")

    @property
    def losses(self) -> list[float]:
        return [row.loss for row in self.history]


# ---------------------------------------------------------------------------
# optimizers

def adam_step(params: dict[str, Array], grads: dict[str, Array], state: dict,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place."""
    if not state:
        state["t"] = 0
        state["m"] = {k: np.zeros_like(v) for k, v in params.items()}
        state["v"] = {k: np.zeros_like(v) for k, v in params.items()}
    state["t"] += 1
    t = state["t"]
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        m = state["m"][name] = beta1 * state["m"][name] + (1 - beta1) * g
        v = state["v"][name] = beta2 * state["v"][name] + (1 - beta2) * (g * g)
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Optimizer:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.lr = cfg.lr
        self._state: dict = {}

    def reset(self) -> None:
        self._state = {}

    def step(self, params: dict[str, Array], grads: dict[str, Array]) -> None:
        if self.cfg.optimizer == "adam":
            adam_step(params, grads, self._state, self.lr,
                      self.cfg.beta1, self.cfg.beta2, self.cfg.eps)
        else:
            for name, p in params.items():
                p -= self.lr * grads[name]


def _collect_grads(tape: Tape, bound, loss) -> dict[str, Array]:
    grad_map = tape.backward(loss)
    return {name: grad_map.wrt(var) for name, var in bound.items()}


# ---------------------------------------------------------------------------
# basic loop

def train_basic(controller: Controller, rhs, x0, t0: float, horizon: float,
                loss_fn, cfg: TrainConfig, solve_cfg: SolveConfig) -> TrainResult:
    """Per epoch: differentiable solve, loss, backward, optimizer update.

    An instability aborts the epoch without an update and records the
    previous loss with the instability flag set.
    """
    opt = Optimizer(cfg)
    result = TrainResult()
    prev_loss = float("nan")
    for epoch in range(cfg.epochs):
        tape = Tape()
        bound = controller.bind(tape)
        try:
            traj = ode_solve(x0, t0, t0 + horizon, rhs, controller, solve_cfg, tape=tape)
            loss = loss_fn(traj)
            grads = _collect_grads(tape, bound, loss)
            opt.step(controller.params, grads)
            prev_loss = float(loss.value)
            result.history.append(HistoryRow(epoch, prev_loss, opt.lr, horizon, False))
        except NumericalInstability:
            result.history.append(HistoryRow(epoch, prev_loss, opt.lr, horizon, True))
    finite = [r.loss for r in result.history if np.isfinite(r.loss)]
    result.best_loss = min(finite) if finite else float("nan")
    return result


# ---------------------------------------------------------------------------
# curriculum loop (oscillator synchronization)

def curriculum_horizons(epochs: int, seed: int,
                        max_horizon: float | None = None) -> list[float]:
    """Horizon schedule: T grows by 2c with c ~ U(0,1) each epoch, so the
    final horizon concentrates around the epoch count."""
    rng = np.random.default_rng(seed)
    horizons, t = [], 0.0
    for _ in range(epochs):
        t += 2.0 * rng.uniform()
        horizons.append(min(t, max_horizon) if max_horizon is not None else t)
    return horizons


def train_curriculum(controller: Controller, system, cfg: TrainConfig,
                     solve_cfg: SolveConfig, on_epoch=None) -> TrainResult:
    """Curriculum training for stabilization objectives.

    Each epoch draws a longer horizon and a batch of standard-normal initial
    states, solves window by window on one tape, and minimizes the negative
    of (window-weighted mean order parameter + minimum order parameter over
    all samples). Epochs hit by numerical instability are skipped entirely:
    parameters stay untouched. ``on_epoch(row, controller)`` is called after
    every epoch (progress reporting, snapshotting).
    """
    from . import autodiff as ad  # local import keeps module load light
    from .metrics import order_parameter

    rng = np.random.default_rng(cfg.seed)
    opt = Optimizer(cfg)
    result = TrainResult()
    n = system.graph.n
    horizon = 0.0
    prev_loss = float("nan")
    for epoch in range(cfg.epochs):
        horizon += 2.0 * rng.uniform()
        if cfg.max_horizon is not None:
            horizon = min(horizon, cfg.max_horizon)
        x0_batch = rng.standard_normal((cfg.batch_size, n))
        n_windows = max(1, int(np.ceil(horizon / cfg.step_size - 1e-12)))
        tape = Tape()
        bound = controller.bind(tape)
        try:
            member_losses = []
            for b in range(cfg.batch_size):
                x = tape.leaf(x0_batch[b])
                window_weight = cfg.step_size / horizon
                r_samples = []
                mean_acc = None
                t = 0.0
                for _ in range(n_windows):
                    traj = ode_solve(x, t, t + cfg.step_size, system.rhs,
                                     controller, solve_cfg, tape=tape)
                    rs = [order_parameter(s) for s in traj.states[1:]]
                    r_samples.extend(rs)
                    window_mean = ad.reduce_mean(ad.stack_scalars(rs))
                    term = ad.scale(window_mean, window_weight)
                    mean_acc = term if mean_acc is None else mean_acc + term
                    x = traj.final_state
                    t += cfg.step_size
                min_term = ad.reduce_min(ad.stack_scalars(r_samples))
                member_losses.append(-(mean_acc + min_term))
            loss = ad.reduce_mean(ad.stack_scalars(member_losses))
            grads = _collect_grads(tape, bound, loss)
            opt.step(controller.params, grads)
            prev_loss = float(loss.value)
            result.history.append(HistoryRow(epoch, prev_loss, opt.lr, horizon, False))
        except NumericalInstability:
            result.history.append(HistoryRow(epoch, prev_loss, opt.lr, horizon, True))
        if on_epoch is not None:
            on_epoch(result.history[-1], controller)
    finite = [r.loss for r in result.history if np.isfinite(r.loss)]
    result.best_loss = min(finite) if finite else float("nan")
    return result


# ---------------------------------------------------------------------------
# adaptive learning-rate loop (epidemic containment)

def train_adaptive(controller: Controller, rhs, x0, t0: float, horizon: float,
                   loss_fn, cfg: TrainConfig, solve_cfg: SolveConfig) -> TrainResult:
    """Gradient descent with rejection: when an epoch's loss exceeds
    tol_ratio * previous loss or the solve destabilizes, the best parameters
    are restored, the learning rate shrinks, and the optimizer state resets.
    The returned controller always carries the best checkpoint seen, and the
    reported loss is the minimum over the history.
    """
    if cfg.tol_ratio <= 1.0:
        raise ValueError("tol_ratio must exceed 1")
    if not 0.0 < cfg.shrink < 1.0:
        raise ValueError("shrink must be in (0, 1)")
    opt = Optimizer(cfg)
    result = TrainResult()
    best_loss = float("inf")
    best = controller.snapshot()
    prev_loss = float("inf")
    for epoch in range(cfg.epochs):
        tape = Tape()
        bound = controller.bind(tape)
        loss_val = float("nan")
        unstable = False
        try:
            traj = ode_solve(x0, t0, t0 + horizon, rhs, controller, solve_cfg, tape=tape)
            loss = loss_fn(traj)
            loss_val = float(loss.value)
        except NumericalInstability:
            unstable = True
        if unstable or loss_val > cfg.tol_ratio * prev_loss:
            controller.set_params(best)
            opt.lr *= cfg.shrink
            opt.reset()
            result.history.append(HistoryRow(epoch, loss_val, opt.lr, horizon, unstable))
            if opt.lr < LR_FLOOR:
                break
            continue
        if loss_val < best_loss:
            best_loss = loss_val
            best = controller.snapshot()
        prev_loss = loss_val
        grads = _collect_grads(tape, bound, loss)
        opt.step(controller.params, grads)
        result.history.append(HistoryRow(epoch, loss_val, opt.lr, horizon, False))
    controller.set_params(best)
    result.best_loss = best_loss
    return result


# ---------------------------------------------------------------------------
# loss-history CSV

def write_history_csv(path: str | Path, result: TrainResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "lr", "horizon", "instability"])
        for row in result.history:
            writer.writerow([row.epoch, repr(row.loss), repr(row.lr),
                             repr(row.horizon), int(row.instability)])
