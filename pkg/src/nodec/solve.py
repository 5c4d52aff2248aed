"""Numerical integration of controlled ODEs with a zero-order-hold controller.

``ode_solve`` advances the state with a fixed-step method (Euler or classic
RK4) or the adaptive Dormand-Prince 5(4) pair; the controller is evaluated at
the start time and every ``control_interval`` thereafter and held constant in
between. With a recording tape the whole unrolled solve stays differentiable,
so a backward pass yields loss gradients with respect to controller weights.
Dormand-Prince is evaluation-only: adaptive step counts would make tape
length input-dependent.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var

Array = np.ndarray

FIXED_METHODS = ("euler", "rk4")
H_MIN = 1e-12


class NumericalInstability(RuntimeError):
    """State left the finite range; carries the last finite time reached."""

    def __init__(self, t_last: float, detail: str = ""):
        self.t_last = t_last
        super().__init__(f"numerical instability after t={t_last:g}"
                         + (f" ({detail})" if detail else ""))


@dataclass
class SolveConfig:
    """Solver settings.

    ``control_interval`` must be an integer multiple of ``tau`` for fixed-step
    methods. ``sample_stride`` counts integration steps between stored states
    (control intervals for dopri5) and may not exceed one control interval,
    so every held control has at least one stored sample.
    """

    method: str = "rk4"
    tau: float = 1e-2
    rtol: float = 1e-6
    atol: float = 1e-8
    control_interval: float | None = None
    sample_stride: int = 1

    def __post_init__(self):
        if self.method not in FIXED_METHODS + ("dopri5",):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method in FIXED_METHODS:
            if self.tau <= 0:
                raise ValueError("tau must be positive")
            if self.control_interval is None:
                self.control_interval = self.tau
            ratio = self.control_interval / self.tau
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ValueError("control_interval must be a positive integer multiple of tau")
            if self.sample_stride < 1 or self.sample_stride > round(ratio):
                raise ValueError("sample_stride must be in [1, control_interval/tau]")
        else:
            if self.control_interval is None or self.control_interval <= 0:
                raise ValueError("dopri5 needs an explicit control_interval")
            if self.sample_stride < 1:
                raise ValueError("sample_stride must be >= 1")

    @property
    def steps_per_control(self) -> int:
        return round(self.control_interval / self.tau)


@dataclass
class Trajectory:
    """Sampled (time, state) pairs plus the control held from each
    interaction time onward."""

    times: list[float] = field(default_factory=list)
    states: list[Var] = field(default_factory=list)
    control_times: list[float] = field(default_factory=list)
    controls: list[Var] = field(default_factory=list)

    @property
    def final_state(self) -> Var:
        return self.states[-1]

    def state_values(self) -> Array:
        return np.stack([s.value for s in self.states])

    def control_values(self) -> Array:
        return np.stack([u.value for u in self.controls])

    def control_spacing(self) -> float:
        """Uniform control sampling interval; raises if spacing is uneven."""
        if len(self.control_times) < 2:
            raise ValueError("need at least two control samples to infer spacing")
        diffs = np.diff(self.control_times)
        dt = float(diffs[0])
        if np.any(np.abs(diffs - dt) > 1e-9 * max(1.0, abs(dt))):
            raise ValueError("controls are not uniformly sampled")
        return dt

    def _append_state(self, t: float, x: Var) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError("times must be strictly increasing")
        self.times.append(t)
        self.states.append(x)


def _check_finite(x: Var, t_last: float) -> None:
    if not np.all(np.isfinite(x.value)):
        raise NumericalInstability(t_last)


def _euler_step(rhs, t: float, x: Var, u: Var, tau: float) -> Var:
    return x + ad.scale(rhs(t, x, u), tau)


def _rk4_step(rhs, t: float, x: Var, u: Var, tau: float) -> Var:
    k1 = rhs(t, x, u)
    k2 = rhs(t + tau / 2, x + ad.scale(k1, tau / 2), u)
    k3 = rhs(t + tau / 2, x + ad.scale(k2, tau / 2), u)
    k4 = rhs(t + tau, x + ad.scale(k3, tau), u)
    incr = k1 + ad.scale(k2, 2.0) + ad.scale(k3, 2.0) + k4
    return x + ad.scale(incr, tau / 6)


_STEPPERS = {"euler": _euler_step, "rk4": _rk4_step}

# Dormand-Prince 5(4) tableau: 7 stages, FSAL not exploited.
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)

_SAFETY = 0.9
_FACTOR_MIN = 0.2
_FACTOR_MAX = 5.0
_PI_ALPHA = 0.7 / 5  # current-error exponent
_PI_BETA = 0.4 / 5   # previous-error exponent


def dopri5_step(x: Array, t: float, h: float, f, rtol: float = 1e-6,
                atol: float = 1e-8, err_prev: float = 1.0) -> tuple[Array, float, float]:
    """One trial Dormand-Prince 5(4) step.

    Returns (5th-order state, scaled error norm, PI-proposed next step).
    The caller accepts the state when the error norm is <= 1 and retries
    with the proposed step otherwise.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    k = []
    for s in range(7):
        xs = x if s == 0 else x + h * sum(a * ki for a, ki in zip(_DP_A[s], k))
        k.append(np.asarray(f(t + _DP_C[s] * h, xs), dtype=np.float64))
    x5 = x + h * sum(b * ki for b, ki in zip(_DP_B5, k))
    x4 = x + h * sum(b * ki for b, ki in zip(_DP_B4, k))
    scale_vec = atol + rtol * np.maximum(np.abs(x), np.abs(x5))
    err = float(np.sqrt(np.mean(((x5 - x4) / scale_vec) ** 2)))
    if err == 0.0:
        factor = _FACTOR_MAX
    else:
        factor = _SAFETY * err ** (-_PI_ALPHA) * err_prev ** _PI_BETA
        factor = min(_FACTOR_MAX, max(_FACTOR_MIN, factor))
    return x5, err, h * factor


def _dopri5_span(x: Array, t0: float, t1: float, f, rtol: float, atol: float,
                 h0: float | None = None) -> Array:
    """Integrate x' = f(t, x) over [t0, t1] adaptively."""
    t = t0
    h = h0 if h0 is not None else (t1 - t0) / 16
    err_prev = 1.0
    while t < t1 - 1e-12:
        h = min(h, t1 - t)
        if h < H_MIN:
            raise NumericalInstability(t, "step size underflow")
        x_trial, err, h_next = dopri5_step(x, t, h, f, rtol, atol, err_prev)
        if err <= 1.0:
            t += h
            x = x_trial
            if not np.all(np.isfinite(x)):
                raise NumericalInstability(t)
            err_prev = max(err, 1e-10)
        h = h_next
    return x


def ode_solve(x0, t0: float, t_end: float, rhs, controller, cfg: SolveConfig,
              tape: Tape | None = None) -> Trajectory:
    """Integrate ``x' = rhs(t, x, u)`` with ``u`` held between controller calls.

    ``rhs`` and the controller operate on :class:`Var`; passing a recording
    ``tape`` makes every stored state and control differentiable. Without a
    tape the identical arithmetic runs unrecorded, so both modes produce
    bitwise-equal trajectories. The final state at ``t_end`` is always stored.

    Raises :class:`NumericalInstability` as soon as any state entry becomes
    NaN/Inf (the signal consumed by the training loops).
    """
    if t_end <= t0:
        raise ValueError("t_end must exceed t0")
    if tape is None:
        tape = Tape(record=False)
    if cfg.method == "dopri5" and tape.record:
        raise ValueError("dopri5 is evaluation-only; train with a fixed-step method")

    x = x0 if isinstance(x0, Var) else tape.leaf(x0)
    controller.bind(tape)
    traj = Trajectory()
    traj._append_state(t0, x)

    n_ctl = (t_end - t0) / cfg.control_interval
    if abs(n_ctl - round(n_ctl)) > 1e-9 or round(n_ctl) < 1:
        raise ValueError("t_end - t0 must be a positive integer multiple of control_interval")
    n_ctl = round(n_ctl)

    def held_control(state: Var, t: float) -> Var:
        # A finite state can still overflow inside the controller; that is a
        # closed-loop instability, not a programming error.
        try:
            u = controller(state, t)
            ad.assert_finite(u, "control signal")
        except FloatingPointError:
            raise NumericalInstability(t, "control signal") from None
        return u

    if cfg.method in FIXED_METHODS:
        stepper = _STEPPERS[cfg.method]
        k_ctl = cfg.steps_per_control
        n_steps = n_ctl * k_ctl
        u = None
        for step in range(n_steps):
            t = t0 + step * cfg.tau
            if step % k_ctl == 0:
                u = held_control(x, t)
                traj.control_times.append(t)
                traj.controls.append(u)
            x = stepper(rhs, t, x, u, cfg.tau)
            t_next = t0 + (step + 1) * cfg.tau
            _check_finite(x, t)
            if (step + 1) % cfg.sample_stride == 0 or step + 1 == n_steps:
                traj._append_state(t_next, x)
    else:
        def f_plain(tt, xv):
            return rhs(tt, tape.leaf(xv), u).value

        for block in range(n_ctl):
            t = t0 + block * cfg.control_interval
            u = held_control(x, t)
            traj.control_times.append(t)
            traj.controls.append(u)
            x_val = _dopri5_span(x.value, t, t + cfg.control_interval, f_plain,
                                 cfg.rtol, cfg.atol)
            x = tape.leaf(x_val)
            if (block + 1) % cfg.sample_stride == 0 or block + 1 == n_ctl:
                traj._append_state(t + cfg.control_interval, x)
    return traj


# ---------------------------------------------------------------------------
# trajectory CSV (full float round-trip precision)

def write_trajectory_csv(traj: Trajectory, path: str | Path,
                         state_labels: list[str], control_labels: list[str]) -> None:
    """One row per stored sample: t, state entries, the control held at t."""
    states = traj.state_values().reshape(len(traj.times), -1)
    if states.shape[1] != len(state_labels):
        raise ValueError("state_labels length does not match flattened state size")
    controls = traj.control_values()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + state_labels + control_labels)
        held = 0
        for row_i, t in enumerate(traj.times):
            while held + 1 < len(traj.control_times) and traj.control_times[held + 1] <= t:
                held += 1
            u = controls[held]
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in states[row_i]]
                            + [repr(float(v)) for v in u])


def read_trajectory_csv(path: str | Path) -> tuple[list[str], Array]:
    """Returns (header, full-precision data matrix)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    return header, data
