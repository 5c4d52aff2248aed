"""Control energy, synchronization order parameter, training losses for both
experiments, and the offline reward series used for external comparisons."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .solve import Trajectory

Array = np.ndarray

METRICS_COLUMNS = ("run_id", "controller", "seed", "energy", "r_final",
                   "r_mean", "r_min", "peak_infected", "t_peak")


class EnergyAccumulator:
    """Running sum of ||u||^2 * dt; non-decreasing, zero for zero control."""

    def __init__(self):
        self.total = 0.0
        self.steps = 0

    def add(self, u: Array, dt: float) -> None:
        self.total += float(np.dot(u, u)) * dt
        self.steps += 1


def energy(traj: Trajectory) -> float:
    """Riemann-sum control energy: sum_k ||u_k||^2 * dt over the applied
    (held) controls. Requires uniform control sampling."""
    dt = traj.control_spacing()
    acc = EnergyAccumulator()
    for u in traj.controls:
        acc.add(u.value, dt)
    return acc.total


def order_parameter(x):
    """Phase synchrony r in [0, 1]; 1 means fully synchronized.

    Computed as (1/N) * sqrt((sum cos x)^2 + (sum sin x)^2), the O(N)
    rewrite of the all-pairs cosine sum. Accepts an array or an on-tape Var.
    """
    if isinstance(x, Var):
        n = x.size
        if n < 1:
            raise ValueError("need at least one phase")
        sc = ad.reduce_sum(ad.cos(x))
        ss = ad.reduce_sum(ad.sin(x))
        return ad.scale(ad.sqrt(ad.square(sc) + ad.square(ss)), 1.0 / n)
    x = np.asarray(x, dtype=np.float64)
    if x.size < 1:
        raise ValueError("need at least one phase")
    return float(np.hypot(np.cos(x).sum(), np.sin(x).sum())) / x.size


def kuramoto_loss(traj: Trajectory) -> Var:
    """Negative of (time-mean order parameter + minimum order parameter).

    The sample at the start time is excluded: no control acted before it.
    Differentiable when the trajectory lives on a recording tape. The lower
    bound is -2 (r <= 1 for both terms).
    """
    if len(traj.states) < 2:
        raise ValueError("trajectory holds no samples after the start time")
    r_vals = ad.stack_scalars([order_parameter(s) for s in traj.states[1:]])
    return -(ad.reduce_mean(r_vals) + ad.reduce_min(r_vals))


def kuramoto_stats(traj: Trajectory) -> dict[str, float]:
    r_series = [order_parameter(s.value) for s in traj.states[1:]]
    return {
        "r_final": order_parameter(traj.final_state.value),
        "r_mean": float(np.mean(r_series)),
        "r_min": float(np.min(r_series)),
    }


def _mean_infected(state: Var, target_nodes) -> Var:
    infected = ad.reshape(ad.gather(state, [1], axis=0), (state.shape[1],))
    return ad.reduce_mean(ad.gather(infected, target_nodes, axis=0))


def epidemic_loss(traj: Trajectory, target_nodes) -> Var:
    """Squared peak of the mean infected fraction over the target sub-graph,
    the maximum taken over stored samples (gradient flows through the peak
    sample only)."""
    target_nodes = list(target_nodes)
    if not target_nodes:
        raise ValueError("target node set is empty")
    series = ad.stack_scalars([_mean_infected(s, target_nodes) for s in traj.states])
    return ad.square(ad.reduce_max(series))


def infected_series(traj: Trajectory, target_nodes) -> Array:
    target_nodes = list(target_nodes)
    if not target_nodes:
        raise ValueError("target node set is empty")
    states = traj.state_values()
    return states[:, 1, :][:, target_nodes].mean(axis=1)


def peak_infection(traj: Trajectory, target_nodes) -> tuple[float, float]:
    """(peak mean infected fraction, time of the first peak sample)."""
    series = infected_series(traj, target_nodes)
    idx = int(np.argmax(series))
    return float(series[idx]), float(traj.times[idx])


def rewards(traj: Trajectory, target_nodes) -> tuple[Array, Array, Array]:
    """Offline per-step reward series for external comparisons.

    rho1: dense quadratic penalty -Ibar^2 * dt per sample.
    rho2: sparse; only the final step carries -(peak Ibar)^2.
    rho3: running-peak shaping; its sum telescopes to
          -((peak Ibar)^2 - Ibar(t0)^2).
    """
    times = np.asarray(traj.times)
    diffs = np.diff(times)
    if len(diffs) and np.any(np.abs(diffs - diffs[0]) > 1e-9 * max(1.0, abs(diffs[0]))):
        raise ValueError("samples are not uniformly spaced")
    dt = float(diffs[0]) if len(diffs) else 0.0
    ibar = infected_series(traj, target_nodes)
    rho1 = -(ibar ** 2) * dt
    rho2 = np.zeros_like(ibar)
    rho2[-1] = -float(ibar.max()) ** 2
    rho3 = np.zeros_like(ibar)
    run_max = ibar[0]
    for k in range(1, len(ibar)):
        if ibar[k] > run_max:
            rho3[k] = -(ibar[k] ** 2) + run_max ** 2
            run_max = ibar[k]
    return rho1, rho2, rho3


# ---------------------------------------------------------------------------
# metrics CSV

def write_metrics_csv(path: str | Path, rows: list[dict]) -> None:
    """Fixed-column metrics table; floats keep full round-trip precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            out = []
            for col in METRICS_COLUMNS:
                val = row.get(col)
                if val is None:
                    out.append("")
                elif isinstance(val, (float, np.floating)):
                    out.append(repr(float(val)))
                else:
                    out.append(str(val))
            writer.writerow(out)


def read_metrics_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for col in ("energy", "r_final", "r_mean", "r_min", "peak_infected", "t_peak"):
            row[col] = float(row[col]) if row.get(col) else None
    return rows
