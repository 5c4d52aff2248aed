"""Seeded experiment pipelines shared by the CLI and the estimator facade.

Builds graphs, systems, and controllers from a resolved :class:`Config`,
runs training and multi-controller evaluation, and emits the artifact files
(checkpoint, loss history, metrics/relative-difference CSVs, summary table,
run record). Identical config and seeds reproduce every artifact bitwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, version_string
from .controllers import (Controller, FeedbackController, FreeController,
                          GnnController, MlpController,
                          RandomConstantController,
                          TargetedConstantController, load_checkpoint,
                          save_checkpoint)
from .dynamics import (KuramotoSystem, SirSystem, omega_uniform,
                       quadrant_nodes, seed_infection)
from .graphs import (DriverMap, Graph, erdos_renyi, kuramoto_gains, lattice2d,
                     matching_edge_drivers, max_matching_drivers, read_graph,
                     steady_state)
from .metrics import (energy, epidemic_loss, kuramoto_loss, kuramoto_stats,
                      peak_infection, write_metrics_csv)
from .solve import SolveConfig, ode_solve, write_trajectory_csv
from .training import (TrainConfig, train_adaptive, train_basic,
                       train_curriculum, write_history_csv)

FULL_SCALE_NODES = 512


class PipelineError(RuntimeError):
    """Runtime failure of an experiment pipeline (not a config problem)."""


def build_graph(cfg: Config) -> Graph:
    kind = cfg["graph.kind"]
    if kind == "er":
        return erdos_renyi(cfg["graph.n"], cfg["graph.p"], cfg["graph.seed"])
    if kind == "lattice":
        return lattice2d(cfg["graph.rows"], cfg["graph.cols"])
    return read_graph(cfg["graph.file"])


@dataclass
class KuramotoBench:
    graph: Graph
    system: KuramotoSystem
    gains: DriverMap
    x_star: np.ndarray


@dataclass
class SirBench:
    graph: Graph
    drivers: DriverMap
    target_nodes: list[int]
    x0: np.ndarray
    budget: float
    beta: float = 6.0
    gamma: float = 1.8

    def system_for(self, drivers: DriverMap) -> SirSystem:
        # Each controller carries its own driver map; the dynamics apply
        # exactly that controller's inputs.
        return SirSystem(self.graph, self.beta, self.gamma, drivers, self.budget)


def assemble_kuramoto(cfg: Config) -> KuramotoBench:
    g = build_graph(cfg)
    omega = omega_uniform(g.n, cfg["dynamics.omega_seed"])
    coupling = cfg["dynamics.coupling"]
    x_star = steady_state(g, coupling, omega)
    method = cfg["drivers.method"]
    if method == "gains":
        gains = kuramoto_gains(g, coupling, x_star, cfg["dynamics.margin"])
    elif method == "all":
        gains = DriverMap(list(range(g.n)), g.n, gains=np.ones(g.n))
    elif method == "matching":
        gains = max_matching_drivers(g, cfg["drivers.seed"])
    else:
        gains = matching_edge_drivers(g, cfg["drivers.seed"])
    if gains.m == 0:
        raise PipelineError("driver selection produced an empty driver set")
    system = KuramotoSystem(g, coupling, omega, gains)
    return KuramotoBench(g, system, gains, x_star)


def assemble_sir(cfg: Config) -> SirBench:
    g = build_graph(cfg)
    method = cfg["drivers.method"]
    if method == "matching-edges":
        drivers = matching_edge_drivers(g, cfg["drivers.seed"])
    elif method == "matching":
        drivers = max_matching_drivers(g, cfg["drivers.seed"])
    elif method == "all":
        drivers = DriverMap(list(range(g.n)), g.n)
    else:
        raise ConfigError("drivers.method 'gains' applies to the kuramoto experiment")
    target = quadrant_nodes(g, cfg["dynamics.target_quadrant"])
    x0 = seed_infection(g, cfg["dynamics.seed_quadrant"], cfg["dynamics.seed_fraction"])
    return SirBench(g, drivers, target, x0, cfg["dynamics.budget"],
                    beta=cfg["dynamics.beta"], gamma=cfg["dynamics.gamma"])


def solve_config(cfg: Config, prefix: str = "solver") -> SolveConfig:
    method = cfg[f"{prefix}.method"]
    kwargs = dict(method=method,
                  tau=cfg[f"{prefix}.tau"],
                  control_interval=cfg[f"{prefix}.control_interval"],
                  sample_stride=cfg[f"{prefix}.sample_stride"])
    if method == "dopri5":
        kwargs["rtol"] = cfg.get("solver.rtol", 1e-6)
        kwargs["atol"] = cfg.get("solver.atol", 1e-8)
    return SolveConfig(**kwargs)


def train_config(cfg: Config) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["training.epochs"],
        lr=cfg["training.lr"],
        batch_size=cfg["training.batch"],
        optimizer=cfg["training.optimizer"],
        step_size=cfg.get("training.step_size", 1.0),
        max_horizon=cfg.get("training.max_horizon"),
        tol_ratio=cfg["training.tol_ratio"],
        shrink=cfg["training.shrink"],
        seed=cfg["training.seed"],
    )


def make_controller(cfg: Config, name: str, bench) -> Controller:
    """Instantiate a controller by short name over the bench's driver set."""
    name = name.lower()
    is_kuramoto = isinstance(bench, KuramotoBench)
    drivers = bench.gains if is_kuramoto else bench.drivers
    if name == "mlp" and not is_kuramoto:
        raise ConfigError("the dense controller applies to the kuramoto experiment")
    if name == "gnn" and is_kuramoto:
        raise ConfigError("the graph-network controller applies to the sir experiment")
    if name in ("nodec", "mlp", "gnn"):
        if is_kuramoto:
            return MlpController(bench.graph.n, drivers,
                                 hidden=cfg["controller.hidden"],
                                 init_seed=cfg["controller.init_seed"],
                                 head_init=cfg["controller.head_init"])
        return GnnController(bench.graph, drivers, bench.budget,
                             rounds=cfg["controller.rounds"],
                             init_seed=cfg["controller.init_seed"])
    if name in ("feedback", "fc"):
        if not is_kuramoto:
            raise ConfigError("feedback control applies to the kuramoto experiment")
        if drivers.gains is None:
            raise ConfigError("feedback control needs gain-based drivers "
                              "(set drivers.method = gains or all)")
        return FeedbackController(drivers, zeta=cfg["controller.zeta"])
    if name == "tcc":
        if is_kuramoto:
            raise ConfigError("targeted constant control applies to the sir experiment")
        tcc_drivers = drivers
        if cfg["controller.tcc_target_only"]:
            tcc_drivers = drivers.restricted_to(bench.target_nodes)
        return TargetedConstantController(tcc_drivers, bench.budget)
    if name == "rnd":
        if is_kuramoto:
            raise ConfigError("random constant control applies to the sir experiment")
        return RandomConstantController(drivers, bench.budget,
                                        seed=cfg["controller.rnd_seed"],
                                        redraw=cfg["controller.rnd_redraw"])
    if name in ("free", "f"):
        return FreeController(drivers)
    raise ConfigError(f"unknown controller {name!r}")


def _maybe_warn_scale(cfg: Config, bench, log) -> None:
    if bench.graph.n >= FULL_SCALE_NODES:
        log(f"note: {bench.graph.n} nodes is a long-running full-scale "
            "configuration; desk presets finish in minutes")


def _write_run_record(cfg: Config, out: Path, artifacts: dict[str, str]) -> None:
    record = {
        "run_id": cfg.run_id(),
        "config_hash": cfg.hash(),
        "version": version_string(),
        "experiment": cfg.experiment,
        "artifacts": artifacts,
    }
    (out / "run.json").write_text(json.dumps(record, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# training entry point

def run_train(cfg: Config, out_dir: str | Path, log=lambda msg: None) -> dict[str, str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scfg = solve_config(cfg)
    tcfg = train_config(cfg)
    mode = cfg["training.mode"]
    kind = cfg["controller.kind"]
    if kind not in ("mlp", "gnn"):
        raise ConfigError(f"training needs a learnable controller.kind, got {kind!r}")

    if cfg.experiment == "kuramoto":
        bench = assemble_kuramoto(cfg)
        _maybe_warn_scale(cfg, bench, log)
        controller = make_controller(cfg, kind, bench)
        log(f"training {controller.kind} ({controller.num_params} parameters, "
            f"{bench.gains.m} drivers) with {mode} schedule")
        if mode == "curriculum":
            result = train_curriculum(
                controller, bench.system, tcfg, scfg,
                on_epoch=lambda row, _c: log(
                    f"epoch {row.epoch}: loss={row.loss:.6f} horizon={row.horizon:.2f}"
                    + (" [unstable]" if row.instability else "")))
        else:
            rng = np.random.default_rng(tcfg.seed)
            x0 = bench.x_star * rng.uniform(0.9, 1.0, bench.graph.n)
            horizon = cfg.get("training.horizon", cfg.get("training.max_horizon") or 20.0)
            trainer = train_basic if mode == "basic" else train_adaptive
            result = trainer(controller, bench.system.rhs, x0, 0.0, horizon,
                             kuramoto_loss, tcfg, scfg)
    else:
        bench = assemble_sir(cfg)
        _maybe_warn_scale(cfg, bench, log)
        controller = make_controller(cfg, kind, bench)
        system = bench.system_for(controller.drivers)
        log(f"training {controller.kind} ({controller.num_params} parameters, "
            f"{controller.drivers.m} drivers) with {mode} schedule")
        loss_fn = lambda traj: epidemic_loss(traj, bench.target_nodes)
        horizon = cfg["training.horizon"]
        if mode == "curriculum":
            raise ConfigError("curriculum training applies to the kuramoto experiment")
        trainer = train_basic if mode == "basic" else train_adaptive
        result = trainer(controller, system.rhs, bench.x0, 0.0, horizon,
                         loss_fn, tcfg, scfg)
        for row in result.history:
            log(f"epoch {row.epoch}: loss={row.loss:.6f}"
                + (" [unstable]" if row.instability else ""))

    if result.history and result.history[0].instability:
        raise PipelineError("numerical instability in the first training epoch; "
                            "reduce solver.tau or training.lr")

    ckpt = out / "checkpoint.ckpt"
    save_checkpoint(ckpt, controller.params)
    history = out / "history.csv"
    write_history_csv(history, result)
    resolved = out / "config.resolved.cfg"
    cfg.write_resolved(resolved)
    artifacts = {"checkpoint": ckpt.name, "history": history.name,
                 "config": resolved.name}
    _write_run_record(cfg, out, artifacts)
    log(f"checkpoint written to {ckpt}")
    return {k: str(out / v) for k, v in artifacts.items()}


# ---------------------------------------------------------------------------
# evaluation entry point

def _load_nodec(cfg: Config, bench, checkpoint: str | Path) -> Controller:
    controller = make_controller(cfg, "nodec", bench)
    try:
        controller.set_params(load_checkpoint(checkpoint))
    except ValueError as exc:
        raise PipelineError(f"checkpoint/config mismatch: {exc}") from exc
    return controller


def _kuramoto_initial_states(cfg: Config, bench) -> list[np.ndarray]:
    rng = np.random.default_rng(cfg["eval.seed"])
    n = bench.graph.n
    states = []
    for _ in range(cfg["eval.samples"]):
        if cfg["eval.init"] == "near_steady":
            states.append(bench.x_star * rng.uniform(0.9, 1.0, n))
        elif cfg["eval.init"] == "uniform01":
            states.append(rng.uniform(0.0, 1.0, n))
        else:
            raise ConfigError("eval.init 'seeded' applies to the sir experiment")
    return states


def run_evaluate(cfg: Config, checkpoint: str | Path | None, out_dir: str | Path,
                 log=lambda msg: None) -> dict[str, str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ecfg = solve_config(cfg, prefix="eval.solver")
    aliases = {"fc": "feedback", "f": "free", "mlp": "nodec", "gnn": "nodec"}
    names = [aliases.get(n.lower(), n.lower()) for n in cfg["eval.controllers"]]
    if "nodec" in names and checkpoint is None:
        raise PipelineError("evaluating the learned controller requires --checkpoint")

    rows: list[dict] = []
    artifacts: dict[str, str] = {}
    run_id = cfg.run_id()

    if cfg.experiment == "kuramoto":
        bench = assemble_kuramoto(cfg)
        controllers = {n: (_load_nodec(cfg, bench, checkpoint) if n == "nodec"
                           else make_controller(cfg, n, bench)) for n in names}
        states = _kuramoto_initial_states(cfg, bench)
        horizon = cfg["eval.horizon"]
        per_sample: dict[str, list[tuple[float, float]]] = {n: [] for n in names}
        for name, controller in controllers.items():
            for i, x0 in enumerate(states):
                traj = ode_solve(x0, 0.0, horizon, bench.system.rhs, controller, ecfg)
                stats = kuramoto_stats(traj)
                e_val = energy(traj)
                per_sample[name].append((stats["r_final"], e_val))
                rows.append({"run_id": run_id, "controller": controller.kind,
                             "seed": i, "energy": e_val, **stats})
                if i == 0:
                    tpath = out / f"trajectory_{controller.kind}.csv"
                    write_trajectory_csv(
                        traj, tpath,
                        [f"x_{k}" for k in range(bench.graph.n)],
                        [f"u_{m}" for m in range(controller.m)])
                    artifacts[f"trajectory_{controller.kind}"] = tpath.name
            med_r = float(np.median([v[0] for v in per_sample[name]]))
            med_e = float(np.median([v[1] for v in per_sample[name]]))
            log(f"{name}: median r(T)={med_r:.4f} median E(T)={med_e:.1f}")
        if "nodec" in per_sample and "feedback" in per_sample:
            rel_path = out / "relative.csv"
            with open(rel_path, "w") as fh:
                fh.write("sample,r_nodec,r_fc,energy_nodec,energy_fc,"
                         "rel_r,rel_energy\n")
                for i, ((rn, en), (rf, ef)) in enumerate(
                        zip(per_sample["nodec"], per_sample["feedback"])):
                    fh.write(",".join([str(i)] + [repr(v) for v in (
                        rn, rf, en, ef, (rn - rf) / rf, (en - ef) / ef)]) + "\n")
            artifacts["relative"] = rel_path.name
        summary = _kuramoto_summary(per_sample)
    else:
        bench = assemble_sir(cfg)
        horizon = cfg["eval.horizon"]
        results = []
        for name in names:
            controller = (_load_nodec(cfg, bench, checkpoint) if name == "nodec"
                          else make_controller(cfg, name, bench))
            system = bench.system_for(controller.drivers)
            traj = ode_solve(bench.x0, 0.0, horizon, system.rhs, controller, ecfg)
            peak, t_peak = peak_infection(traj, bench.target_nodes)
            e_val = energy(traj)
            results.append((name, controller.kind, peak, t_peak, e_val))
            rows.append({"run_id": run_id, "controller": controller.kind,
                         "seed": cfg["eval.seed"], "energy": e_val,
                         "peak_infected": peak, "t_peak": t_peak})
            log(f"{name}: peak={peak:.4f} at t={t_peak:.3f}, E(T)={e_val:.1f}")
            labels = [f"{row_name}_{k}" for row_name in ("S", "I", "R", "Y")
                      for k in range(bench.graph.n)]
            tpath = out / f"trajectory_{controller.kind}.csv"
            write_trajectory_csv(traj, tpath, labels,
                                 [f"u_{m}" for m in range(controller.m)])
            artifacts[f"trajectory_{controller.kind}"] = tpath.name
        summary = _sir_summary(results)

    metrics_path = out / "metrics.csv"
    write_metrics_csv(metrics_path, rows)
    artifacts["metrics"] = metrics_path.name
    summary_path = out / "summary.txt"
    summary_path.write_text(summary)
    artifacts["summary"] = summary_path.name
    cfg.write_resolved(out / "config.resolved.cfg")
    artifacts["config"] = "config.resolved.cfg"
    _write_run_record(cfg, out, artifacts)
    log("\n" + summary.rstrip())
    return {k: str(out / v) for k, v in artifacts.items()}


_SHORT_NAMES = {"mlp-nodec": "NODEC", "gnn-nodec": "NODEC", "feedback": "FC",
                "targeted-constant": "TCC", "random-constant": "RND", "free": "F"}


def _kuramoto_summary(per_sample: dict[str, list[tuple[float, float]]]) -> str:
    lines = [f"{'Control':<10}{'Median r(T)':>14}{'Median E(T)':>16}"]
    for name, vals in per_sample.items():
        med_r = float(np.median([v[0] for v in vals]))
        med_e = float(np.median([v[1] for v in vals]))
        lines.append(f"{name:<10}{med_r:>14.4f}{med_e:>16.1f}")
    return "\n".join(lines) + "\n"


def _sir_summary(results: list[tuple]) -> str:
    # Table layout: one row per controller, sorted by peak infection.
    lines = [f"{'Control':<10}{'Peak Infection':>16}{'Total Energy':>16}"]
    for name, kind, peak, _t, e_val in sorted(results, key=lambda r: r[2]):
        lines.append(f"{_SHORT_NAMES.get(kind, name):<10}{peak:>16.4f}{e_val:>16.1f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# run comparison

def load_run_metrics(run_dir: str | Path) -> list[dict]:
    from .metrics import read_metrics_csv
    path = Path(run_dir) / "metrics.csv"
    if not path.exists():
        raise PipelineError(f"{run_dir}: missing metrics.csv")
    return read_metrics_csv(path)


_ASSERT_METRICS = {"peak": "peak_infected", "energy": "energy", "r": "r_final"}


def check_assertion(expr: str, rows: list[dict]) -> tuple[bool, str]:
    """Evaluate an ordering assertion like ``peak:NODEC<RND<F`` against the
    median metric per controller (short names as in the summary tables)."""
    try:
        metric_name, chain = expr.split(":", 1)
        column = _ASSERT_METRICS[metric_name.strip()]
        names = [p.strip().upper() for p in chain.split("<")]
        if len(names) < 2:
            raise ValueError
    except (ValueError, KeyError):
        return False, (f"bad assertion {expr!r}; expected "
                       f"'<metric>:A<B<...' with metric in {sorted(_ASSERT_METRICS)}")
    medians = {}
    for short in names:
        vals = [row[column] for row in rows
                if _SHORT_NAMES.get(row["controller"]) == short
                and row.get(column) is not None]
        if not vals:
            return False, f"no rows with metric {metric_name!r} for controller {short}"
        medians[short] = float(np.median(vals))
    for a, b in zip(names, names[1:]):
        if not medians[a] < medians[b]:
            detail = " ".join(f"{n}={medians[n]:.6g}" for n in names)
            return False, f"assertion {expr!r} violated: {detail}"
    return True, f"assertion {expr!r} holds: " + " ".join(
        f"{n}={medians[n]:.6g}" for n in names)


def compare_runs(run_dirs: list[str | Path]) -> tuple[list[dict], str]:
    if len(run_dirs) < 2:
        raise PipelineError("compare needs at least two run directories")
    per_run: list[list[dict]] = []
    errors = []
    for d in run_dirs:
        try:
            per_run.append(load_run_metrics(d))
        except PipelineError as exc:
            errors.append(str(exc))
    if errors:
        raise PipelineError("; ".join(errors))
    merged = [row for rows in per_run for row in rows]
    cols = ("run_id", "controller", "energy", "r_final", "peak_infected")
    widths = [max(len(c), 12) for c in cols]
    lines = ["".join(c.ljust(w + 2) for c, w in zip(cols, widths))]
    for row in merged:
        cells = []
        for c, w in zip(cols, widths):
            v = row.get(c)
            cells.append(("" if v is None else
                          f"{v:.6g}" if isinstance(v, float) else str(v)).ljust(w + 2))
        lines.append("".join(cells))
    if len(per_run) == 2:
        lines += ["", "relative differences (run2 vs run1, median per controller):"]
        lines += _relative_diff_lines(per_run[0], per_run[1])
    return merged, "\n".join(lines) + "\n"


def _relative_diff_lines(first: list[dict], second: list[dict]) -> list[str]:
    out = []
    kinds = sorted({r["controller"] for r in first} & {r["controller"] for r in second})
    for kind in kinds:
        cells = [f"  {kind:<20}"]
        for column in ("energy", "r_final", "peak_infected"):
            a = [r[column] for r in first if r["controller"] == kind
                 and r.get(column) is not None]
            b = [r[column] for r in second if r["controller"] == kind
                 and r.get(column) is not None]
            if not a or not b:
                continue
            base = float(np.median(a))
            rel = (float(np.median(b)) - base) / base if base != 0 else 0.0
            cells.append(f"{column}: {rel:+.6g}")
        out.append(" ".join(cells))
    return out
