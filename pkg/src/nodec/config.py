"""Experiment configuration: flat ``key = value`` files with dotted sections.

The format is deliberately dependency-free and diff-friendly. Every key has a
registered type and a default mirroring the published experimental setup;
unknown keys are rejected with a line diagnostic. The resolved configuration
(defaults plus overrides) hashes stably under key reordering and re-runs
bitwise-identically from its snapshot.
"""

from __future__ import annotations

import hashlib
import subprocess
from pathlib import Path

from . import __version__


class ConfigError(ValueError):
    """Invalid configuration (unknown key, bad type, missing requirement)."""


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _parse_str_tuple(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _parse_optional_float(text: str):
    return None if text.lower() == "none" else float(text)


def _choice(*options: str):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"must be one of {options}, got {text!r}")
        return text
    return parse


# key -> (parser, default for kuramoto, default for sir)
_UNSET = object()

REGISTRY: dict[str, tuple] = {
    "experiment": (_choice("kuramoto", "sir"), "kuramoto", "sir"),
    "graph.kind": (_choice("er", "lattice", "file"), "er", "lattice"),
    "graph.n": (int, 1024, _UNSET),
    "graph.p": (float, 6 / 1023, _UNSET),
    "graph.rows": (int, _UNSET, 32),
    "graph.cols": (int, _UNSET, 32),
    "graph.seed": (int, 8, 0),
    "graph.file": (str, _UNSET, _UNSET),
    "drivers.method": (_choice("gains", "matching", "matching-edges", "all"),
                       "gains", "matching-edges"),
    "drivers.seed": (int, 0, 0),
    "dynamics.coupling": (float, 0.4, _UNSET),
    "dynamics.omega_seed": (int, 208, _UNSET),
    "dynamics.margin": (float, 0.1, _UNSET),
    "dynamics.beta": (float, _UNSET, 6.0),
    "dynamics.gamma": (float, _UNSET, 1.8),
    "dynamics.budget": (float, _UNSET, 600.0),
    "dynamics.seed_quadrant": (_choice("upper_left", "upper_right",
                                       "lower_left", "lower_right"),
                               _UNSET, "upper_right"),
    "dynamics.seed_fraction": (float, _UNSET, 0.5),
    "dynamics.target_quadrant": (_choice("upper_left", "upper_right",
                                         "lower_left", "lower_right"),
                                 _UNSET, "lower_left"),
    "controller.kind": (_choice("mlp", "gnn", "feedback", "tcc", "rnd", "free"),
                        "mlp", "gnn"),
    "controller.hidden": (_parse_int_tuple, (3, 3), _UNSET),
    "controller.rounds": (int, _UNSET, 4),
    "controller.zeta": (float, 10.0, _UNSET),
    "controller.head_init": (_choice("uniform", "zero"), "uniform", _UNSET),
    "controller.init_seed": (int, 1, 0),
    "controller.rnd_seed": (int, 1, 1),
    "controller.rnd_redraw": (_parse_bool, False, False),
    "controller.tcc_target_only": (_parse_bool, _UNSET, True),
    "solver.method": (_choice("euler", "rk4", "dopri5"), "euler", "rk4"),
    "solver.tau": (float, 0.05, 0.01),
    "solver.rtol": (float, 1e-6, 1e-6),
    "solver.atol": (float, 1e-8, 1e-8),
    "solver.control_interval": (float, 0.05, 0.02),
    "solver.sample_stride": (int, 1, 2),
    "training.mode": (_choice("basic", "curriculum", "adaptive"),
                      "curriculum", "adaptive"),
    "training.epochs": (int, 27, 25),
    "training.lr": (float, 0.015, 0.07),
    "training.batch": (int, 8, 1),
    "training.optimizer": (_choice("adam", "sgd"), "adam", "adam"),
    "training.step_size": (float, 1.0, _UNSET),
    "training.max_horizon": (_parse_optional_float, 40.0, _UNSET),
    "training.horizon": (float, _UNSET, 5.0),
    "training.tol_ratio": (float, 1.5, 1.5),
    "training.shrink": (float, 0.5, 0.5),
    "training.seed": (int, 1, 0),
    "eval.samples": (int, 100, 1),
    "eval.init": (_choice("near_steady", "uniform01", "seeded"),
                  "near_steady", "seeded"),
    "eval.horizon": (float, 150.0, 5.0),
    "eval.seed": (int, 424242, 0),
    "eval.controllers": (_parse_str_tuple, ("nodec", "feedback"),
                         ("nodec", "tcc", "rnd", "free")),
    "eval.solver.method": (_choice("euler", "rk4", "dopri5"), "rk4", "rk4"),
    "eval.solver.tau": (float, 0.05, 1e-3),
    "eval.solver.control_interval": (float, 0.05, 1e-3),
    "eval.solver.sample_stride": (int, 1, 1),
}

_CONTROLLER_KINDS = {
    "mlp": "mlp-nodec",
    "gnn": "gnn-nodec",
    "nodec": None,  # resolved per experiment
    "feedback": "feedback",
    "fc": "feedback",
    "tcc": "targeted-constant",
    "rnd": "random-constant",
    "free": "free",
    "f": "free",
}


class Config:
    """Resolved configuration: overrides merged over experiment defaults."""

    def __init__(self, overrides: dict[str, object]):
        experiment = overrides.get("experiment", REGISTRY["experiment"][1])
        column = 1 if experiment == "kuramoto" else 2
        self.values: dict[str, object] = {}
        for key, entry in REGISTRY.items():
            default = entry[column]
            if key in overrides:
                self.values[key] = overrides[key]
            elif default is not _UNSET:
                self.values[key] = default
        self.overridden = set(overrides)

    def __getitem__(self, key: str):
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError(f"missing required key {key!r} for this experiment") from None

    def get(self, key: str, fallback=None):
        return self.values.get(key, fallback)

    @property
    def experiment(self) -> str:
        return self.values["experiment"]

    def canonical_lines(self) -> list[str]:
        lines = []
        for key in sorted(self.values):
            lines.append(f"{key} = {format_value(self.values[key])}")
        return lines

    def hash(self) -> str:
        blob = "\n".join(self.canonical_lines()).encode()
        return hashlib.sha256(blob).hexdigest()

    def run_id(self) -> str:
        return f"{self.experiment}-{self.hash()[:10]}"

    def write_resolved(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.canonical_lines()) + "\n")


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return "none"
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> Config:
    overrides: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in REGISTRY:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in overrides:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        parser = REGISTRY[key][0]
        try:
            overrides[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    return Config(overrides)


def load_config(path: str | Path) -> Config:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path))


def version_string() -> str:
    """git-describe when available, package version otherwise."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.TimeoutExpired):
        pass
    return f"v{__version__}"


# ---------------------------------------------------------------------------
# presets: desk-scale runs finish in minutes on one core; full-scale
# presets reproduce the benchmark setup and are long-running.

PRESETS: dict[str, str] = {
    "kuramoto-desk": """\
# Coupled-oscillator synchronization, desk scale (minutes on one core).
experiment = kuramoto
graph.n = 64
graph.p = 0.0952380952380952
graph.seed = 8
dynamics.omega_seed = 208
controller.head_init = zero
training.epochs = 27
training.lr = 0.015
training.seed = 1
eval.samples = 20
eval.init = near_steady
""",
    "kuramoto-full": """\
# WARNING: long-running full-scale preset (N=1024; hours on one core).
experiment = kuramoto
graph.n = 1024
graph.p = 0.005865102639296188
graph.seed = 8
dynamics.omega_seed = 208
training.epochs = 40
eval.samples = 100
eval.init = uniform01
""",
    "sir-desk": """\
# Epidemic containment on a 16x16 lattice, desk scale (minutes on one core).
experiment = sir
graph.rows = 16
graph.cols = 16
dynamics.budget = 150.0
training.epochs = 25
training.horizon = 5.0
eval.horizon = 5.0
""",
    "sir-full": """\
# WARNING: long-running full-scale preset (32x32 lattice; budget 600).
experiment = sir
graph.rows = 32
graph.cols = 32
dynamics.budget = 600.0
training.epochs = 60
training.horizon = 5.0
eval.horizon = 5.0
""",
}


def preset_config(name: str) -> Config:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return parse_config_text(PRESETS[name], source=f"<preset:{name}>")
