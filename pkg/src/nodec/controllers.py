"""Control-signal generators behind one interface.

Every controller maps a state Var to an M-vector Var of per-driver controls
and carries its own :class:`DriverMap`. Neural controllers hold numpy
parameter arrays that are bound to a tape as leaf Vars at solve time, so the
same object trains on a recording tape and evaluates on a plain one. Analytic
baselines (feedback gains, constant and random budget splits, free dynamics)
share the interface so experiment pipelines treat all of them uniformly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .graphs import DriverMap, Graph

Array = np.ndarray

CHECKPOINT_MAGIC = b"NODEC1\n"


class Controller:
    """Base: parameter bookkeeping plus per-tape binding of leaf Vars."""

    kind = "base"

    def __init__(self, drivers: DriverMap):
        self.drivers = drivers
        self.params: dict[str, Array] = {}
        self._bound_tape: Tape | None = None
        self._bound: dict[str, Var] = {}

    @property
    def m(self) -> int:
        return self.drivers.m

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def bind(self, tape: Tape) -> dict[str, Var]:
        """Create (or fetch cached) leaf Vars for the parameters on ``tape``."""
        if self._bound_tape is not tape:
            self._bound = {name: tape.leaf(arr) for name, arr in self.params.items()}
            self._bound_tape = tape
        return self._bound

    def set_params(self, values: dict[str, Array]) -> None:
        if set(values) != set(self.params):
            raise ValueError(f"parameter names {sorted(values)} do not match "
                             f"expected {sorted(self.params)}")
        for name, arr in values.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != self.params[name].shape:
                raise ValueError(f"parameter {name!r}: shape {arr.shape} != "
                                 f"{self.params[name].shape}")
            self.params[name] = arr.copy()
        self._bound_tape = None

    def snapshot(self) -> dict[str, Array]:
        return {name: arr.copy() for name, arr in self.params.items()}

    def __call__(self, x: Var, t: float) -> Var:
        raise NotImplementedError


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Array:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class MlpController(Controller):
    """Dense network for phase-oscillator control.

    The state enters through an elementwise sine, so the output is 2*pi
    periodic in every phase; hidden layers use ELU, the head is linear.
    """

    kind = "mlp-nodec"

    def __init__(self, n: int, drivers: DriverMap, hidden: tuple[int, ...] = (3, 3),
                 init_seed: int = 0, head_init: str = "uniform"):
        if head_init not in ("uniform", "zero"):
            raise ValueError("head_init must be 'uniform' or 'zero'")
        super().__init__(drivers)
        self.n = n
        self.hidden = tuple(int(h) for h in hidden)
        self.head_init = head_init
        rng = np.random.default_rng(init_seed)
        widths = (n, *self.hidden, drivers.m)
        for layer, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            self.params[f"w{layer}"] = _uniform_init(rng, (fan_out, fan_in), fan_in)
            self.params[f"b{layer}"] = _uniform_init(rng, (fan_out,), fan_in)
        self.n_layers = len(widths) - 1
        if head_init == "zero":
            # Controls start exactly at zero and grow only as training needs
            # them; keeps the learned control's energy near its floor.
            head = self.n_layers - 1
            self.params[f"w{head}"] = np.zeros_like(self.params[f"w{head}"])
            self.params[f"b{head}"] = np.zeros_like(self.params[f"b{head}"])

    def __call__(self, x: Var, t: float) -> Var:
        if x.shape != (self.n,):
            raise ValueError(f"state must have length {self.n}")
        p = self.bind(x.tape)
        h = ad.sin(x)
        for layer in range(self.n_layers):
            h = ad.matmul(p[f"w{layer}"], h) + p[f"b{layer}"]
            if layer < self.n_layers - 1:
                h = ad.elu(h)
        return h


class GnnController(Controller):
    """Graph network for epidemic containment.

    Each round gathers the 4-channel states of every node's neighbors
    (fixed neighbor order, zero-padded to the maximum degree), averages over
    actual neighbors, applies a learned 4 -> 4 channel map with bias, and an
    ELU. After the final round the channel mean gives one score per node; the
    driver scores pass through a softmax and are scaled by the budget, so the
    control is positive and sums exactly to the budget.
    """

    kind = "gnn-nodec"

    def __init__(self, graph: Graph, drivers: DriverMap, budget: float,
                 rounds: int = 4, init_seed: int = 0):
        if rounds < 1:
            raise ValueError("rounds must be >= 1")
        if drivers.m == 0:
            raise ValueError("epidemic control needs a non-empty driver set")
        super().__init__(drivers)
        self.graph = graph
        self.budget = float(budget)
        self.rounds = rounds
        self.channels = 4
        d_hat = max(graph.max_degree, 1)
        self.d_hat = d_hat
        # Neighbor slot j of node i, in sorted node order; padded slots point
        # at node 0 and are zeroed by the mask.
        idx = np.zeros((graph.n, d_hat), dtype=np.intp)
        mask = np.zeros((graph.n, d_hat))
        for i in range(graph.n):
            nbrs = graph.neighbors(i)
            idx[i, :len(nbrs)] = nbrs
            mask[i, :len(nbrs)] = 1.0
        self._nbr_idx = idx.reshape(-1)
        self._mask = np.broadcast_to(mask, (self.channels, graph.n, d_hat)).copy()
        # Converts the padded-slot mean back into a mean over actual neighbors.
        deg = np.maximum(graph.degrees, 1).astype(np.float64)
        self._rescale = np.broadcast_to(d_hat / deg, (self.channels, graph.n)).copy()
        self._ones_row = np.ones((1, graph.n))
        rng = np.random.default_rng(init_seed)
        for r in range(rounds):
            self.params[f"conv_w{r}"] = _uniform_init(rng, (4, 4), 4)
            self.params[f"conv_b{r}"] = _uniform_init(rng, (4,), 4)

    def _neighbor_mean(self, h: Var) -> Var:
        psi = ad.gather(h, self._nbr_idx, axis=1)
        psi = ad.reshape(psi, (self.channels, self.graph.n, self.d_hat))
        psi = ad.const_mul(self._mask, psi)
        return ad.const_mul(self._rescale, ad.axis_mean(psi, axis=2))

    def __call__(self, x: Var, t: float) -> Var:
        if x.shape != (4, self.graph.n):
            raise ValueError(f"state must be 4 x {self.graph.n}")
        p = self.bind(x.tape)
        h = x
        for r in range(self.rounds):
            agg = self._neighbor_mean(h)
            bias = ad.matmul_const(ad.reshape(p[f"conv_b{r}"], (4, 1)), self._ones_row)
            h = ad.elu(ad.matmul(p[f"conv_w{r}"], agg) + bias)
        scores = ad.axis_mean(h, axis=0)
        logits = ad.gather(scores, self.drivers.drivers, axis=0)
        return ad.scale(ad.softmax(logits), self.budget)


class FeedbackController(Controller):
    """Analytic baseline: u_m = zeta * gain_m * sin(target_m - x_m) per driver."""

    kind = "feedback"

    def __init__(self, gains: DriverMap, zeta: float = 10.0, target: Array | None = None):
        if gains.gains is None:
            raise ValueError("feedback control needs per-driver gains")
        super().__init__(gains)
        self.zeta = float(zeta)
        self.target = (np.zeros(gains.m) if target is None
                       else np.asarray(target, dtype=np.float64)[gains.drivers])
        self._scaled = self.zeta * gains.gains

    def __call__(self, x: Var, t: float) -> Var:
        phases = ad.gather(x, self.drivers.drivers, axis=0)
        return ad.const_mul(self._scaled, ad.sin(ad.const_add(self.target, -phases)))


class TargetedConstantController(Controller):
    """Budget split evenly over its driver map: u_m = budget / M, all t."""

    kind = "targeted-constant"

    def __init__(self, drivers: DriverMap, budget: float):
        if drivers.m == 0:
            raise ValueError("constant control needs at least one driver")
        super().__init__(drivers)
        self.budget = float(budget)
        self._vec = np.full(drivers.m, self.budget / drivers.m)
        self._cache: tuple[Tape, Var] | None = None

    def __call__(self, x: Var, t: float) -> Var:
        if self._cache is None or self._cache[0] is not x.tape:
            self._cache = (x.tape, x.tape.leaf(self._vec))
        return self._cache[1]


class RandomConstantController(Controller):
    """Budget split by random coefficients c ~ U(0,1): u_m = budget * c_m / sum(c).

    Coefficients are drawn once at construction by default; with
    ``redraw=True`` they are redrawn at every controller interaction.
    """

    kind = "random-constant"

    def __init__(self, drivers: DriverMap, budget: float, seed: int, redraw: bool = False):
        if drivers.m == 0:
            raise ValueError("random control needs at least one driver")
        super().__init__(drivers)
        self.budget = float(budget)
        self.redraw = redraw
        self._rng = np.random.default_rng(seed)
        self._vec = self._draw()
        self._cache: tuple[Tape, Var] | None = None

    def _draw(self) -> Array:
        c = self._rng.uniform(0.0, 1.0, size=self.drivers.m)
        return self.budget * c / c.sum()

    def __call__(self, x: Var, t: float) -> Var:
        if self.redraw:
            return x.tape.leaf(self._draw())
        if self._cache is None or self._cache[0] is not x.tape:
            self._cache = (x.tape, x.tape.leaf(self._vec))
        return self._cache[1]


class FreeController(Controller):
    """No intervention: u = 0 on every driver."""

    kind = "free"

    def __init__(self, drivers: DriverMap):
        super().__init__(drivers)
        self._vec = np.zeros(drivers.m)
        self._cache: tuple[Tape, Var] | None = None

    def __call__(self, x: Var, t: float) -> Var:
        if self._cache is None or self._cache[0] is not x.tape:
            self._cache = (x.tape, x.tape.leaf(self._vec))
        return self._cache[1]


# ---------------------------------------------------------------------------
# checkpoint format: magic, one "name extent..." text line per tensor, blank
# line, then raw little-endian float64 payloads in declared order.

def save_checkpoint(path: str | Path, params: dict[str, Array]) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name, arr in params.items():
            if " " in name or "\n" in name:
                raise ValueError(f"tensor name {name!r} may not contain whitespace")
            dims = " ".join(str(d) for d in np.asarray(arr).shape)
            fh.write(f"{name} {dims}".rstrip().encode() + b"\n")
        fh.write(b"\n")
        for arr in params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> dict[str, Array]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: bad checkpoint magic")
    header_end = raw.index(b"\n\n", len(CHECKPOINT_MAGIC) - 1)
    header = raw[len(CHECKPOINT_MAGIC):header_end].decode().splitlines()
    entries: list[tuple[str, tuple[int, ...]]] = []
    for line in header:
        parts = line.split()
        entries.append((parts[0], tuple(int(d) for d in parts[1:])))
    payload = raw[header_end + 2:]
    total = sum(int(np.prod(shape, dtype=np.int64)) if shape else 1 for _, shape in entries)
    if len(payload) != total * struct.calcsize("<d"):
        raise ValueError(f"{path}: payload size mismatch")
    params: dict[str, Array] = {}
    offset = 0
    for name, shape in entries:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        flat = np.frombuffer(payload, dtype="<f8", count=count, offset=offset * 8)
        params[name] = flat.astype(np.float64).reshape(shape)
        offset += count
    return params
