"""Undirected graphs, driver-node selection, and graph-derived quantities.

Covers the two experiment topologies (Erdos-Renyi, 2-D lattice), the
Laplacian pseudo-inverse and synchronized steady state used by the oscillator
feedback baseline, stability-margin control gains, and matching-based driver
selection.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

Array = np.ndarray


class Graph:
    """Simple undirected graph: no self-loops, 0/1 symmetric adjacency.

    ``grid_shape`` is set by :func:`lattice2d` so lattice-specific helpers
    (quadrant seeding) can recover the row/column layout.
    """

    def __init__(self, n: int, edges, grid_shape: tuple[int, int] | None = None):
        if n <= 0:
            raise ValueError("graph needs at least one node")
        self.n = n
        canon = set()
        for i, j in edges:
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i},{j}) out of range for n={n}")
            canon.add((min(i, j), max(i, j)))
        self.edges = sorted(canon)
        self.adjacency = np.zeros((n, n))
        for i, j in self.edges:
            self.adjacency[i, j] = 1.0
            self.adjacency[j, i] = 1.0
        self.degrees = self.adjacency.sum(axis=1).astype(np.int64)
        self.grid_shape = grid_shape
        self._neighbors: list[list[int]] | None = None

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max())

    @property
    def mean_degree(self) -> float:
        return float(self.degrees.mean())

    def neighbors(self, i: int) -> list[int]:
        if self._neighbors is None:
            lists: list[list[int]] = [[] for _ in range(self.n)]
            for a, b in self.edges:
                lists[a].append(b)
                lists[b].append(a)
            self._neighbors = [sorted(l) for l in lists]
        return self._neighbors[i]

    def laplacian(self) -> Array:
        return np.diag(self.degrees.astype(np.float64)) - self.adjacency


@dataclass
class DriverMap:
    """Ordered driver-node list with optional per-driver gains.

    The induced driver matrix B (N x M) has exactly one non-zero per column
    and at most one per row: control m feeds exactly node ``drivers[m]``.
    """

    drivers: list[int]
    n: int
    gains: Array | None = field(default=None)

    def __post_init__(self):
        self.drivers = [int(d) for d in self.drivers]
        if len(set(self.drivers)) != len(self.drivers):
            raise ValueError("duplicate driver nodes")
        if len(self.drivers) > self.n:
            raise ValueError("more drivers than nodes")
        for d in self.drivers:
            if not 0 <= d < self.n:
                raise ValueError(f"driver index {d} out of range")
        if self.gains is not None:
            self.gains = np.asarray(self.gains, dtype=np.float64)
            if self.gains.shape != (len(self.drivers),):
                raise ValueError("gains length must match driver count")

    @property
    def m(self) -> int:
        return len(self.drivers)

    def matrix(self) -> Array:
        """Dense binary driver matrix B."""
        b = np.zeros((self.n, self.m))
        for m, i in enumerate(self.drivers):
            b[i, m] = 1.0
        return b

    def restricted_to(self, nodes) -> "DriverMap":
        """Sub-map keeping only drivers inside ``nodes`` (order preserved)."""
        keep = set(int(x) for x in nodes)
        idx = [m for m, d in enumerate(self.drivers) if d in keep]
        if not idx:
            raise ValueError("restriction removes every driver")
        gains = self.gains[idx] if self.gains is not None else None
        return DriverMap([self.drivers[m] for m in idx], self.n, gains)


# ---------------------------------------------------------------------------
# constructors

def erdos_renyi(n: int, p: float, seed: int) -> Graph:
    """G(n, p): each unordered pair becomes an edge independently with
    probability p, deterministically per (n, p, seed)."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    rng = np.random.default_rng(seed)
    rows, cols = np.triu_indices(n, k=1)
    mask = rng.random(rows.shape[0]) < p
    edges = list(zip(rows[mask].tolist(), cols[mask].tolist()))
    return Graph(n, edges)


def lattice2d(rows: int, cols: int) -> Graph:
    """4-neighbor grid without wraparound; node index is row * cols + col."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return Graph(rows * cols, edges, grid_shape=(rows, cols))


# ---------------------------------------------------------------------------
# edge-list file format: header "# nodes=N", then sorted "i j" lines (i < j)

def write_graph(g: Graph, path: str | Path) -> None:
    lines = [f"# nodes={g.n}"]
    lines += [f"{i} {j}" for i, j in g.edges]
    Path(path).write_text("\n".join(lines) + "\n")


def read_graph(path: str | Path) -> Graph:
    text = Path(path).read_text().strip().splitlines()
    if not text or not text[0].startswith("# nodes="):
        raise ValueError(f"{path}: missing '# nodes=N' header")
    n = int(text[0].split("=", 1)[1])
    edges = []
    for line in text[1:]:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        i, j = line.split()
        edges.append((int(i), int(j)))
    return Graph(n, edges)


# ---------------------------------------------------------------------------
# spectral quantities

def laplacian_pinv(g: Graph, rel_tol: float = 1e-9) -> Array:
    """Moore-Penrose pseudo-inverse of L = D - A via symmetric
    eigendecomposition; eigenvalues below rel_tol * lambda_max are treated as
    zero modes (one per connected component)."""
    lap = g.laplacian()
    eigvals, eigvecs = np.linalg.eigh(lap)
    lam_max = float(eigvals.max(initial=0.0))
    cutoff = rel_tol * lam_max if lam_max > 0 else np.inf
    inv = np.where(eigvals > cutoff, 1.0 / np.where(eigvals > cutoff, eigvals, 1.0), 0.0)
    return (eigvecs * inv) @ eigvecs.T


def steady_state(g: Graph, coupling: float, omega: Array) -> Array:
    """Synchronized steady-state phases (1/K) L^+ omega of the coupled
    oscillator system (valid in the rotating frame)."""
    if coupling == 0.0:
        raise ValueError("coupling must be non-zero")
    omega = np.asarray(omega, dtype=np.float64)
    if omega.shape != (g.n,):
        raise ValueError(f"omega must have length {g.n}")
    return laplacian_pinv(g) @ omega / coupling


def kuramoto_gains(g: Graph, coupling: float, x_star: Array, margin: float,
                   zero_tol: float = 1e-12) -> DriverMap:
    """Per-node feedback gains from the stability-margin constraint, taken at
    equality; nodes with non-zero gain become drivers.

    The gain sums only over actual neighbors (A_ij != 0): each neighbor j
    contributes |K cos(dx) - margin| - (K cos(dx) - margin), i.e.
    2 * max(0, margin - K cos(dx)); non-edges would otherwise each add a
    spurious 2 * margin and mark every node a driver.
    """
    if margin < 0:
        raise ValueError("margin must be >= 0")
    x_star = np.asarray(x_star, dtype=np.float64)
    diff = x_star[:, None] - x_star[None, :]
    term = coupling * g.adjacency * np.cos(diff) - margin
    contributions = (np.abs(term) - term) * (g.adjacency > 0)
    b = contributions.sum(axis=1)
    drivers = [i for i in range(g.n) if abs(b[i]) > zero_tol]
    return DriverMap(drivers, g.n, gains=b[drivers])


# ---------------------------------------------------------------------------
# maximum matching

def hopcroft_karp(adj: list[list[int]], n_right: int) -> tuple[int, list[int], list[int]]:
    """Maximum bipartite matching.

    ``adj[l]`` lists right-vertices reachable from left-vertex l. Returns
    (size, match_left, match_right), where match_left[l] is the right partner
    of l or -1, and vice versa. Deterministic for a fixed adjacency order.
    """
    n_left = len(adj)
    inf = float("inf")
    match_left = [-1] * n_left
    match_right = [-1] * n_right
    dist = [0.0] * n_left

    def bfs() -> bool:
        queue = deque()
        for l in range(n_left):
            if match_left[l] == -1:
                dist[l] = 0.0
                queue.append(l)
            else:
                dist[l] = inf
        found = inf
        while queue:
            l = queue.popleft()
            if dist[l] < found:
                for r in adj[l]:
                    nxt = match_right[r]
                    if nxt == -1:
                        found = dist[l] + 1
                    elif dist[nxt] == inf:
                        dist[nxt] = dist[l] + 1
                        queue.append(nxt)
        return found != inf

    def dfs(l: int) -> bool:
        for r in adj[l]:
            nxt = match_right[r]
            if nxt == -1 or (dist[nxt] == dist[l] + 1 and dfs(nxt)):
                match_left[l] = r
                match_right[r] = l
                return True
        dist[l] = inf
        return False

    size = 0
    while bfs():
        for l in range(n_left):
            if match_left[l] == -1 and dfs(l):
                size += 1
    return size, match_left, match_right


def max_matching_drivers(g: Graph, seed: int = 0) -> DriverMap:
    """Driver nodes from the bipartite node-split representation.

    Each node gets an out-copy and an in-copy; every undirected edge {i, j}
    contributes arcs in both directions. In-copies left unmatched by a
    maximum matching are the driver nodes. A perfect matching degenerates to
    a single driver, the lowest-index node. ``seed`` permutes the arc
    exploration order, choosing deterministically among equally large
    matchings.
    """
    rng = np.random.default_rng(seed)
    adj = []
    for i in range(g.n):
        nbrs = list(g.neighbors(i))
        rng.shuffle(nbrs)
        adj.append(nbrs)
    order = rng.permutation(g.n)
    permuted = [adj[i] for i in order]
    _, match_left, match_right = hopcroft_karp(permuted, g.n)
    unmatched = sorted(r for r in range(g.n) if match_right[r] == -1)
    if not unmatched:
        return DriverMap([0] if g.n > 0 else [], g.n)
    return DriverMap(unmatched, g.n)


def bipartition(g: Graph) -> tuple[list[int], list[int]]:
    """2-coloring by BFS; raises if any component has an odd cycle."""
    color = [-1] * g.n
    for start in range(g.n):
        if color[start] != -1:
            continue
        color[start] = 0
        queue = deque([start])
        while queue:
            i = queue.popleft()
            for j in g.neighbors(i):
                if color[j] == -1:
                    color[j] = 1 - color[i]
                    queue.append(j)
                elif color[j] == color[i]:
                    raise ValueError("graph is not bipartite")
    left = [i for i in range(g.n) if color[i] == 0]
    right = [i for i in range(g.n) if color[i] == 1]
    return left, right


def matching_edge_drivers(g: Graph, seed: int = 0) -> DriverMap:
    """One driver per edge of a maximum matching of the (bipartite) graph
    itself: the lower-index endpoint of each matched edge.

    This is the driver layout used for the epidemic lattice experiments; the
    node-split selection of :func:`max_matching_drivers` collapses to a
    single driver whenever the lattice admits a perfect matching.
    """
    left, right = bipartition(g)
    rng = np.random.default_rng(seed)
    right_pos = {node: k for k, node in enumerate(right)}
    adj = []
    for node in left:
        nbrs = [right_pos[j] for j in g.neighbors(node)]
        rng.shuffle(nbrs)
        adj.append(nbrs)
    _, match_left, _ = hopcroft_karp(adj, len(right))
    drivers = sorted(min(left[l], right[r]) for l, r in enumerate(match_left) if r != -1)
    if not drivers:
        raise ValueError("graph has no edges; no matched-edge drivers exist")
    return DriverMap(drivers, g.n)
