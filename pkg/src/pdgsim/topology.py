"""Interaction graphs, consensus weight matrices and per-round mixing matrices.

Agents are numbered 1..m in every public interface (edge lists, message logs,
reports); numpy arrays are indexed 0..m-1 internally.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

STOCHASTIC_TOL = 1e-12

# draws below this are floored so every sampled in-neighborhood weight stays > 0
_POSITIVITY_FLOOR = 1e-9

PRESETS = ("path", "ring", "star", "complete", "net5")


@dataclass(frozen=True)
class Graph:
    """Undirected interaction graph; self-loops are implicit (every agent hears itself)."""

    m: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"agent count must be positive, got {self.m}")
        seen = set()
        for i, j in self.edges:
            if not (1 <= i <= self.m and 1 <= j <= self.m):
                raise ValueError(f"edge ({i},{j}) out of range 1..{self.m}")
            if i == j:
                raise ValueError(f"explicit self-loop ({i},{j}) not allowed")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge ({i},{j})")
            seen.add(key)
        object.__setattr__(self, "edges", tuple(sorted(seen)))
        if not self._connected():
            raise ValueError("graph is not connected")

    def _connected(self) -> bool:
        if self.m == 1:
            return True
        adj = self.neighbor_lists()
        seen = {1}
        stack = [1]
        while stack:
            for j in adj[stack.pop() - 1]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == self.m

    def neighbor_lists(self) -> list[list[int]]:
        """Neighbors of each agent excluding the agent itself (1-based, sorted)."""
        adj = [[] for _ in range(self.m)]
        for i, j in self.edges:
            adj[i - 1].append(j)
            adj[j - 1].append(i)
        return [sorted(a) for a in adj]

    def closed_neighborhoods(self) -> list[list[int]]:
        """Neighbors including the agent itself (the sets the algorithms sum over)."""
        return [sorted(a + [i + 1]) for i, a in enumerate(self.neighbor_lists())]

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.m, dtype=int)
        for i, j in self.edges:
            deg[i - 1] += 1
            deg[j - 1] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.m, self.m), dtype=bool)
        for i, j in self.edges:
            a[i - 1, j - 1] = True
            a[j - 1, i - 1] = True
        return a

    def directed_edges(self) -> list[tuple[int, int]]:
        """All ordered pairs (sender, receiver) along graph edges."""
        out = []
        for i, j in self.edges:
            out.append((i, j))
            out.append((j, i))
        return sorted(out)


@dataclass(frozen=True)
class SpectralData:
    """Spectral norms of W - 11^T/m (averaging gap) and W - I (per-step drift)."""

    eta: float
    r: float


def graph_preset(name: str, m: int | None = None) -> Graph:
    """Build a named preset graph.

    ``path``, ``ring``, ``star`` and ``complete`` take an agent count; ``net5``
    is the bundled 5-node demo network (a 5-cycle with one chord) shipped as an
    edge-list asset.
    """
    if name == "net5":
        text = resources.files("pdgsim").joinpath("data/net5.edges").read_text()
        return parse_edge_list(text)
    if m is None:
        raise ValueError(f"preset {name!r} needs an agent count")
    if m < 1:
        raise ValueError("agent count must be positive")
    if name == "path":
        edges = [(i, i + 1) for i in range(1, m)]
    elif name == "ring":
        if m < 3:
            edges = [(i, i + 1) for i in range(1, m)]
        else:
            edges = [(i, i + 1) for i in range(1, m)] + [(m, 1)]
    elif name == "star":
        edges = [(1, i) for i in range(2, m + 1)]
    elif name == "complete":
        edges = [(i, j) for i in range(1, m + 1) for j in range(i + 1, m + 1)]
    else:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    return Graph(m, tuple(edges))


def parse_edge_list(text: str) -> Graph:
    """Parse the one-'i j'-pair-per-line edge-list format (1-based indices)."""
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'i j', got {raw!r}")
        i, j = int(parts[0]), int(parts[1])
        edges.append((i, j))
    if not edges:
        raise ValueError("edge list is empty")
    m = max(max(i, j) for i, j in edges)
    return Graph(m, tuple(edges))


def load_edge_list(path) -> Graph:
    with open(path) as fh:
        return parse_edge_list(fh.read())


def metropolis_weights(graph: Graph) -> np.ndarray:
    """Symmetric doubly-stochastic weights with w_ij = 1/(1 + max(deg_i, deg_j)).

    The diagonal absorbs the remaining mass, so w_ii > 0 and every row/column
    sums to one; on a connected graph the averaging gap is strictly below one.
    """
    m = graph.m
    deg = graph.degrees()
    W = np.zeros((m, m))
    for i, j in graph.edges:
        w = 1.0 / (1.0 + max(deg[i - 1], deg[j - 1]))
        W[i - 1, j - 1] = w
        W[j - 1, i - 1] = w
    W[np.diag_indices(m)] = 1.0 - W.sum(axis=1)
    validate_weight_matrix(W, graph)
    return W


def validate_weight_matrix(W: np.ndarray, graph: Graph, tol: float = STOCHASTIC_TOL) -> None:
    """Check support, double stochasticity and the averaging-gap requirement eta < 1."""
    m = graph.m
    W = np.asarray(W, dtype=float)
    if W.shape != (m, m):
        raise ValueError(f"weight matrix shape {W.shape} does not match m={m}")
    if np.any(W < 0):
        raise ValueError("weight matrix has negative entries")
    if np.any(np.diag(W) <= 0):
        raise ValueError("weight matrix must have strictly positive diagonal")
    support = graph.adjacency()
    off = ~np.eye(m, dtype=bool)
    if np.any((W > 0) & off & ~support):
        raise ValueError("weight matrix has positive entries off the graph support")
    if np.any(support & (W <= 0)):
        raise ValueError("weight matrix is zero on a graph edge")
    row_err = np.abs(W.sum(axis=1) - 1.0).max()
    col_err = np.abs(W.sum(axis=0) - 1.0).max()
    if max(row_err, col_err) > tol:
        raise ValueError(
            f"weight matrix is not doubly stochastic (row err {row_err:.2e}, col err {col_err:.2e})"
        )
    eta = spectral_data(W).eta
    if eta >= 1.0:
        raise ValueError(f"averaging gap violated: eta = {eta} >= 1 (graph effectively disconnected)")


def spectral_data(W: np.ndarray) -> SpectralData:
    """Spectral norms eta = ||W - 11^T/m|| and r = ||W - I||.

    Symmetric matrices go through an exact eigendecomposition; anything else
    falls back to the SVD-based 2-norm.
    """
    W = np.asarray(W, dtype=float)
    m = W.shape[0]
    Wbar = W - np.ones((m, m)) / m
    Wdrift = W - np.eye(m)
    if np.allclose(W, W.T, atol=1e-13, rtol=0.0):
        eta = float(np.abs(np.linalg.eigvalsh(Wbar)).max())
        r = float(np.abs(np.linalg.eigvalsh(Wdrift)).max())
    else:
        eta = float(np.linalg.norm(Wbar, 2))
        r = float(np.linalg.norm(Wdrift, 2))
    if eta >= 1.0:
        raise ValueError(f"averaging gap violated: eta = {eta} >= 1")
    return SpectralData(eta=eta, r=r)


def mixing_streams(m: int, seed) -> list[np.random.Generator]:
    """One private generator per agent; column j of every sampled matrix uses only stream j."""
    return [np.random.default_rng([_entropy(seed), 0x6D69, j]) for j in range(1, m + 1)]


def _entropy(seed) -> int:
    # accept ints or anything SeedSequence-like callers pass through configs
    return int(seed) & 0xFFFFFFFFFFFF


def sample_mixing_matrix(graph: Graph, streams: Sequence[np.random.Generator]) -> np.ndarray:
    """Draw a column-stochastic mixing matrix supported on the graph (plus diagonal).

    Column j is a flat simplex point over agent j's closed neighborhood, drawn
    from agent j's own stream only, with draws floored at a tiny positive value
    so every in-neighborhood entry is strictly positive.
    """
    m = graph.m
    if len(streams) != m:
        raise ValueError(f"need {m} per-agent streams, got {len(streams)}")
    B = np.zeros((m, m))
    for j, hood in enumerate(graph.closed_neighborhoods()):
        draws = np.maximum(streams[j].exponential(size=len(hood)), _POSITIVITY_FLOOR)
        B[np.asarray(hood) - 1, j] = draws / draws.sum()
    return B


def validate_mixing_matrix(B: np.ndarray, graph: Graph, tol: float = STOCHASTIC_TOL) -> None:
    """Check column stochasticity and that the support stays inside the graph's."""
    m = graph.m
    B = np.asarray(B, dtype=float)
    if B.shape != (m, m):
        raise ValueError(f"mixing matrix shape {B.shape} does not match m={m}")
    if np.any(B < 0):
        raise ValueError("mixing matrix has negative entries")
    col_err = np.abs(B.sum(axis=0) - 1.0).max()
    if col_err > tol:
        raise ValueError(f"mixing matrix columns do not sum to one (err {col_err:.2e})")
    allowed = graph.adjacency() | np.eye(m, dtype=bool)
    if np.any((B > 0) & ~allowed):
        raise ValueError("mixing matrix has positive entries outside the graph support")


def row_column_streams(m: int, seed) -> list[np.random.Generator]:
    """Per-agent streams for the time-varying AB baseline (row and column draws)."""
    return [np.random.default_rng([_entropy(seed), 0x7263, i]) for i in range(1, m + 1)]


def sample_row_stochastic(graph: Graph, streams: Sequence[np.random.Generator]) -> np.ndarray:
    """Row-stochastic matrix on the graph support; row i comes from agent i's stream."""
    m = graph.m
    R = np.zeros((m, m))
    for i, hood in enumerate(graph.closed_neighborhoods()):
        draws = np.maximum(streams[i].exponential(size=len(hood)), _POSITIVITY_FLOOR)
        R[i, np.asarray(hood) - 1] = draws / draws.sum()
    return R


def sample_column_stochastic(graph: Graph, streams: Sequence[np.random.Generator]) -> np.ndarray:
    """Column-stochastic matrix on the graph support; column j comes from agent j's stream."""
    m = graph.m
    C = np.zeros((m, m))
    for j, hood in enumerate(graph.closed_neighborhoods()):
        draws = np.maximum(streams[j].exponential(size=len(hood)), _POSITIVITY_FLOOR)
        C[np.asarray(hood) - 1, j] = draws / draws.sum()
    return C
