"""Graphs, colorings, relabelings, the exact chromatic solver and interference graphs."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_ORACLE_NODES = 32


class GraphParseError(ValueError):
    """Raised for malformed graph or live-range text."""


class GraphValidationError(ValueError):
    """Raised when parsed input does not describe a valid simple graph."""


class GraphSizeError(ValueError):
    """Raised when a graph is too large for an exact or tabular method."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph stored as a dense 0/1 adjacency matrix."""

    adj: np.ndarray

    def __post_init__(self) -> None:
        adj = np.array(self.adj, dtype=np.uint8)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise GraphValidationError(f"adjacency must be a non-empty square matrix, got shape {adj.shape}")
        if np.any(adj > 1):
            raise GraphValidationError("adjacency entries must be 0 or 1")
        if not np.array_equal(adj, adj.T):
            raise GraphValidationError("adjacency matrix is not symmetric")
        if np.any(np.diag(adj)):
            v = int(np.flatnonzero(np.diag(adj))[0])
            raise GraphValidationError(f"self-loop on node {v}")
        adj.setflags(write=False)
        object.__setattr__(self, "adj", adj)

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "Graph":
        adj = np.zeros((n, n), dtype=np.uint8)
        for u, v in edges:
            if u == v:
                raise GraphValidationError(f"self-loop on node {u}")
            adj[u, v] = adj[v, u] = 1
        return cls(adj)

    def edges(self) -> list[tuple[int, int]]:
        us, vs = np.nonzero(np.triu(self.adj, 1))
        return [(int(u), int(v)) for u, v in zip(us, vs)]

    @property
    def num_edges(self) -> int:
        return int(self.adj.sum()) // 2

    def degrees(self) -> np.ndarray:
        return self.adj.sum(axis=1).astype(np.int64)

    def neighbors(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.adj[v])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return np.array_equal(self.adj, other.adj)

    def __hash__(self) -> int:
        return hash((self.n, self.adj.tobytes()))

    def digest(self) -> str:
        import hashlib

        return hashlib.sha256(self.n.to_bytes(4, "little") + self.adj.tobytes()).hexdigest()[:16]

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, edges={self.num_edges})"


@dataclass
class ColoringState:
    """Per-node colors in ``[0, m]``; 0 means uncolored."""

    colors: np.ndarray
    m: int = field(default=-1)

    def __post_init__(self) -> None:
        self.colors = np.array(self.colors, dtype=np.int64)
        if self.m < 0:
            self.m = len(self.colors)
        if self.colors.ndim != 1:
            raise ValueError("colors must be a vector")
        if np.any(self.colors < 0) or np.any(self.colors > self.m):
            raise ValueError(f"colors must lie in [0, {self.m}]")

    @classmethod
    def empty(cls, n: int, m: int | None = None) -> "ColoringState":
        return cls(np.zeros(n, dtype=np.int64), n if m is None else m)

    def copy(self) -> "ColoringState":
        return ColoringState(self.colors.copy(), self.m)


class NodeStatus(enum.Enum):
    UNCOLORED = "uncolored"
    CORRECT = "correct"
    CONFLICTED = "conflicted"


def _colors(s: ColoringState | Sequence[int] | np.ndarray) -> np.ndarray:
    return s.colors if isinstance(s, ColoringState) else np.asarray(s)


def node_status(g: Graph, s: ColoringState | Sequence[int], v: int) -> NodeStatus:
    colors = _colors(s)
    if not 0 <= v < g.n:
        raise IndexError(f"node {v} out of range for graph with {g.n} nodes")
    c = colors[v]
    if c == 0:
        return NodeStatus.UNCOLORED
    if np.any(colors[g.adj[v] == 1] == c):
        return NodeStatus.CONFLICTED
    return NodeStatus.CORRECT


def is_solved(g: Graph, s: ColoringState | Sequence[int]) -> bool:
    colors = _colors(s)
    if np.any(colors == 0):
        return False
    same = colors[:, None] == colors[None, :]
    return not np.any(same & (g.adj == 1))


def colors_used(s: ColoringState | Sequence[int]) -> int:
    colors = _colors(s)
    return len(set(int(c) for c in colors if c != 0))


def color_factor(s: ColoringState | Sequence[int]) -> int:
    return max(1, colors_used(s))


@dataclass(frozen=True)
class Permutation:
    """Relabeling: node ``u`` of the source graph becomes node ``perm[u]``."""

    perm: tuple[int, ...]
    seed: int | None = None

    def __post_init__(self) -> None:
        p = tuple(int(i) for i in self.perm)
        if sorted(p) != list(range(len(p))):
            raise ValueError(f"not a permutation of 0..{len(p) - 1}: {p}")
        object.__setattr__(self, "perm", p)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)), None)

    def compose(self, after: "Permutation") -> "Permutation":
        """Permutation equal to applying ``self`` then ``after``."""
        return Permutation(tuple(after.perm[i] for i in self.perm))

    def __len__(self) -> int:
        return len(self.perm)


def apply_permutation(g: Graph, p: Permutation | Sequence[int]) -> Graph:
    perm = np.asarray(p.perm if isinstance(p, Permutation) else p, dtype=np.int64)
    if len(perm) != g.n:
        raise ValueError(f"permutation length {len(perm)} does not match graph size {g.n}")
    adj = np.zeros_like(g.adj)
    adj[np.ix_(perm, perm)] = g.adj
    return Graph(adj)


def permute(g: Graph, seed: int | Sequence[int] | np.random.Generator) -> tuple[Graph, Permutation]:
    """Uniformly random relabeling of ``g`` drawn with a seeded shuffle."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(g.n)
    tag = seed if isinstance(seed, int) else None
    p = Permutation(tuple(int(i) for i in perm), tag)
    return apply_permutation(g, p), p


def chromatic_number(g: Graph) -> tuple[int, ColoringState]:
    """Exact chromatic number with a witness coloring (colors 1..k).

    Backtracking over nodes in descending-degree order. A node may only open
    color ``max_used + 1``, which removes color-permutation symmetry, and any
    branch that cannot beat the best coloring found so far is cut.
    """
    n = g.n
    if n > MAX_ORACLE_NODES:
        raise GraphSizeError(f"exact oracle limited to {MAX_ORACLE_NODES} nodes, got {n}")
    order = sorted(range(n), key=lambda v: (-int(g.degrees()[v]), v))
    nbrs = [set(int(u) for u in g.neighbors(v)) for v in range(n)]
    # earlier-ordered neighbours only; later ones are uncolored when v is placed
    pos = {v: i for i, v in enumerate(order)}
    back = [[u for u in nbrs[v] if pos[u] < pos[v]] for v in order]

    colors = [0] * n
    best_k = n + 1
    best: list[int] = list(range(1, n + 1))

    def search(i: int, used: int) -> None:
        nonlocal best_k, best
        if used >= best_k:
            return
        if i == n:
            best_k = used
            best = colors.copy()
            return
        v = order[i]
        taken = {colors[u] for u in back[i]}
        for c in range(1, min(used + 1, best_k - 1) + 1):
            if c in taken:
                continue
            colors[v] = c
            search(i + 1, max(used, c))
            colors[v] = 0
            if best_k <= used:
                return

    search(0, 0)
    return best_k, ColoringState(np.array(best), n)


@dataclass(frozen=True)
class LiveRange:
    """Half-open program-point interval ``[start, end)`` for one variable."""

    name: str
    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start >= self.end:
            raise GraphValidationError(
                f"live range {self.name!r} has start {self.start} >= end {self.end}"
            )

    def overlaps(self, other: "LiveRange") -> bool:
        return max(self.start, other.start) < min(self.end, other.end)


def build_rig(ranges: Sequence[LiveRange]) -> Graph:
    """Register interference graph: one node per range, edges where ranges overlap."""
    if not ranges:
        raise GraphValidationError("at least one live range is required")
    n = len(ranges)
    adj = np.zeros((n, n), dtype=np.uint8)
    for i in range(n):
        for j in range(i + 1, n):
            if ranges[i].overlaps(ranges[j]):
                adj[i, j] = adj[j, i] = 1
    return Graph(adj)


def _content_lines(text: str) -> Iterable[tuple[int, str]]:
    for lineno, raw in enumerate(text.replace("\r\n", "\n").split("\n"), start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            yield lineno, line


def load_adjlist(text: str) -> Graph:
    """Parse "u v1 v2 ..." lines into a graph over contiguous ids 0..n-1."""
    edges: set[tuple[int, int]] = set()
    ids: set[int] = set()
    for lineno, line in _content_lines(text):
        try:
            toks = [int(t) for t in line.split()]
        except ValueError:
            bad = next(t for t in line.split() if not t.lstrip("-").isdigit())
            raise GraphParseError(f"line {lineno}: invalid node id {bad!r}") from None
        if any(t < 0 for t in toks):
            raise GraphParseError(f"line {lineno}: negative node id")
        u, rest = toks[0], toks[1:]
        ids.add(u)
        for v in rest:
            if v == u:
                raise GraphValidationError(f"line {lineno}: self-loop on node {u}")
            ids.add(v)
            edges.add((min(u, v), max(u, v)))
    if not ids:
        raise GraphValidationError("graph file contains no nodes")
    n = max(ids) + 1
    missing = sorted(set(range(n)) - ids)
    if missing:
        raise GraphValidationError(f"node ids are not contiguous from 0: missing {missing}")
    return Graph.from_edges(n, edges)


def read_adjlist(path) -> Graph:
    with open(path, encoding="utf-8") as fh:
        return load_adjlist(fh.read())


def dump_adjlist(g: Graph) -> str:
    """Serialize with each edge listed once, under its smaller endpoint."""
    lines = []
    for u in range(g.n):
        higher = [int(v) for v in g.neighbors(u) if v > u]
        lines.append(" ".join(str(x) for x in [u, *higher]))
    return "\n".join(lines) + "\n"


def load_live_ranges(text: str) -> list[LiveRange]:
    ranges = []
    for lineno, line in _content_lines(text):
        toks = line.split()
        if len(toks) != 3:
            raise GraphParseError(f"line {lineno}: expected 'name start end', got {line!r}")
        try:
            start, end = int(toks[1]), int(toks[2])
        except ValueError:
            raise GraphParseError(f"line {lineno}: start/end must be integers") from None
        ranges.append(LiveRange(toks[0], start, end))
    return ranges


def complete_graph(n: int) -> Graph:
    return Graph(np.ones((n, n), dtype=np.uint8) - np.eye(n, dtype=np.uint8))


def cycle_graph(n: int) -> Graph:
    if n < 3:
        raise ValueError("a cycle needs at least 3 nodes")
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def path_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def random_graph(n: int, p: float, seed: int) -> Graph:
    """Erdos-Renyi G(n, p): each pair included independently."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability must lie in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < p, 1).astype(np.uint8)
    return Graph(upper + upper.T)


def petersen_graph() -> Graph:
    outer = [(i, (i + 1) % 5) for i in range(5)]
    spokes = [(i, i + 5) for i in range(5)]
    inner = [(5 + i, 5 + (i + 2) % 5) for i in range(5)]
    return Graph.from_edges(10, outer + spokes + inner)
