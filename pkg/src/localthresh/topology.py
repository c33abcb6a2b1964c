"""Evaluation topologies: Barabasi-Albert, symmetric Chord and 2-D grid."""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    """Undirected simple graph over peer ids ``0..n-1``."""

    n: int
    adjacency: tuple[frozenset[int], ...]

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "Topology":
        adj: list[set[int]] = [set() for _ in range(n)]
        for u, v in edges:
            if u == v:
                raise TopologyError(f"self-loop at {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise TopologyError(f"edge ({u}, {v}) out of range for n={n}")
            adj[u].add(v)
            adj[v].add(u)
        return cls(n, tuple(frozenset(a) for a in adj))

    def neighbors(self, i: int) -> frozenset[int]:
        return self.adjacency[i]

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u in range(self.n) for v in sorted(self.adjacency[u]) if u < v]

    @property
    def n_edges(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2

    def dump(self, path) -> None:
        lines = [f"n={self.n}"] + [f"{u} {v}" for u, v in self.edges()]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Topology":
        rows = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
        if not rows or not rows[0].startswith("n="):
            raise TopologyError("missing 'n=<count>' header")
        n = int(rows[0][2:])
        edges = []
        for ln in rows[1:]:
            u, v = ln.split()
            edges.append((int(u), int(v)))
        return cls.from_edges(n, edges)


def gen_ba(n: int, m: int, seed: int) -> Topology:
    """Preferential attachment grown from a clique on ``m + 1`` nodes."""
    if not (isinstance(n, int) and isinstance(m, int)) or m < 1 or n <= m:
        raise TopologyError(f"need n > m >= 1, got n={n}, m={m}")
    rng = random.Random(seed)
    edges = [(u, v) for u in range(m + 1) for v in range(u + 1, m + 1)]
    # each node appears once per incident edge, so uniform picks are degree-proportional
    ends = [x for e in edges for x in e]
    for new in range(m + 1, n):
        targets: set[int] = set()
        while len(targets) < m:
            targets.add(ends[rng.randrange(len(ends))])
        for t in sorted(targets):
            edges.append((new, t))
            ends.extend((new, t))
    return Topology.from_edges(n, edges)


def gen_chord(n: int, seed: int = 0) -> Topology:
    """Ring with fingers ``i + 2**j`` for ``j < floor(log2 n)``, all links symmetric.

    Ids are assigned directly, so ``seed`` has no effect; it is accepted for a
    uniform generator signature.
    """
    if n < 2:
        raise TopologyError("chord needs n >= 2")
    fingers = max(1, n.bit_length() - 1)
    edges = set()
    for i in range(n):
        for j in range(fingers):
            t = (i + (1 << j)) % n
            if t != i:
                edges.add((min(i, t), max(i, t)))
    return Topology.from_edges(n, sorted(edges))


def gen_grid(rows: int, cols: int) -> Topology:
    """Non-wrapping lattice with 4-neighborhoods; node id is ``r * cols + c``."""
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise TopologyError("grid needs rows * cols >= 2")
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return Topology.from_edges(rows * cols, edges)


def grid_shape(n: int) -> tuple[int, int]:
    """Most square ``rows x cols`` factorisation of ``n``."""
    r = int(n ** 0.5)
    while n % r:
        r -= 1
    return r, n // r


def is_connected(t: Topology) -> bool:
    if t.n == 0:
        return True
    return len(_bfs(t, 0)) == t.n


def avg_degree(t: Topology) -> float:
    return 2 * t.n_edges / t.n if t.n else 0.0


def _bfs(t: Topology, root: int) -> dict[int, int | None]:
    parent: dict[int, int | None] = {root: None}
    q = deque([root])
    while q:
        u = q.popleft()
        for v in sorted(t.adjacency[u]):
            if v not in parent:
                parent[v] = u
                q.append(v)
    return parent


def spanning_tree(t: Topology, root: int = 0) -> dict[int, int | None]:
    """BFS tree as a parent map (the root maps to ``None``)."""
    parent = _bfs(t, root)
    if len(parent) != t.n:
        raise TopologyError("graph is disconnected")
    return parent
