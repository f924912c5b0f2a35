"""Undirected graphs on nodes ``0..p-1`` stored as per-node bitmasks.

Nodes are 0-indexed everywhere in the library; only the edge-list text
format is 1-indexed.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import combinations
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np


class Graph:
    """Immutable undirected simple graph.

    ``adj[i]`` is an int whose bit ``j`` is set when ``(i, j)`` is an edge.
    Instances are hashable, so they can key caches.
    """

    __slots__ = ("p", "adj", "_hash", "_array")

    def __init__(self, p: int, adj: Iterable[int]):
        adj = tuple(int(a) for a in adj)
        if len(adj) != p:
            raise ValueError(f"expected {p} adjacency rows, got {len(adj)}")
        full = (1 << p) - 1
        for i, a in enumerate(adj):
            if a >> i & 1:
                raise ValueError(f"self-loop at node {i}")
            if a & ~full:
                raise ValueError(f"node {i} has neighbours outside 0..{p - 1}")
            for j in _bits(a):
                if not adj[j] >> i & 1:
                    raise ValueError(f"adjacency not symmetric at ({i}, {j})")
        self.p = p
        self.adj = adj
        self._hash = hash((p, adj))
        self._array = None

    @classmethod
    def _trusted(cls, p: int, adj) -> Graph:
        g = object.__new__(cls)
        g.p = p
        g.adj = tuple(adj)
        g._hash = hash((p, g.adj))
        g._array = None
        return g

    @classmethod
    def empty(cls, p: int) -> Graph:
        return cls(p, [0] * p)

    @classmethod
    def complete(cls, p: int) -> Graph:
        full = (1 << p) - 1
        return cls(p, [full & ~(1 << i) for i in range(p)])

    @classmethod
    def from_edges(cls, p: int, edges: Iterable[tuple[int, int]]) -> Graph:
        adj = [0] * p
        for i, j in edges:
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < p and 0 <= j < p):
                raise ValueError(f"edge ({i}, {j}) out of range for p={p}")
            adj[i] |= 1 << j
            adj[j] |= 1 << i
        return cls(p, adj)

    @classmethod
    def from_adjacency(cls, A) -> Graph:
        """Build from a square boolean/0-1 matrix; the diagonal is ignored."""
        A = np.asarray(A) != 0
        p = A.shape[0]
        return cls.from_edges(p, [(i, j) for i, j in zip(*np.nonzero(np.triu(A, 1)))])

    # -- queries -----------------------------------------------------------

    def has_edge(self, i: int, j: int) -> bool:
        return bool(self.adj[i] >> j & 1)

    def neighbors(self, i: int) -> list[int]:
        return list(_bits(self.adj[i]))

    def degree(self, i: int) -> int:
        return bin(self.adj[i]).count("1")

    def edges(self) -> list[tuple[int, int]]:
        """Edges as ``(i, j)`` with ``i < j`` in lexicographic order."""
        return [(i, j) for i in range(self.p) for j in _bits(self.adj[i] >> (i + 1) << (i + 1))]

    @property
    def n_edges(self) -> int:
        return sum(bin(a).count("1") for a in self.adj) // 2

    def is_complete_set(self, nodes: Iterable[int]) -> bool:
        nodes = list(nodes)
        return all(self.has_edge(i, j) for i, j in combinations(nodes, 2))

    def issubgraph(self, other: Graph) -> bool:
        return self.p == other.p and all(a & ~b == 0 for a, b in zip(self.adj, other.adj))

    def to_array(self) -> np.ndarray:
        """Boolean adjacency matrix (a cached, read-only array)."""
        if self._array is None:
            A = np.zeros((self.p, self.p), dtype=bool)
            for i, j in self.edges():
                A[i, j] = A[j, i] = True
            A.flags.writeable = False
            self._array = A
        return self._array

    # -- derived graphs ----------------------------------------------------

    def add_edge(self, i: int, j: int) -> Graph:
        adj = list(self.adj)
        adj[i] |= 1 << j
        adj[j] |= 1 << i
        return Graph._trusted(self.p, adj)

    def remove_edge(self, i: int, j: int) -> Graph:
        adj = list(self.adj)
        adj[i] &= ~(1 << j)
        adj[j] &= ~(1 << i)
        return Graph._trusted(self.p, adj)

    def toggle_edge(self, i: int, j: int) -> Graph:
        return self.remove_edge(i, j) if self.has_edge(i, j) else self.add_edge(i, j)

    def induced(self, nodes: list[int]) -> Graph:
        """Subgraph induced by ``nodes``, relabelled ``0..len(nodes)-1`` in the given order."""
        pos = {v: k for k, v in enumerate(nodes)}
        edges = [(pos[i], pos[j]) for i, j in combinations(nodes, 2) if self.has_edge(i, j)]
        return Graph.from_edges(len(nodes), edges)

    def permute(self, perm: Permutation) -> Graph:
        """Relabel so that node ``perm.order[k]`` becomes node ``k``."""
        return self.induced(list(perm.order))

    # -- dunder ------------------------------------------------------------

    def __eq__(self, other) -> bool:
        return isinstance(other, Graph) and self.p == other.p and self.adj == other.adj

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        return f"Graph(p={self.p}, edges={self.edges()})"


class Permutation:
    """Node reordering. ``order[k]`` is the original node placed at position ``k``."""

    __slots__ = ("order", "position")

    def __init__(self, order: Iterable[int]):
        order = tuple(int(v) for v in order)
        if sorted(order) != list(range(len(order))):
            raise ValueError(f"not a permutation of 0..{len(order) - 1}: {order}")
        self.order = order
        position = [0] * len(order)
        for k, v in enumerate(order):
            position[v] = k
        self.position = tuple(position)

    @classmethod
    def identity(cls, p: int) -> Permutation:
        return cls(range(p))

    def inverse(self) -> Permutation:
        return Permutation(self.position)

    def __len__(self) -> int:
        return len(self.order)

    def __eq__(self, other) -> bool:
        return isinstance(other, Permutation) and self.order == other.order

    def __hash__(self) -> int:
        return hash(self.order)

    def __repr__(self) -> str:
        return f"Permutation({list(self.order)})"


def _bits(mask: int) -> Iterator[int]:
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


# -- cliques ---------------------------------------------------------------


def maximal_cliques(G: Graph) -> list[tuple[int, ...]]:
    """All maximal cliques, each sorted, listed in lexicographic order.

    Bron-Kerbosch with Tomita pivoting. Isolated nodes come back as
    singletons so the result always covers every node.
    """
    out: list[tuple[int, ...]] = []
    adj = G.adj

    def expand(R: int, P: int, X: int) -> None:
        if not P and not X:
            out.append(tuple(_bits(R)))
            return
        pivot = max(_bits(P | X), key=lambda u: bin(P & adj[u]).count("1"))
        for v in list(_bits(P & ~adj[pivot])):
            expand(R | 1 << v, P & adj[v], X & adj[v])
            P &= ~(1 << v)
            X |= 1 << v

    expand(0, (1 << G.p) - 1, 0)
    return sorted(out)


def edge_cover_cliques(G: Graph) -> list[tuple[int, ...]]:
    """Cheap complete-subgraph cover: every edge plus every isolated node."""
    cover = [e for e in G.edges()]
    cover += [(i,) for i in range(G.p) if G.adj[i] == 0]
    return sorted(cover)


@lru_cache(maxsize=4096)
def clique_cover(G: Graph, kind: str = "maximal") -> tuple[tuple[int, ...], ...]:
    if kind == "maximal":
        return tuple(maximal_cliques(G))
    if kind == "edges":
        return tuple(edge_cover_cliques(G))
    raise ValueError(f"unknown clique cover {kind!r}")


# -- elimination -----------------------------------------------------------


def fill_in_graph(G: Graph, order: Permutation | None = None) -> Graph:
    """Elimination closure of ``G`` when nodes are eliminated in ``order``.

    The returned graph keeps the original labels. Eliminating a node joins
    all of its not-yet-eliminated neighbours.
    """
    if order is None:
        order = Permutation.identity(G.p)
    adj = list(G.adj)
    remaining = (1 << G.p) - 1
    for v in order.order:
        remaining &= ~(1 << v)
        nbrs = adj[v] & remaining
        for u in _bits(nbrs):
            adj[u] |= nbrs & ~(1 << u)
    return Graph(G.p, adj)


def fill_size(G: Graph, order: Permutation | None = None) -> int:
    return fill_in_graph(G, order).n_edges - G.n_edges


def min_fill_ordering(G: Graph) -> Permutation:
    """Greedy minimum-fill elimination ordering, ties to the lowest node index."""
    adj = list(G.adj)
    remaining = (1 << G.p) - 1
    order = []
    for _ in range(G.p):
        best, best_fill = -1, -1
        for v in _bits(remaining):
            nbrs = list(_bits(adj[v] & remaining & ~(1 << v)))
            fill = sum(
                1 for a, b in combinations(nbrs, 2) if not adj[a] >> b & 1
            )
            if best < 0 or fill < best_fill:
                best, best_fill = v, fill
                if fill == 0:
                    break
        remaining &= ~(1 << best)
        nbrs = adj[best] & remaining
        for u in _bits(nbrs):
            adj[u] |= nbrs & ~(1 << u)
        order.append(best)
    return Permutation(order)


@lru_cache(maxsize=65536)
def edge_permutation(G: Graph, e: tuple[int, int]) -> Permutation:
    """Ordering that puts ``e = (i, j)`` at positions ``(p-2, p-1)``.

    The other nodes come first, in min-fill order of their induced subgraph.
    """
    i, j = e
    if i == j:
        raise ValueError("edge endpoints must differ")
    rest = [v for v in range(G.p) if v != i and v != j]
    sub_order = min_fill_ordering(G.induced(rest))
    return Permutation([rest[k] for k in sub_order.order] + [i, j])


def nu_counts(G: Graph) -> np.ndarray:
    """Number of higher-indexed neighbours of each node."""
    return np.array([bin(a >> (i + 1)).count("1") for i, a in enumerate(G.adj)], dtype=int)


@lru_cache(maxsize=65536)
def completion_entries(G: Graph) -> tuple[tuple[int, int], ...]:
    """Upper-triangle positions in ``F \\ G`` for the natural ordering, row-major.

    Row-major order is the order in which the completion recursion can fill
    them, since entry ``(i, j)`` reads only rows above ``i``.
    """
    F = fill_in_graph(G)
    return tuple((i, j) for i, j in F.edges() if not G.has_edge(i, j))


@lru_cache(maxsize=65536)
def permuted_system(G: Graph, e: tuple[int, int]) -> dict:
    """Everything an edge move on ``e`` needs about the permuted graph, cached.

    Keys: ``perm``, ``ix`` (``np.ix_`` of the order), ``graphs`` (permuted
    graph without / with the last pair), ``entries`` and ``nu`` for both.
    """
    perm = edge_permutation(G, e)
    p = G.p
    Gp = G.permute(perm)
    without = Gp.remove_edge(p - 2, p - 1)
    with_ = without.add_edge(p - 2, p - 1)
    order = np.asarray(perm.order, dtype=np.intp)
    return {
        "perm": perm,
        "ix": np.ix_(order, order),
        "graphs": (without, with_),
        "entries": (completion_entries(without), completion_entries(with_)),
        "nu": (nu_counts(without), nu_counts(with_)),
    }


# -- text format -----------------------------------------------------------


def read_edgelist(path: str | Path) -> Graph:
    """Parse ``p`` on the first line, then one 1-indexed ``i j`` pair per line."""
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"{path}: empty edge list")
    p = int(lines[0])
    edges = []
    for ln in lines[1:]:
        a, b = ln.split()
        edges.append((int(a) - 1, int(b) - 1))
    return Graph.from_edges(p, edges)


def write_edgelist(G: Graph, path: str | Path) -> None:
    rows = [str(G.p)] + [f"{i + 1} {j + 1}" for i, j in G.edges()]
    Path(path).write_text("\n".join(rows) + "\n")


@lru_cache(maxsize=65536)
def edge_index(G: Graph) -> tuple[np.ndarray, np.ndarray]:
    """Row and column index arrays of the upper-triangle edges."""
    edges = G.edges()
    ii = np.array([i for i, _ in edges], dtype=np.intp)
    jj = np.array([j for _, j in edges], dtype=np.intp)
    return ii, jj


@lru_cache(maxsize=65536)
def offgraph_mask(G: Graph) -> np.ndarray:
    """Boolean mask of the positions that must be zero in ``K``."""
    mask = ~(G.to_array() | np.eye(G.p, dtype=bool))
    mask.flags.writeable = False
    return mask
