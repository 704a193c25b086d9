"""Co-visibility graph of stored frames and the pose-uncertainty metric.

Frames are nodes; an edge between two frames carries the number of map
points both of them observe.  Uncertainty is the negative log-determinant of
the reduced Laplacian Kronecker-multiplied with a 6x6 information block.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

POSE_DOF = 6
PIVOT_TOL = 1e-12
SYMMETRY_TOL = 1e-9
ENUMERATION_CAP = 8


@dataclass(frozen=True)
class Frame:
    frame_id: int
    slot: int
    points: frozenset
    is_keyframe: bool = False
    # bit i set <=> point i observed; makes pairwise overlap a popcount
    mask: int = field(default=0, compare=False, repr=False)

    def __post_init__(self):
        pts = frozenset(int(p) for p in self.points)
        object.__setattr__(self, "points", pts)
        m = 0
        for p in pts:
            if p < 0:
                raise ValueError(f"frame {self.frame_id}: negative map point id {p}")
            m |= 1 << p
        object.__setattr__(self, "mask", m)

    @property
    def n_points(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class UncertaintyParams:
    pi_scale: float = 1.0
    pi_dim: int = POSE_DOF

    def __post_init__(self):
        if not self.pi_scale > 0:
            raise ValueError("pi_scale must be positive")
        if self.pi_dim != POSE_DOF:
            raise ValueError("the information block is fixed at 6x6")


class NotPositiveDefinite(ArithmeticError):
    """Raised when a symmetric matrix fails Cholesky factorization."""


def edge_weight(f: Frame, f2: Frame) -> int:
    return (f.mask & f2.mask).bit_count()


def _key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


class CovisibilityGraph:
    """Immutable weighted graph; mutating operations return new graphs.

    Zero-weight pairs are never materialised as edges.
    """

    __slots__ = ("_nodes", "_edges")

    def __init__(self, nodes: Mapping[int, Frame] | None = None,
                 edges: Mapping[tuple[int, int], int] | None = None):
        self._nodes: dict[int, Frame] = dict(nodes or {})
        self._edges: dict[tuple[int, int], int] = dict(edges or {})

    @classmethod
    def from_frames(cls, frames: Iterable[Frame]) -> "CovisibilityGraph":
        g = cls()
        for f in frames:
            g = add_frame(g, f)
        return g

    @property
    def nodes(self) -> dict[int, Frame]:
        return dict(self._nodes)

    @property
    def edges(self) -> dict[tuple[int, int], int]:
        return dict(self._edges)

    def frame_ids(self) -> list[int]:
        return sorted(self._nodes)

    def frames(self) -> list[Frame]:
        return [self._nodes[i] for i in sorted(self._nodes)]

    def frame(self, frame_id: int) -> Frame:
        return self._nodes[frame_id]

    def weight(self, a: int, b: int) -> int:
        return self._edges.get(_key(a, b), 0)

    def neighbors(self, frame_id: int) -> dict[int, int]:
        out = {}
        for (a, b), w in self._edges.items():
            if a == frame_id:
                out[b] = w
            elif b == frame_id:
                out[a] = w
        return out

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, frame_id) -> bool:
        return frame_id in self._nodes

    def __eq__(self, other) -> bool:
        if not isinstance(other, CovisibilityGraph):
            return NotImplemented
        return self._nodes == other._nodes and self._edges == other._edges

    def __repr__(self) -> str:
        return f"CovisibilityGraph(n={len(self._nodes)}, m={len(self._edges)})"


def add_frame(g: CovisibilityGraph, f: Frame) -> CovisibilityGraph:
    if f.frame_id in g._nodes:
        raise ValueError(f"frame {f.frame_id} is already in the graph")
    nodes = dict(g._nodes)
    edges = dict(g._edges)
    for fid, other in g._nodes.items():
        w = edge_weight(f, other)
        if w > 0:
            edges[_key(f.frame_id, fid)] = w
    nodes[f.frame_id] = f
    return CovisibilityGraph(nodes, edges)


def remove_frames(g: CovisibilityGraph, frame_ids: Iterable[int]) -> CovisibilityGraph:
    drop = set(frame_ids)
    unknown = drop - g._nodes.keys()
    if unknown:
        raise KeyError(f"cannot remove unknown frames {sorted(unknown)}")
    if not drop:
        return g
    nodes = {k: v for k, v in g._nodes.items() if k not in drop}
    edges = {e: w for e, w in g._edges.items() if e[0] not in drop and e[1] not in drop}
    return CovisibilityGraph(nodes, edges)


def union_with(g: CovisibilityGraph, f: Frame) -> CovisibilityGraph:
    """The map as seen by a frame that is not yet stored (``G u {f}``)."""
    return add_frame(g, f)


def is_connected(g: CovisibilityGraph) -> bool:
    n = len(g._nodes)
    if n <= 1:
        return True
    adj: dict[int, list[int]] = {k: [] for k in g._nodes}
    for a, b in g._edges:
        adj[a].append(b)
        adj[b].append(a)
    start = next(iter(adj))
    seen = {start}
    stack = [start]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == n


def cut_vertices(g: CovisibilityGraph) -> set[int]:
    """Nodes whose removal disconnects a connected graph (articulation points)."""
    adj: dict[int, list[int]] = {k: [] for k in g._nodes}
    for a, b in g._edges:
        adj[a].append(b)
        adj[b].append(a)
    disc: dict[int, int] = {}
    low: dict[int, int] = {}
    out: set[int] = set()
    counter = 0
    for root in adj:
        if root in disc:
            continue
        disc[root] = low[root] = counter
        counter += 1
        children = 0
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            node, parent, it = stack[-1]
            advanced = False
            for nb in it:
                if nb not in disc:
                    disc[nb] = low[nb] = counter
                    counter += 1
                    if node == root:
                        children += 1
                    stack.append((nb, node, iter(adj[nb])))
                    advanced = True
                    break
                if nb != parent:
                    low[node] = min(low[node], disc[nb])
            if advanced:
                continue
            stack.pop()
            if stack:
                up = stack[-1][0]
                low[up] = min(low[up], low[node])
                if up != root and low[node] >= disc[up]:
                    out.add(up)
        if children > 1:
            out.add(root)
    return out


def laplacian(g: CovisibilityGraph, order: list[int] | None = None) -> np.ndarray:
    order = g.frame_ids() if order is None else order
    index = {fid: i for i, fid in enumerate(order)}
    n = len(order)
    lap = np.zeros((n, n))
    for (a, b), w in g._edges.items():
        i, j = index[a], index[b]
        lap[i, j] -= w
        lap[j, i] -= w
        lap[i, i] += w
        lap[j, j] += w
    return lap


def reduced_laplacian(g: CovisibilityGraph, anchor: int | None = None) -> np.ndarray:
    """Weighted Laplacian with the anchor's row and column deleted.

    The anchor defaults to the smallest frame id; any choice yields the same
    determinant.
    """
    if len(g) < 2:
        raise ValueError("reduced Laplacian needs at least 2 nodes")
    order = g.frame_ids()
    if anchor is None:
        anchor = order[0]
    if anchor not in g:
        raise KeyError(f"anchor {anchor} is not a node")
    order.remove(anchor)
    order.insert(0, anchor)
    return laplacian(g, order)[1:, 1:]


def log_det_spd(m) -> float:
    """log det of a symmetric matrix via Cholesky.

    Raises NotPositiveDefinite if any pivot falls below 1e-12.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if m.size and np.max(np.abs(m - m.T)) > SYMMETRY_TOL:
        raise ValueError("matrix is not symmetric")
    n = m.shape[0]
    a = m.copy()
    # plain Cholesky so the pivot tolerance is explicit
    logdet = 0.0
    for j in range(n):
        piv = a[j, j] - a[j, :j] @ a[j, :j]
        if piv <= PIVOT_TOL:
            raise NotPositiveDefinite(f"pivot {piv:.3e} at column {j}")
        d = math.sqrt(piv)
        a[j, j] = d
        if j + 1 < n:
            a[j + 1:, j] = (a[j + 1:, j] - a[j + 1:, :j] @ a[j, :j]) / d
        logdet += 2.0 * math.log(d)
    return logdet


def uncertainty(g: CovisibilityGraph, params: UncertaintyParams = UncertaintyParams()) -> float:
    """Pose-estimation uncertainty ``-log det(L_reduced kron Pi)``; +inf if degenerate.

    Uses det(A kron B) = det(A)**m * det(B)**n for A (n x n), B (m x m).
    """
    n_red = len(g) - 1
    if n_red < 1 or not is_connected(g):
        return math.inf
    try:
        ld = log_det_spd(reduced_laplacian(g))
    except NotPositiveDefinite:
        return math.inf
    return -(POSE_DOF * ld + n_red * POSE_DOF * math.log(params.pi_scale))


def uncertainty_direct(g: CovisibilityGraph, params: UncertaintyParams = UncertaintyParams()) -> float:
    """Same quantity from the explicit 6(n-1)-dimensional Kronecker product."""
    if len(g) < 2 or not is_connected(g):
        return math.inf
    pi = params.pi_scale * np.eye(POSE_DOF)
    try:
        return -log_det_spd(np.kron(reduced_laplacian(g), pi))
    except NotPositiveDefinite:
        return math.inf


def spanning_tree_weight(g: CovisibilityGraph) -> float:
    """Sum over spanning trees of the product of edge weights, by enumeration."""
    n = len(g)
    if n > ENUMERATION_CAP:
        raise ValueError(f"enumeration capped at {ENUMERATION_CAP} nodes, got {n}")
    if n <= 1:
        return 1.0
    index = {fid: i for i, fid in enumerate(g.frame_ids())}
    edges = [(index[a], index[b], w) for (a, b), w in g._edges.items()]
    total = 0
    for subset in itertools.combinations(edges, n - 1):
        parent = list(range(n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        prod = 1
        for i, j, w in subset:
            ri, rj = find(i), find(j)
            if ri == rj:
                break
            parent[ri] = rj
            prod *= w
        else:
            total += prod
    return float(total)


def dump_graph(g: CovisibilityGraph) -> str:
    """Line-oriented snapshot: node records then edge records, sorted."""
    lines = [f"{f.frame_id} {f.slot} {f.n_points} {int(f.is_keyframe)}" for f in g.frames()]
    lines += [f"{a} {b} {w}" for (a, b), w in sorted(g._edges.items())]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_graph_snapshot(text: str) -> tuple[list[tuple[int, int, int, bool]], dict[tuple[int, int], int]]:
    nodes, edges = [], {}
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            vals = [int(p) for p in parts]
        except ValueError:
            raise ValueError(f"line {lineno}: non-integer field in {line!r}") from None
        if len(vals) == 4:
            nodes.append((vals[0], vals[1], vals[2], bool(vals[3])))
        elif len(vals) == 3:
            edges[_key(vals[0], vals[1])] = vals[2]
        else:
            raise ValueError(f"line {lineno}: expected 3 or 4 fields, got {len(vals)}")
    return nodes, edges
