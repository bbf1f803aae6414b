"""Weighted undirected graphs: construction, normalization and Laplacians."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .core import SpatialLocations
from .errors import (
    CyclicTree,
    DuplicatePoints,
    IsolatedNode,
    KTooLarge,
    NoConvergence,
    ValidationError,
)

NORMALIZATIONS = ("none", "row_stochastic", "symmetric", "double")
SINKHORN_TOL = 1e-8
SINKHORN_MAX_SWEEPS = 1000


@dataclass(frozen=True)
class Graph:
    """Undirected weighted graph stored as its upper triangle.

    Parameters
    ----------
    n : int
        Number of nodes.
    i, j : ndarray of int
        Edge endpoints with ``i < j``; each undirected edge appears once.
    w : ndarray of float
        Positive edge weights.
    normalization : str
        One of ``none``, ``row_stochastic``, ``symmetric``, ``double``.
    """

    n: int
    i: np.ndarray
    j: np.ndarray
    w: np.ndarray
    normalization: str = "none"

    def __post_init__(self):
        i = np.asarray(self.i, dtype=np.int64).ravel()
        j = np.asarray(self.j, dtype=np.int64).ravel()
        w = np.asarray(self.w, dtype=float).ravel()
        if not (i.shape == j.shape == w.shape):
            raise ValidationError("edge arrays must have equal length")
        if self.n < 1:
            raise ValidationError("graph needs at least one node")
        if i.size:
            if np.any(i >= j):
                raise ValidationError("edges must satisfy i < j")
            if i.min() < 0 or j.max() >= self.n:
                raise ValidationError("edge endpoint out of range")
            if np.any(~(w > 0)):
                raise ValidationError("edge weights must be positive")
            key = i * self.n + j
            if np.unique(key).size != key.size:
                raise ValidationError("duplicate edge")
        if self.normalization not in NORMALIZATIONS:
            raise ValidationError(f"normalization must be one of {NORMALIZATIONS}")
        order = np.lexsort((j, i))
        for name, a in (("i", i[order]), ("j", j[order]), ("w", w[order])):
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @classmethod
    def from_edges(cls, n: int, edges, normalization: str = "none") -> "Graph":
        """Build from ``(a, b, w)`` triples in any orientation."""
        e = list(edges)
        if not e:
            return cls(n, [], [], [], normalization)
        a = np.array([x[0] for x in e], dtype=np.int64)
        b = np.array([x[1] for x in e], dtype=np.int64)
        w = np.array([x[2] if len(x) > 2 else 1.0 for x in e], dtype=float)
        if np.any(a == b):
            raise ValidationError("self-loops are not allowed")
        return cls(n, np.minimum(a, b), np.maximum(a, b), w, normalization)

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return [(int(a), int(b), float(c)) for a, b, c in zip(self.i, self.j, self.w)]

    @property
    def n_edges(self) -> int:
        return int(self.i.size)

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric sparse weight matrix with sorted indices."""
        rows = np.concatenate([self.i, self.j])
        cols = np.concatenate([self.j, self.i])
        data = np.concatenate([self.w, self.w])
        a = sp.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))
        a.sort_indices()
        return a

    def degrees(self) -> np.ndarray:
        d = np.zeros(self.n)
        np.add.at(d, self.i, self.w)
        np.add.at(d, self.j, self.w)
        return d

    def with_weights(self, w: np.ndarray, normalization: str) -> "Graph":
        return Graph(self.n, self.i, self.j, w, normalization)


def _check_duplicates(tree: cKDTree, pts: np.ndarray) -> None:
    d, _ = tree.query(pts, k=2)
    if np.any(d[:, 1] == 0):
        raise DuplicatePoints("two locations coincide exactly")


def _knn_indices(pts: np.ndarray, k: int) -> np.ndarray:
    """k nearest neighbours of each point, ties broken by lower index."""
    n = pts.shape[0]
    tree = cKDTree(pts)
    _check_duplicates(tree, pts)
    extra = 2
    while True:
        kq = min(n, k + 1 + extra)
        dist, idx = tree.query(pts, k=kq)
        if kq == n:
            break
        # all points tied with the k-th neighbour must have been retrieved
        if np.all(dist[:, k] < dist[:, -1]):
            break
        extra *= 2
    self_mask = idx == np.arange(n)[:, None]
    dist = np.where(self_mask, -1.0, dist)
    rows = np.repeat(np.arange(n), kq)
    order = np.lexsort((idx.ravel(), dist.ravel(), rows))
    idx_sorted = idx.ravel()[order].reshape(n, kq)
    return idx_sorted[:, 1:k + 1]


def knn_graph(locs: SpatialLocations, k: int, combine: str = "average") -> Graph:
    """Symmetrized k-nearest-neighbour graph.

    Parameters
    ----------
    locs : SpatialLocations
    k : int
        Number of neighbours per point, ``1 <= k < n``.
    combine : {"average", "mutual"}
        ``average`` gives ``w_ij = (a_ij + a_ji) / 2`` from the directed 0/1
        indicators; ``mutual`` keeps reciprocal edges with weight 1.
    """
    n = locs.n
    if k >= n:
        raise KTooLarge(f"k={k} must be smaller than n={n}")
    if k < 1:
        raise ValidationError("k must be positive")
    if combine not in ("average", "mutual"):
        raise ValidationError("combine must be 'average' or 'mutual'")
    nbr = _knn_indices(locs.points, k)
    src = np.repeat(np.arange(n), k)
    dst = nbr.ravel()
    a = sp.csr_matrix((np.ones(src.size), (src, dst)), shape=(n, n))
    s = (a + a.T).tocoo()
    upper = s.row < s.col
    i, j, c = s.row[upper], s.col[upper], s.data[upper]
    if combine == "mutual":
        keep = c == 2
        return Graph(n, i[keep], j[keep], np.ones(int(keep.sum())))
    return Graph(n, i, j, c / 2.0)


def radius_graph(locs: SpatialLocations, r: float) -> Graph:
    """Unweighted graph joining every pair at distance strictly below ``r``."""
    if not r > 0:
        raise ValidationError("r must be positive")
    pts = locs.points
    pairs = cKDTree(pts).query_pairs(r, output_type="ndarray")
    if pairs.size:
        d = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1)
        pairs = pairs[d < r]
    pairs = np.sort(pairs.reshape(-1, 2), axis=1)
    return Graph(locs.n, pairs[:, 0], pairs[:, 1], np.ones(pairs.shape[0]))


def grid_adjacency(rows: int, cols: int, neighborhood: str = "four_neighbor",
                   boundary: str = "open") -> Graph:
    """Four-neighbour lattice over a row-major ``rows x cols`` grid."""
    if neighborhood != "four_neighbor":
        raise ValidationError("only the four_neighbor lattice is supported")
    if boundary not in ("open", "torus"):
        raise ValidationError("boundary must be 'open' or 'torus'")
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise ValidationError("grid needs at least two cells")
    r, c = np.divmod(np.arange(rows * cols), cols)
    src, dst = [], []
    for dr, dc in ((0, 1), (1, 0)):
        rr, cc = r + dr, c + dc
        if boundary == "torus":
            rr, cc = rr % rows, cc % cols
            ok = np.ones(r.size, dtype=bool)
        else:
            ok = (rr < rows) & (cc < cols)
        src.append((r * cols + c)[ok])
        dst.append((rr * cols + cc)[ok])
    a, b = np.concatenate(src), np.concatenate(dst)
    keep = a != b
    lo, hi = np.minimum(a, b)[keep], np.maximum(a, b)[keep]
    key = np.unique(lo * (rows * cols) + hi)
    lo, hi = np.divmod(key, rows * cols)
    return Graph(rows * cols, lo, hi, np.ones(lo.size))


_SIBLING_WEIGHTS = {1: 1.0, 2: 0.5, 3: 0.25}


def tree_sibling_graph(parent: Sequence[int], leaf_ids: Sequence[int],
                       double_normalize: bool = True) -> Graph:
    """Graph over tree leaves weighted by how closely they are related.

    Parameters
    ----------
    parent : sequence of int
        ``parent[v]`` is the parent node of ``v``, or a negative value for roots.
    leaf_ids : sequence of int
        Tree nodes that become graph nodes, in output order.
    double_normalize : bool
        Apply double normalization after weighting (default).

    Notes
    -----
    The relationship degree of two leaves is the larger of their distances to
    the lowest common ancestor. Degrees 1, 2 and 3 receive weights 1.0, 0.5
    and 0.25; more distant pairs are not connected.
    """
    parent = np.asarray(parent, dtype=np.int64)
    m = parent.size
    if np.any(parent >= m):
        raise ValidationError("parent index out of range")
    for start in range(m):
        v, steps = start, 0
        while v >= 0:
            v = parent[v]
            steps += 1
            if steps > m:
                raise CyclicTree("parent pointers contain a cycle")
    leaves = [int(x) for x in leaf_ids]
    if len(set(leaves)) != len(leaves):
        raise ValidationError("leaf ids must be distinct")
    groups: dict[int, list[tuple[int, int]]] = {}
    for pos, leaf in enumerate(leaves):
        if not 0 <= leaf < m:
            raise ValidationError("leaf id out of range")
        v = leaf
        for depth in (1, 2, 3):
            v = parent[v]
            if v < 0:
                break
            groups.setdefault(int(v), []).append((pos, depth))
    best: dict[tuple[int, int], int] = {}
    for members in groups.values():
        for x in range(len(members)):
            for y in range(x + 1, len(members)):
                (a, da), (b, db) = members[x], members[y]
                key = (min(a, b), max(a, b))
                deg = max(da, db)
                if deg < best.get(key, 4):
                    best[key] = deg
    edges = [(a, b, _SIBLING_WEIGHTS[d]) for (a, b), d in sorted(best.items())]
    g = Graph.from_edges(len(leaves), edges)
    return normalize(g, "double") if double_normalize else g


def _sinkhorn(g: Graph) -> np.ndarray:
    a = g.adjacency()
    x = np.ones(g.n)
    for _ in range(SINKHORN_MAX_SWEEPS):
        deg = x * (a @ x)
        if np.max(np.abs(deg - 1.0)) < SINKHORN_TOL:
            return x
        x = np.sqrt(x / (a @ x))
    deg = x * (a @ x)
    if np.max(np.abs(deg - 1.0)) < SINKHORN_TOL:
        return x
    raise NoConvergence("double normalization did not reach unit degrees")


def normalize(g: Graph, mode: str) -> Graph:
    """Rescale edge weights.

    Parameters
    ----------
    g : Graph
    mode : {"symmetric", "row_stochastic", "double"}
        ``symmetric`` gives ``D^-1/2 W D^-1/2``; ``row_stochastic`` divides rows
        by degree and re-symmetrizes with ``(A + A.T) / 2``; ``double``
        alternates row and column scaling until every weighted degree is 1.
    """
    if mode not in ("symmetric", "row_stochastic", "double"):
        raise ValidationError("mode must be symmetric, row_stochastic or double")
    d = g.degrees()
    if np.any(d <= 0):
        raise IsolatedNode("normalization requires every node to have an edge")
    if mode == "symmetric":
        w = g.w / np.sqrt(d[g.i] * d[g.j])
    elif mode == "row_stochastic":
        w = 0.5 * g.w * (1.0 / d[g.i] + 1.0 / d[g.j])
    else:
        x = _sinkhorn(g)
        w = g.w * x[g.i] * x[g.j]
    return g.with_weights(w, mode)


def _sequential_row_sums(a: sp.csr_matrix) -> np.ndarray:
    """Row sums accumulated left to right, matching CSR matvec order."""
    lengths = np.diff(a.indptr)
    out = np.zeros(a.shape[0])
    for k in range(int(lengths.max()) if lengths.size else 0):
        rows = np.nonzero(lengths > k)[0]
        out[rows] += a.data[a.indptr[rows] + k]
    return out


def laplacian(g: Graph, normalized: bool = False) -> sp.csr_matrix:
    """Graph Laplacian ``D - W`` or ``I - D^-1/2 W D^-1/2``.

    The unnormalized form stores the diagonal last in each row, equal to the
    left-to-right sum of the row's weights, so ``L @ ones`` is exactly zero.
    """
    if normalized:
        w = normalize(g, "symmetric").adjacency()
        return (sp.identity(g.n, format="csr") - w).tocsr()
    a = g.adjacency()
    diag = _sequential_row_sums(a)
    n = g.n
    indptr = a.indptr + np.arange(n + 1)
    indices = np.empty(a.nnz + n, dtype=np.int64)
    data = np.empty(a.nnz + n)
    last = indptr[1:] - 1
    mask = np.ones(a.nnz + n, dtype=bool)
    mask[last] = False
    indices[mask] = a.indices
    data[mask] = -a.data
    indices[last] = np.arange(n)
    data[last] = diag
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))
