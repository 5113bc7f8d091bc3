"""Graph container and stochastic block model generator.

The package works on undirected node-attributed graphs held in CSR form.
``Graph`` is immutable by convention: transforms such as ``add_self_loops``
and ``row_normalize`` return new instances.  Adjacency canonicalization
(symmetrize, deduplicate, sort column indices) happens once at construction
via ``Graph.from_edges``, so every Graph in the package satisfies the same
structural invariants.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


# ---------------------------------------------------------------------------
# core container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Graph:
    """Undirected attributed graph in CSR form.

    Attributes:
        n_nodes: number of nodes N.
        row_offsets: int64 array of length N+1.
        col_indices: int64 array, strictly increasing within each row.
        weights: float64 edge weights aligned with col_indices; symmetric
            as a matrix (w[i,j] == w[j,i]).
        features: float64 array of shape (N, d).
        labels: int64 array of length N with values in [0, n_classes).
        n_classes: number of label classes M.
    """

    n_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    weights: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    # -- construction -------------------------------------------------------

    @staticmethod
    def from_edges(n_nodes, edges, features, labels, n_classes, weights=None):
        """Build a canonical Graph from an undirected edge list.

        Edges are given as an (m, 2) int array; both orientations are added,
        duplicates are merged (keeping a single copy, not summing), and
        column indices are sorted per row.  Self-loops in the input are kept
        once.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        features = np.ascontiguousarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] != n_nodes:
            raise ValueError(
                f"features must have shape ({n_nodes}, d), got {features.shape}"
            )
        if labels.shape != (n_nodes,):
            raise ValueError(f"labels must have shape ({n_nodes},)")
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise ValueError("labels must lie in [0, n_classes)")
        if edges.size and (edges.min() < 0 or edges.max() >= n_nodes):
            raise ValueError("edge endpoints out of range")

        if weights is None:
            w = np.ones(len(edges), dtype=np.float64)
        else:
            w = np.asarray(weights, dtype=np.float64)

        loops = edges[:, 0] == edges[:, 1]
        sym_r = np.concatenate([edges[:, 0], edges[~loops, 1]])
        sym_c = np.concatenate([edges[:, 1], edges[~loops, 0]])
        sym_w = np.concatenate([w, w[~loops]])

        order = np.lexsort((sym_c, sym_r))
        sym_r, sym_c, sym_w = sym_r[order], sym_c[order], sym_w[order]
        if len(sym_r):
            keep = np.ones(len(sym_r), dtype=bool)
            keep[1:] = (np.diff(sym_r) != 0) | (np.diff(sym_c) != 0)
            sym_r, sym_c, sym_w = sym_r[keep], sym_c[keep], sym_w[keep]

        row_offsets = np.zeros(n_nodes + 1, dtype=np.int64)
        np.add.at(row_offsets, sym_r + 1, 1)
        np.cumsum(row_offsets, out=row_offsets)
        return Graph(n_nodes, row_offsets, sym_c, sym_w, features, labels,
                     int(n_classes))

    # -- views --------------------------------------------------------------

    @property
    def n_edges(self):
        """Number of undirected edges, counting each self-loop once."""
        n_loops = int(np.count_nonzero(self.diagonal()))
        return (len(self.col_indices) - n_loops) // 2 + n_loops

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def to_csr(self):
        """Return the adjacency as a scipy.sparse.csr_matrix."""
        return sp.csr_matrix(
            (self.weights, self.col_indices, self.row_offsets),
            shape=(self.n_nodes, self.n_nodes),
        )

    def degrees(self):
        """Weighted degree (row sum) per node."""
        return np.add.reduceat(
            np.concatenate([self.weights, [0.0]]),
            self.row_offsets[:-1],
        ) * (np.diff(self.row_offsets) > 0)

    def diagonal(self):
        """Self-loop weight per node (0 where absent)."""
        diag = np.zeros(self.n_nodes)
        for i in range(self.n_nodes):
            lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
            pos = np.searchsorted(self.col_indices[lo:hi], i)
            if pos < hi - lo and self.col_indices[lo + pos] == i:
                diag[i] = self.weights[lo + pos]
        return diag

    def neighbors(self, i):
        """Column indices of row i (includes i itself if a self-loop exists)."""
        return self.col_indices[self.row_offsets[i]:self.row_offsets[i + 1]]

    def undirected_edges(self, include_loops=False):
        """Unique (u, v) pairs with u < v, optionally with self-loops (u == v)."""
        r = np.repeat(np.arange(self.n_nodes), np.diff(self.row_offsets))
        c = self.col_indices
        mask = (r <= c) if include_loops else (r < c)
        return np.stack([r[mask], c[mask]], axis=1)

    # -- transforms ---------------------------------------------------------

    def add_self_loops(self, weight=1.0):
        """Return a graph where every node has exactly one self-loop.

        Nodes that already carry a self-loop are left untouched, so the
        operation is idempotent.
        """
        missing = np.flatnonzero(self.diagonal() == 0.0)
        if len(missing) == 0:
            return self
        extra = np.stack([missing, missing], axis=1)
        edges = np.concatenate([self.undirected_edges(include_loops=True), extra])
        w = np.concatenate([
            self._edge_weights_for(self.undirected_edges(include_loops=True)),
            np.full(len(missing), weight),
        ])
        return Graph.from_edges(self.n_nodes, edges, self.features, self.labels,
                                self.n_classes, weights=w)

    def _edge_weights_for(self, pairs):
        out = np.empty(len(pairs))
        for t, (u, v) in enumerate(pairs):
            lo, hi = self.row_offsets[u], self.row_offsets[u + 1]
            pos = lo + np.searchsorted(self.col_indices[lo:hi], v)
            out[t] = self.weights[pos]
        return out

    def row_normalize(self):
        """Return a graph whose adjacency rows each sum to one.

        Raises ValueError on any zero-degree row; call ``add_self_loops``
        first to guarantee positive degrees.
        """
        deg = self.degrees()
        dead = np.flatnonzero(deg == 0.0)
        if len(dead):
            raise ValueError(
                f"cannot row-normalize: {len(dead)} zero-degree node(s), "
                f"first at index {dead[0]}"
            )
        counts = np.diff(self.row_offsets)
        scaled = self.weights / np.repeat(deg, counts)
        return Graph(self.n_nodes, self.row_offsets, self.col_indices, scaled,
                     self.features, self.labels, self.n_classes)

    def permute(self, perm):
        """Relabel nodes by permutation ``perm`` (new id of old node i is perm[i])."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(self.n_nodes)
        pairs = self.undirected_edges(include_loops=True)
        edges = perm[pairs]
        return Graph.from_edges(
            self.n_nodes, edges, self.features[inv], self.labels[inv],
            self.n_classes, weights=self._edge_weights_for(pairs),
        )

    # -- integrity ----------------------------------------------------------

    def validate(self):
        """Check structural invariants; raises ValueError on violation."""
        if self.row_offsets.shape != (self.n_nodes + 1,):
            raise ValueError("row_offsets has wrong length")
        if self.row_offsets[0] != 0 or self.row_offsets[-1] != len(self.col_indices):
            raise ValueError("row_offsets endpoints inconsistent")
        if np.any(np.diff(self.row_offsets) < 0):
            raise ValueError("row_offsets must be nondecreasing")
        for i in range(self.n_nodes):
            cols = self.neighbors(i)
            if len(cols) > 1 and np.any(np.diff(cols) <= 0):
                raise ValueError(f"row {i}: column indices not strictly increasing")
        a = self.to_csr()
        if (a != a.T).nnz != 0:
            raise ValueError("adjacency is not symmetric")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("non-finite edge weight")
        return self

    def digest(self):
        """Hex SHA-256 over the canonical byte representation."""
        h = hashlib.sha256()
        h.update(np.int64([self.n_nodes, self.n_classes]).tobytes())
        for arr in (self.row_offsets, self.col_indices, self.weights,
                    self.features, self.labels):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# stochastic block model
# ---------------------------------------------------------------------------

@dataclass
class SbmParams:
    """Parameters of the planted-partition stochastic block model.

    Edge probability between nodes of blocks a and b is ``alpha`` when
    a == b and ``mu * alpha`` otherwise.  Node features are Gaussian around
    a per-block mean column of ``means`` (shape (feature_dim, n_blocks));
    by default ``means`` is the identity padded with zero rows, so block c
    has mean e_c.
    """

    n_nodes: int
    n_blocks: int
    alpha: float
    mu: float
    feature_dim: int
    noise: float = 1.0
    block_probs: np.ndarray | None = None
    means: np.ndarray | None = None

    def __post_init__(self):
        if self.n_nodes < 1 or self.n_blocks < 1:
            raise ValueError("n_nodes and n_blocks must be positive")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must lie in [0, 1]")
        if not (0.0 <= self.mu <= 1.0):
            raise ValueError("mu must lie in [0, 1]")
        if self.noise < 0.0:
            raise ValueError("noise must be nonnegative")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        if self.block_probs is None:
            self.block_probs = np.full(self.n_blocks, 1.0 / self.n_blocks)
        else:
            self.block_probs = np.asarray(self.block_probs, dtype=np.float64)
            if self.block_probs.shape != (self.n_blocks,):
                raise ValueError("block_probs must have length n_blocks")
            if np.any(self.block_probs < 0) or not np.isclose(
                    self.block_probs.sum(), 1.0, atol=1e-9):
                raise ValueError("block_probs must be a probability vector")
        if self.means is None:
            m = np.zeros((self.feature_dim, self.n_blocks))
            k = min(self.feature_dim, self.n_blocks)
            m[np.arange(k), np.arange(k)] = 1.0
            self.means = m
        else:
            self.means = np.asarray(self.means, dtype=np.float64)
            if self.means.shape != (self.feature_dim, self.n_blocks):
                raise ValueError("means must have shape (feature_dim, n_blocks)")

    def block_matrix(self):
        """The n_blocks x n_blocks edge-probability matrix B."""
        b = np.full((self.n_blocks, self.n_blocks), self.mu * self.alpha)
        np.fill_diagonal(b, self.alpha)
        return b


def sbm_generate(params: SbmParams, seed) -> Graph:
    """Sample a graph from the stochastic block model.

    Node labels are drawn i.i.d. from ``block_probs``; each unordered node
    pair (i < j) independently receives an edge with probability
    B[y_i, y_j]; features are ``means[:, y_i] + noise * N(0, I)``.
    No self-loops are generated.
    """
    rng = np.random.default_rng(seed)
    n, kb = params.n_nodes, params.n_blocks
    y = rng.choice(kb, size=n, p=params.block_probs)

    block_idx = [np.flatnonzero(y == c) for c in range(kb)]
    rows, cols = [], []
    for a in range(kb):
        for b in range(a, kb):
            p = params.alpha if a == b else params.mu * params.alpha
            if p == 0.0:
                continue
            ia, ib = block_idx[a], block_idx[b]
            if a == b:
                if len(ia) < 2:
                    continue
                iu, ju = np.triu_indices(len(ia), k=1)
                hit = rng.random(len(iu)) < p
                rows.append(ia[iu[hit]])
                cols.append(ia[ju[hit]])
            else:
                if len(ia) == 0 or len(ib) == 0:
                    continue
                hit = np.flatnonzero(rng.random(len(ia) * len(ib)) < p)
                rows.append(ia[hit // len(ib)])
                cols.append(ib[hit % len(ib)])

    if rows:
        edges = np.stack([np.concatenate(rows), np.concatenate(cols)], axis=1)
    else:
        edges = np.zeros((0, 2), dtype=np.int64)

    x = params.means[:, y].T.copy()
    if params.noise > 0:
        x += params.noise * rng.standard_normal((n, params.feature_dim))
    return Graph.from_edges(n, edges, x, y, kb)
