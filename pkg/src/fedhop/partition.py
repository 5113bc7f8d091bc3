"""Assignment of graph nodes to clients.

Each node lands on a uniformly random client with probability
``iid_fraction`` and otherwise on its label's home client
(``label mod n_clients``).  ``iid_fraction=1`` gives a fully i.i.d.
partition, ``iid_fraction=0`` a fully label-skewed one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .graphs import Graph


def partition_nodes(labels, n_clients, iid_fraction, seed):
    """Return an int64 client assignment for every node."""
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    if not (0.0 <= iid_fraction <= 1.0):
        raise ValueError("iid_fraction must lie in [0, 1]")
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    uniform = rng.integers(0, n_clients, size=len(labels))
    coin = rng.random(len(labels)) < iid_fraction
    return np.where(coin, uniform, labels % n_clients).astype(np.int64)


@dataclass(frozen=True)
class Partition:
    """A fixed node-to-client assignment."""

    n_clients: int
    assignment: np.ndarray

    @staticmethod
    def create(labels, n_clients, iid_fraction, seed):
        return Partition(n_clients,
                         partition_nodes(labels, n_clients, iid_fraction, seed))

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        if a.ndim != 1:
            raise ValueError("assignment must be one-dimensional")
        if a.size and (a.min() < 0 or a.max() >= self.n_clients):
            raise ValueError("assignment values must lie in [0, n_clients)")
        object.__setattr__(self, "assignment", a)

    @property
    def n_nodes(self):
        return len(self.assignment)

    def nodes_of(self, k):
        """Sorted node ids owned by client k."""
        return np.flatnonzero(self.assignment == k)

    def sizes(self):
        return np.bincount(self.assignment, minlength=self.n_clients)

    # -- graph-dependent views ----------------------------------------------

    def internal_edges(self, graph: Graph, k):
        """Undirected edges with both endpoints at client k (u <= v rows)."""
        e = graph.undirected_edges(include_loops=True)
        a = self.assignment
        return e[(a[e[:, 0]] == k) & (a[e[:, 1]] == k)]

    def cross_edges(self, graph: Graph, k):
        """Undirected edges with exactly one endpoint at client k."""
        e = graph.undirected_edges(include_loops=True)
        a = self.assignment
        return e[(a[e[:, 0]] == k) != (a[e[:, 1]] == k)]

    def closure(self, graph: Graph, k, hops=1):
        """Sorted node ids within ``hops`` edges of client k's nodes.

        hops=0 returns V_k itself; hops=1 adds boundary neighbors, etc.
        """
        nodes = self.nodes_of(k)
        for _ in range(hops):
            if len(nodes) == 0:
                break
            parts = [graph.col_indices[graph.row_offsets[i]:graph.row_offsets[i + 1]]
                     for i in nodes]
            nodes = np.unique(np.concatenate([nodes] + parts))
        return nodes

    def edge_counts(self, graph: Graph):
        """(internal_per_client, cross_per_client) undirected edge counts."""
        e = graph.undirected_edges(include_loops=True)
        a, kk = self.assignment, self.n_clients
        ca, cb = a[e[:, 0]], a[e[:, 1]]
        internal = np.bincount(ca[ca == cb], minlength=kk)
        cross = (np.bincount(ca[ca != cb], minlength=kk)
                 + np.bincount(cb[ca != cb], minlength=kk))
        return internal, cross

    # -- persistence --------------------------------------------------------

    def save(self, path, extra=None):
        doc = {"schema_version": 1, "n_clients": int(self.n_clients),
               "assignment": self.assignment.tolist()}
        if extra:
            doc.update(extra)
        with open(path, "w") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    @staticmethod
    def load(path):
        with open(path) as fh:
            doc = json.load(fh)
        return Partition(int(doc["n_clients"]),
                         np.asarray(doc["assignment"], dtype=np.int64))
