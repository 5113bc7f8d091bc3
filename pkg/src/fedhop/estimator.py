"""Scikit-learn style estimator facade.

``FederatedGCNClassifier`` is a transductive node classifier: ``fit`` takes
the node feature matrix, per-node labels (-1 marks unlabeled nodes, as in
``sklearn.semi_supervised``), and the graph adjacency as a keyword; the
whole protocol — client partitioning, the one-shot neighbor exchange, and
federated averaging — runs inside ``fit``, and ``predict`` returns labels
for every node of the fitted graph.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .federation import TrainConfig, run_training
from .gcn import ModelConfig
from .graphs import Graph
from .partition import Partition


# ---------------------------------------------------------------------------
# input validation helpers
# ---------------------------------------------------------------------------

def check_adjacency(adjacency, n_nodes):
    """Normalize an adjacency argument to (edges, weights).

    Accepts a square scipy sparse / dense matrix (must be symmetric) or an
    (m, 2) integer edge list.  A square (n, n) array is always read as a
    matrix; anything else with two columns as an edge list with unit
    weights.  Returns unique undirected pairs (u <= v).
    """
    if sp.issparse(adjacency):
        a = adjacency.tocoo()
        if a.shape != (n_nodes, n_nodes):
            raise ValueError(
                f"adjacency shape {a.shape} does not match {n_nodes} nodes")
        asym = abs(a - a.T)
        if asym.nnz and asym.max() > 1e-12:
            raise ValueError("adjacency must be symmetric")
        mask = a.row <= a.col
        edges = np.stack([a.row[mask], a.col[mask]], axis=1).astype(np.int64)
        return edges, np.asarray(a.data[mask], dtype=np.float64)
    adjacency = np.asarray(adjacency)
    if adjacency.ndim != 2:
        raise ValueError("adjacency must be two-dimensional")
    if adjacency.shape == (n_nodes, n_nodes):
        if not np.allclose(adjacency, adjacency.T):
            raise ValueError("adjacency must be symmetric")
        r, c = np.nonzero(np.triu(adjacency))
        return (np.stack([r, c], axis=1).astype(np.int64),
                adjacency[r, c].astype(np.float64))
    if adjacency.shape[1] == 2:
        edges = adjacency.astype(np.int64)
        if edges.size and (edges.min() < 0 or edges.max() >= n_nodes):
            raise ValueError("edge list endpoints out of range")
        return edges, np.ones(len(edges))
    raise ValueError(
        "adjacency must be a square matrix or an (m, 2) edge list")


def check_masks(n_nodes, labeled, val_nodes, test_nodes):
    """Validate optional evaluation masks against the labeled set."""
    out = {}
    for name, idx in (("val", val_nodes), ("test", test_nodes)):
        if idx is None:
            out[name] = np.zeros(0, dtype=np.int64)
            continue
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n_nodes):
            raise ValueError(f"{name}_nodes out of range")
        if not np.all(labeled[idx]):
            raise ValueError(f"{name}_nodes must point at labeled nodes")
        out[name] = np.sort(idx)
    return out


class FederatedGCNClassifier(ClassifierMixin, BaseEstimator):
    """Transductive GCN trained by federated averaging over graph clients.

    Parameters mirror the simulator configuration: the graph's nodes are
    split across ``n_clients`` (``iid_fraction`` interpolates between
    label-skewed and uniform assignment), clients exchange neighbor feature
    sums once over ``channel`` before training (``hops`` controls how much
    cross-client structure they receive), then run ``rounds`` rounds of
    ``local_steps`` local SGD steps each.
    """

    def __init__(self, n_clients=1, hops=2, iid_fraction=1.0, n_layers=2,
                 hidden_dim=16, dropout=0.5, learning_rate=0.5, l2=5e-4,
                 local_steps=3, rounds=300, global_lr=1.0, eval_every=10,
                 channel="plain", client_weighting="uniform", random_state=0):
        self.n_clients = n_clients
        self.hops = hops
        self.iid_fraction = iid_fraction
        self.n_layers = n_layers
        self.hidden_dim = hidden_dim
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.l2 = l2
        self.local_steps = local_steps
        self.rounds = rounds
        self.global_lr = global_lr
        self.eval_every = eval_every
        self.channel = channel
        self.client_weighting = client_weighting
        self.random_state = random_state

    # -- sklearn plumbing ---------------------------------------------------

    def _configs(self):
        model = ModelConfig(n_layers=self.n_layers, hidden_dim=self.hidden_dim,
                            dropout=self.dropout)
        training = TrainConfig(learning_rate=self.learning_rate, l2=self.l2,
                               local_steps=self.local_steps,
                               rounds=self.rounds, global_lr=self.global_lr,
                               eval_every=self.eval_every,
                               client_weighting=self.client_weighting)
        return model, training

    def fit(self, X, y, adjacency=None, val_nodes=None, test_nodes=None):
        """Fit on one graph.

        X: (n_nodes, d) features.  y: per-node labels, -1 for unlabeled.
        adjacency: square (sparse) matrix or (m, 2) edge list; required.
        val_nodes/test_nodes: optional labeled node ids tracked in the
        training history.
        """
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError("y must have one entry per node")
        if adjacency is None:
            raise ValueError("adjacency is required (matrix or edge list)")
        n = X.shape[0]
        edges, edge_weights = check_adjacency(adjacency, n)

        labeled = y != -1
        if not np.any(labeled):
            raise ValueError("need at least one labeled node (y != -1)")
        self.classes_ = np.unique(y[labeled])
        codes = np.zeros(n, dtype=np.int64)
        codes[labeled] = np.searchsorted(self.classes_, y[labeled])
        split = {"train": np.flatnonzero(labeled)}
        split.update(check_masks(n, labeled, val_nodes, test_nodes))

        graph = Graph.from_edges(n, edges, X, codes, len(self.classes_),
                                 weights=edge_weights)
        model, training = self._configs()
        if self.hops > model.n_layers:
            raise ValueError(
                f"hops={self.hops} exceeds model depth {model.n_layers}")
        part = Partition.create(codes, self.n_clients, self.iid_fraction,
                                self.random_state)
        result = run_training(graph, part, split, self.hops, model, training,
                              channel_name=self.channel,
                              seed=self.random_state)

        self.n_features_in_ = X.shape[1]
        self.weights_ = result.weights
        self.history_ = result.records
        self.partition_ = part
        self.pretrain_stats_ = result.pretrain
        probs = np.zeros((n, len(self.classes_)))
        from .federation import evaluate_clients
        for view, p in zip(result.views, evaluate_clients(result.views,
                                                          result.weights)):
            probs[view.nodes] = p
        self.probs_ = probs
        return self

    def predict_proba(self, X=None):
        """Class probabilities for every node of the fitted graph."""
        check_is_fitted(self, "probs_")
        if X is not None and np.shape(X)[0] != self.probs_.shape[0]:
            raise ValueError("X must match the fitted graph's node count")
        return self.probs_

    def predict(self, X=None):
        """Predicted class labels for every node of the fitted graph."""
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def score(self, X=None, y=None, nodes=None):
        """Accuracy over ``nodes`` (default: all nodes with y != -1)."""
        check_is_fitted(self, "probs_")
        y = np.asarray(y)
        pred = self.predict(X)
        if nodes is None:
            nodes = np.flatnonzero(y != -1)
        nodes = np.asarray(nodes, dtype=np.int64)
        return float(np.mean(pred[nodes] == y[nodes]))
