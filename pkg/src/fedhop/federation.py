"""Federated GCN training with one-shot neighbor-feature exchange.

Protocol: before any training round, every client sends the server, for
each node it can see, the partial neighbor-feature sum and partial degree
computable from its local edges.  The server adds partials per node —
under a secure channel it only ever handles masked residues — and returns
to client k the exact totals for the rows that client's forward pass
needs: none (hops=0), its own nodes (hops=1), or its one-hop closure
(hops=2).  After this single exchange, training is plain federated
averaging: every round each client runs ``local_steps`` SGD steps from the
global weights and the server averages the results; only model-sized
payloads move, so graph-dependent traffic is frozen after round 0.

Per-layer client views (hops = h, L model layers):
    layer 1 uses the pre-aggregated rows (exact for hops >= 1, local
    approximation for hops=0); layer 2 under hops=2 has the complete
    normalized adjacency rows for the client's nodes, so a 2-layer model's
    outputs equal the centralized ones; all remaining layers fall back to
    the client-local subgraph, normalized by true degree when known
    (hops >= 1) and by local degree otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .channels import PlainChannel, make_channel
from .errors import ConfigError, DivergenceError, ProtocolError
from .gcn import (ModelConfig, accuracy, gcn_backward, gcn_forward,
                  init_weights, predict_labels, sgd_step, xent_loss)
from .graphs import Graph
from .partition import Partition
from . import wire

PRETRAIN_CONTEXT = (0,)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 0.5
    l2: float = 5e-4
    local_steps: int = 3
    rounds: int = 300
    global_lr: float = 1.0
    eval_every: int = 1
    client_weighting: str = "uniform"   # or "by_train_size"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.l2 < 0:
            raise ConfigError("l2 must be nonnegative")
        if self.local_steps < 1 or self.rounds < 0:
            raise ConfigError("local_steps must be >= 1 and rounds >= 0")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.client_weighting not in ("uniform", "by_train_size"):
            raise ConfigError(f"unknown client_weighting {self.client_weighting!r}")


def step_rng(seed, round_index, step_index, client_id):
    """Deterministic per-(round, step, client) generator for dropout."""
    return np.random.default_rng(np.random.SeedSequence(
        [int(seed), 1, int(round_index), int(step_index), int(client_id)]))


# ---------------------------------------------------------------------------
# pre-training exchange
# ---------------------------------------------------------------------------

@dataclass
class HopMessage:
    """One client's partial sums: for each listed node, the weighted degree
    and feature sum over the client's local copy of that node's edges."""

    client_id: int
    hop: int
    node_ids: np.ndarray
    degrees: np.ndarray
    feature_sums: np.ndarray

    @property
    def n_records(self):
        return len(self.node_ids)


@dataclass
class CommStats:
    """Byte/element accounting for one direction of the exchange."""

    records: int = 0
    feature_elements: int = 0
    payload_elements: int = 0
    wire_bytes: int = 0
    per_client_bytes: list = field(default_factory=list)

    def add(self, n_records, feature_dim, channel):
        payload = n_records * (feature_dim + 1)
        message_bytes = (wire.HEADER_BYTES * n_records
                         + channel.payload_wire_bytes(payload))
        self.records += n_records
        self.feature_elements += n_records * feature_dim
        self.payload_elements += payload
        self.wire_bytes += message_bytes
        self.per_client_bytes.append(message_bytes)


@dataclass
class PretrainStats:
    up: CommStats = field(default_factory=CommStats)
    down: CommStats = field(default_factory=CommStats)

    def client_bytes(self, k, direction):
        stats = self.up if direction == "up" else self.down
        return stats.per_client_bytes[k] if k < len(stats.per_client_bytes) else 0


def pretrain_collect(graph_sl: Graph, part: Partition, k, hop):
    """Client k's partial sums for every node adjacent to one of its nodes.

    ``graph_sl`` must already carry self-loops, so a client always
    contributes its own nodes' features to their own totals.  Nodes with no
    edge into client k are omitted (their partial would be the zero vector
    with degree 0).
    """
    own = part.nodes_of(k)
    a = graph_sl.to_csr()
    cols = a[:, own]
    degrees = np.asarray(cols.sum(axis=1)).ravel()
    support = np.flatnonzero(degrees > 0)
    sums = cols @ graph_sl.features[own]
    return HopMessage(int(k), int(hop), support, degrees[support],
                      np.asarray(sums)[support])


def partial_for_nodes(graph_sl: Graph, part: Partition, k, node_ids):
    """Partial sums for an explicit node list; zero rows where client k has
    no local neighbors of the node."""
    msg = pretrain_collect(graph_sl, part, k, hop=1)
    node_ids = np.asarray(node_ids, dtype=np.int64)
    deg = np.zeros(len(node_ids))
    sums = np.zeros((len(node_ids), graph_sl.feature_dim))
    pos = {int(i): t for t, i in enumerate(msg.node_ids)}
    for t, i in enumerate(node_ids):
        if int(i) in pos:
            deg[t] = msg.degrees[pos[int(i)]]
            sums[t] = msg.feature_sums[pos[int(i)]]
    return deg, sums


def pretrain_aggregate(messages, n_nodes, feature_dim, channel,
                       context=PRETRAIN_CONTEXT):
    """Server-side per-node totals over all clients' partials.

    Every client participates in the secure sum with a dense (possibly
    zero-padded) payload so pairwise masks cancel; returns the total
    degree vector and feature-sum matrix.
    """
    if len(messages) != channel.n_clients:
        raise ProtocolError(
            f"aggregation needs {channel.n_clients} client messages, "
            f"got {len(messages)}")
    seen = {m.client_id for m in messages}
    if seen != set(range(channel.n_clients)):
        raise ProtocolError(f"missing client messages: "
                            f"{sorted(set(range(channel.n_clients)) - seen)}")
    payloads = []
    for m in sorted(messages, key=lambda m: m.client_id):
        dense = np.zeros((n_nodes, feature_dim + 1))
        dense[m.node_ids, 0] = m.degrees
        dense[m.node_ids, 1:] = m.feature_sums
        payloads.append(channel.client_payload(dense, m.client_id, context))
    total = channel.reduce(payloads, context).reshape(n_nodes, feature_dim + 1)
    return total[:, 0].copy(), total[:, 1:].copy()


def pretrain_distribute(total_deg, total_sums, messages, part: Partition, hop,
                        protect_exposed=False):
    """Rows of the totals each client receives back.

    hops=1 clients get their own nodes; hops=2 clients get every node they
    contributed a partial for (their one-hop closure).

    With ``protect_exposed`` on, a total whose contributors are the
    recipient plus exactly one other client is withheld — the recipient
    could subtract its own partial and recover that client's contribution
    exactly — and the recipient's own partial is substituted, so it learns
    nothing it did not already hold.  Off by default: it trades accuracy on
    the affected rows for that guarantee.
    """
    contributors = None
    if protect_exposed:
        n_nodes = len(total_deg)
        contributors = np.zeros(n_nodes, dtype=np.int64)
        for m in messages:
            contributors[m.node_ids] += 1
    out = {}
    for m in messages:
        if hop >= 2:
            rows = m.node_ids
        else:
            rows = part.nodes_of(m.client_id)
        deg = total_deg[rows].copy()
        sums = total_sums[rows].copy()
        if protect_exposed:
            # rows of `rows` always include m's own contribution (self-loops)
            exposed = contributors[rows] == 2
            if np.any(exposed):
                own_deg, own_sums = partial_from_message(m, rows[exposed])
                deg[exposed] = own_deg
                sums[exposed] = own_sums
        out[m.client_id] = (rows, deg, sums)
    return out


def partial_from_message(msg: HopMessage, node_ids):
    """Look up one client's partial (degree, sum) rows for given nodes."""
    node_ids = np.asarray(node_ids, dtype=np.int64)
    pos = np.searchsorted(msg.node_ids, node_ids)
    if (np.any(pos >= len(msg.node_ids))
            or np.any(msg.node_ids[pos] != node_ids)):
        raise ProtocolError("requested nodes outside the client's support")
    return msg.degrees[pos].copy(), msg.feature_sums[pos].copy()


# ---------------------------------------------------------------------------
# client views
# ---------------------------------------------------------------------------

@dataclass
class ClientView:
    client_id: int
    nodes: np.ndarray            # owned node ids (output row space)
    input_rows: np.ndarray       # row space of x_pre
    x_pre: np.ndarray            # first-layer propagated features
    a_layers: list               # per-layer adjacency (slot 0 is None)
    labels: np.ndarray           # labels for ``nodes``
    masks: dict                  # split name -> local indices into ``nodes``


def _local_indices(nodes, ids):
    ids = np.asarray(ids, dtype=np.int64)
    ids = ids[np.isin(ids, nodes)]
    return np.searchsorted(nodes, ids)


def _row_scale(mat, deg):
    inv = 1.0 / deg
    return sp.diags(inv) @ mat


def build_client_view(graph_sl: Graph, part: Partition, k, hop, n_layers,
                      payload=None, split=None):
    """Assemble client k's per-layer operators from its payload.

    ``payload`` is the (rows, degrees, sums) triple from
    ``pretrain_distribute`` (None for hops=0).
    """
    if hop < 0 or hop > 2:
        raise ConfigError(f"hops must be 0, 1 or 2, got {hop}")
    if hop > n_layers:
        raise ConfigError(f"hops={hop} exceeds model depth {n_layers}")
    own = part.nodes_of(k)
    if len(own) == 0:
        raise ConfigError(f"client {k} owns no nodes")
    a = graph_sl.to_csr()
    local = a[own][:, own]

    if hop == 0:
        deg_loc = np.asarray(local.sum(axis=1)).ravel()
        a_local = _row_scale(local, deg_loc)
        x_pre = a_local @ graph_sl.features[own]
        input_rows = own
        deeper = a_local
        layer2 = a_local
    else:
        rows, deg_rows, sums = payload
        if hop == 1 and not np.array_equal(rows, own):
            raise ProtocolError("hops=1 payload must cover exactly the "
                                "client's own nodes")
        if np.any(deg_rows <= 0):
            raise ProtocolError("received a nonpositive total degree")
        x_pre = sums / deg_rows[:, None]
        input_rows = rows
        own_pos = np.searchsorted(rows, own)
        if np.any(own_pos >= len(rows)) or np.any(rows[own_pos] != own):
            raise ProtocolError("payload rows must include the client's "
                                "own nodes")
        deg_own = deg_rows[own_pos]
        deeper = _row_scale(local, deg_own)
        if hop == 1:
            layer2 = deeper
        else:
            rect = a[own][:, rows]
            layer2 = _row_scale(rect, deg_own)

    if n_layers == 1 and hop == 2:
        # single-layer model consumes only the client's own pre-aggregated rows
        own_pos = np.searchsorted(input_rows, own)
        x_pre = x_pre[own_pos]
        input_rows = own
    a_layers = [None] + ([layer2] if n_layers >= 2 else [])
    a_layers += [deeper] * (n_layers - 2)

    masks = {}
    if split is not None:
        masks = {name: _local_indices(own, ids) for name, ids in split.items()}
    return ClientView(int(k), own, input_rows, x_pre, a_layers,
                      graph_sl.labels[own], masks)


def setup_federation(graph: Graph, part: Partition, hop, n_layers, channel,
                     split=None, protect_exposed=False):
    """Run the one-shot exchange; returns (views, PretrainStats)."""
    graph_sl = graph.add_self_loops()
    stats = PretrainStats()
    payloads = {k: None for k in range(part.n_clients)}
    if hop > 0:
        messages = [pretrain_collect(graph_sl, part, k, hop)
                    for k in range(part.n_clients)]
        for m in messages:
            stats.up.add(m.n_records, graph_sl.feature_dim, channel)
        deg, sums = pretrain_aggregate(messages, graph_sl.n_nodes,
                                       graph_sl.feature_dim, channel)
        payloads = pretrain_distribute(deg, sums, messages, part, hop,
                                       protect_exposed=protect_exposed)
        for k, (rows, _, _) in payloads.items():
            stats.down.add(len(rows), graph_sl.feature_dim, channel)
    views = [build_client_view(graph_sl, part, k, hop, n_layers,
                               payloads[k], split)
             for k in range(part.n_clients)]
    return views, stats


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class RoundRecord:
    round: int
    t: int                # cumulative local steps
    client: int
    loss: float
    acc: float            # client-local training accuracy
    val_acc: float        # global, aggregated over clients
    test_acc: float
    up_bytes: int
    down_bytes: int

    FIELDS = ("round", "t", "client", "loss", "acc", "val_acc", "test_acc",
              "up_bytes", "down_bytes")

    def row(self):
        return [self.round, self.t, self.client, self.loss, self.acc,
                self.val_acc, self.test_acc, self.up_bytes, self.down_bytes]


@dataclass
class TrainResult:
    weights: list
    records: list
    pretrain: PretrainStats
    views: list
    round_up_bytes: int     # per round, all clients
    round_down_bytes: int
    weight_history: list = field(default_factory=list)

    def metric_series(self, name):
        """Per-evaluated-round values of a global metric (client 0 rows)."""
        return [getattr(r, name) for r in self.records if r.client == 0]


def _client_pass(view: ClientView, weights, model_cfg: ModelConfig,
                 train_cfg: TrainConfig, seed, round_index):
    """Local steps from the global weights; returns (weights, loss, trained)."""
    w = [wi.copy() for wi in weights]
    train_mask = view.masks.get("train", np.zeros(0, dtype=np.int64))
    if len(train_mask) == 0:
        return w, float("nan"), False
    loss = float("nan")
    for e in range(1, train_cfg.local_steps + 1):
        rng = step_rng(seed, round_index, e, view.client_id)
        cache = gcn_forward(view.a_layers, view.x_pre, w,
                            dropout=model_cfg.dropout, train=True, rng=rng)
        loss = xent_loss(cache, view.labels, train_mask, l2=train_cfg.l2)
        grads = gcn_backward(cache, view.labels, train_mask, l2=train_cfg.l2)
        w = sgd_step(w, grads, train_cfg.learning_rate)
    return w, loss, True


def evaluate_clients(views, weights):
    """Eval-mode forward per client; returns per-client probs list."""
    out = []
    for view in views:
        cache = gcn_forward(view.a_layers, view.x_pre, weights, train=False)
        out.append(cache.probs)
    return out


def global_metrics(views, probs_per_client):
    """Aggregate split accuracies over clients (correct / total)."""
    counts = {name: [0, 0] for name in ("train", "val", "test")}
    for view, probs in zip(views, probs_per_client):
        pred = predict_labels(probs)
        for name in counts:
            idx = view.masks.get(name, np.zeros(0, dtype=np.int64))
            counts[name][0] += int(np.sum(pred[idx] == view.labels[idx]))
            counts[name][1] += len(idx)
    return {name: (c / t if t else float("nan"))
            for name, (c, t) in counts.items()}


def evaluate(views, weights, mask="test"):
    """Global accuracy of ``weights`` on one split across all clients.

    Raises ConfigError when no client holds any node of the split — the
    metric would be 0/0 — rather than returning NaN like the per-round
    metric rows do.
    """
    held = sum(len(v.masks.get(mask, ())) for v in views)
    if held == 0:
        raise ConfigError(
            f"accuracy on split {mask!r} is undefined: no client holds a "
            f"node with that mask")
    return global_metrics(views, evaluate_clients(views, weights))[mask]


def _acc_sum(terms):
    terms = list(terms)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total


def _aggregate(weights_before, client_weights, train_cfg, client_coeffs):
    if train_cfg.global_lr == 1.0:
        # plain coefficient average of the post-update weights; with one
        # client this is exactly that client's weights, bit for bit
        return [
            _acc_sum(c * cw[l] for c, cw in zip(client_coeffs, client_weights))
            for l in range(len(weights_before))
        ]
    return [
        wb + train_cfg.global_lr
        * _acc_sum(c * (cw[l] - wb) for c, cw in zip(client_coeffs, client_weights))
        for l, wb in enumerate(weights_before)
    ]


def run_training(graph: Graph, part: Partition, split, hop,
                 model_cfg: ModelConfig, train_cfg: TrainConfig,
                 channel_name="plain", seed=0, protect_exposed=False,
                 track_weights=False):
    """Full protocol: one-shot exchange, then federated averaging.

    With ``track_weights`` the result keeps a copy of the global weights
    after every round, so two runs' trajectories can be compared round by
    round (costs rounds x model-size memory).
    """
    channel = make_channel(channel_name, part.n_clients, session_seed=seed)
    views, pretrain = setup_federation(graph, part, hop, model_cfg.n_layers,
                                       channel, split,
                                       protect_exposed=protect_exposed)
    dims = model_cfg.layer_dims(graph.feature_dim, graph.n_classes)
    weights = init_weights(dims, seed)
    n_params = sum(int(np.prod(w.shape)) for w in weights)
    up_per_round = part.n_clients * (
        wire.HEADER_BYTES + channel.update_wire_bytes(n_params))
    down_per_round = up_per_round

    coeffs = np.full(part.n_clients, 1.0 / part.n_clients)
    if train_cfg.client_weighting == "by_train_size":
        sizes = np.array([max(len(v.masks.get("train", [])), 0)
                          for v in views], dtype=np.float64)
        if sizes.sum() == 0:
            raise ConfigError("no client has training nodes")
        coeffs = sizes / sizes.sum()

    per_client_round_up = wire.HEADER_BYTES + channel.update_wire_bytes(n_params)
    records = []

    def emit(round_index, losses):
        probs = evaluate_clients(views, weights)
        glob = global_metrics(views, probs)
        for view, probs_k in zip(views, probs):
            idx = view.masks.get("train", np.zeros(0, dtype=np.int64))
            acc_k = accuracy(probs_k, view.labels, idx) if len(idx) else float("nan")
            k = view.client_id
            records.append(RoundRecord(
                round=round_index, t=round_index * train_cfg.local_steps,
                client=k, loss=losses[k],
                acc=acc_k, val_acc=glob["val"], test_acc=glob["test"],
                up_bytes=(pretrain.client_bytes(k, "up")
                          if round_index == 0 else per_client_round_up),
                down_bytes=(pretrain.client_bytes(k, "down")
                            if round_index == 0 else per_client_round_up),
            ))

    emit(0, [float("nan")] * part.n_clients)
    history = []
    for t in range(1, train_cfg.rounds + 1):
        results = [_client_pass(view, weights, model_cfg, train_cfg, seed, t)
                   for view in views]
        losses = [loss for _, loss, _ in results]
        bad = [l for _, l, trained in results if trained and not math.isfinite(l)]
        if bad:
            raise DivergenceError(
                f"non-finite training loss in round {t}", history=records)
        weights = _aggregate(weights, [w for w, _, _ in results], train_cfg,
                             coeffs)
        if track_weights:
            history.append([w.copy() for w in weights])
        if t % train_cfg.eval_every == 0 or t == train_cfg.rounds:
            emit(t, losses)
    return TrainResult(weights, records, pretrain,
                       views, up_per_round, down_per_round, history)


# ---------------------------------------------------------------------------
# centralized reference
# ---------------------------------------------------------------------------

def centralized_train(graph: Graph, split, model_cfg: ModelConfig,
                      train_cfg: TrainConfig, seed=0):
    """Full-graph SGD with the same per-(round, step) dropout streams.

    Uses the one-client view of the whole graph, so a federated run with a
    single client, hops=0 and the plain channel follows the identical
    compute path and the two weight trajectories agree bit for bit.
    """
    graph_sl = graph.add_self_loops()
    whole = Partition(1, np.zeros(graph.n_nodes, dtype=np.int64))
    view = build_client_view(graph_sl, whole, 0, 0, model_cfg.n_layers,
                             None, split)
    weights = init_weights(
        model_cfg.layer_dims(graph.feature_dim, graph.n_classes), seed)
    history = []
    for t in range(1, train_cfg.rounds + 1):
        for e in range(1, train_cfg.local_steps + 1):
            rng = step_rng(seed, t, e, 0)
            cache = gcn_forward(view.a_layers, view.x_pre, weights,
                                dropout=model_cfg.dropout, train=True, rng=rng)
            loss = xent_loss(cache, view.labels, view.masks["train"],
                             l2=train_cfg.l2)
            grads = gcn_backward(cache, view.labels, view.masks["train"],
                                 l2=train_cfg.l2)
            weights = sgd_step(weights, grads, train_cfg.learning_rate)
            history.append(loss)
    cache = gcn_forward(view.a_layers, view.x_pre, weights, train=False)
    metrics = {name: accuracy(cache.probs, view.labels, idx)
               for name, idx in view.masks.items()}
    return weights, history, metrics


# ---------------------------------------------------------------------------
# convergence time
# ---------------------------------------------------------------------------

def convergence_time(series, tolerance=0.01):
    """First 1-based index t >= 2 with |a_t - a_{t-1}| <= tolerance.

    Returns (index, converged).  A series that never settles returns its
    length with ``converged=False``; series shorter than 2 never converge.
    """
    series = [float(v) for v in series]
    for t in range(2, len(series) + 1):
        if abs(series[t - 1] - series[t - 2]) <= tolerance:
            return t, True
    return len(series), False
