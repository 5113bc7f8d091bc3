import numpy as np
import pytest

from fedhop import (ConfigError, DivergenceError, Graph, ModelConfig,
                    Partition, ProtocolError, SbmParams, TrainConfig,
                    build_client_view, centralized_train, convergence_time,
                    evaluate, gcn_forward, init_weights, make_channel,
                    pretrain_aggregate, pretrain_collect, pretrain_distribute,
                    run_training, sbm_generate, setup_federation, wire)
from fedhop.federation import _aggregate, step_rng
from fedhop.datasets import make_split


def hand_graph():
    """6 nodes, two triangles joined by one bridge (2-3)."""
    edges = [[0, 1], [0, 2], [1, 2], [3, 4], [3, 5], [4, 5], [2, 3]]
    rng = np.random.default_rng(0)
    x = rng.standard_normal((6, 4))
    y = np.array([0, 0, 0, 1, 1, 1])
    return Graph.from_edges(6, edges, x, y, 2)


def hand_partition():
    return Partition(2, np.array([0, 0, 0, 1, 1, 1]))


def norm_rows(graph_sl):
    a = graph_sl.to_csr().toarray()
    return a / a.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# config and rng streams
# ---------------------------------------------------------------------------

def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(l2=-1e-4)
    with pytest.raises(ConfigError):
        TrainConfig(local_steps=0)
    with pytest.raises(ConfigError):
        TrainConfig(eval_every=0)
    with pytest.raises(ConfigError):
        TrainConfig(client_weighting="by_vibes")


def test_step_rng_streams_are_distinct_and_stable():
    a = step_rng(1, 2, 3, 4).random(4)
    np.testing.assert_array_equal(a, step_rng(1, 2, 3, 4).random(4))
    for other in [(0, 2, 3, 4), (1, 9, 3, 4), (1, 2, 9, 4), (1, 2, 3, 9)]:
        assert np.any(step_rng(*other).random(4) != a)


# ---------------------------------------------------------------------------
# pre-training exchange
# ---------------------------------------------------------------------------

def test_collect_partials_match_column_slice():
    g = hand_graph().add_self_loops()
    part = hand_partition()
    a = g.to_csr().toarray()
    for k in (0, 1):
        own = part.nodes_of(k)
        msg = pretrain_collect(g, part, k, hop=1)
        np.testing.assert_array_equal(msg.node_ids, part.closure(g, k, 1))
        for t, i in enumerate(msg.node_ids):
            assert msg.degrees[t] == a[i, own].sum()
            np.testing.assert_allclose(msg.feature_sums[t],
                                       a[i, own] @ g.features[own])


def test_aggregate_totals_equal_global_sums():
    g = hand_graph().add_self_loops()
    part = hand_partition()
    msgs = [pretrain_collect(g, part, k, 1) for k in range(2)]
    deg, sums = pretrain_aggregate(msgs, 6, 4, make_channel("plain", 2))
    a = g.to_csr().toarray()
    np.testing.assert_allclose(deg, a.sum(axis=1))
    np.testing.assert_allclose(sums, a @ g.features)


@pytest.mark.parametrize("name,tol", [("plain", 1e-9), ("masked", 1e-5),
                                      ("masked+sizemodel", 1e-5)])
def test_aggregate_identity_per_channel(name, tol):
    g = sbm_generate(SbmParams(80, 4, 0.1, 0.2, 5, 1.0), 3).add_self_loops()
    part = Partition.create(g.labels, 3, 0.7, 1)
    msgs = [pretrain_collect(g, part, k, 1) for k in range(3)]
    deg, sums = pretrain_aggregate(msgs, 80, 5,
                                   make_channel(name, 3, session_seed=2))
    a = g.to_csr().toarray()
    assert np.max(np.abs(deg - a.sum(axis=1))) <= tol
    assert np.max(np.abs(sums - a @ g.features)) <= tol


def test_aggregate_requires_all_clients():
    g = hand_graph().add_self_loops()
    part = hand_partition()
    msgs = [pretrain_collect(g, part, k, 1) for k in range(2)]
    with pytest.raises(ProtocolError, match="2 client messages"):
        pretrain_aggregate(msgs[:1], 6, 4, make_channel("plain", 2))
    dup = [msgs[0], msgs[0]]
    with pytest.raises(ProtocolError, match="missing"):
        pretrain_aggregate(dup, 6, 4, make_channel("plain", 2))


def test_distribute_rows_per_hop():
    g = hand_graph().add_self_loops()
    part = hand_partition()
    msgs = [pretrain_collect(g, part, k, 1) for k in range(2)]
    deg, sums = pretrain_aggregate(msgs, 6, 4, make_channel("plain", 2))
    one_hop = pretrain_distribute(deg, sums, msgs, part, hop=1)
    two_hop = pretrain_distribute(deg, sums, msgs, part, hop=2)
    np.testing.assert_array_equal(one_hop[0][0], [0, 1, 2])
    np.testing.assert_array_equal(two_hop[0][0], [0, 1, 2, 3])  # closure
    np.testing.assert_array_equal(two_hop[1][0], [2, 3, 4, 5])


def test_protect_exposed_substitutes_own_partial():
    """Bridge endpoints have exactly two contributors; with protection on,
    each side gets its own partial for the foreign endpoint instead of the
    exact total."""
    g = hand_graph().add_self_loops()
    part = hand_partition()
    msgs = sorted([pretrain_collect(g, part, k, 2) for k in range(2)],
                  key=lambda m: m.client_id)
    deg, sums = pretrain_aggregate(msgs, 6, 4, make_channel("plain", 2))
    open_rows = pretrain_distribute(deg, sums, msgs, part, 2)
    safe_rows = pretrain_distribute(deg, sums, msgs, part, 2,
                                    protect_exposed=True)
    rows, deg0, sums0 = safe_rows[0]
    # node 3 is in client 0's closure and has contributors {0, 1}
    at3 = int(np.flatnonzero(rows == 3)[0])
    assert open_rows[0][1][at3] == 4.0          # true degree of node 3
    assert deg0[at3] == 1.0                     # client 0 sees only edge 2-3
    np.testing.assert_allclose(sums0[at3], g.features[2])
    # a node seen by one client only keeps its exact total
    at0 = int(np.flatnonzero(rows == 0)[0])
    assert deg0[at0] == open_rows[0][1][at0]


# ---------------------------------------------------------------------------
# client views
# ---------------------------------------------------------------------------

def client_probs(graph, part, k, hop, n_layers, weights, channel="plain"):
    views, _ = setup_federation(graph, part, hop, n_layers,
                                make_channel(channel, part.n_clients))
    return views[k], gcn_forward(views[k].a_layers, views[k].x_pre,
                                 weights).probs


def test_two_hop_two_layer_forward_matches_centralized():
    g = hand_graph()
    part = hand_partition()
    w = init_weights([4, 5, 2], seed=1)
    an = norm_rows(g.add_self_loops())
    full = gcn_forward([None, an], an @ g.features, w).probs
    for k in (0, 1):
        view, probs = client_probs(g, part, k, 2, 2, w)
        np.testing.assert_allclose(probs, full[view.nodes], atol=1e-12)


def test_one_hop_gives_exact_first_layer_rows():
    g = hand_graph()
    part = hand_partition()
    an = norm_rows(g.add_self_loops())
    views, _ = setup_federation(g, part, 1, 2, make_channel("plain", 2))
    for view in views:
        np.testing.assert_allclose(view.x_pre,
                                   (an @ g.features)[view.nodes], atol=1e-12)
        np.testing.assert_array_equal(view.input_rows, view.nodes)


def test_zero_hop_is_fully_local():
    g = hand_graph()
    part = hand_partition()
    gs = g.add_self_loops()
    views, stats = setup_federation(g, part, 0, 2, make_channel("plain", 2))
    assert stats.up.wire_bytes == 0 and stats.down.wire_bytes == 0
    for k, view in enumerate(views):
        own = part.nodes_of(k)
        a_loc = gs.to_csr().toarray()[np.ix_(own, own)]
        a_loc = a_loc / a_loc.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(view.x_pre, a_loc @ g.features[own],
                                   atol=1e-12)


def test_isolated_client_sees_no_difference_from_hops():
    """A client with no cross-client edges: the exchange adds nothing, so
    every hop setting produces the same forward output for it."""
    edges = [[0, 1], [1, 2], [3, 4], [4, 5], [3, 5]]
    g = Graph.from_edges(6, edges, np.random.default_rng(1).normal(size=(6, 3)),
                         np.array([0, 0, 0, 1, 1, 1]), 2)
    part = hand_partition()
    w = init_weights([3, 4, 2], seed=0)
    outs = [client_probs(g, part, 1, hop, 2, w)[1] for hop in (0, 1, 2)]
    np.testing.assert_allclose(outs[0], outs[1], atol=1e-12)
    np.testing.assert_allclose(outs[0], outs[2], atol=1e-12)


def test_build_view_validation():
    g = hand_graph().add_self_loops()
    part = hand_partition()
    with pytest.raises(ConfigError, match="exceeds"):
        build_client_view(g, part, 0, 2, 1)
    with pytest.raises(ConfigError, match="hops"):
        build_client_view(g, part, 0, 3, 3)
    rows = part.nodes_of(0)
    bad = (rows, np.zeros(len(rows)), np.zeros((len(rows), 4)))
    with pytest.raises(ProtocolError, match="degree"):
        build_client_view(g, part, 0, 1, 2, payload=bad)
    wrong_rows = (np.array([0, 1]), np.ones(2), np.ones((2, 4)))
    with pytest.raises(ProtocolError, match="own nodes"):
        build_client_view(g, part, 0, 1, 2, payload=wrong_rows)


def test_masks_map_to_local_indices():
    g = hand_graph()
    part = hand_partition()
    split = {"train": np.array([1, 4]), "val": np.array([2]),
             "test": np.array([5])}
    views, _ = setup_federation(g, part, 0, 2, make_channel("plain", 2), split)
    np.testing.assert_array_equal(views[0].masks["train"], [1])  # node 1
    np.testing.assert_array_equal(views[1].masks["train"], [1])  # node 4
    np.testing.assert_array_equal(views[1].masks["test"], [2])   # node 5


# ---------------------------------------------------------------------------
# byte accounting
# ---------------------------------------------------------------------------

def test_pretrain_byte_accounting_plain():
    g = hand_graph()
    part = hand_partition()
    gs = g.add_self_loops()
    views, stats = setup_federation(g, part, 1, 2, make_channel("plain", 2))
    up_records = sum(len(part.closure(gs, k, 1)) for k in range(2))
    assert stats.up.records == up_records
    assert stats.up.feature_elements == up_records * 4
    assert stats.up.wire_bytes == up_records * wire.record_bytes(5)
    assert stats.down.records == 6  # every client gets its own nodes
    _, stats2 = setup_federation(g, part, 2, 2, make_channel("plain", 2))
    assert stats2.down.records == stats2.up.records


def test_round_traffic_is_model_sized_and_frozen():
    """After round 0 every round moves the same model-sized payload,
    independent of graph density."""
    sparse = sbm_generate(SbmParams(60, 3, 0.05, 0.1, 4, 1.0), 0)
    dense = sbm_generate(SbmParams(60, 3, 0.6, 0.8, 4, 1.0), 0)
    split = make_split(sparse.labels, 5, 10, 10, seed=0)
    cfg = TrainConfig(rounds=3, local_steps=1)
    outs = []
    for g in (sparse, dense):
        part = Partition.create(g.labels, 3, 1.0, 0)
        outs.append(run_training(g, part, split, 2, ModelConfig(2, 8, 0.0),
                                 cfg, "plain", 0))
    n_params = 4 * 8 + 8 * 3
    expect = 3 * (wire.HEADER_BYTES + 8 * n_params)
    assert outs[0].round_up_bytes == outs[1].round_up_bytes == expect
    for r in outs[0].records:
        if r.round >= 1:
            assert r.up_bytes == wire.HEADER_BYTES + 8 * n_params


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def small_run(hop=2, channel="plain", seed=0, rounds=5, k=3, p=1.0,
              dropout=0.5, **train_kw):
    g = sbm_generate(SbmParams(90, 3, 0.1, 0.1, 5, 0.5), seed=4)
    split = make_split(g.labels, 8, 15, 20, seed=1)
    part = Partition.create(g.labels, k, p, seed=2)
    cfg = TrainConfig(rounds=rounds, **train_kw)
    return run_training(g, part, split, hop, ModelConfig(2, 8, dropout), cfg,
                        channel, seed)


def test_training_improves_over_initial():
    res = small_run(rounds=30)
    accs = res.metric_series("test_acc")
    assert accs[-1] > 0.6
    assert accs[-1] > accs[0]


def test_eval_cadence_and_final_round():
    res = small_run(rounds=7, eval_every=3)
    rounds = sorted({r.round for r in res.records})
    assert rounds == [0, 3, 6, 7]
    t_of = {r.round: r.t for r in res.records}
    assert t_of[6] == 18  # 3 local steps per round


def test_records_carry_all_clients():
    res = small_run(rounds=2, k=3)
    per_round = {}
    for r in res.records:
        per_round.setdefault(r.round, set()).add(r.client)
    assert all(v == {0, 1, 2} for v in per_round.values())


def test_masked_channel_tracks_plain_trajectory():
    plain = small_run(channel="plain", rounds=10)
    masked = small_run(channel="masked", rounds=10)
    for a, b in zip(plain.weights, masked.weights):
        assert np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1.0) < 1e-4
    # identical numerics between the two secure channels, bit for bit
    sized = small_run(channel="masked+sizemodel", rounds=10)
    for a, b in zip(masked.weights, sized.weights):
        np.testing.assert_array_equal(a, b)


def test_divergence_raises_with_history():
    with np.errstate(all="ignore"), pytest.raises(DivergenceError) as info:
        small_run(rounds=4, dropout=0.0, learning_rate=1e30)
    assert info.value.history  # round-0 records survive for postmortems


def test_weighting_modes_differ_on_unbalanced_clients():
    uniform = small_run(rounds=3, p=0.0, k=2, client_weighting="uniform")
    sized = small_run(rounds=3, p=0.0, k=2, client_weighting="by_train_size")
    assert any(np.any(a != b) for a, b in zip(uniform.weights, sized.weights))


def test_evaluate_raises_on_unowned_split():
    g = hand_graph()
    part = hand_partition()
    split = {"train": np.array([0, 3]), "val": np.array([1]),
             "test": np.zeros(0, dtype=np.int64)}
    views, _ = setup_federation(g, part, 0, 2, make_channel("plain", 2), split)
    w = init_weights([4, 8, 2], seed=0)
    assert 0.0 <= evaluate(views, w, "val") <= 1.0
    with pytest.raises(ConfigError, match="undefined"):
        evaluate(views, w, "test")


# ---------------------------------------------------------------------------
# aggregation rule
# ---------------------------------------------------------------------------

def test_aggregate_coefficient_average():
    wb = [np.zeros((2, 2))]
    cw = [[np.full((2, 2), 2.0)], [np.full((2, 2), 4.0)]]
    out = _aggregate(wb, cw, TrainConfig(), [0.5, 0.5])
    np.testing.assert_array_equal(out[0], 3.0)
    out = _aggregate(wb, cw, TrainConfig(), [0.25, 0.75])
    np.testing.assert_array_equal(out[0], 3.5)


def test_aggregate_single_client_is_bitwise_passthrough():
    w = [np.random.default_rng(0).standard_normal((3, 3))]
    out = _aggregate([np.zeros((3, 3))], [w], TrainConfig(), [1.0])
    np.testing.assert_array_equal(out[0], w[0])


def test_aggregate_damped_delta_form():
    wb = [np.ones((2, 2))]
    cw = [[np.full((2, 2), 3.0)]]
    out = _aggregate(wb, cw, TrainConfig(global_lr=0.5), [1.0])
    np.testing.assert_array_equal(out[0], 2.0)  # 1 + 0.5 * (3 - 1)


# ---------------------------------------------------------------------------
# centralized equivalence
# ---------------------------------------------------------------------------

def test_single_client_matches_centralized_bitwise():
    g = sbm_generate(SbmParams(70, 3, 0.1, 0.1, 5, 0.5), seed=9)
    split = make_split(g.labels, 6, 12, 15, seed=1)
    part = Partition(1, np.zeros(70, dtype=np.int64))
    cfg = TrainConfig(rounds=20, local_steps=1)
    model = ModelConfig(2, 8, 0.5)
    fed = run_training(g, part, split, 0, model, cfg, "plain", seed=5)
    central, _, _ = centralized_train(g, split, model, cfg, seed=5)
    for a, b in zip(fed.weights, central):
        np.testing.assert_array_equal(a, b)


def test_single_client_two_hop_matches_centralized_closely():
    g = sbm_generate(SbmParams(70, 3, 0.1, 0.1, 5, 0.5), seed=9)
    split = make_split(g.labels, 6, 12, 15, seed=1)
    part = Partition(1, np.zeros(70, dtype=np.int64))
    cfg = TrainConfig(rounds=10, local_steps=1)
    model = ModelConfig(2, 8, 0.0)
    fed = run_training(g, part, split, 2, model, cfg, "plain", seed=5)
    central, _, _ = centralized_train(g, split, model, cfg, seed=5)
    for a, b in zip(fed.weights, central):
        assert np.max(np.abs(a - b)) < 1e-12


# ---------------------------------------------------------------------------
# convergence time
# ---------------------------------------------------------------------------

def test_convergence_time_examples():
    assert convergence_time([0.5, 0.5]) == (2, True)
    assert convergence_time([0.0, 0.2, 0.4, 0.405]) == (4, True)
    assert convergence_time([0.0, 0.5, 1.0], tolerance=0.01) == (3, False)
    assert convergence_time([0.3]) == (1, False)
    assert convergence_time([]) == (0, False)
    assert convergence_time([0.1, 0.2, 0.21, 0.9], tolerance=0.05)[0] == 3
