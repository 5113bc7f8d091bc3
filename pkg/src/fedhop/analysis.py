"""Closed-form analysis: gradient-gap norms, block-model expectations,
communication costs, and the convergence bound.

All adjacency-dependent quantities here use the raw 0/1 adjacency plus
self-loops (not the row-normalized operator), matching the quantities the
expectations are derived for.  ``K`` below is the number of clients, ``M``
the number of blocks/classes, ``p`` the i.i.d. fraction of the partition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .graphs import Graph
from .partition import Partition

HOPS = (0, 1, 2)


# ---------------------------------------------------------------------------
# instance-level gradient gap
# ---------------------------------------------------------------------------

def client_gap_matrix(graph: Graph, part: Partition, k, hop):
    """M_h for client k: the client-computable quintic-form factor.

    hop=0: A_k A_k X_k on the local subgraph; hop=1: A_k (A_k. X_1hop);
    hop=2: A_k. (A_.. X_2hop), which equals the client's rows of the
    centralized A A X.  A carries self-loops, unnormalized.
    """
    graph_sl = graph.add_self_loops()
    a = graph_sl.to_csr()
    x = graph_sl.features
    own = part.nodes_of(k)
    if hop == 0:
        a_loc = a[own][:, own]
        return np.asarray(a_loc @ (a_loc @ x[own]))
    n1 = part.closure(graph_sl, k, 1)
    if hop == 1:
        inner = a[own][:, n1] @ x[n1]
        return np.asarray(a[own][:, own] @ inner)
    if hop == 2:
        n2 = part.closure(graph_sl, k, 2)
        inner = a[n1][:, n2] @ x[n2]
        return np.asarray(a[own][:, n1] @ inner)
    raise ConfigError(f"hop must be one of {HOPS}, got {hop}")


def gradient_gap(graph: Graph, part: Partition, hop, scaled=True):
    """Frobenius gap per client between local and centralized quintic forms.

    Returns an array of ||K * M_k^T M_k - M^T M||_F (the K factor dropped
    when ``scaled`` is False), where M = A A X on the full graph.
    """
    graph_sl = graph.add_self_loops()
    a = graph_sl.to_csr()
    m_full = np.asarray(a @ (a @ graph_sl.features))
    ref = m_full.T @ m_full
    factor = float(part.n_clients) if scaled else 1.0
    gaps = []
    for k in range(part.n_clients):
        mk = client_gap_matrix(graph, part, k, hop)
        gaps.append(float(np.linalg.norm(factor * (mk.T @ mk) - ref)))
    return np.asarray(gaps)


# ---------------------------------------------------------------------------
# block-model expectations
# ---------------------------------------------------------------------------

def caption_constants(n_nodes, n_clients, alpha, mu):
    """(c_alpha, c_mu): expected within-class and cross-class neighbor mass
    per client under the balanced block model."""
    n, k = float(n_nodes), float(n_clients)
    c_alpha = (1.0 - mu) * alpha * n * (k - 1.0) / k ** 2
    c_mu = mu * alpha * n * (k - 1.0) / k
    return c_alpha, c_mu


def neighbor_growth(n_nodes, n_clients, alpha, mu, iid_fraction):
    """1 + c_alpha * p + c_mu: expected one-hop closure growth factor."""
    c_alpha, c_mu = caption_constants(n_nodes, n_clients, alpha, mu)
    return 1.0 + c_alpha * iid_fraction + c_mu


def b4_norm(n_blocks, alpha, mu):
    """Frobenius norm of B^4 for the two-parameter block matrix."""
    lam1 = alpha * (1.0 + mu * (n_blocks - 1))
    lam2 = alpha * (1.0 - mu)
    return math.sqrt(lam1 ** 8 + (n_blocks - 1) * lam2 ** 8)


_HOP_EXPONENT = {0: 0, 1: 2, 2: 6}


def expected_gap_bound(n_nodes, n_clients, alpha, mu, iid_fraction, hop,
                       noise=0.0, literal_noise_scaling=False, n_blocks=None):
    """Closed-form expectation bound on the squared-gap driver.

    The hop-h cell is (1 - growth^m_h / K^4) * (N^5 / K^5) * ||B^4||_F with
    m_0=0, m_1=2, m_2=6 and growth = 1 + c_alpha*p + c_mu, plus a feature-
    noise term that vanishes for a fully i.i.d. partition.  The noise term
    scales with (1-p) by default so the p=1 column reduces exactly to the
    i.i.d. one; ``literal_noise_scaling`` switches to the raw column forms
    (sigma at p=0, p*sigma in between, nothing at p=1).

    Returns ``(value, valid)`` where ``valid`` is False once growth^m_h
    exceeds K^4 and the leading factor goes negative; the value is still
    returned so callers can report it, but order comparisons against other
    cells are only meaningful where the flag is True.
    """
    if hop not in _HOP_EXPONENT:
        raise ConfigError(f"hop must be one of {HOPS}, got {hop}")
    if not (0.0 <= iid_fraction <= 1.0):
        raise ConfigError("iid_fraction must lie in [0, 1]")
    n, k = float(n_nodes), float(n_clients)
    growth = neighbor_growth(n_nodes, n_clients, alpha, mu, iid_fraction)
    ratio = growth ** _HOP_EXPONENT[hop] / k ** 4
    blocks = n_clients if n_blocks is None else n_blocks
    core = (1.0 - ratio) * n ** 5 / k ** 5 * b4_norm(blocks, alpha, mu)
    if literal_noise_scaling:
        if iid_fraction == 0.0:
            noise_term = noise
        elif iid_fraction < 1.0:
            noise_term = iid_fraction * noise
        else:
            noise_term = 0.0
    else:
        noise_term = (1.0 - iid_fraction) * noise
    return core + noise_term, ratio <= 1.0


def label_noise_sigma(labels, part: Partition, alpha, mu, n_blocks=None):
    """Feature-noise proxy: how far client label histograms sit from uniform.

    Mean over clients of ||diag(freq_k) - diag(1/M, ..., 1/M)||_F, scaled by
    N^5/K^5 * ||B^4||_F so it is commensurate with the expectation-bound
    cells it is added to.  Reported separately from the bound so alternative
    proxies can be compared.
    """
    labels = np.asarray(labels)
    m = int(labels.max()) + 1 if n_blocks is None else int(n_blocks)
    n, k = labels.size, part.n_clients
    base = float(n) ** 5 / float(k) ** 5 * b4_norm(m, alpha, mu)
    dists = []
    for c in range(k):
        own = part.nodes_of(c)
        if own.size == 0:
            continue
        freq = np.bincount(labels[own], minlength=m) / own.size
        dists.append(np.linalg.norm(freq - 1.0 / m))
    return float(np.mean(dists)) * base if dists else 0.0


def convergence_bound(gap_norm, tau, eta_local, eta_global, lam, rounds,
                      f_gap, minibatch=1.0):
    """Stationarity bound after T rounds of tau local steps.

    Returns (bound, valid) where bound = f_gap / (b eta_g eta_l tau T)
    + 15 tau^2 eta_l^2 lam^2 / b * gap^2 and ``valid`` records whether the
    step sizes satisfy eta_g <= 1/(8 tau lam) and eta_g eta_l <= 1/(tau lam).
    """
    if tau < 1 or rounds < 1:
        raise ConfigError("tau and rounds must be >= 1")
    if min(eta_local, eta_global, lam, minibatch) <= 0:
        raise ConfigError("step sizes, lam and minibatch must be positive")
    drift = f_gap / (minibatch * eta_global * eta_local * tau * rounds)
    variance = 15.0 * tau ** 2 * eta_local ** 2 * lam ** 2 / minibatch
    valid = (eta_global <= 1.0 / (8.0 * tau * lam) + 1e-12
             and eta_global * eta_local <= 1.0 / (tau * lam) + 1e-12)
    return drift + variance * float(gap_norm) ** 2, valid


# ---------------------------------------------------------------------------
# communication costs
# ---------------------------------------------------------------------------

def contact_probability(n_nodes, n_clients, alpha, mu, iid_fraction):
    """Probability that a generic foreign client holds >= 1 neighbor of a node.

    "Generic" means a client whose home label differs from the node's: it
    holds n*p/K^2 same-block nodes and n*(K-p)/K^2 other-block nodes in
    expectation.  Exact for the two endpoint partitions (p=0 and p=1).
    """
    n, k, p = float(n_nodes), float(n_clients), float(iid_fraction)
    same = (1.0 - alpha) ** (n * p / k ** 2)
    other = (1.0 - mu * alpha) ** (n * (k - p) / k ** 2)
    return 1.0 - same * other


def _home_contact(n_nodes, n_clients, alpha, mu, iid_fraction):
    """Contact probability for the client whose home label matches the node.

    At intermediate mixing a drifted node's home-label client still holds
    (n/K)(1-p+p/K) same-block nodes, far more than a generic foreign client,
    so its contact probability must be modeled separately.
    """
    n, k, p = float(n_nodes), float(n_clients), float(iid_fraction)
    same = (1.0 - alpha) ** ((n / k) * (1.0 - p + p / k))
    other = (1.0 - mu * alpha) ** (n * p * (k - 1.0) / k ** 2)
    return 1.0 - same * other


def _mean_contributors(n_nodes, n_clients, alpha, mu, iid_fraction):
    """Expected clients contributing a partial sum for one node (incl. owner).

    A node drifts away from its home-label client with probability
    p(1-1/K); each of the K-1 label-foreign clients misses it with
    probability 1-p/K.  Whoever does not own it contributes only on contact.
    """
    k, p = float(n_clients), float(iid_fraction)
    c_home = _home_contact(n_nodes, n_clients, alpha, mu, iid_fraction)
    c_foreign = contact_probability(n_nodes, n_clients, alpha, mu,
                                    iid_fraction)
    return (1.0 + p * (1.0 - 1.0 / k) * c_home
            + (k - 1.0) * (1.0 - p / k) * c_foreign)


def expected_comm_elements(n_nodes, n_clients, feature_dim, alpha, mu,
                           iid_fraction, hop, form="exact"):
    """Expected pre-training feature elements moved, by direction.

    Upload counts one d-vector per (node, contributing client); download is
    N*d for hops=1 and mirrors the upload for hops=2 (each client receives
    back exactly the rows it contributed to).  ``form="approx"`` replaces
    the exact per-node contributor count with the first-order
    1 + c_alpha*p + c_mu growth factor.
    """
    if hop not in HOPS:
        raise ConfigError(f"hop must be one of {HOPS}, got {hop}")
    n, k, d = float(n_nodes), float(n_clients), float(feature_dim)
    if hop == 0:
        return {"up": 0.0, "down": 0.0, "total": 0.0}
    if form == "exact":
        per_node = _mean_contributors(n_nodes, n_clients, alpha, mu,
                                      iid_fraction)
    elif form == "approx":
        per_node = neighbor_growth(n_nodes, n_clients, alpha, mu, iid_fraction)
    else:
        raise ConfigError(f"form must be 'exact' or 'approx', got {form!r}")
    up = n * per_node * d
    down = n * d if hop == 1 else up
    return {"up": up, "down": down, "total": up + down}


def measured_comm_elements(graph: Graph, part: Partition, hop):
    """Feature elements actually moved for one graph/partition instance."""
    graph_sl = graph.add_self_loops()
    d = graph_sl.feature_dim
    if hop == 0:
        return {"up": 0, "down": 0, "total": 0}
    up_records = 0
    for k in range(part.n_clients):
        up_records += len(part.closure(graph_sl, k, 1))
    down_records = graph_sl.n_nodes if hop == 1 else up_records
    return {"up": up_records * d, "down": down_records * d,
            "total": (up_records + down_records) * d}


def expected_closure_size(n_nodes, n_clients, alpha, mu, iid_fraction=1.0,
                          hop=1, form="exact"):
    """Expected |h-hop closure| of one client's node set.

    The exact one-hop form counts the client's own N/K nodes plus every
    absent node weighted by its contact probability (home-label drifters and
    label-foreign nodes contact at different rates); the approximate form
    multiplies N/K by the growth factor.  Two-hop squares the growth factor
    (a branching approximation, not truncated at N).
    """
    n, k = float(n_nodes), float(n_clients)
    if form == "exact":
        one_hop = n / k * _mean_contributors(n_nodes, n_clients, alpha, mu,
                                             iid_fraction)
        growth = one_hop / (n / k)
    elif form == "approx":
        growth = neighbor_growth(n_nodes, n_clients, alpha, mu, iid_fraction)
        one_hop = n / k * growth
    else:
        raise ConfigError(f"form must be 'exact' or 'approx', got {form!r}")
    if hop == 0:
        return n / k
    if hop == 1:
        return one_hop
    if hop == 2:
        return n / k * growth ** 2
    raise ConfigError(f"hop must be one of {HOPS}, got {hop}")


# ---------------------------------------------------------------------------
# report rows
# ---------------------------------------------------------------------------

@dataclass
class BoundRow:
    hop: int
    iid_fraction: float
    expected_bound: float
    valid: bool
    mean_gap: float
    max_gap: float
    c_alpha: float
    c_mu: float
    sigma: float


def bound_table(graph_params, n_clients, iid_fractions, seeds, noise=0.0,
                graph_factory=None, partition_factory=None):
    """Expected bounds next to measured mean/max gaps over sampled graphs.

    ``noise`` is either a number (used verbatim as sigma for every row) or
    the string "label", which computes the label-histogram proxy from the
    sampled partitions.  ``graph_factory(seed)`` and
    ``partition_factory(graph, p, seed)`` allow callers to control sampling;
    defaults draw from the block model with ``graph_params`` (an SbmParams)
    and the standard partition rule.
    """
    from .graphs import sbm_generate

    if graph_factory is None:
        graph_factory = lambda seed: sbm_generate(graph_params, seed)
    if partition_factory is None:
        partition_factory = lambda g, p, seed: Partition.create(
            g.labels, n_clients, p, seed)
    c_alpha, c_mu = caption_constants(graph_params.n_nodes, n_clients,
                                      graph_params.alpha, graph_params.mu)
    rows = []
    for p in iid_fractions:
        for hop in HOPS:
            gaps = []
            sigmas = []
            for seed in seeds:
                g = graph_factory(seed)
                part = partition_factory(g, p, seed)
                gaps.extend(gradient_gap(g, part, hop))
                if noise == "label":
                    sigmas.append(label_noise_sigma(
                        g.labels, part, graph_params.alpha, graph_params.mu))
            sigma = float(np.mean(sigmas)) if noise == "label" else float(noise)
            bound, valid = expected_gap_bound(
                graph_params.n_nodes, n_clients, graph_params.alpha,
                graph_params.mu, p, hop, noise=sigma)
            rows.append(BoundRow(hop, p, bound, valid, float(np.mean(gaps)),
                                 float(np.max(gaps)), c_alpha, c_mu, sigma))
    return rows
