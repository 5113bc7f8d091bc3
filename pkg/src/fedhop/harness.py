"""Experiment configuration and file-emitting runners.

A JSON experiment config fully determines a run; every emitted CSV row and
summary carries a short hash of the canonical config plus the seed, so any
number in an output file can be traced to the exact configuration that
produced it.

Output files per (config, seed):

    rounds.csv    one row per evaluated round per client:
                  round, t, client, loss, acc, val_acc, test_acc,
                  up_bytes, down_bytes, config_hash
    summary.json  final metrics, convergence round, byte totals, wall time
    weights.bin   final model checkpoint (JSON header + little-endian f64)
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import analysis
from .channels import CHANNELS, estimate_ciphertext_bytes
from .datasets import load_dataset, make_split, save_dataset
from .errors import ConfigError
from .federation import TrainConfig, convergence_time, run_training
from .gcn import ModelConfig, save_weights
from .graphs import SbmParams, sbm_generate
from .partition import Partition

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class DataConfig:
    kind: str = "sbm"               # "sbm" or "dir"
    path: str | None = None         # for kind="dir"
    n_nodes: int = 300              # sbm fields
    n_blocks: int = 3
    alpha: float = 0.1
    mu: float = 0.1
    feature_dim: int = 8
    noise: float = 1.0
    train_per_class: int = 20
    n_val: int = 60
    n_test: int = 100

    def __post_init__(self):
        if self.kind not in ("sbm", "dir"):
            raise ConfigError(f"data.kind must be 'sbm' or 'dir', got {self.kind!r}")
        if self.kind == "dir" and not self.path:
            raise ConfigError("data.kind='dir' requires data.path")

    def sbm_params(self):
        return SbmParams(self.n_nodes, self.n_blocks, self.alpha, self.mu,
                         self.feature_dim, self.noise)


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    n_clients: int = 3
    iid_fraction: float = 1.0
    hops: int = 2
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    channel: str = "plain"
    protect_exposed: bool = False
    seeds: list = field(default_factory=lambda: [0])

    def __post_init__(self):
        if self.n_clients < 1:
            raise ConfigError("n_clients must be >= 1")
        if not (0.0 <= self.iid_fraction <= 1.0):
            raise ConfigError("iid_fraction must lie in [0, 1]")
        if self.hops not in (0, 1, 2):
            raise ConfigError("hops must be 0, 1 or 2")
        if self.hops > self.model.n_layers:
            raise ConfigError(
                f"hops={self.hops} exceeds model depth {self.model.n_layers}")
        if self.channel not in CHANNELS:
            raise ConfigError(
                f"unknown channel {self.channel!r}; choose from {sorted(CHANNELS)}")
        if not self.seeds or any(int(s) != s for s in self.seeds):
            raise ConfigError("seeds must be a nonempty list of integers")
        self.seeds = [int(s) for s in self.seeds]

    # -- serialization ------------------------------------------------------

    @staticmethod
    def from_dict(doc):
        doc = dict(doc)
        try:
            data = DataConfig(**doc.pop("data", {}))
            model = ModelConfig(**doc.pop("model", {}))
            training = TrainConfig(**doc.pop("training", {}))
            return ExperimentConfig(data=data, model=model, training=training,
                                    **doc)
        except TypeError as e:
            raise ConfigError(str(e))
        except ValueError as e:
            raise ConfigError(str(e))

    @staticmethod
    def load(path):
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON: {e}")
        return ExperimentConfig.from_dict(doc)

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


# ---------------------------------------------------------------------------
# data materialization
# ---------------------------------------------------------------------------

def materialize(cfg: ExperimentConfig, seed):
    """(graph, split) for one seed; directory datasets ignore the seed."""
    if cfg.data.kind == "dir":
        return load_dataset(cfg.data.path)
    graph = sbm_generate(cfg.data.sbm_params(), seed)
    order = np.random.default_rng([seed, 2]).permutation(graph.n_nodes)
    split = make_split(graph.labels, cfg.data.train_per_class,
                       cfg.data.n_val, cfg.data.n_test, order=order)
    return graph, split


# ---------------------------------------------------------------------------
# single runs and seed groups
# ---------------------------------------------------------------------------

def _atomic_write(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_rounds_csv(path, records, config_hash):
    from .federation import RoundRecord

    buf = []
    w = csv.writer(_ListIO(buf))
    w.writerow(list(RoundRecord.FIELDS) + ["config_hash"])
    for r in records:
        w.writerow([repr(v) if isinstance(v, float) else v
                    for v in r.row()] + [config_hash])
    _atomic_write(path, "".join(buf))


class _ListIO:
    def __init__(self, buf):
        self.buf = buf

    def write(self, s):
        self.buf.append(s)


def run_experiment(cfg: ExperimentConfig, seed, out_dir=None):
    """Train once; optionally write rounds.csv/summary.json/weights.bin."""
    graph, split = materialize(cfg, seed)
    part = Partition.create(graph.labels, cfg.n_clients, cfg.iid_fraction,
                            seed)
    started = time.perf_counter()
    result = run_training(graph, part, split, cfg.hops, cfg.model,
                          cfg.training, cfg.channel, seed,
                          protect_exposed=cfg.protect_exposed)
    wall = time.perf_counter() - started

    test_series = result.metric_series("test_acc")[1:]   # rounds >= 1
    val_series = result.metric_series("val_acc")[1:]
    # convergence is defined on the validation-accuracy series
    conv_round, converged = convergence_time(val_series)
    chash = cfg.config_hash()
    summary = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": chash,
        "seed": int(seed),
        "n_clients": cfg.n_clients,
        "centralized_equivalent": cfg.n_clients == 1,
        "hops": cfg.hops,
        "iid_fraction": cfg.iid_fraction,
        "channel": cfg.channel,
        "final_train_acc": result.metric_series("acc")[-1],
        "final_val_acc": val_series[-1] if val_series else float("nan"),
        "final_test_acc": test_series[-1] if test_series else float("nan"),
        "best_val_round": (int(np.nanargmax(val_series)) + 1
                           if val_series and not all(np.isnan(val_series))
                           else 0),
        "convergence_round": conv_round,
        "converged": converged,
        "evaluated_rounds": len(test_series),
        "pretrain_up_bytes": result.pretrain.up.wire_bytes,
        "pretrain_down_bytes": result.pretrain.down.wire_bytes,
        "pretrain_up_feature_elements": result.pretrain.up.feature_elements,
        "pretrain_down_feature_elements": result.pretrain.down.feature_elements,
        "round_up_bytes": result.round_up_bytes,
        "round_down_bytes": result.round_down_bytes,
        "wall_time_s": wall,
        "config": cfg.to_dict(),
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_rounds_csv(os.path.join(out_dir, "rounds.csv"),
                         result.records, chash)
        _atomic_write(os.path.join(out_dir, "summary.json"),
                      json.dumps(summary, indent=2, sort_keys=True) + "\n")
        save_weights(result.weights, os.path.join(out_dir, "weights.bin"))
    return summary, result


def run_seed_group(cfg: ExperimentConfig, out_dir):
    """Run every configured seed into out_dir/seed-<s>/ plus a roll-up."""
    os.makedirs(out_dir, exist_ok=True)
    summaries = []
    for seed in cfg.seeds:
        summary, _ = run_experiment(cfg, seed,
                                    os.path.join(out_dir, f"seed-{seed}"))
        summaries.append(summary)
    agg = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": cfg.config_hash(),
        "seeds": cfg.seeds,
        "mean_final_test_acc": float(np.mean(
            [s["final_test_acc"] for s in summaries])),
        "std_final_test_acc": float(np.std(
            [s["final_test_acc"] for s in summaries])),
        "mean_final_val_acc": float(np.mean(
            [s["final_val_acc"] for s in summaries])),
        "mean_convergence_round": float(np.mean(
            [s["convergence_round"] for s in summaries])),
        "config": cfg.to_dict(),
    }
    _atomic_write(os.path.join(out_dir, "summary.json"),
                  json.dumps(agg, indent=2, sort_keys=True) + "\n")
    return agg, summaries


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def run_analyze(cfg: ExperimentConfig, out_dir, iid_fractions=(0.0, 0.5, 1.0)):
    """Closed-form bound and communication tables with measured companions.

    Requires block-model data (closed forms need alpha/mu).  Writes
    bounds.csv and comm.csv into out_dir.
    """
    if cfg.data.kind != "sbm":
        raise ConfigError("analyze needs data.kind='sbm' for closed forms")
    if cfg.data.n_blocks != cfg.n_clients:
        raise ConfigError(
            "analyze closed forms assume one block per client; got "
            f"{cfg.data.n_blocks} blocks for {cfg.n_clients} clients")
    os.makedirs(out_dir, exist_ok=True)
    params = cfg.data.sbm_params()
    chash = cfg.config_hash()

    rows = analysis.bound_table(params, cfg.n_clients, iid_fractions,
                                cfg.seeds, noise="label")
    buf = []
    w = csv.writer(_ListIO(buf))
    w.writerow(["hop", "iid_fraction", "expected_bound", "valid", "mean_gap",
                "max_gap", "c_alpha", "c_mu", "sigma", "config_hash"])
    for r in rows:
        w.writerow([r.hop, r.iid_fraction, repr(r.expected_bound),
                    int(r.valid), repr(r.mean_gap), repr(r.max_gap),
                    repr(r.c_alpha), repr(r.c_mu), repr(r.sigma), chash])
    _atomic_write(os.path.join(out_dir, "bounds.csv"), "".join(buf))

    buf = []
    w = csv.writer(_ListIO(buf))
    w.writerow(["hop", "iid_fraction", "form", "expected_up", "expected_down",
                "measured_up", "measured_down", "ratio_up", "config_hash"])
    comm_rows = []
    for p in iid_fractions:
        graphs = [sbm_generate(params, s) for s in cfg.seeds]
        parts = [Partition.create(g.labels, cfg.n_clients, p, s)
                 for g, s in zip(graphs, cfg.seeds)]
        for hop in (0, 1, 2):
            measured_pairs = [analysis.measured_comm_elements(g, part, hop)
                              for g, part in zip(graphs, parts)]
            measured = np.mean([m["up"] for m in measured_pairs])
            measured_down = np.mean([m["down"] for m in measured_pairs])
            for form in ("exact", "approx"):
                exp = analysis.expected_comm_elements(
                    params.n_nodes, cfg.n_clients, params.feature_dim,
                    params.alpha, params.mu, p, hop, form=form)
                ratio = (measured / exp["up"]) if exp["up"] else 1.0
                row = [hop, p, form, repr(exp["up"]), repr(exp["down"]),
                       repr(float(measured)), repr(float(measured_down)),
                       repr(float(ratio)), chash]
                w.writerow(row)
                comm_rows.append(row)
    _atomic_write(os.path.join(out_dir, "comm.csv"), "".join(buf))
    return rows, comm_rows


# ---------------------------------------------------------------------------
# channel bench
# ---------------------------------------------------------------------------

BENCH_SCHEMES = ("plain-bool", "bgv-packed", "plain-int64", "ckks", "bgv")


def run_bench_channel(out_dir, sizes=(1_000, 10_000, 100_000, 1_000_000),
                      n_clients=4, mask_elements=200_000, seed=0):
    """Tabulate modeled wire sizes per scheme and time the masked reduce."""
    from .channels import MaskedChannel

    os.makedirs(out_dir, exist_ok=True)
    buf = []
    w = csv.writer(_ListIO(buf))
    w.writerow(["n_values", "scheme", "packed", "wire_bytes"])
    table = []
    for n in sizes:
        for scheme in BENCH_SCHEMES:
            packed = scheme == "bgv-packed"
            base = "bgv" if packed else scheme
            nbytes = estimate_ciphertext_bytes(n, base, packed=packed)
            w.writerow([n, scheme, packed, nbytes])
            table.append((n, scheme, packed, nbytes))
    _atomic_write(os.path.join(out_dir, "channel_bench.csv"), "".join(buf))

    ch = MaskedChannel(n_clients, session_seed=seed)
    rng = np.random.default_rng(seed)
    vectors = [rng.standard_normal(mask_elements) for _ in range(n_clients)]
    started = time.perf_counter()
    payloads = [ch.client_payload(v, k, (1,)) for k, v in enumerate(vectors)]
    total = ch.reduce(payloads, (1,))
    elapsed = time.perf_counter() - started
    err = float(np.max(np.abs(total - np.sum(vectors, axis=0))))
    timing = {
        "n_clients": n_clients,
        "elements": mask_elements,
        "mask_reduce_s": elapsed,
        "elements_per_s": mask_elements * n_clients / elapsed,
        "max_abs_error": err,
    }
    _atomic_write(os.path.join(out_dir, "channel_timing.json"),
                  json.dumps(timing, indent=2) + "\n")
    return table, timing


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _sweep_point(args):
    cfg_doc, p, hop, seed = args
    cfg = ExperimentConfig.from_dict(cfg_doc)
    cfg.iid_fraction = p
    cfg.hops = hop
    summary, _ = run_experiment(cfg, seed)
    return {
        "iid_fraction": p, "hops": hop, "seed": seed,
        "final_test_acc": summary["final_test_acc"],
        "final_val_acc": summary["final_val_acc"],
        "convergence_round": summary["convergence_round"],
        "converged": summary["converged"],
        "pretrain_up_bytes": summary["pretrain_up_bytes"],
        "pretrain_down_bytes": summary["pretrain_down_bytes"],
        "round_up_bytes": summary["round_up_bytes"],
        "config_hash": summary["config_hash"],
    }


SWEEP_FIELDS = ("iid_fraction", "hops", "seed", "final_test_acc",
                "final_val_acc", "convergence_round", "converged",
                "pretrain_up_bytes", "pretrain_down_bytes",
                "round_up_bytes", "config_hash")


def run_sweep(cfg: ExperimentConfig, out_dir, iid_fractions, hops_list,
              workers=None):
    """Independent grid of (iid_fraction, hops, seed) points.

    Each point runs in a worker process and lands in out_dir/points/ as its
    own JSON (written atomically); the roll-up sweep.csv merges them.
    """
    points_dir = os.path.join(out_dir, "points")
    os.makedirs(points_dir, exist_ok=True)
    base = cfg.to_dict()
    tasks = [(base, float(p), int(h), int(s))
             for p in iid_fractions for h in hops_list for s in cfg.seeds]
    results = []
    if workers is None:
        workers = min(len(tasks), os.cpu_count() or 1)
    if workers <= 1:
        for t in tasks:
            results.append(_sweep_point(t))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_point, tasks))
    for r in results:
        name = f"p{r['iid_fraction']:g}_h{r['hops']}_s{r['seed']}.json"
        _atomic_write(os.path.join(points_dir, name),
                      json.dumps(r, indent=2, sort_keys=True) + "\n")
    buf = []
    w = csv.writer(_ListIO(buf))
    w.writerow(SWEEP_FIELDS)
    for r in sorted(results, key=lambda r: (r["iid_fraction"], r["hops"],
                                            r["seed"])):
        w.writerow([r[k] for k in SWEEP_FIELDS])
    _atomic_write(os.path.join(out_dir, "sweep.csv"), "".join(buf))
    return results


# ---------------------------------------------------------------------------
# generate / partition entry points
# ---------------------------------------------------------------------------

def run_generate(cfg: ExperimentConfig, out_dir, seed=None):
    if cfg.data.kind != "sbm":
        raise ConfigError("generate needs data.kind='sbm'")
    seed = cfg.seeds[0] if seed is None else int(seed)
    graph, split = materialize(cfg, seed)
    save_dataset(graph, split, out_dir)
    return graph, split


def run_partition(data_dir, n_clients, iid_fraction, seed, out_path):
    graph, _ = load_dataset(data_dir)
    part = Partition.create(graph.labels, n_clients, iid_fraction, seed)
    internal, cross = part.edge_counts(graph.add_self_loops())
    part.save(out_path, extra={
        "iid_fraction": float(iid_fraction),
        "seed": int(seed),
        "sizes": part.sizes().tolist(),
        "internal_edges": internal.tolist(),
        "cross_edges": cross.tolist(),
    })
    return part
