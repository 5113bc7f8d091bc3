"""Dataset directory I/O.

A dataset directory holds five files:

    edges.txt      one undirected edge per line: two whitespace-separated
                   node ids (0-based); each unordered pair appears once
    features.csv   one row per node, comma-separated floats
    labels.txt     one integer class id per node
    manifest.json  counts ({n_nodes, n_edges, feature_dim, n_classes}),
                   schema_version, and a SHA-256 digest of the graph
    split.json     {"train": [...], "val": [...], "test": [...]} disjoint
                   node-id lists

``load_dataset`` fails with a precise path/line location on malformed input
and raises ``IntegrityError`` when the manifest disagrees with the data.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import DatasetError, IntegrityError
from .graphs import Graph

SCHEMA_VERSION = 1
SPLIT_NAMES = ("train", "val", "test")


# ---------------------------------------------------------------------------
# reading
# ---------------------------------------------------------------------------

def _read_edges(path):
    edges = []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            s = line.strip()
            if not s:
                continue
            parts = s.split()
            if len(parts) != 2:
                raise DatasetError("expected two node ids", path=path, line=ln)
            try:
                edges.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise DatasetError(f"bad node id {parts!r}", path=path, line=ln)
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2)


def _read_features(path):
    rows = []
    width = None
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            s = line.strip()
            if not s:
                continue
            parts = s.split(",")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise DatasetError(
                    f"row has {len(parts)} columns, expected {width}",
                    path=path, line=ln)
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise DatasetError("non-numeric feature value", path=path, line=ln)
    if not rows:
        raise DatasetError("no feature rows", path=path)
    return np.asarray(rows, dtype=np.float64)


def _read_labels(path):
    vals = []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            s = line.strip()
            if not s:
                continue
            try:
                vals.append(int(s))
            except ValueError:
                raise DatasetError(f"bad label {s!r}", path=path, line=ln)
    return np.asarray(vals, dtype=np.int64)


def _read_split(path, n_nodes):
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise DatasetError(f"invalid JSON: {e}", path=path)
    split = {}
    seen = np.zeros(n_nodes, dtype=bool)
    for name in SPLIT_NAMES:
        if name not in raw:
            raise DatasetError(f"split.json missing {name!r} list", path=path)
        idx = np.asarray(raw[name], dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n_nodes):
            raise DatasetError(f"{name} split indices out of range", path=path)
        if np.any(seen[idx]):
            raise DatasetError(f"{name} split overlaps another split", path=path)
        seen[idx] = True
        split[name] = np.sort(idx)
    return split


def load_dataset(path):
    """Load a dataset directory; returns (Graph, split dict)."""
    if not os.path.isdir(path):
        raise DatasetError("not a dataset directory", path=path)

    def p(name):
        f = os.path.join(path, name)
        if not os.path.isfile(f):
            raise DatasetError(f"missing {name}", path=path)
        return f

    with open(p("manifest.json")) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as e:
            raise DatasetError(f"invalid JSON: {e}", path=os.path.join(path, "manifest.json"))
    for key in ("n_nodes", "n_edges", "feature_dim", "n_classes"):
        if key not in manifest:
            raise DatasetError(f"manifest missing {key!r}", path=path)

    edges = _read_edges(p("edges.txt"))
    features = _read_features(p("features.csv"))
    labels = _read_labels(p("labels.txt"))

    n = int(manifest["n_nodes"])
    if features.shape[0] != n:
        raise IntegrityError(
            f"manifest says {n} nodes, features.csv has {features.shape[0]} rows",
            path=path)
    if labels.shape[0] != n:
        raise IntegrityError(
            f"manifest says {n} nodes, labels.txt has {labels.shape[0]} entries",
            path=path)
    if features.shape[1] != int(manifest["feature_dim"]):
        raise IntegrityError("feature_dim mismatch with manifest", path=path)

    graph = Graph.from_edges(n, edges, features, labels, int(manifest["n_classes"]))
    if graph.n_edges != int(manifest["n_edges"]):
        raise IntegrityError(
            f"manifest says {manifest['n_edges']} edges, found {graph.n_edges}",
            path=path)
    if "digest" in manifest and manifest["digest"] != graph.digest():
        raise IntegrityError("graph digest mismatch with manifest", path=path)

    split = _read_split(p("split.json"), n)
    return graph, split


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------

def save_dataset(graph: Graph, split, path):
    """Write ``graph`` and ``split`` as a dataset directory."""
    os.makedirs(path, exist_ok=True)
    edges = graph.undirected_edges(include_loops=True)
    np.savetxt(os.path.join(path, "edges.txt"), edges, fmt="%d")
    np.savetxt(os.path.join(path, "features.csv"), graph.features,
               fmt="%.17g", delimiter=",")
    np.savetxt(os.path.join(path, "labels.txt"), graph.labels, fmt="%d")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "n_nodes": int(graph.n_nodes),
        "n_edges": int(graph.n_edges),
        "feature_dim": int(graph.feature_dim),
        "n_classes": int(graph.n_classes),
        "digest": graph.digest(),
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    out = {name: np.asarray(split[name], dtype=np.int64).tolist()
           for name in SPLIT_NAMES}
    with open(os.path.join(path, "split.json"), "w") as fh:
        json.dump(out, fh)
        fh.write("\n")


def make_split(labels, train_per_class, n_val, n_test, seed=None, order=None):
    """Return a {train, val, test} split over ``len(labels)`` nodes.

    Picks ``train_per_class`` nodes of each class, then ``n_val`` validation
    nodes, then ``n_test`` test nodes from the remainder.  With ``seed``
    given the candidate order is shuffled; otherwise ``order`` (default:
    node-id order) is used, which makes the split deterministic.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if order is None:
        order = np.arange(n)
    if seed is not None:
        order = np.random.default_rng(seed).permutation(n)
    taken = np.zeros(n, dtype=bool)
    train = []
    count = {c: 0 for c in np.unique(labels)}
    for i in order:
        if count[labels[i]] < train_per_class:
            train.append(i)
            count[labels[i]] += 1
            taken[i] = True
    rest = [i for i in order if not taken[i]]
    if len(rest) < n_val + n_test:
        raise ValueError(
            f"split needs {n_val + n_test} non-train nodes, only {len(rest)} left")
    val = rest[:n_val]
    test = rest[len(rest) - n_test:]
    return {
        "train": np.sort(np.asarray(train, dtype=np.int64)),
        "val": np.sort(np.asarray(val, dtype=np.int64)),
        "test": np.sort(np.asarray(test, dtype=np.int64)),
    }


# ---------------------------------------------------------------------------
# citation-corpus ingest (<id> <bag-of-words> <label> / <cited> <citing> files)
# ---------------------------------------------------------------------------

def ingest_content_cites(content_path, cites_path, out_dir,
                         train_per_class=20, n_val=500, n_test=1000):
    """Convert raw citation-corpus files into a dataset directory.

    ``content_path``: lines of ``<doc_id> <f_1> ... <f_d> <class_name>``.
    ``cites_path``: lines of ``<cited_id> <citing_id>``.  Documents keep
    file order; class names are sorted alphabetically to form class ids;
    citations touching unknown ids are dropped.  Returns (Graph, split).
    """
    ids, feats, names = [], [], []
    with open(content_path) as fh:
        for ln, line in enumerate(fh, start=1):
            parts = line.strip().split()
            if not parts:
                continue
            if len(parts) < 3:
                raise DatasetError("expected id, features, label",
                                   path=content_path, line=ln)
            ids.append(parts[0])
            try:
                feats.append([float(v) for v in parts[1:-1]])
            except ValueError:
                raise DatasetError("non-numeric feature", path=content_path, line=ln)
            names.append(parts[-1])
    index = {doc: i for i, doc in enumerate(ids)}
    classes = sorted(set(names))
    labels = np.asarray([classes.index(c) for c in names], dtype=np.int64)
    features = np.asarray(feats, dtype=np.float64)

    edges = []
    with open(cites_path) as fh:
        for ln, line in enumerate(fh, start=1):
            parts = line.strip().split()
            if not parts:
                continue
            if len(parts) != 2:
                raise DatasetError("expected two document ids",
                                   path=cites_path, line=ln)
            a, b = index.get(parts[0]), index.get(parts[1])
            if a is None or b is None or a == b:
                continue
            edges.append((a, b))

    graph = Graph.from_edges(len(ids), np.asarray(edges, dtype=np.int64),
                             features, labels, len(classes))
    split = make_split(labels, train_per_class, n_val, n_test)
    save_dataset(graph, split, out_dir)
    return graph, split
