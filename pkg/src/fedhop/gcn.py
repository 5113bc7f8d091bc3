"""Graph convolutional network in plain numpy.

A model of L layers computes

    H_0 = X
    Z_{l+1} = A_l @ drop(H_l) @ W_l        (drop only between layers, train mode)
    H_{l+1} = relu(Z_{l+1})                for l < L-1
    probs   = softmax(Z_L)

where each ``A_l`` may be a (possibly rectangular) sparse or dense matrix,
or ``None`` meaning identity.  ``None`` in the first slot supports the
pre-aggregated-input optimization: when X already equals ``A_0 @ X_raw``
the first propagation is skipped.

The cross-entropy loss averages over an explicit node mask and adds
``l2/2 * sum(||W_l||^2)``.  ``gcn_backward`` consumes the cache produced by
``gcn_forward`` so dropout masks are shared between the passes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass
class ModelConfig:
    n_layers: int = 2
    hidden_dim: int = 16
    dropout: float = 0.5

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must lie in [0, 1)")

    def layer_dims(self, in_dim, n_classes):
        return [in_dim] + [self.hidden_dim] * (self.n_layers - 1) + [n_classes]


def init_weights(layer_dims, seed):
    """Glorot-uniform weight matrices for consecutive dim pairs."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    ws = []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
    return ws


def flatten_weights(weights):
    return np.concatenate([w.ravel() for w in weights])


def unflatten_weights(flat, shapes):
    out, at = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        out.append(flat[at:at + size].reshape(shape))
        at += size
    if at != len(flat):
        raise ValueError(f"flat vector has {len(flat)} elements, shapes need {at}")
    return out


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ForwardCache:
    propagated: list          # P_l = A_l @ drop(H_l), input to W_l
    preacts: list             # Z_1 .. Z_L
    drop_masks: list          # multiplier applied to H_l (None if not applied)
    probs: np.ndarray
    a_layers: list
    weights: list


def gcn_forward(a_layers, x, weights, dropout=0.0, train=False, rng=None):
    """Run the network; returns a ForwardCache.

    ``a_layers`` has one entry per layer (None = identity).  Dropout with
    the given rate is applied to every hidden activation (never to the
    input X) when ``train`` is True, using inverted scaling so evaluation
    needs no rescale.
    """
    if len(a_layers) != len(weights):
        raise ValueError("need one adjacency slot per weight matrix")
    if train and dropout > 0.0 and rng is None:
        raise ValueError("training with dropout requires an rng")

    h = np.asarray(x, dtype=np.float64)
    propagated, preacts, drop_masks = [], [], []
    n_layers = len(weights)
    for l in range(n_layers):
        mask = None
        if l > 0 and train and dropout > 0.0:
            mask = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
            h = h * mask
        drop_masks.append(mask)
        p = h if a_layers[l] is None else a_layers[l] @ h
        z = p @ weights[l]
        propagated.append(p)
        preacts.append(z)
        h = np.maximum(z, 0.0) if l < n_layers - 1 else z
    return ForwardCache(propagated, preacts, drop_masks, _softmax(preacts[-1]),
                        list(a_layers), list(weights))


def xent_loss(cache: ForwardCache, labels, mask, l2=0.0):
    """Masked mean cross-entropy plus l2/2 * sum of squared weights."""
    mask = np.asarray(mask, dtype=np.int64)
    if len(mask) == 0:
        raise ValueError("loss mask is empty")
    picked = cache.probs[mask, np.asarray(labels)[mask]]
    loss = -np.mean(np.log(np.maximum(picked, 1e-300)))
    if l2 > 0.0:
        loss += 0.5 * l2 * sum(float(np.sum(w * w)) for w in cache.weights)
    return float(loss)


def gcn_backward(cache: ForwardCache, labels, mask, l2=0.0):
    """Gradients of ``xent_loss`` w.r.t. every weight matrix."""
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.int64)
    n_layers = len(cache.weights)

    g = cache.probs.copy()
    g[mask, labels[mask]] -= 1.0
    scale = np.zeros((g.shape[0], 1))
    scale[mask] = 1.0 / len(mask)
    g = g * scale

    grads = [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        dw = cache.propagated[l].T @ g
        if l2 > 0.0:
            dw = dw + l2 * cache.weights[l]
        grads[l] = dw
        if l == 0:
            break
        g = g @ cache.weights[l].T
        if cache.a_layers[l] is not None:
            g = cache.a_layers[l].T @ g
        if cache.drop_masks[l] is not None:
            g = g * cache.drop_masks[l]
        g = g * (cache.preacts[l - 1] > 0.0)
    return grads


def sgd_step(weights, grads, lr):
    return [w - lr * dg for w, dg in zip(weights, grads)]


def predict_labels(probs):
    return np.argmax(probs, axis=1)


def accuracy(probs, labels, mask):
    mask = np.asarray(mask, dtype=np.int64)
    if len(mask) == 0:
        return float("nan")
    return float(np.mean(predict_labels(probs)[mask] == np.asarray(labels)[mask]))


# ---------------------------------------------------------------------------
# checkpoints: one JSON header line, then raw little-endian float64 data
# ---------------------------------------------------------------------------

def save_weights(weights, path):
    header = {"schema_version": 1, "dtype": "<f8",
              "shapes": [list(w.shape) for w in weights]}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        for w in weights:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_weights(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("dtype") != "<f8":
            raise ValueError(f"unsupported checkpoint dtype {header.get('dtype')!r}")
        blob = fh.read()
    shapes = [tuple(s) for s in header["shapes"]]
    need = sum(int(np.prod(s)) for s in shapes) * 8
    if len(blob) != need:
        raise ValueError(f"checkpoint payload is {len(blob)} bytes, expected {need}")
    flat = np.frombuffer(blob, dtype="<f8")
    return unflatten_weights(flat.astype(np.float64), shapes)
