"""Aggregation channels: plaintext, additively masked, and size-modeled.

The pre-training exchange sums per-node feature payloads across clients.
Three channel realizations share one interface:

    plain             float64 summation, wire = 8 bytes/element
    masked            fixed-point encoding into the 2^64 ring plus pairwise
                      additive masks that cancel over the full client set;
                      the server only ever sees masked residues
    masked+sizemodel  identical numerics to ``masked``; wire sizes priced
                      by a homomorphic-ciphertext size model instead of raw
                      residue bytes

Model-update aggregation is exact in every channel (updates are float
vectors; the integer-ring masking applies to the fixed-point feature
payloads) but is priced by the channel's cost model, so secure channels
account for ciphertext overhead on both phases.

Masks are derived per ordered client pair and context tag from a session
seed, so each aggregation round uses fresh one-time pads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# ---------------------------------------------------------------------------
# fixed-point codec
# ---------------------------------------------------------------------------

_RING_BITS = 64


@dataclass(frozen=True)
class FixedPointCodec:
    """Two's-complement fixed-point map between floats and the 2^64 ring.

    ``encode`` multiplies by 2^scale_bits and rounds to nearest; values are
    exact whenever they sit on the grid (integers need scale headroom of
    ``scale_bits`` bits).  Quantization error is at most 2^-(scale_bits+1)
    per element.
    """

    scale_bits: int = 20

    def __post_init__(self):
        if not (0 <= self.scale_bits < _RING_BITS - 1):
            raise ValueError("scale_bits must lie in [0, 63)")

    @property
    def scale(self):
        return float(2 ** self.scale_bits)

    def encode(self, values):
        values = np.asarray(values, dtype=np.float64)
        scaled = np.rint(values * self.scale)
        if np.any(~np.isfinite(scaled)) or np.any(np.abs(scaled) >= 2.0 ** 63):
            raise ValueError(
                f"value out of fixed-point range at scale_bits={self.scale_bits}")
        return scaled.astype(np.int64).view(np.uint64)

    def decode(self, ring_values):
        signed = np.asarray(ring_values, dtype=np.uint64).view(np.int64)
        return signed.astype(np.float64) / self.scale

    def quantize(self, values):
        """Round floats onto the codec grid (encode then decode)."""
        return self.decode(self.encode(values))


# ---------------------------------------------------------------------------
# boolean packing
# ---------------------------------------------------------------------------

def pack_bools(bits):
    """Pack a boolean vector into uint64 words, 64 flags per word."""
    bits = np.asarray(bits, dtype=bool)
    packed = np.packbits(bits, bitorder="little")
    pad = (-len(packed)) % 8
    if pad:
        packed = np.concatenate([packed, np.zeros(pad, dtype=np.uint8)])
    return packed.view(np.uint64)


def unpack_bools(words, n):
    """Recover ``n`` flags from uint64 words; raises if n exceeds capacity."""
    words = np.asarray(words, dtype=np.uint64)
    if n < 0 or n > 64 * len(words):
        raise ValueError(f"cannot unpack {n} flags from {len(words)} words")
    bits = np.unpackbits(words.view(np.uint8), bitorder="little")
    return bits[:n].astype(bool)


# ---------------------------------------------------------------------------
# ciphertext size model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SizeModel:
    """Wire cost of one lattice ciphertext and how many values it carries."""

    bytes_per_ct: float
    slots: int

    def __post_init__(self):
        if self.bytes_per_ct <= 0 or self.slots < 1:
            raise ValueError("bytes_per_ct must be positive and slots >= 1")

    def bytes_for(self, n_slots_needed):
        return int(math.ceil(n_slots_needed / self.slots) * self.bytes_per_ct)


#: modeled lattice schemes: integer slots (bgv), approximate slots (ckks)
SIZE_MODEL = {
    "bgv": SizeModel(bytes_per_ct=398_000.0, slots=4096),
    "ckks": SizeModel(bytes_per_ct=266_000.0, slots=4096),
}


def estimate_ciphertext_bytes(n_values, scheme, packed=False):
    """Wire bytes for ``n_values`` values under a transport scheme.

    ``scheme`` is ``plain-bool`` (1 byte/value, a serialized boolean array),
    ``plain-int64``/``plain-f64`` (8 bytes/value), a key of SIZE_MODEL
    (``bgv``/``ckks``), or a SizeModel instance.  With ``packed`` True, 64
    boolean flags share one slot/word before pricing.
    """
    if n_values < 0:
        raise ValueError("n_values must be nonnegative")
    n_eff = math.ceil(n_values / 64) if packed else n_values
    if isinstance(scheme, SizeModel):
        return scheme.bytes_for(n_eff)
    if scheme == "plain-bool":
        return 8 * n_eff if packed else int(n_values)
    if scheme in ("plain-int64", "plain-f64"):
        return 8 * n_eff
    if scheme in SIZE_MODEL:
        return SIZE_MODEL[scheme].bytes_for(n_eff)
    raise ValueError(f"unknown scheme {scheme!r}")


# ---------------------------------------------------------------------------
# channels
# ---------------------------------------------------------------------------

def _mask_stream(session_seed, context, j, k, n):
    """One-time-pad words shared by the ordered client pair (j, k)."""
    seq = np.random.SeedSequence([int(session_seed), *map(int, context), j, k])
    return np.random.default_rng(seq).integers(
        0, 2 ** 64 - 1, size=n, dtype=np.uint64, endpoint=True)


class PlainChannel:
    """Float64 summation in the clear.

    Channel interface: ``encrypt(values, client_id, context) -> blob``,
    ``aggregate(blobs) -> blob``, ``decrypt(blob) -> float vector``,
    ``wire_bytes(blob) -> int``.  ``reduce`` fuses aggregate+decrypt;
    ``payload_wire_bytes``/``update_wire_bytes`` price payloads from element
    counts without building them.
    """

    name = "plain"

    def __init__(self, n_clients, session_seed=0):
        self.n_clients = int(n_clients)

    def encrypt(self, values, client_id=0, context=(0,)):
        return np.asarray(values, dtype=np.float64).ravel().copy()

    def client_payload(self, values, client_id, context):
        return self.encrypt(values, client_id, context)

    def _check_payloads(self, payloads):
        from .errors import ProtocolError

        if len(payloads) != self.n_clients:
            raise ProtocolError(
                f"expected {self.n_clients} payloads, got {len(payloads)}")
        sizes = {len(np.asarray(b).ravel()) for b in payloads}
        if len(sizes) > 1:
            raise ProtocolError(f"payload length mismatch: {sorted(sizes)}")

    def aggregate(self, payloads):
        self._check_payloads(payloads)
        return np.add.reduce(np.stack(payloads, axis=0), axis=0)

    def decrypt(self, blob):
        return np.asarray(blob, dtype=np.float64)

    def reduce(self, payloads, context=(0,)):
        return self.decrypt(self.aggregate(payloads))

    def wire_bytes(self, blob):
        return 8 * int(np.asarray(blob).size)

    def payload_wire_bytes(self, n_elements):
        return 8 * int(n_elements)

    def update_wire_bytes(self, n_elements):
        return 8 * int(n_elements)


class MaskedChannel(PlainChannel):
    """Pairwise additive masking over the 2^64 ring with fixed-point payloads.

    Client k's payload is encode(v_k) + sum_{j>k} m_{kj} - sum_{j<k} m_{jk}
    (mod 2^64); the masks cancel exactly in the full sum, so the reduced
    value equals the plain fixed-point sum while any single payload is a
    one-time-pad ciphertext.  Encrypting for a client id outside the session
    raises KeyError (there are no pairwise seeds for it).

    The default scale keeps the quantization step near 1e-10 so training
    under this channel tracks the plaintext trajectory to ~1e-6 while
    leaving 2^31 of headroom for aggregated feature sums.
    """

    name = "masked"

    def __init__(self, n_clients, session_seed=0, scale_bits=32):
        super().__init__(n_clients)
        self.session_seed = int(session_seed)
        self.codec = FixedPointCodec(scale_bits)

    def encrypt(self, values, client_id=0, context=(0,)):
        k = int(client_id)
        if not (0 <= k < self.n_clients):
            raise KeyError(
                f"no pairwise mask seeds for client {k}: session covers "
                f"clients 0..{self.n_clients - 1}")
        flat = np.asarray(values, dtype=np.float64).ravel()
        blob = self.codec.encode(flat)
        for j in range(self.n_clients):
            if j == k:
                continue
            stream = _mask_stream(self.session_seed, context,
                                  min(j, k), max(j, k), len(blob))
            if k < j:
                blob = blob + stream
            else:
                blob = blob - stream
        return blob

    def aggregate(self, payloads):
        self._check_payloads(payloads)
        total = np.zeros_like(payloads[0])
        for blob in payloads:
            total = total + blob
        return total

    def decrypt(self, blob):
        return self.codec.decode(blob)


class SizeModelChannel(MaskedChannel):
    """Masked numerics with lattice-ciphertext wire pricing.

    Feature payloads are priced as integer-slot ciphertexts (bgv) and model
    updates as approximate-arithmetic ciphertexts (ckks).
    """

    name = "masked+sizemodel"

    def wire_bytes(self, blob):
        return estimate_ciphertext_bytes(int(np.asarray(blob).size), "bgv")

    def payload_wire_bytes(self, n_elements):
        return estimate_ciphertext_bytes(int(n_elements), "bgv")

    def update_wire_bytes(self, n_elements):
        return estimate_ciphertext_bytes(int(n_elements), "ckks")


CHANNELS = {
    "plain": PlainChannel,
    "masked": MaskedChannel,
    "masked+sizemodel": SizeModelChannel,
}


def make_channel(name, n_clients, session_seed=0, **kwargs):
    try:
        cls = CHANNELS[name]
    except KeyError:
        raise ValueError(
            f"unknown channel {name!r}; choose from {sorted(CHANNELS)}")
    return cls(n_clients, session_seed=session_seed, **kwargs)
