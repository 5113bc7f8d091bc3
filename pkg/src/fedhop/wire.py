"""Length-prefixed record framing for transferred payloads.

Each record is a 12-byte header ``<u32 node_id, u32 hop, u32 payload_len>``
followed by ``payload_len`` little-endian 64-bit words (float64 for plain
payloads, uint64 for masked residues).  Hop-message payloads carry the
node's aggregated degree as the first word followed by its feature sum, so
``payload_len == feature_dim + 1``.
"""

from __future__ import annotations

import struct

import numpy as np

HEADER = struct.Struct("<III")
HEADER_BYTES = HEADER.size
WORD_BYTES = 8

#: payload-kind tag carried in the ``hop`` header field for model vectors
MODEL_KIND = 0xFFFFFFFF


def record_bytes(payload_len):
    """Wire size of one record with ``payload_len`` 64-bit words."""
    return HEADER_BYTES + WORD_BYTES * int(payload_len)


def write_record(buf, node_id, hop, payload):
    """Append one record to a bytearray; returns bytes written."""
    payload = np.ascontiguousarray(payload)
    if payload.dtype == np.float64:
        raw = payload.astype("<f8", copy=False).tobytes()
    elif payload.dtype == np.uint64:
        raw = payload.astype("<u8", copy=False).tobytes()
    else:
        raise ValueError(f"unsupported payload dtype {payload.dtype}")
    buf += HEADER.pack(int(node_id), int(hop), payload.size)
    buf += raw
    return HEADER_BYTES + len(raw)


def read_records(data, dtype=np.float64):
    """Parse a byte string into (node_id, hop, payload) tuples."""
    out = []
    at = 0
    n = len(data)
    while at < n:
        if n - at < HEADER_BYTES:
            raise ValueError(f"truncated record header at byte {at}")
        node_id, hop, plen = HEADER.unpack_from(data, at)
        at += HEADER_BYTES
        end = at + WORD_BYTES * plen
        if end > n:
            raise ValueError(f"truncated record payload at byte {at}")
        wire = "<f8" if dtype == np.float64 else "<u8"
        payload = np.frombuffer(data, dtype=wire, count=plen, offset=at)
        out.append((node_id, hop, payload.astype(dtype)))
        at = end
    return out


def serialize_hop_message(node_ids, hop, degrees, feature_sums):
    """Frame one client's hop message; degree leads each payload."""
    buf = bytearray()
    for t in range(len(node_ids)):
        payload = np.concatenate([[degrees[t]], feature_sums[t]])
        write_record(buf, node_ids[t], hop, payload)
    return bytes(buf)


def parse_hop_message(data):
    """Inverse of serialize_hop_message: (node_ids, hop, degrees, sums)."""
    records = read_records(data)
    if not records:
        return (np.zeros(0, dtype=np.int64), 0, np.zeros(0),
                np.zeros((0, 0)))
    node_ids = np.asarray([r[0] for r in records], dtype=np.int64)
    hops = {r[1] for r in records}
    if len(hops) != 1:
        raise ValueError(f"mixed hop tags in one message: {sorted(hops)}")
    degrees = np.asarray([r[2][0] for r in records])
    sums = np.stack([r[2][1:] for r in records])
    return node_ids, hops.pop(), degrees, sums
