import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedhop import (FixedPointCodec, MaskedChannel, PlainChannel, ProtocolError,
                    SizeModel, SizeModelChannel, estimate_ciphertext_bytes,
                    make_channel, pack_bools, unpack_bools)
from fedhop.channels import SIZE_MODEL


# ---------------------------------------------------------------------------
# fixed-point codec
# ---------------------------------------------------------------------------

def test_codec_roundtrip_error_bound():
    codec = FixedPointCodec(scale_bits=20)
    rng = np.random.default_rng(0)
    v = rng.uniform(-1e3, 1e3, size=1000)
    err = np.max(np.abs(codec.decode(codec.encode(v)) - v))
    assert err <= 2.0 ** -21


def test_codec_exact_on_grid():
    codec = FixedPointCodec(scale_bits=4)
    v = np.array([0.0, 1.0, -2.5, 0.0625, -100.9375])
    np.testing.assert_array_equal(codec.decode(codec.encode(v)), v)
    np.testing.assert_array_equal(codec.quantize(v), v)


def test_codec_range_and_validation():
    codec = FixedPointCodec(scale_bits=20)
    with pytest.raises(ValueError, match="range"):
        codec.encode(np.array([2.0 ** 50]))
    with pytest.raises(ValueError, match="range"):
        codec.encode(np.array([np.inf]))
    with pytest.raises(ValueError):
        FixedPointCodec(scale_bits=63)
    with pytest.raises(ValueError):
        FixedPointCodec(scale_bits=-1)


@settings(deadline=None, max_examples=60)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=40),
       st.integers(0, 40))
def test_codec_roundtrip_property(values, scale_bits):
    codec = FixedPointCodec(scale_bits)
    v = np.asarray(values)
    back = codec.decode(codec.encode(v))
    assert np.max(np.abs(back - v)) <= 2.0 ** -(scale_bits + 1)


@settings(deadline=None, max_examples=40)
@given(st.lists(st.lists(st.floats(-100, 100), min_size=5, max_size=5),
                min_size=2, max_size=6))
def test_ring_sum_equals_quantized_sum(vectors):
    """Summing encodings in the ring = summing quantized values, exactly."""
    codec = FixedPointCodec(16)
    enc = [codec.encode(np.asarray(v)) for v in vectors]
    ring_total = enc[0].copy()
    for e in enc[1:]:
        ring_total = ring_total + e
    direct = np.sum([codec.quantize(np.asarray(v)) for v in vectors], axis=0)
    np.testing.assert_array_equal(codec.decode(ring_total), direct)


# ---------------------------------------------------------------------------
# boolean packing
# ---------------------------------------------------------------------------

def test_pack_unpack_small():
    bits = np.array([1, 0, 1, 1, 0, 0, 0, 1, 1], dtype=bool)
    words = pack_bools(bits)
    assert words.dtype == np.uint64 and len(words) == 1
    np.testing.assert_array_equal(unpack_bools(words, 9), bits)


def test_pack_word_boundaries():
    for n in (63, 64, 65, 128, 129):
        bits = np.arange(n) % 3 == 0
        words = pack_bools(bits)
        assert len(words) == -(-n // 64)
        np.testing.assert_array_equal(unpack_bools(words, n), bits)


def test_unpack_bounds_error():
    words = pack_bools(np.ones(10, dtype=bool))
    with pytest.raises(ValueError, match="unpack"):
        unpack_bools(words, 65)
    with pytest.raises(ValueError):
        unpack_bools(words, -1)


@settings(deadline=None, max_examples=60)
@given(st.lists(st.booleans(), max_size=300))
def test_pack_unpack_bijection(bits):
    bits = np.asarray(bits, dtype=bool)
    np.testing.assert_array_equal(unpack_bools(pack_bools(bits), len(bits)),
                                  bits)


# ---------------------------------------------------------------------------
# ciphertext size model
# ---------------------------------------------------------------------------

def test_size_model_constants_frozen():
    assert SIZE_MODEL["bgv"] == SizeModel(bytes_per_ct=398_000.0, slots=4096)
    assert SIZE_MODEL["ckks"] == SizeModel(bytes_per_ct=266_000.0, slots=4096)


def test_size_model_reference_points():
    # serialized boolean arrays spend a byte per flag until packed
    assert estimate_ciphertext_bytes(1_000, "plain-bool") == 1_000
    assert estimate_ciphertext_bytes(1_000, "plain-bool", packed=True) == 128
    assert estimate_ciphertext_bytes(1_000, "plain-int64") == 8_000
    assert estimate_ciphertext_bytes(1_000, "bgv") == 398_000
    assert estimate_ciphertext_bytes(1_000, "bgv", packed=True) == 398_000
    assert estimate_ciphertext_bytes(10_000, "ckks") == 798_000
    assert estimate_ciphertext_bytes(10_000, "bgv") == 1_194_000
    # 1M flags pack into 15625 words -> 4 integer ciphertexts
    assert estimate_ciphertext_bytes(1_000_000, "bgv", packed=True) == 1_592_000


def test_size_model_accepts_instance():
    tiny = SizeModel(bytes_per_ct=100.0, slots=10)
    assert estimate_ciphertext_bytes(25, tiny) == 300
    assert estimate_ciphertext_bytes(640, tiny, packed=True) == 100


def test_size_model_errors():
    with pytest.raises(ValueError):
        estimate_ciphertext_bytes(-1, "bgv")
    with pytest.raises(ValueError, match="unknown"):
        estimate_ciphertext_bytes(10, "rot13")
    with pytest.raises(ValueError):
        SizeModel(0.0, 4096)


@settings(deadline=None, max_examples=60)
@given(st.integers(0, 10 ** 7), st.integers(0, 10 ** 7),
       st.sampled_from(["plain-bool", "plain-int64", "bgv", "ckks"]))
def test_size_model_monotone_and_packing_never_hurts(n, m, scheme):
    lo, hi = sorted((n, m))
    assert (estimate_ciphertext_bytes(lo, scheme)
            <= estimate_ciphertext_bytes(hi, scheme))
    assert (estimate_ciphertext_bytes(n, scheme, packed=True)
            <= estimate_ciphertext_bytes(n, scheme, packed=False))


# ---------------------------------------------------------------------------
# channels
# ---------------------------------------------------------------------------

def vectors_for(k, n=64, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.uniform(-50, 50, size=n) for _ in range(k)]


@pytest.mark.parametrize("name", ["plain", "masked", "masked+sizemodel"])
def test_channel_sum_is_correct(name):
    k = 4
    ch = make_channel(name, k, session_seed=3)
    vecs = vectors_for(k)
    blobs = [ch.encrypt(v, i, (5,)) for i, v in enumerate(vecs)]
    out = ch.decrypt(ch.aggregate(blobs))
    tol = 0.0 if name == "plain" else k * 2.0 ** -21
    assert np.max(np.abs(out - np.sum(vecs, axis=0))) <= tol


def test_masked_payload_is_ciphertext():
    """A single masked payload reveals nothing: it differs from the bare
    encoding and changes entirely under another context tag."""
    ch = MaskedChannel(3, session_seed=1)
    v = np.linspace(-1, 1, 32)
    bare = ch.codec.encode(v)
    blob_a = ch.encrypt(v, 0, (7,))
    blob_b = ch.encrypt(v, 0, (8,))
    assert np.any(blob_a != bare)
    assert np.any(blob_a != blob_b)
    # deterministic per (session, context, client)
    np.testing.assert_array_equal(blob_a, ch.encrypt(v, 0, (7,)))


def test_mask_cancellation_on_zeros():
    ch = MaskedChannel(5, session_seed=9)
    zero = np.zeros(40)
    blobs = [ch.encrypt(zero, i, (2, 4)) for i in range(5)]
    np.testing.assert_array_equal(ch.decrypt(ch.aggregate(blobs)), zero)


def test_single_client_channel_is_transparent():
    ch = MaskedChannel(1, session_seed=0)
    v = np.array([1.25, -3.5])
    np.testing.assert_array_equal(ch.decrypt(ch.aggregate([ch.encrypt(v)])), v)


def test_channel_errors():
    ch = MaskedChannel(3, session_seed=0)
    v = np.ones(8)
    with pytest.raises(KeyError, match="pairwise"):
        ch.encrypt(v, 3)
    with pytest.raises(KeyError):
        ch.encrypt(v, -1)
    blobs = [ch.encrypt(v, i) for i in range(3)]
    with pytest.raises(ProtocolError, match="payloads"):
        ch.aggregate(blobs[:2])
    with pytest.raises(ProtocolError, match="length"):
        ch.aggregate([blobs[0], blobs[1], blobs[2][:4]])
    with pytest.raises(ValueError, match="unknown channel"):
        make_channel("carrier-pigeon", 2)


def test_wire_pricing_per_channel():
    blob64 = PlainChannel(2).encrypt(np.zeros(64))
    assert PlainChannel(2).wire_bytes(blob64) == 512
    assert MaskedChannel(2).wire_bytes(MaskedChannel(2).encrypt(np.zeros(64), 0)) == 512
    sized = SizeModelChannel(2)
    assert sized.wire_bytes(sized.encrypt(np.zeros(64), 0)) == 398_000
    assert sized.payload_wire_bytes(5000) == 2 * 398_000
    assert sized.update_wire_bytes(5000) == 2 * 266_000
    assert PlainChannel(2).update_wire_bytes(5000) == 40_000


def test_client_payload_alias():
    ch = MaskedChannel(2, session_seed=4)
    v = np.arange(6, dtype=float)
    np.testing.assert_array_equal(ch.client_payload(v, 1, (3,)),
                                  ch.encrypt(v, 1, (3,)))
