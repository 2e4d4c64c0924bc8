import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from scipy import stats

from fedsandbox.errors import ConfigurationError, ProtocolError
from fedsandbox.secure_agg import (
    FixedPointCodec,
    MaskedVector,
    PairwiseSeeds,
    aggregate,
    codec_for,
    mask,
    mask_all,
    modular_sum,
    prg,
    secure_sum,
)

ULP = 2.0**-16


def test_encode_zero():
    assert FixedPointCodec().encode(0.0)[0] == 0


def test_negative_is_twos_complement():
    assert FixedPointCodec().encode(-1.0)[0] == np.uint64(2**64 - 2**16)


def test_round_trip_10k_vectors():
    codec = FixedPointCodec()
    x = np.random.default_rng(0).uniform(-1000, 1000, (10_000, 8))
    assert np.max(np.abs(codec.decode(codec.encode(x)) - x)) <= ULP


def test_clip_counted():
    codec = FixedPointCodec(clip=8.0)
    assert codec.decode(codec.encode([9.0, -20.0, 1.0])).tolist() == [8.0, -8.0, 1.0]
    assert codec.clip_events == 2


def test_capacity_check():
    FixedPointCodec(clip=2.0**20).check_capacity(64)
    with pytest.raises(ConfigurationError):
        FixedPointCodec(clip=2.0**40).check_capacity(128)


def test_codec_for_has_headroom():
    c = codec_for(64, 300.0)
    assert c.clip >= 300.0


def test_sum_then_decode_vs_decode_then_sum():
    codec = FixedPointCodec()
    xs = np.random.default_rng(1).normal(0, 50, (64, 32))
    enc = [codec.encode(x) for x in xs]
    a = codec.decode(modular_sum(enc))
    b = sum(codec.decode(e) for e in enc)
    assert np.max(np.abs(a - b)) <= 64 * ULP
    assert np.max(np.abs(a - xs.sum(axis=0))) <= 64 * ULP


def test_prg_deterministic_and_seed_sensitive():
    s = bytes(range(16))
    assert np.array_equal(prg(s, 100), prg(s, 100))
    assert not np.array_equal(prg(s, 100), prg(bytes(16), 100))
    assert np.array_equal(prg(s, 10), prg(s, 100)[:10])


def test_prg_matches_aes_ecb_of_counters():
    key = bytes(range(16))
    blocks = b"".join(i.to_bytes(16, "big") for i in range(4))
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    expected = enc.update(blocks) + enc.finalize()
    assert prg(key, 8).astype("<u8").tobytes() == expected


def test_seeds_symmetric_and_per_round():
    s0 = PairwiseSeeds.derive(5, 0, b"x")
    s1 = PairwiseSeeds.derive(5, 1, b"x")
    assert s0.seed(1, 3) == s0.seed(3, 1)
    assert s0.seed(1, 3) != s1.seed(1, 3)
    assert len(set(s0.seeds.values())) == 10


def test_mask_single_node_identity():
    v = FixedPointCodec().encode([1.0, -2.0])
    assert np.array_equal(mask(v, 0, PairwiseSeeds.derive(1, 0, b"x"), 1).payload, v)


def test_two_node_cancellation_exact():
    codec = FixedPointCodec()
    seeds = PairwiseSeeds.derive(2, 7, b"s")
    v1, v2 = codec.encode([1.5, 3.0]), codec.encode([-0.25, 9.0])
    m1, m2 = mask(v1, 0, seeds, 2), mask(v2, 1, seeds, 2)
    assert not np.array_equal(m1.payload, v1)
    assert np.array_equal(m1.payload + m2.payload, v1 + v2)


def test_k64_exact_modular_equality():
    codec = FixedPointCodec()
    rng = np.random.default_rng(2)
    enc = [codec.encode(x) for x in rng.normal(0, 100, (64, 16))]
    seeds = PairwiseSeeds.derive(64, 0, b"k64")
    masked = [mask(e, i, seeds, 64).payload for i, e in enumerate(enc)]
    assert np.array_equal(modular_sum(masked), modular_sum(enc))


@settings(deadline=None, max_examples=30)
@given(k=st.sampled_from([1, 2, 4, 8, 16]), seed=st.integers(0, 2**32 - 1), dim=st.integers(1, 40))
def test_secure_sum_matches_plaintext(k, seed, dim):
    xs = np.random.default_rng(seed).uniform(-1e3, 1e3, (k, dim))
    out = secure_sum(list(xs), FixedPointCodec(), round_id=seed % 100)
    assert np.max(np.abs(out - xs.sum(axis=0))) <= k * ULP


@given(k=st.integers(1, 9), seed=st.integers(0, 2**32 - 1))
@settings(max_examples=30)
def test_mask_all_equals_per_node_mask(k, seed):
    rng = np.random.default_rng(seed)
    enc = [rng.integers(0, 2**63, 12, dtype=np.uint64) for _ in range(k)]
    seeds = PairwiseSeeds.derive(k, seed % 1000, b"r")
    for a, b in zip(mask_all(enc, seeds), (mask(e, i, seeds, k) for i, e in enumerate(enc))):
        assert a.node_id == b.node_id and a.round_id == b.round_id
        assert np.array_equal(a.payload, b.payload)


def test_aggregate_zero():
    codec = FixedPointCodec()
    assert np.all(secure_sum([np.zeros(4)] * 5, codec) == 0)


def test_three_party_arithmetic():
    out = secure_sum([np.full(6, 1.5), np.full(6, -2.25), np.full(6, 0.75)], FixedPointCodec())
    assert np.max(np.abs(out)) <= 3 * ULP


def test_missing_share_rejected():
    codec = FixedPointCodec()
    seeds = PairwiseSeeds.derive(3, 0, b"m")
    shares = [mask(codec.encode([1.0]), i, seeds, 3) for i in range(3)]
    with pytest.raises(ProtocolError):
        aggregate(shares[:2], codec, 3)
    with pytest.raises(ProtocolError):
        aggregate([shares[0], shares[0], shares[2]], codec, 3)


def test_mixed_rounds_rejected():
    codec = FixedPointCodec()
    shares = [MaskedVector(0, codec.encode([1.0]), 0), MaskedVector(1, codec.encode([1.0]), 1)]
    with pytest.raises(ProtocolError):
        aggregate(shares, codec, 2)


def test_missing_pair_seed():
    seeds = PairwiseSeeds.derive(4, 0, b"p", nodes=[0, 1, 2])
    with pytest.raises(ProtocolError):
        mask(FixedPointCodec().encode([1.0]), 0, seeds, 4)


def test_masked_payload_bytes_uniform():
    # node 0's true vector is a constant; without the other nodes' seeds its payload should look uniform
    codec = FixedPointCodec()
    seeds = PairwiseSeeds.derive(4, 3, b"uniform")
    payload = mask(codec.encode(np.full(50_000, 12.5)), 0, seeds, 4).payload
    counts = np.bincount(np.frombuffer(payload.tobytes(), dtype=np.uint8), minlength=256)
    assert stats.chisquare(counts).pvalue > 0.01
