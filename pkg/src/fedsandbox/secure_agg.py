"""Simulated secure aggregation with pairwise additive masks.

Each node encodes its real vector as fixed-point integers modulo 2^64 and adds
a mask built from seeds it shares with every other node. Node i adds the PRG
stream of seed(i, j) for j > i and subtracts it for j < i, so all masks cancel
in the sum and the server learns only the total.

Key agreement is not simulated: pair seeds come from a deterministic key
schedule over a root secret. A real deployment would replace
``PairwiseSeeds.derive`` with a Diffie-Hellman exchange.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import ConfigurationError, ProtocolError

MODULUS_BITS = 64
_CTR_ZERO = modes.CTR(bytes(16))


@dataclass
class FixedPointCodec:
    frac_bits: int = 16
    clip: float = 2.0**20
    clip_events: int = 0

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def modulus(self) -> int:
        return 1 << MODULUS_BITS

    def check_capacity(self, k: int) -> None:
        """Refuse configurations where a k-party sum could wrap around."""
        if k * self.clip * self.scale >= 2.0 ** (MODULUS_BITS - 1):
            raise ConfigurationError(
                f"{k} parties x clip {self.clip} x 2^{self.frac_bits} overflows the 2^64 ring"
            )

    def encode(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not np.all(np.isfinite(x)):
            raise ValueError("cannot encode non-finite values")
        clipped = np.clip(x, -self.clip, self.clip)
        self.clip_events += int(np.count_nonzero(clipped != x))
        return np.rint(clipped * self.scale).astype(np.int64).view(np.uint64)

    def decode(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u, dtype=np.uint64).view(np.int64) / self.scale


def codec_for(k: int, max_abs: float, frac_bits: int = 16) -> FixedPointCodec:
    """Codec whose clip range covers ``max_abs`` with headroom, checked for k parties."""
    clip = float(2 ** int(np.ceil(np.log2(max(max_abs, 1.0)) + 1)))
    codec = FixedPointCodec(frac_bits=frac_bits, clip=clip)
    codec.check_capacity(k)
    return codec


def prg(seed: bytes, length: int) -> np.ndarray:
    """Expand a 128-bit seed to ``length`` uniform uint64 words with AES-128 in counter mode."""
    if len(seed) != 16:
        raise ValueError("seed must be 16 bytes")
    enc = Cipher(algorithms.AES(seed), _CTR_ZERO).encryptor()
    return np.frombuffer(enc.update(bytes(8 * length)), dtype="<u8").astype(np.uint64)


@dataclass(frozen=True)
class PairwiseSeeds:
    k: int
    round_id: int
    seeds: dict[tuple[int, int], bytes] = field(repr=False)

    @classmethod
    def derive(cls, k: int, round_id: int, secret: bytes, nodes: Iterable[int] | None = None) -> PairwiseSeeds:
        """Per-round 128-bit seed for every pair (i, j), i < j, from a root secret."""
        nodes = sorted(range(k) if nodes is None else nodes)
        seeds = {}
        for a, i in enumerate(nodes):
            for j in nodes[a + 1 :]:
                root = hashlib.sha256(secret + b"pair" + i.to_bytes(4, "big") + j.to_bytes(4, "big")).digest()
                seeds[(i, j)] = hashlib.sha256(root + round_id.to_bytes(8, "big")).digest()[:16]
        return cls(k, round_id, seeds)

    def seed(self, i: int, j: int) -> bytes:
        key = (min(i, j), max(i, j))
        try:
            return self.seeds[key]
        except KeyError:
            raise ProtocolError(f"no shared seed for nodes {key}") from None


@dataclass(frozen=True)
class MaskedVector:
    node_id: int
    payload: np.ndarray
    round_id: int


def mask(v: np.ndarray, node: int, seeds: PairwiseSeeds, k: int) -> MaskedVector:
    payload = np.array(v, dtype=np.uint64)
    for j in range(k):
        if j == node:
            continue
        stream = prg(seeds.seed(node, j), payload.size).reshape(payload.shape)
        # uint64 arithmetic wraps, which is exactly reduction mod 2^64
        if j > node:
            payload += stream
        else:
            payload -= stream
    return MaskedVector(node, payload, seeds.round_id)


def mask_all(encoded: Sequence[np.ndarray], seeds: PairwiseSeeds) -> list[MaskedVector]:
    """Mask every node's vector in one pass.

    Same payloads as calling ``mask`` per node, but each pair stream is
    expanded once and applied with opposite signs at both endpoints.
    """
    k = len(encoded)
    payloads = [np.array(v, dtype=np.uint64) for v in encoded]
    for i in range(k):
        for j in range(i + 1, k):
            stream = prg(seeds.seed(i, j), payloads[i].size).reshape(payloads[i].shape)
            payloads[i] += stream
            payloads[j] -= stream
    return [MaskedVector(i, p, seeds.round_id) for i, p in enumerate(payloads)]


def aggregate(shares: Sequence[MaskedVector], codec: FixedPointCodec, k: int) -> np.ndarray:
    """Sum one masked share per node and decode the total."""
    ids = [s.node_id for s in shares]
    if sorted(ids) != list(range(k)):
        missing = sorted(set(range(k)) - set(ids))
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ProtocolError(f"bad share set: missing nodes {missing}, duplicated {dupes}")
    if len({s.round_id for s in shares}) != 1:
        raise ProtocolError("shares come from different rounds")
    total = np.zeros_like(shares[0].payload, dtype=np.uint64)
    for s in shares:
        total += s.payload
    return codec.decode(total)


def modular_sum(encoded: Sequence[np.ndarray]) -> np.ndarray:
    total = np.zeros_like(encoded[0], dtype=np.uint64)
    for v in encoded:
        total += v
    return total


def secure_sum(
    vectors: Sequence[np.ndarray],
    codec: FixedPointCodec,
    round_id: int = 0,
    secret: bytes = b"fedsandbox",
) -> np.ndarray:
    """Run one full round: every node encodes and masks, the server aggregates."""
    k = len(vectors)
    codec.check_capacity(k)
    seeds = PairwiseSeeds.derive(k, round_id, secret)
    shares = mask_all([codec.encode(v) for v in vectors], seeds)
    return aggregate(shares, codec, k)
