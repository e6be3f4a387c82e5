"""Compact multi-key layer on top of the addition-only BFV scheme.

Parties each run plain BFV keygen against the same reference polynomial;
their public-key shares add up to a common public key whose secret is the
sum of all party secrets.  Anything encrypted under the common key can only
be decrypted jointly, which the public key switch protocol exploits to
re-encrypt an aggregate toward a designated re-encryption key without any
intermediate decryption.  Ciphertexts stay two ring elements regardless of
the number of parties.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import bfv, ring
from .ring import RingElement, RingParams, SamplerConfig


@dataclass(frozen=True)
class CommonPublicKey(bfv.PublicKey):
    """cpk = (sum of all p0 shares mod q, shared p1); usable wherever a PublicKey is."""


@dataclass(frozen=True)
class KeySwitchShare:
    """One party's contribution (h0, h1) to the public key switch."""

    h0: RingElement
    h1: RingElement
    party: int

    def to_bytes(self) -> bytes:
        return struct.pack("<I", self.party) + self.h0.to_bytes() + self.h1.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes, params: RingParams) -> tuple["KeySwitchShare", int]:
        (party,) = struct.unpack_from("<I", data, 0)
        h0, off = RingElement.from_bytes(data[4:], params)
        h1, off2 = RingElement.from_bytes(data[4 + off :], params)
        return cls(h0, h1, party), 4 + off + off2


@dataclass(frozen=True)
class ReEncKeyPair:
    """Key pair the aggregate is switched to; the secret side never reaches the server."""

    sk_r: bfv.SecretKey
    pk_r: bfv.PublicKey


def combine_public_keys(shares: Sequence[bfv.PublicKey]) -> CommonPublicKey:
    """cpk = (sum of p0 shares, p1); all shares must carry the same reference p1."""
    if not shares:
        raise ValueError("need at least one public-key share")
    p1_bytes = shares[0].p1.to_bytes()
    for i, share in enumerate(shares[1:], start=1):
        if share.p1.to_bytes() != p1_bytes:
            raise ValueError(f"public-key share {i} carries a different reference polynomial")
    return CommonPublicKey(ring.sum_elements([s.p0 for s in shares]), shares[0].p1)


def _pks_share_parts(
    sk_i: bfv.SecretKey,
    ct: bfv.Ciphertext,
    pk_r: bfv.PublicKey,
    u: RingElement,
    e0: RingElement,
    e1: RingElement,
    party: int,
) -> KeySwitchShare:
    """Assemble (h0, h1) = (s_i*c1 + u*p0' + e0, u*p1' + e1) from given randomness."""
    h0 = ring.add(
        ring.add(ring.negacyclic_mul(sk_i.s, ct.c1.to_ntt()), ring.negacyclic_mul(u, pk_r.p0)),
        e0,
    )
    h1 = ring.add(ring.negacyclic_mul(u, pk_r.p1), e1)
    return KeySwitchShare(h0, h1, party)


def pks_share(
    sk_i: bfv.SecretKey,
    ct: bfv.Ciphertext,
    pk_r: bfv.PublicKey,
    rng: np.random.Generator,
    party: int,
    cfg: SamplerConfig = SamplerConfig(),
) -> KeySwitchShare:
    """One party's key-switch share for the aggregated ciphertext ``ct``."""
    params = ct.c0.params
    if pk_r.p0.params != params:
        raise ValueError("re-encryption key and ciphertext use different ring parameters")
    u = ring.sample_ternary(params, rng).to_ntt()
    e0 = ring.sample_gaussian(params, cfg, rng).to_ntt()
    e1 = ring.sample_gaussian(params, cfg, rng).to_ntt()
    return _pks_share_parts(sk_i, ct, pk_r, u, e0, e1, party)


def pks_merge(
    ct: bfv.Ciphertext,
    shares: Sequence[KeySwitchShare],
    expected_parties: Iterable[int],
) -> bfv.Ciphertext:
    """ct' = (c0 + sum of h0 shares, sum of h1 shares).

    Exactly one share per registered party is required; a missing or
    duplicate share is a harness bug and is rejected by party id.
    """
    expected = set(expected_parties)
    seen: set[int] = set()
    for share in shares:
        if share.party in seen:
            raise ValueError(f"duplicate key-switch share from party {share.party}")
        if share.party not in expected:
            raise ValueError(f"key-switch share from unregistered party {share.party}")
        seen.add(share.party)
    missing = expected - seen
    if missing:
        raise ValueError(f"missing key-switch share from party {sorted(missing)[0]}")
    h0 = ring.sum_elements([s.h0 for s in shares])
    h1 = ring.sum_elements([s.h1 for s in shares])
    return bfv.Ciphertext(ring.add(ct.c0, h0), h1, ct.params_id)


def gen_reenc_keypair(
    params: RingParams,
    crs_a: RingElement,
    rng: np.random.Generator,
    cfg: SamplerConfig = SamplerConfig(),
) -> ReEncKeyPair:
    """Fresh BFV key pair for the re-encryption target."""
    sk_r, pk_r = bfv.keygen(params, crs_a, rng, cfg)
    return ReEncKeyPair(sk_r, pk_r)


def verify_reenc(kp: ReEncKeyPair, rng: np.random.Generator) -> bool:
    """Encrypt a random probe under pk_r and check sk_r decrypts it back.

    False means the pair is corrupted or mismatched and the session must
    abort before any seeds are encrypted toward it.
    """
    params = kp.pk_r.p0.params
    probe = bfv.Plaintext(rng.integers(0, params.t, size=params.n, dtype=np.uint64), params.t)
    try:
        decrypted = bfv.decrypt(kp.sk_r, bfv.encrypt(kp.pk_r, probe, rng))
    except ValueError:
        return False
    return bool(np.array_equal(decrypted.coeffs, probe.coeffs))
