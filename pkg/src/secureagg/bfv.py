"""Addition-only BFV over R_q with coefficient packing.

Key generation against a shared uniform reference polynomial, encryption,
decryption by scale-and-round, homomorphic addition, and packing of word
values into plaintext coefficients.  The plaintext modulus t may be as large
as 2**64 (the packing-compatible production choice); delta = floor(q / t)
separates payload from noise.

Key material and ciphertexts keep their ring components in the NTT domain so
that every homomorphic operation is coefficient-wise; only decryption leaves
it.  Noise overflow is not detectable at runtime without the secret key, so
a test-only noise meter (:func:`noise_infinity_norm`) is provided instead.

No multiplication, relinearization, rotations or modulus switching: the
aggregation protocol only ever adds ciphertexts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ring
from .ring import RingElement, RingParams, SamplerConfig

# ---------------------------------------------------------------------------
# Key material and ciphertexts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SecretKey:
    """A ternary secret, held in NTT form for cheap inner products."""

    s: RingElement

    def lifted(self) -> list[int]:
        """Signed coefficients of s, for invariant checks in tests."""
        return ring.centered_lift(self.s.to_coeff())


@dataclass(frozen=True)
class PublicKey:
    """pk = (p0, p1) with p0 = -s * p1 + e and p1 the shared reference polynomial."""

    p0: RingElement
    p1: RingElement

    def to_bytes(self) -> bytes:
        return self.p0.to_bytes() + self.p1.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes, params: RingParams) -> tuple["PublicKey", int]:
        p0, off = RingElement.from_bytes(data, params)
        p1, off2 = RingElement.from_bytes(data[off:], params)
        return cls(p0, p1), off + off2


@dataclass(frozen=True)
class Plaintext:
    """n coefficients in [0, t)."""

    coeffs: np.ndarray  # uint64, shape (n,)
    t: int

    def __post_init__(self) -> None:
        if self.coeffs.dtype != np.uint64 or self.coeffs.ndim != 1:
            raise ValueError("plaintext coefficients must be a 1-D uint64 array")
        if self.t < (1 << 64) and np.any(self.coeffs >= np.uint64(self.t)):
            bad = int(np.argmax(self.coeffs >= np.uint64(self.t)))
            raise ValueError(
                f"plaintext coefficient {bad} is {int(self.coeffs[bad])} >= t = {self.t}"
            )
        self.coeffs.setflags(write=False)


CIPHERTEXT_TAG = 0xC1


@dataclass(frozen=True)
class Ciphertext:
    """ct = (c0, c1), both reduced mod q; meta records the originating params."""

    c0: RingElement
    c1: RingElement
    params_id: str

    def to_bytes(self) -> bytes:
        return bytes([CIPHERTEXT_TAG]) + self.c0.to_bytes() + self.c1.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes, params: RingParams) -> tuple["Ciphertext", int]:
        if data[0] != CIPHERTEXT_TAG:
            raise ValueError(f"bad ciphertext tag 0x{data[0]:02x}")
        c0, off = RingElement.from_bytes(data[1:], params)
        c1, off2 = RingElement.from_bytes(data[1 + off :], params)
        return cls(c0, c1, params.params_id), 1 + off + off2

    @staticmethod
    def serialized_size(params: RingParams) -> int:
        return 1 + 2 * RingElement.serialized_size(params)


# ---------------------------------------------------------------------------
# Core operations
# ---------------------------------------------------------------------------


def keygen(
    params: RingParams,
    crs_a: RingElement,
    rng: np.random.Generator,
    cfg: SamplerConfig = SamplerConfig(),
) -> tuple[SecretKey, PublicKey]:
    """Fresh key pair against the session's common reference polynomial.

    pk.p1 is the reference polynomial itself; pk.p0 = -s * p1 + e with a
    fresh Gaussian error, so public-key shares from different parties add up
    to a key for the summed secret.
    """
    a = crs_a.to_ntt()
    s = ring.sample_ternary(params, rng).to_ntt()
    e = ring.sample_gaussian(params, cfg, rng).to_ntt()
    p0 = ring.add(ring.neg(ring.negacyclic_mul(s, a)), e)
    return SecretKey(s), PublicKey(p0, a)


def encrypt(
    pk: PublicKey,
    m: Plaintext,
    rng: np.random.Generator,
    cfg: SamplerConfig = SamplerConfig(),
) -> Ciphertext:
    """ct = (round(q*m/t) + u * p0 + e0, u * p1 + e1) with fresh u, e0, e1."""
    params = pk.p0.params
    if len(m.coeffs) != params.n:
        raise ValueError(f"plaintext has {len(m.coeffs)} coefficients, ring degree is {params.n}")
    if m.t != params.t:
        raise ValueError(f"plaintext modulus {m.t} does not match ring t = {params.t}")
    u = ring.sample_ternary(params, rng).to_ntt()
    e0 = ring.sample_gaussian(params, cfg, rng)
    e1 = ring.sample_gaussian(params, cfg, rng).to_ntt()
    dm = _scale_plaintext(m, params)
    c0 = ring.add(ring.add(dm, e0).to_ntt(), ring.negacyclic_mul(u, pk.p0))
    c1 = ring.add(ring.negacyclic_mul(u, pk.p1), e1)
    return Ciphertext(c0, c1, params.params_id)


def _scale_plaintext(m: Plaintext, params: RingParams) -> RingElement:
    """round(q * m / t) as a coefficient-domain ring element, exactly.

    Scaling by the exact rational q/t instead of floor(q/t) keeps the
    per-coefficient scaling error below t/(2q) regardless of how large m
    is; with floor(q/t) the error term m * (q mod t) / q can exceed 1/2
    whenever t^2 > q, which the 64-bit-t / 109-bit-q production setting
    hits.  In RNS this is cheap: q = 0 mod every prime, so only the
    rounding remainder r = (q*m + t/2) mod t contributes.
    """
    from . import _kernels

    t = params.t
    q = params.q
    half_t = t // 2
    if t & (t - 1) == 0:
        # power-of-two t divides 2^64, so wrap-around arithmetic is exact
        mask_t = np.uint64(t - 1)
        r = ((np.uint64(q % t) * m.coeffs + np.uint64(half_t)) & mask_t).astype(np.uint64)
    else:
        r = np.array([(q * int(c) + half_t) % t for c in m.coeffs], dtype=np.uint64)
    arr = np.empty((len(params.primes), params.n), dtype=np.uint64)
    for i, (p, tab) in enumerate(zip(params.primes, params.tables)):
        # v = (q*m + t/2 - r) / t; numerator = t/2 - r (mod p) since p | q
        num = (np.uint64(half_t % p) + np.uint64(p) - r % np.uint64(p)) % np.uint64(p)
        inv_t = pow(t % p, -1, p)
        _kernels.scalar_mul(
            np.ascontiguousarray(num.reshape(1, -1)),
            arr[i : i + 1],
            np.uint64(inv_t),
            np.uint64((inv_t << 64) // p),
            tab.prime,
        )
    return RingElement(params, arr, is_ntt=False)


def decrypt(sk: SecretKey, ct: Ciphertext) -> Plaintext:
    """m = round(t/q * [c0 + c1*s]_q) mod t, coefficient-wise and exact.

    Correct only while the accumulated noise stays below delta/2 per
    coefficient; overflow silently corrupts (there is nothing to detect
    without tracking noise, which decryption cannot do).
    """
    params = ct.c0.params
    inner = ring.add(ct.c0.to_ntt(), ring.negacyclic_mul(ct.c1.to_ntt(), sk.s))
    lifted = ring.crt_lift(inner.to_coeff())
    q = params.q
    t = params.t
    half = q // 2
    coeffs = np.array([((x * t + half) // q) % t for x in lifted], dtype=np.uint64)
    return Plaintext(coeffs, t)


def add(ct1: Ciphertext, ct2: Ciphertext) -> Ciphertext:
    """Homomorphic addition: component-wise ring addition."""
    if ct1.params_id != ct2.params_id:
        raise ValueError("ciphertext addition across different parameter sets")
    return Ciphertext(
        ring.add(ct1.c0, ct2.c0), ring.add(ct1.c1, ct2.c1), ct1.params_id
    )


def sum_ciphertexts(cts: list[Ciphertext]) -> Ciphertext:
    """Fold-sum of many ciphertexts."""
    if not cts:
        raise ValueError("cannot sum an empty list of ciphertexts")
    first = cts[0]
    for ct in cts[1:]:
        if ct.params_id != first.params_id:
            raise ValueError("ciphertext sum across different parameter sets")
    return Ciphertext(
        ring.sum_elements([ct.c0 for ct in cts]),
        ring.sum_elements([ct.c1 for ct in cts]),
        first.params_id,
    )


# ---------------------------------------------------------------------------
# Coefficient packing
# ---------------------------------------------------------------------------


def encode(values, params: RingParams) -> Plaintext:
    """Place integers in [0, t) into coefficients 0..len-1, zero padding above."""
    vals = np.asarray(values, dtype=np.uint64)
    if vals.ndim != 1 and vals.size:
        raise ValueError("encode expects a flat sequence of values")
    if vals.size > params.n:
        raise ValueError(f"{vals.size} values do not fit into {params.n} coefficients")
    coeffs = np.zeros(params.n, dtype=np.uint64)
    coeffs[: vals.size] = vals
    return Plaintext(coeffs, params.t)


def decode(pt: Plaintext, count: int) -> np.ndarray:
    """Inverse of :func:`encode`: the first ``count`` coefficients."""
    if count > len(pt.coeffs):
        raise ValueError(f"cannot decode {count} values from {len(pt.coeffs)} coefficients")
    return pt.coeffs[:count].copy()


# ---------------------------------------------------------------------------
# Test-only noise meter
# ---------------------------------------------------------------------------


def noise_infinity_norm(sk: SecretKey, ct: Ciphertext, m: Plaintext) -> int:
    """max |[c0 + c1*s]_q - delta*m| over coefficients, centered mod q.

    Requires the secret key; used by tests to measure the remaining noise
    budget. Never part of the protocol.
    """
    params = ct.c0.params
    inner = ring.add(ct.c0.to_ntt(), ring.negacyclic_mul(ct.c1.to_ntt(), sk.s))
    diff = ring.sub(inner, _scale_plaintext(m, params).to_ntt())
    return max(abs(x) for x in ring.centered_lift(diff.to_coeff()))
