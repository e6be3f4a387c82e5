"""Negacyclic polynomial arithmetic over R_q = Z[X]/(X^n + 1) in RNS form.

The ciphertext modulus q is a product of word-sized primes, each congruent
to 1 mod 2n so the negacyclic number-theoretic transform exists per prime.
A ring element is stored as one length-n uint64 coefficient array per prime
(residue number system), together with a domain flag saying whether the
arrays hold plain coefficients or their NTT image.

Also houses the three samplers used by the encryption layer: uniform over
R_q, ternary {-1, 0, 1} keys, and a truncated discrete Gaussian for errors.
All operations are pure; ring elements are frozen after construction.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels

# ---------------------------------------------------------------------------
# Primality / root finding (word-sized inputs only)
# ---------------------------------------------------------------------------

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(x: int) -> bool:
    """Deterministic Miller-Rabin, exact for x < 3.3e24."""
    if x < 2:
        return False
    for b in _MR_BASES:
        if x % b == 0:
            return x == b
    d = x - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_BASES:
        y = pow(a, d, x)
        if y == 1 or y == x - 1:
            continue
        for _ in range(r - 1):
            y = y * y % x
            if y == x - 1:
                break
        else:
            return False
    return True


def find_ntt_prime_below(limit: int, n: int) -> int:
    """Largest prime p < limit with p = 1 (mod 2n)."""
    step = 2 * n
    p = ((limit - 2) // step) * step + 1
    while p > step and not is_prime(p):
        p -= step
    if p <= step:
        raise ValueError(f"no prime = 1 mod {step} below {limit}")
    return p


def find_root_of_unity(p: int, order: int) -> int:
    """A primitive ``order``-th root of unity mod prime p (order = 2n, n a power of two)."""
    if (p - 1) % order != 0:
        raise ValueError(f"{order} does not divide {p} - 1")
    for g in range(2, 1 << 20):
        psi = pow(g, (p - 1) // order, p)
        # order is a power of two, so psi^(order/2) == -1 certifies full order
        if pow(psi, order // 2, p) == p - 1:
            return psi
    raise ValueError(f"no generator found for modulus {p}")


def _bit_reverse(x: int, bits: int) -> int:
    r = 0
    for _ in range(bits):
        r = (r << 1) | (x & 1)
        x >>= 1
    return r


# ---------------------------------------------------------------------------
# Per-prime NTT tables
# ---------------------------------------------------------------------------


def _shoup(values: np.ndarray, p: int) -> np.ndarray:
    return np.array([(int(v) << 64) // p for v in values], dtype=np.uint64)


@dataclass(frozen=True)
class NttTables:
    """Precomputed twiddle factors and reduction constants for one prime."""

    prime: np.uint64
    psis: np.ndarray
    psis_shoup: np.ndarray
    ipsis: np.ndarray
    ipsis_shoup: np.ndarray
    n_inv: np.uint64
    n_inv_shoup: np.uint64
    mont_p_neg_inv: np.uint64  # -p^-1 mod 2^64
    mont_r2: np.uint64  # 2^128 mod p

    @classmethod
    def build(cls, p: int, n: int) -> "NttTables":
        psi = find_root_of_unity(p, 2 * n)
        ipsi = pow(psi, -1, p)
        bits = n.bit_length() - 1
        psis = np.zeros(n, dtype=np.uint64)
        ipsis = np.zeros(n, dtype=np.uint64)
        for i in range(n):
            j = _bit_reverse(i, bits)
            psis[i] = pow(psi, j, p)
            ipsis[i] = pow(ipsi, j, p)
        n_inv = pow(n, -1, p)
        p_neg_inv = (-pow(p, -1, 1 << 64)) % (1 << 64)
        return cls(
            prime=np.uint64(p),
            psis=psis,
            psis_shoup=_shoup(psis, p),
            ipsis=ipsis,
            ipsis_shoup=_shoup(ipsis, p),
            n_inv=np.uint64(n_inv),
            n_inv_shoup=np.uint64((n_inv << 64) // p),
            mont_p_neg_inv=np.uint64(p_neg_inv),
            mont_r2=np.uint64((1 << 128) % p),
        )


# ---------------------------------------------------------------------------
# Ring parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RingParams:
    """Dimensions, moduli and cached NTT tables for one ring R_q.

    Invariants enforced at construction: n is a power of two, every prime is
    1 mod 2n, and delta = floor(q / t) satisfies delta*t <= q < (delta+1)*t.
    """

    n: int
    primes: tuple[int, ...]
    t: int
    tables: tuple[NttTables, ...] = field(repr=False, compare=False, default=())

    def __post_init__(self) -> None:
        if self.n < 2 or self.n & (self.n - 1):
            raise ValueError(f"ring degree {self.n} is not a power of two")
        for p in self.primes:
            if not is_prime(p):
                raise ValueError(f"modulus factor {p} is not prime")
            if p % (2 * self.n) != 1:
                raise ValueError(f"prime {p} is not 1 mod 2n = {2 * self.n}")
            if p >= 1 << 56:
                raise ValueError(f"prime {p} exceeds the 56-bit word budget")
        if self.t < 2:
            raise ValueError("plaintext modulus must be at least 2")
        if not self.tables:
            object.__setattr__(
                self, "tables", tuple(NttTables.build(p, self.n) for p in self.primes)
            )
        assert self.delta * self.t <= self.q < (self.delta + 1) * self.t

    @property
    def q(self) -> int:
        return math.prod(self.primes)

    @property
    def delta(self) -> int:
        """BFV scaling factor floor(q / t), a double-word integer."""
        return self.q // self.t

    @property
    def params_id(self) -> str:
        key = f"{self.n}:{','.join(map(str, self.primes))}:{self.t}".encode()
        return hashlib.blake2b(key, digest_size=8).hexdigest()

    @classmethod
    def create(cls, n: int, log2_q: int, t: int) -> "RingParams":
        """Pick two NTT-friendly primes whose product has exactly log2_q bits."""
        bits_lo = log2_q // 2
        bits_hi = log2_q - bits_lo
        p1 = find_ntt_prime_below(1 << bits_lo, n)
        p2 = find_ntt_prime_below(1 << bits_hi, n)
        params = cls(n=n, primes=(p1, p2), t=t)
        if params.q.bit_length() != log2_q:
            raise ValueError(
                f"prime search produced a {params.q.bit_length()}-bit modulus, wanted {log2_q}"
            )
        return params


@lru_cache(maxsize=8)
def default_ring_params(n: int = 4096, log2_q: int = 109, t: int = 1 << 64) -> RingParams:
    """The production parameter set: n = 2^12, 109-bit q, 64-bit t."""
    return RingParams.create(n, log2_q, t)


# ---------------------------------------------------------------------------
# Ring elements
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<IBB")  # n, prime count, domain flag


@dataclass(frozen=True, eq=False)
class RingElement:
    """An element of R_q: per-prime residue rows, frozen after construction."""

    params: RingParams
    residues: np.ndarray  # shape (len(primes), n), uint64, read-only
    is_ntt: bool

    def __post_init__(self) -> None:
        k = len(self.params.primes)
        if self.residues.shape != (k, self.params.n) or self.residues.dtype != np.uint64:
            raise ValueError(
                f"residue array must be uint64 of shape ({k}, {self.params.n}), "
                f"got {self.residues.dtype} {self.residues.shape}"
            )
        self.residues.setflags(write=False)

    # -- domain conversion -------------------------------------------------

    def to_ntt(self) -> "RingElement":
        if self.is_ntt:
            return self
        work = np.ascontiguousarray(self.residues)
        out = np.empty_like(work)
        for i, tab in enumerate(self.params.tables):
            row = work[i : i + 1].copy()
            _kernels.ntt_forward(row, tab.psis, tab.psis_shoup, tab.prime)
            out[i] = row[0]
        return RingElement(self.params, out, is_ntt=True)

    def to_coeff(self) -> "RingElement":
        if not self.is_ntt:
            return self
        out = np.empty_like(self.residues)
        for i, tab in enumerate(self.params.tables):
            row = self.residues[i : i + 1].copy()
            _kernels.ntt_inverse(
                row, tab.ipsis, tab.ipsis_shoup, tab.n_inv, tab.n_inv_shoup, tab.prime
            )
            out[i] = row[0]
        return RingElement(self.params, out, is_ntt=False)

    # -- serialization -----------------------------------------------------

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(self.params.n, len(self.params.primes), 1 if self.is_ntt else 0)
        body = self.residues.astype("<u8", copy=False).tobytes()
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes, params: RingParams) -> tuple["RingElement", int]:
        n, k, domain = _HEADER.unpack_from(data, 0)
        if n != params.n or k != len(params.primes):
            raise ValueError(
                f"serialized ring header (n={n}, primes={k}) does not match params "
                f"(n={params.n}, primes={len(params.primes)})"
            )
        count = k * n
        offset = _HEADER.size
        arr = np.frombuffer(data, dtype="<u8", count=count, offset=offset).reshape(k, n)
        arr = arr.astype(np.uint64)
        for i, p in enumerate(params.primes):
            if arr[i].max(initial=0) >= p:
                raise ValueError(f"serialized residue out of range for prime {p}")
        return cls(params, arr, is_ntt=bool(domain)), offset + 8 * count

    @staticmethod
    def serialized_size(params: RingParams) -> int:
        return _HEADER.size + 8 * len(params.primes) * params.n

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, RingElement)
            and self.params == other.params
            and self.is_ntt == other.is_ntt
            and np.array_equal(self.residues, other.residues)
        )


def _check_compatible(a: RingElement, b: RingElement, op: str) -> None:
    if a.params != b.params:
        raise ValueError(f"{op}: operands use different ring parameters")
    if a.is_ntt != b.is_ntt:
        raise ValueError(f"{op}: operands are in different domains (coeff vs ntt)")


def zero(params: RingParams, is_ntt: bool = False) -> RingElement:
    return RingElement(
        params, np.zeros((len(params.primes), params.n), dtype=np.uint64), is_ntt
    )


def one(params: RingParams) -> RingElement:
    arr = np.zeros((len(params.primes), params.n), dtype=np.uint64)
    arr[:, 0] = 1
    return RingElement(params, arr, is_ntt=False)


def from_int_coeffs(params: RingParams, coeffs) -> RingElement:
    """Build a coefficient-domain element from signed/unsigned integers mod q."""
    if len(coeffs) != params.n:
        raise ValueError(f"expected {params.n} coefficients, got {len(coeffs)}")
    arr = np.empty((len(params.primes), params.n), dtype=np.uint64)
    for i, p in enumerate(params.primes):
        arr[i] = np.array([int(c) % p for c in coeffs], dtype=np.uint64)
    return RingElement(params, arr, is_ntt=False)


def add(a: RingElement, b: RingElement) -> RingElement:
    _check_compatible(a, b, "ring add")
    out = np.empty_like(a.residues)
    for i, p in enumerate(a.params.primes):
        out[i] = (a.residues[i] + b.residues[i]) % np.uint64(p)
    return RingElement(a.params, out, a.is_ntt)


def sub(a: RingElement, b: RingElement) -> RingElement:
    _check_compatible(a, b, "ring sub")
    out = np.empty_like(a.residues)
    for i, p in enumerate(a.params.primes):
        out[i] = (a.residues[i] + np.uint64(p) - b.residues[i]) % np.uint64(p)
    return RingElement(a.params, out, a.is_ntt)


def neg(a: RingElement) -> RingElement:
    out = np.empty_like(a.residues)
    for i, p in enumerate(a.params.primes):
        out[i] = (np.uint64(p) - a.residues[i]) % np.uint64(p)
    return RingElement(a.params, out, a.is_ntt)


def sum_elements(elems: list[RingElement]) -> RingElement:
    """Fold-sum of many ring elements (chunked so uint64 never overflows)."""
    if not elems:
        raise ValueError("cannot sum an empty sequence of ring elements")
    first = elems[0]
    for e in elems[1:]:
        _check_compatible(first, e, "ring sum")
    out = np.empty_like(first.residues)
    stack = np.stack([e.residues for e in elems])  # (count, k, n)
    for i, p in enumerate(first.params.primes):
        acc = np.zeros(first.params.n, dtype=np.uint64)
        # each value < 2^56; chunks of 128 keep partial sums < 2^63
        for start in range(0, len(elems), 128):
            part = np.add.reduce(stack[start : start + 128, i, :], axis=0, dtype=np.uint64)
            acc = (acc + part % np.uint64(p)) % np.uint64(p)
        out[i] = acc
    return RingElement(first.params, out, first.is_ntt)


def negacyclic_mul(a: RingElement, b: RingElement) -> RingElement:
    """Product in R_q; result is returned in the operands' domain."""
    _check_compatible(a, b, "ring mul")
    an = a.to_ntt()
    bn = b.to_ntt()
    out = np.empty_like(an.residues)
    for i, tab in enumerate(a.params.tables):
        _kernels.pointwise_mul(
            np.ascontiguousarray(an.residues[i : i + 1]),
            np.ascontiguousarray(bn.residues[i : i + 1]),
            out[i : i + 1],
            tab.prime,
            tab.mont_p_neg_inv,
            tab.mont_r2,
        )
    result = RingElement(a.params, out, is_ntt=True)
    return result if a.is_ntt else result.to_coeff()


def scalar_mul(a: RingElement, scalar: int) -> RingElement:
    """a * scalar mod q for a non-negative integer scalar (may exceed one word)."""
    out = np.empty_like(a.residues)
    for i, tab in enumerate(a.params.tables):
        p = int(tab.prime)
        w = scalar % p
        _kernels.scalar_mul(
            np.ascontiguousarray(a.residues[i : i + 1]),
            out[i : i + 1],
            np.uint64(w),
            np.uint64((w << 64) // p),
            tab.prime,
        )
    return RingElement(a.params, out, a.is_ntt)


# ---------------------------------------------------------------------------
# CRT reconstruction
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _crt_weights(primes: tuple[int, ...]) -> tuple[int, ...]:
    q = math.prod(primes)
    weights = []
    for p in primes:
        m = q // p
        weights.append(m * pow(m, -1, p))
    return tuple(weights)


def crt_lift(a: RingElement) -> list[int]:
    """Exact per-coefficient reconstruction into [0, q) as Python integers."""
    if a.is_ntt:
        raise ValueError("crt_lift requires a coefficient-domain element")
    primes = a.params.primes
    q = a.params.q
    weights = _crt_weights(primes)
    rows = [a.residues[i].tolist() for i in range(len(primes))]
    return [
        sum(w * r for w, r in zip(weights, coeffs)) % q for coeffs in zip(*rows)
    ]


def centered_lift(a: RingElement) -> list[int]:
    """CRT lift mapped to the centered interval (-q/2, q/2]."""
    q = a.params.q
    half = q // 2
    return [x - q if x > half else x for x in crt_lift(a)]


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplerConfig:
    """Error and key distribution parameters.

    gaussian_sigma is the standard deviation of the centered discrete
    Gaussian error; samples are truncated at +-tail_bound = ceil(6 sigma).
    Keys are ternary, uniform over {-1, 0, 1}^n.
    """

    gaussian_sigma: float = 3.2
    tail_bound: int = 20

    def __post_init__(self) -> None:
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be positive")
        if self.tail_bound < 6 * self.gaussian_sigma:
            raise ValueError("tail_bound must be at least 6 * gaussian_sigma")

    @property
    def cdt(self) -> np.ndarray:
        return _gaussian_cdt(self.gaussian_sigma, self.tail_bound)


@lru_cache(maxsize=8)
def _gaussian_cdt(sigma: float, tail: int) -> np.ndarray:
    """Cumulative table over support [-tail, tail] for inversion sampling."""
    zs = np.arange(-tail, tail + 1, dtype=np.float64)
    pdf = np.exp(-(zs**2) / (2.0 * sigma * sigma))
    cdf = np.cumsum(pdf / pdf.sum())
    cdf[-1] = 1.0
    return cdf


def _encode_signed(values: np.ndarray, params: RingParams) -> RingElement:
    """Encode small signed integer coefficients mod every prime."""
    arr = np.empty((len(params.primes), params.n), dtype=np.uint64)
    for i, p in enumerate(params.primes):
        arr[i] = np.where(values < 0, np.int64(p) + values, values).astype(np.uint64)
    return RingElement(params, arr, is_ntt=False)


def sample_uniform(params: RingParams, rng: np.random.Generator) -> RingElement:
    """Uniform element of R_q (independent uniform residues per CRT factor)."""
    arr = np.empty((len(params.primes), params.n), dtype=np.uint64)
    for i, p in enumerate(params.primes):
        arr[i] = rng.integers(0, p, size=params.n, dtype=np.uint64)
    return RingElement(params, arr, is_ntt=False)


def sample_ternary(params: RingParams, rng: np.random.Generator) -> RingElement:
    """Coefficients i.i.d. uniform over {-1, 0, 1}."""
    vals = rng.integers(-1, 2, size=params.n, dtype=np.int64)
    return _encode_signed(vals, params)


def sample_gaussian(
    params: RingParams, cfg: SamplerConfig, rng: np.random.Generator
) -> RingElement:
    """Centered discrete Gaussian coefficients, truncated at the tail bound."""
    u = rng.random(params.n)
    vals = np.searchsorted(cfg.cdt, u).astype(np.int64) - cfg.tail_bound
    return _encode_signed(vals, params)
