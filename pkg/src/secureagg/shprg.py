"""Seed-homomorphic mask generation from learning-with-rounding.

A seed s in Z_q^mu is stretched to a mask stream in Z_p^M by rounding the
matrix-vector product with a public matrix A: entry j is
``floor((sum_i A[i, j] * s[i] mod q) * p / q)``.  Both moduli are powers of
two, so rounding is a plain right shift and all mod-q accumulation is exact
uint64 wrap-around (q <= 2**64) or 24-bit-limb arithmetic (q = 2**72).

The construction is additively homomorphic up to one unit per added seed:
expanding a sum of seeds differs from summing the expansions by at most
N - 1 per entry, which the unmasking side absorbs.

A is never materialized for large outputs; column blocks are derived on
demand from a 32-byte public seed via SHAKE-128, with an optional cache for
sessions that expand against the same matrix repeatedly.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels

# Columns per derivation chunk; one SHAKE stream covers one chunk.
CHUNK_COLS = 512

_LIMB_BITS = 24
_LIMB_MASK = np.uint64((1 << _LIMB_BITS) - 1)


# ---------------------------------------------------------------------------
# Parameters and named settings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShprgParams:
    """Mask-generator parameters: seed dimension mu, moduli p < q, public seed.

    mu is the seed dimension (kept distinct from the encryption ring degree).
    q/p > mu is required for the underlying rounding assumption to be hard at
    the configured level; hardness itself is a configuration constant here,
    not something this code re-derives.
    """

    mu: int
    p: int
    q: int
    crs: bytes
    setting_label: str | None = None

    def __post_init__(self) -> None:
        if self.p & (self.p - 1) or self.q & (self.q - 1):
            raise ValueError("p and q must both be powers of two")
        if not self.p < self.q:
            raise ValueError(f"need p < q, got p = {self.p}, q = {self.q}")
        if self.q // self.p <= self.mu:
            raise ValueError(f"hardness condition violated: q/p = {self.q // self.p} <= mu = {self.mu}")
        if self.q > 1 << 72:
            raise ValueError("input moduli beyond 2**72 are not supported")
        if len(self.crs) != 32:
            raise ValueError("crs must be exactly 32 bytes")

    @property
    def shift_bits(self) -> int:
        return self.q.bit_length() - self.p.bit_length()

    @property
    def entry_bytes(self) -> int:
        return 8 if self.q <= 1 << 64 else 9


@dataclass(frozen=True)
class Setting:
    """One named parameter row: moduli plus its published capacity constants."""

    mu: int
    p: int
    q: int
    security_bits: int
    max_clients: int


SETTINGS: dict[str, Setting] = {
    "A": Setting(mu=512, p=1 << 24, q=1 << 54, security_bits=233, max_clients=256),
    "B": Setting(mu=512, p=1 << 32, q=1 << 64, security_bits=128, max_clients=65536),
    "C": Setting(mu=256, p=1 << 24, q=1 << 72, security_bits=132, max_clients=256),
    "D": Setting(mu=1024, p=1 << 32, q=1 << 48, security_bits=244, max_clients=65536),
}


def params_for_setting(label: str, crs: bytes, p_override: int | None = None) -> ShprgParams:
    """Instantiate ShprgParams for a named setting (optionally overriding p)."""
    try:
        s = SETTINGS[label]
    except KeyError:
        raise ValueError(f"unknown setting {label!r}; choose one of {sorted(SETTINGS)}") from None
    return ShprgParams(
        mu=s.mu, p=p_override if p_override else s.p, q=s.q, crs=crs, setting_label=label
    )


# ---------------------------------------------------------------------------
# Seeds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Seed:
    """mu values in [0, q)."""

    entries: tuple[int, ...]

    def to_bytes(self) -> bytes:
        # 8-byte little-endian words; only wire-safe while q <= 2**64
        if any(e >= 1 << 64 for e in self.entries):
            raise ValueError("seed entries beyond 64 bits have no wire encoding")
        return b"".join(struct.pack("<Q", e) for e in self.entries)

    @classmethod
    def from_bytes(cls, data: bytes, mu: int) -> "Seed":
        if len(data) != 8 * mu:
            raise ValueError(f"expected {8 * mu} bytes for a {mu}-entry seed, got {len(data)}")
        return cls(tuple(x[0] for x in struct.iter_unpack("<Q", data)))


def sample_seed(params: ShprgParams, rng: np.random.Generator) -> Seed:
    """mu entries i.i.d. uniform in [0, q)."""
    if params.q <= 1 << 64:
        vals = rng.integers(0, params.q, size=params.mu, dtype=np.uint64)
        return Seed(tuple(int(v) for v in vals))
    hi_bits = params.q.bit_length() - 1 - 64
    lo = rng.integers(0, 1 << 64, size=params.mu, dtype=np.uint64)
    hi = rng.integers(0, 1 << hi_bits, size=params.mu, dtype=np.uint64)
    return Seed(tuple((int(h) << 64) | int(lo_) for h, lo_ in zip(hi, lo)))


def add_seeds(seeds, params: ShprgParams) -> Seed:
    """Entry-wise sum mod q."""
    seqs = [s.entries if isinstance(s, Seed) else tuple(s) for s in seeds]
    for s in seqs:
        if len(s) != params.mu:
            raise ValueError(f"seed length {len(s)} does not match mu = {params.mu}")
    return Seed(tuple(sum(col) % params.q for col in zip(*seqs)))


def reduce_seed(entries, params: ShprgParams) -> Seed:
    """Reduce arbitrary integers entry-wise into [0, q)."""
    if len(entries) != params.mu:
        raise ValueError(f"expected {params.mu} entries, got {len(entries)}")
    return Seed(tuple(int(e) % params.q for e in entries))


# ---------------------------------------------------------------------------
# Matrix derivation
# ---------------------------------------------------------------------------


def _chunk_stream(params: ShprgParams, chunk_idx: int) -> bytes:
    xof = hashlib.shake_128(params.crs + b"mask-matrix" + struct.pack("<Q", chunk_idx))
    return xof.digest(params.mu * CHUNK_COLS * params.entry_bytes)


def _chunk_words(params: ShprgParams, chunk_idx: int) -> np.ndarray:
    """One chunk of A as (mu, CHUNK_COLS) uint64, entries already reduced mod q."""
    raw = np.frombuffer(_chunk_stream(params, chunk_idx), dtype="<u8")
    return (raw & np.uint64(params.q - 1)).reshape(params.mu, CHUNK_COLS)


def _chunk_limbs(params: ShprgParams, chunk_idx: int) -> tuple[np.ndarray, ...]:
    """One chunk of A as three 24-bit limb planes (for q = 2**72)."""
    raw = np.frombuffer(_chunk_stream(params, chunk_idx), dtype=np.uint8)
    b = raw.reshape(params.mu, CHUNK_COLS, 9).astype(np.uint64)
    return tuple(
        b[:, :, 3 * k] | (b[:, :, 3 * k + 1] << np.uint64(8)) | (b[:, :, 3 * k + 2] << np.uint64(16))
        for k in range(3)
    )


class MatrixCache:
    """Retains derived chunks of A up to a byte budget (then streams)."""

    def __init__(self, params: ShprgParams, max_bytes: int = 512 * 1024 * 1024):
        self.params = params
        self.max_bytes = max_bytes
        self._chunks: dict[int, object] = {}
        self._bytes = 0

    def get(self, chunk_idx: int):
        hit = self._chunks.get(chunk_idx)
        if hit is not None:
            return hit
        if self.params.q <= 1 << 64:
            chunk = _chunk_words(self.params, chunk_idx)
            size = chunk.nbytes
        else:
            chunk = _chunk_limbs(self.params, chunk_idx)
            size = sum(c.nbytes for c in chunk)
        if self._bytes + size <= self.max_bytes:
            self._chunks[chunk_idx] = chunk
            self._bytes += size
        return chunk


def derive_matrix_block(params: ShprgParams, col_start: int, col_count: int) -> np.ndarray:
    """Columns [col_start, col_start + col_count) of A, shape (mu, col_count).

    Entries are a pure function of (crs, row, column): the stream for the
    chunk containing a column never depends on how the caller blocks its
    requests, so disjoint ranges concatenate consistently.
    """
    if col_count < 0 or col_start < 0:
        raise ValueError("column range must be non-negative")
    first = col_start // CHUNK_COLS
    last = (col_start + col_count - 1) // CHUNK_COLS if col_count else first
    if params.q <= 1 << 64:
        parts = [_chunk_words(params, c) for c in range(first, last + 1)]
        wide = np.concatenate(parts, axis=1) if parts else np.empty((params.mu, 0), np.uint64)
    else:
        cols = []
        for c in range(first, last + 1):
            l0, l1, l2 = _chunk_limbs(params, c)
            cols.append(
                l0.astype(object) + (l1.astype(object) << 24) + (l2.astype(object) << 48)
            )
        wide = np.concatenate(cols, axis=1)
    lo = col_start - first * CHUNK_COLS
    return wide[:, lo : lo + col_count]


# ---------------------------------------------------------------------------
# Expansion
# ---------------------------------------------------------------------------


def expand(
    seed: Seed, out_len: int, params: ShprgParams, cache: MatrixCache | None = None
) -> np.ndarray:
    """The mask stream for one seed: out_len values in [0, p), dtype uint64."""
    return expand_batch([seed], out_len, params, cache)[0]


def expand_batch(
    seeds, out_len: int, params: ShprgParams, cache: MatrixCache | None = None
) -> np.ndarray:
    """Masks for many seeds against the same matrix, shape (len(seeds), out_len).

    Equivalent to stacking :func:`expand` results but derives each matrix
    chunk once, which is what makes bulk verification runs affordable.
    ``seeds`` may be Seed objects, entry sequences, or (for q <= 2**64) a
    ready-made (rows, mu) uint64 array.
    """
    if out_len < 1:
        raise ValueError("out_len must be at least 1")
    if isinstance(seeds, np.ndarray) and params.q <= 1 << 64:
        if seeds.ndim != 2 or seeds.shape[1] != params.mu:
            raise ValueError(f"seed array must be (rows, {params.mu}), got {seeds.shape}")
        mat = np.ascontiguousarray(seeds, dtype=np.uint64)
        if params.q < 1 << 64 and int(mat.max(initial=0)) >= params.q:
            raise ValueError("seed entry out of range [0, q)")
        return _expand_words(mat, out_len, params, cache)
    rows = [s.entries if isinstance(s, Seed) else tuple(s) for s in seeds]
    for r in rows:
        if len(r) != params.mu:
            raise ValueError(f"seed length {len(r)} does not match mu = {params.mu}")
        if any(not 0 <= e < params.q for e in r):
            raise ValueError("seed entry out of range [0, q)")
    if params.q <= 1 << 64:
        return _expand_words(np.array(rows, dtype=np.uint64), out_len, params, cache)
    return _expand_limbs(rows, out_len, params, cache)


def _expand_words(seeds: np.ndarray, out_len, params: ShprgParams, cache) -> np.ndarray:
    shift = np.uint64(params.shift_bits)
    qmask = np.uint64(params.q - 1)
    out = np.empty((len(seeds), out_len), dtype=np.uint64)
    acc = np.empty((len(seeds), CHUNK_COLS), dtype=np.uint64)
    for chunk in range(0, (out_len + CHUNK_COLS - 1) // CHUNK_COLS):
        block = cache.get(chunk) if cache is not None else _chunk_words(params, chunk)
        _kernels.dot_wrap(seeds, block, acc)
        lo = chunk * CHUNK_COLS
        take = min(CHUNK_COLS, out_len - lo)
        out[:, lo : lo + take] = (acc[:, :take] & qmask) >> shift
    return out


def _expand_limbs(rows, out_len, params: ShprgParams, cache) -> np.ndarray:
    # 24-bit-limb path for q = 2**72; masks must fit in the top limb
    if params.shift_bits < 48:
        raise ValueError("q > 2**64 supports only p <= 2**24")
    n_rows = len(rows)
    seed_limbs = [
        np.array([(e >> (_LIMB_BITS * k)) & int(_LIMB_MASK) for e in r], dtype=np.uint64)
        for r in rows
        for k in range(3)
    ]
    s = [np.stack(seed_limbs[k::3]) for k in range(3)]  # 3 x (rows, mu)
    out = np.empty((n_rows, out_len), dtype=np.uint64)
    prods = [np.empty((n_rows, CHUNK_COLS), dtype=np.uint64) for _ in range(6)]
    for chunk in range(0, (out_len + CHUNK_COLS - 1) // CHUNK_COLS):
        a = cache.get(chunk) if cache is not None else _chunk_limbs(params, chunk)
        # weight w collects products s_i * a_j with i + j = w; w >= 3 is >= 2**72
        l0, l1, l2 = (np.zeros((n_rows, CHUNK_COLS), dtype=np.uint64) for _ in range(3))
        pair_idx = 0
        for i in range(3):
            for j in range(3 - i):
                _kernels.dot_wrap(s[i], a[j], prods[pair_idx % 6])
                target = (l0, l1, l2)[i + j]
                target += prods[pair_idx % 6]
                pair_idx += 1
        t1 = l1 + (l0 >> np.uint64(_LIMB_BITS))
        t2 = l2 + (t1 >> np.uint64(_LIMB_BITS))
        value_hi = t2 & _LIMB_MASK  # bits [48, 72) of the exact mod-2**72 result
        hi_shift = np.uint64(params.shift_bits - 48)
        lo = chunk * CHUNK_COLS
        take = min(CHUNK_COLS, out_len - lo)
        out[:, lo : lo + take] = (value_hi >> hi_shift)[:, :take]
    return out
