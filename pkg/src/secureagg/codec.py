"""Fixed-point quantization, mod-p masking, and seed packing.

Model updates bounded in [m_min, m_max) are mapped to w-bit integers before
masking; the aggregate of N such values is at most N(2^w - 1), so the mask
modulus p must exceed that for the sum to be recoverable.  Unmasking has to
tolerate a small negative error from the almost-homomorphic mask generator,
which appears as values just below p and is folded back by a centered window
of width N.

Seed packing flattens the tau per-epoch seeds of one agreement run into
ring-plaintext coefficient arrays, epoch-major so one decryption releases
the seeds of the earliest epochs first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .shprg import Seed


@dataclass(frozen=True)
class QuantParams:
    """Quantization width and bounds, tied to the party count and mask modulus."""

    w: int
    m_min: float
    m_max: float
    n_parties: int
    p: int

    def __post_init__(self) -> None:
        if not self.m_min < self.m_max:
            raise ValueError(f"need m_min < m_max, got [{self.m_min}, {self.m_max})")
        if self.p <= self.n_parties * ((1 << self.w) - 1):
            raise ValueError(
                f"p = {self.p} <= N(2^w - 1) = {self.n_parties * ((1 << self.w) - 1)}; "
                "aggregate would overflow the mask modulus"
            )

    @property
    def step(self) -> float:
        """Real-valued width of one quantization bucket."""
        return (self.m_max - self.m_min) / float(1 << self.w)

    @property
    def max_sum(self) -> int:
        return self.n_parties * ((1 << self.w) - 1)


def quantize(m, qp: QuantParams) -> np.ndarray:
    """w-bit quantization floor(2^w (m - m_min) / (m_max - m_min)), clipped.

    Inputs outside [m_min, m_max) are clipped to the boundary buckets; the
    half-open upper bound maps m_max (and anything above) to 2^w - 1.
    """
    vals = np.asarray(m, dtype=np.float64)
    finite = np.isfinite(vals)
    if not finite.all():
        raise ValueError(f"non-finite update entry at index {int(np.argmin(finite))}")
    clipped = np.clip(vals, qp.m_min, qp.m_max)
    scaled = np.floor((1 << qp.w) * (clipped - qp.m_min) / (qp.m_max - qp.m_min))
    return np.minimum(scaled, float((1 << qp.w) - 1)).astype(np.uint64)


def clipped_entry_count(m, qp: QuantParams) -> int:
    """How many entries of m fall outside [m_min, m_max)."""
    vals = np.asarray(m, dtype=np.float64)
    return int(np.count_nonzero((vals < qp.m_min) | (vals >= qp.m_max)))


def dequantize(x0, qp: QuantParams) -> np.ndarray:
    """Inverse scaling of an N-party aggregate: 2^-w (m_max - m_min) x + N m_min."""
    vals = np.asarray(x0, dtype=np.int64)
    if vals.size:
        hi = int(vals.max())
        lo = int(vals.min())
        if hi > qp.max_sum:
            raise ValueError(
                f"aggregate entry {hi} exceeds N(2^w - 1) = {qp.max_sum}: aggregation overflow"
            )
        if lo < -(qp.n_parties - 1):
            raise ValueError(
                f"aggregate entry {lo} below -(N - 1) = {-(qp.n_parties - 1)}: bad unmask window"
            )
    return qp.step * vals.astype(np.float64) + qp.n_parties * qp.m_min


def mask(x: np.ndarray, g: np.ndarray, p: int) -> np.ndarray:
    """(x + g) mod p."""
    if x.shape != g.shape:
        raise ValueError(f"value/mask length mismatch: {x.shape} vs {g.shape}")
    return (x.astype(np.uint64) + g.astype(np.uint64)) % np.uint64(p)


def unmask(y0: np.ndarray, g0: np.ndarray, qp: QuantParams) -> np.ndarray:
    """(y0 - g0) mod p, with values in (p - N, p) folded down to small negatives.

    The fold recovers the mask generator's error term, bounded by N - 1 in
    magnitude, which p > N(2^w - 1) guarantees cannot collide with a real
    aggregate value.
    """
    if y0.shape != g0.shape:
        raise ValueError(f"aggregate/mask length mismatch: {y0.shape} vs {g0.shape}")
    p = np.uint64(qp.p)
    d = (y0.astype(np.uint64) + p - g0.astype(np.uint64)) % p
    signed = d.astype(np.int64)
    return np.where(d > np.uint64(qp.p - qp.n_parties), signed - np.int64(qp.p), signed)


# ---------------------------------------------------------------------------
# Seed packing
# ---------------------------------------------------------------------------


def ciphertext_count(mu: int, tau: int, n: int) -> int:
    """Plaintexts (hence ciphertexts) needed for tau seeds of dimension mu."""
    return math.ceil(mu * tau / n)


def pack_seeds(seeds: Sequence[Seed], n: int) -> list[np.ndarray]:
    """Flatten tau seeds epoch-major into ceil(mu*tau/n) coefficient arrays."""
    if not seeds:
        raise ValueError("no seeds to pack")
    mu = len(seeds[0].entries)
    for i, s in enumerate(seeds):
        if len(s.entries) != mu:
            raise ValueError(f"seed {i} has length {len(s.entries)}, expected {mu}")
    flat = np.array([e for s in seeds for e in s.entries], dtype=np.uint64)
    count = ciphertext_count(mu, len(seeds), n)
    padded = np.zeros(count * n, dtype=np.uint64)
    padded[: flat.size] = flat
    return [padded[i * n : (i + 1) * n] for i in range(count)]


def unpack_seeds(arrays: Sequence[np.ndarray], mu: int, tau: int) -> list[Seed]:
    """Inverse of :func:`pack_seeds`."""
    if not arrays:
        raise ValueError("no coefficient arrays to unpack")
    n = len(arrays[0])
    expected = ciphertext_count(mu, tau, n)
    if len(arrays) != expected:
        raise ValueError(f"expected {expected} arrays for mu={mu}, tau={tau}, n={n}, got {len(arrays)}")
    flat = np.concatenate([np.asarray(a, dtype=np.uint64) for a in arrays])
    if flat.size < mu * tau:
        raise ValueError("arrays too short for the requested seed count")
    return [
        Seed(tuple(int(v) for v in flat[t * mu : (t + 1) * mu])) for t in range(tau)
    ]


def check_modulus_compat(q_shprg: int, t: int) -> None:
    """Seed sums come back mod t; reducing them mod q is only valid if q | t."""
    if t % q_shprg != 0:
        raise ValueError(
            f"mask-seed modulus {q_shprg} does not divide plaintext modulus {t}; "
            "seed sums cannot be reduced consistently"
        )
