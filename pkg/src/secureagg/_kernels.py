"""JIT-compiled inner loops for modular polynomial arithmetic.

All kernels operate on 2-D uint64 arrays of shape ``(batch, n)`` so callers
can transform many polynomials per call.  Moduli are word-sized primes below
2**56, which keeps every intermediate inside the uint64/128-bit-emulation
budget used here:

* NTT butterflies use Shoup multiplication (precomputed ``floor(w << 64 / p)``
  companions), with values kept strictly reduced to ``[0, p)``.
* Variable-by-variable products (pointwise multiplication) use Montgomery
  reduction with R = 2**64.
* ``dot_wrap`` is a plain wrapping (mod 2**64) integer matrix product used by
  the mask expander, where the modulus is a power of two.

numba emulates the required 64x64 -> 128 bit products via 32-bit halves; the
uint64 arithmetic wraps mod 2**64 exactly like C.
"""

from __future__ import annotations

from numba import njit, uint64

_M32 = uint64(0xFFFFFFFF)


@njit(uint64(uint64, uint64), cache=True, inline="always")
def _mulhi(a, b):
    """High 64 bits of the 128-bit product a*b."""
    a_lo = a & _M32
    a_hi = a >> uint64(32)
    b_lo = b & _M32
    b_hi = b >> uint64(32)
    lo_lo = a_lo * b_lo
    hi_lo = a_hi * b_lo
    lo_hi = a_lo * b_hi
    cross = (lo_lo >> uint64(32)) + (hi_lo & _M32) + lo_hi
    return a_hi * b_hi + (hi_lo >> uint64(32)) + (cross >> uint64(32))


@njit(uint64(uint64, uint64, uint64, uint64), cache=True, inline="always")
def _shoup_mul(x, w, w_shoup, p):
    """x * w mod p with precomputed w_shoup = floor(w * 2**64 / p)."""
    q = _mulhi(x, w_shoup)
    r = x * w - q * p
    if r >= p:
        r -= p
    return r


@njit(cache=True)
def ntt_forward(a, psis, psis_shoup, p):
    """In-place negacyclic NTT of each row of ``a``.

    ``psis`` holds powers of the primitive 2n-th root of unity in
    bit-reversed order; the decimation-in-time schedule below folds the
    negacyclic twist into the transform.
    """
    batch, n = a.shape
    for b in range(batch):
        t = n
        m = 1
        while m < n:
            t >>= 1
            for i in range(m):
                j1 = 2 * i * t
                w = psis[m + i]
                w_sh = psis_shoup[m + i]
                for j in range(j1, j1 + t):
                    u = a[b, j]
                    v = _shoup_mul(a[b, j + t], w, w_sh, p)
                    s = u + v
                    if s >= p:
                        s -= p
                    a[b, j] = s
                    d = u + p - v
                    if d >= p:
                        d -= p
                    a[b, j + t] = d
            m <<= 1


@njit(cache=True)
def ntt_inverse(a, ipsis, ipsis_shoup, n_inv, n_inv_shoup, p):
    """In-place inverse of :func:`ntt_forward`, including the 1/n scaling."""
    batch, n = a.shape
    for b in range(batch):
        t = 1
        m = n
        while m > 1:
            j1 = 0
            h = m >> 1
            for i in range(h):
                w = ipsis[h + i]
                w_sh = ipsis_shoup[h + i]
                for j in range(j1, j1 + t):
                    u = a[b, j]
                    v = a[b, j + t]
                    s = u + v
                    if s >= p:
                        s -= p
                    a[b, j] = s
                    d = u + p - v
                    if d >= p:
                        d -= p
                    a[b, j + t] = _shoup_mul(d, w, w_sh, p)
                j1 += 2 * t
            t <<= 1
            m = h
        for j in range(n):
            a[b, j] = _shoup_mul(a[b, j], n_inv, n_inv_shoup, p)


@njit(uint64(uint64, uint64, uint64, uint64), cache=True, inline="always")
def _mont_redc(t_hi, t_lo, p, p_neg_inv):
    """Montgomery reduction: (t_hi * 2**64 + t_lo) * 2**-64 mod p, < 2p."""
    m = t_lo * p_neg_inv
    mp_hi = _mulhi(m, p)
    mp_lo = m * p
    carry = uint64(0) if (t_lo | mp_lo) == uint64(0) else uint64(1)
    return t_hi + mp_hi + carry


@njit(cache=True)
def pointwise_mul(a, b, out, p, p_neg_inv, r2):
    """out = a * b mod p, element-wise on (batch, n) arrays.

    Two Montgomery reductions per element: REDC(a*b) then REDC(. * R^2).
    """
    batch, n = a.shape
    for i in range(batch):
        for j in range(n):
            x = a[i, j]
            y = b[i, j]
            t = _mont_redc(_mulhi(x, y), x * y, p, p_neg_inv)
            r = _mont_redc(_mulhi(t, r2), t * r2, p, p_neg_inv)
            if r >= p:
                r -= p
            out[i, j] = r


@njit(cache=True)
def scalar_mul(a, out, w, w_shoup, p):
    """out = a * w mod p for a fixed scalar w (Shoup form)."""
    batch, n = a.shape
    for i in range(batch):
        for j in range(n):
            out[i, j] = _shoup_mul(a[i, j], w, w_shoup, p)


@njit(cache=True)
def dot_wrap(lhs, rhs, out):
    """out = lhs @ rhs with uint64 wrap-around (mod 2**64) arithmetic.

    lhs: (rows, k), rhs: (k, cols), out: (rows, cols).  The k-outer loop
    keeps rhs access streaming so the compiler can vectorize.
    """
    rows, k = lhs.shape
    cols = rhs.shape[1]
    for r in range(rows):
        for c in range(cols):
            out[r, c] = uint64(0)
        for i in range(k):
            v = lhs[r, i]
            for c in range(cols):
                out[r, c] += v * rhs[i, c]


