"""Low-level modular arithmetic kernels.

Everything here works on raw uint64/int64 numpy arrays or python big ints;
the ring/bfv layers own the typed wrappers.  Two interchangeable NTT
backends: numba-jitted scalar loops (default when numba imports) and a
staged vectorized numpy fallback (set ENCLOOP_NO_NUMBA=1 to force it).
Word-size primes up to 2^61 are supported; exactness is guaranteed by
Shoup multiplication for table constants and Montgomery reduction for
dynamic products.
"""

import os

import gmpy2
import numpy as np
from gmpy2 import mpz

try:
    from numba import njit

    HAVE_NUMBA = True
except Exception:  # pragma: no cover - numba is a hard dep, but keep a path
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return wrap


USE_NUMBA = HAVE_NUMBA and not os.environ.get("ENCLOOP_NO_NUMBA")

_U64 = np.uint64
_MASK32 = _U64(0xFFFFFFFF)
_SH32 = _U64(32)


# ---------------------------------------------------------------------------
# vectorized numpy primitives

def _mulhi_np(a, b):
    ah = a >> _SH32
    al = a & _MASK32
    bh = b >> _SH32
    bl = b & _MASK32
    t1 = al * bl
    t2 = ah * bl + (t1 >> _SH32)
    t3 = al * bh + (t2 & _MASK32)
    return ah * bh + (t2 >> _SH32) + (t3 >> _SH32)


def _shoup_mul_np(x, w, w_sh, p):
    # w constant with precomputed w_sh = floor(w * 2^64 / p); result in [0, p)
    q = _mulhi_np(w_sh, x)
    r = w * x - q * p
    return np.where(r >= p, r - p, r)


def _mont_redc_np(hi, lo, p, p_neg_inv):
    m = lo * p_neg_inv
    t = hi + _mulhi_np(m, p) + (lo != 0).astype(_U64)
    return np.where(t >= p, t - p, t)


def _mulmod_np(a, b, p, p_neg_inv, r2):
    t = _mont_redc_np(_mulhi_np(a, b), a * b, p, p_neg_inv)
    return _mont_redc_np(_mulhi_np(t, r2), t * r2, p, p_neg_inv)


def _ntt_fwd_np(a, psis, psis_sh, p):
    n = a.shape[0]
    t = n
    m = 1
    while m < n:
        t >>= 1
        blk = a.reshape(m, 2 * t)
        lo = blk[:, :t]
        hi = blk[:, t:]
        w = psis[m : 2 * m, None]
        wsh = psis_sh[m : 2 * m, None]
        v = _shoup_mul_np(hi, w, wsh, p)
        s = lo + v
        s = np.where(s >= p, s - p, s)
        d = np.where(lo >= v, lo - v, lo + p - v)
        blk[:, :t] = s
        blk[:, t:] = d
        m <<= 1
    return a


def _ntt_inv_np(a, ipsis, ipsis_sh, n_inv, n_inv_sh, p):
    n = a.shape[0]
    t = 1
    m = n
    while m > 1:
        h = m >> 1
        blk = a.reshape(h, 2 * t)
        lo = blk[:, :t].copy()
        hi = blk[:, t:]
        w = ipsis[h : 2 * h, None]
        wsh = ipsis_sh[h : 2 * h, None]
        s = lo + hi
        s = np.where(s >= p, s - p, s)
        d = np.where(lo >= hi, lo - hi, lo + p - hi)
        blk[:, :t] = s
        blk[:, t:] = _shoup_mul_np(d, w, wsh, p)
        t <<= 1
        m = h
    a[:] = _shoup_mul_np(a, n_inv, n_inv_sh, p)
    return a


# ---------------------------------------------------------------------------
# numba kernels (same algorithms, scalar loops)

@njit(cache=True)
def _mulhi_nb(a, b):  # pragma: no cover - exercised via jit
    ah = a >> _U64(32)
    al = a & _U64(0xFFFFFFFF)
    bh = b >> _U64(32)
    bl = b & _U64(0xFFFFFFFF)
    t1 = al * bl
    t2 = ah * bl + (t1 >> _U64(32))
    t3 = al * bh + (t2 & _U64(0xFFFFFFFF))
    return ah * bh + (t2 >> _U64(32)) + (t3 >> _U64(32))


@njit(cache=True)
def _ntt_fwd_nb(a, psis, psis_sh, p):  # pragma: no cover
    n = a.shape[0]
    t = n
    m = 1
    while m < n:
        t >>= 1
        for i in range(m):
            w = psis[m + i]
            wsh = psis_sh[m + i]
            j1 = 2 * i * t
            for j in range(j1, j1 + t):
                u = a[j]
                x = a[j + t]
                q = _mulhi_nb(wsh, x)
                v = w * x - q * p
                if v >= p:
                    v -= p
                s = u + v
                if s >= p:
                    s -= p
                a[j] = s
                a[j + t] = u - v if u >= v else u + p - v
        m <<= 1
    return a


@njit(cache=True)
def _ntt_inv_nb(a, ipsis, ipsis_sh, n_inv, n_inv_sh, p):  # pragma: no cover
    n = a.shape[0]
    t = 1
    m = n
    while m > 1:
        h = m >> 1
        j1 = 0
        for i in range(h):
            w = ipsis[h + i]
            wsh = ipsis_sh[h + i]
            for j in range(j1, j1 + t):
                u = a[j]
                v = a[j + t]
                s = u + v
                if s >= p:
                    s -= p
                a[j] = s
                d = u - v if u >= v else u + p - v
                q = _mulhi_nb(wsh, d)
                r = w * d - q * p
                if r >= p:
                    r -= p
                a[j + t] = r
            j1 += 2 * t
        t <<= 1
        m = h
    for j in range(n):
        x = a[j]
        q = _mulhi_nb(n_inv_sh, x)
        r = n_inv * x - q * p
        if r >= p:
            r -= p
        a[j] = r
    return a


@njit(cache=True)
def _mulmod_nb(a, b, out, p, p_neg_inv, r2):  # pragma: no cover
    for i in range(a.shape[0]):
        hi = _mulhi_nb(a[i], b[i])
        lo = a[i] * b[i]
        m = lo * p_neg_inv
        t = hi + _mulhi_nb(m, p) + (_U64(1) if lo != _U64(0) else _U64(0))
        if t >= p:
            t -= p
        hi2 = _mulhi_nb(t, r2)
        lo2 = t * r2
        m2 = lo2 * p_neg_inv
        t2 = hi2 + _mulhi_nb(m2, p) + (_U64(1) if lo2 != _U64(0) else _U64(0))
        if t2 >= p:
            t2 -= p
        out[i] = t2
    return out


@njit(cache=True)
def _muladd_nb(a, b, acc, p, p_neg_inv, r2):  # pragma: no cover
    # acc += a*b mod p, elementwise
    for i in range(a.shape[0]):
        hi = _mulhi_nb(a[i], b[i])
        lo = a[i] * b[i]
        m = lo * p_neg_inv
        t = hi + _mulhi_nb(m, p) + (_U64(1) if lo != _U64(0) else _U64(0))
        if t >= p:
            t -= p
        hi2 = _mulhi_nb(t, r2)
        lo2 = t * r2
        m2 = lo2 * p_neg_inv
        t2 = hi2 + _mulhi_nb(m2, p) + (_U64(1) if lo2 != _U64(0) else _U64(0))
        if t2 >= p:
            t2 -= p
        s = acc[i] + t2
        if s >= p:
            s -= p
        acc[i] = s
    return acc


# ---------------------------------------------------------------------------

def _bit_reverse(x, bits):
    r = 0
    for _ in range(bits):
        r = (r << 1) | (x & 1)
        x >>= 1
    return r


def find_2nth_root(p, n):
    """Smallest-generator primitive 2n-th root of unity mod p (deterministic)."""
    two_n = 2 * n
    if (p - 1) % two_n != 0:
        raise ValueError(f"prime {p} is not 1 mod {two_n}")
    exp = (p - 1) // two_n
    g = 2
    while True:
        c = pow(g, exp, p)
        if pow(c, n, p) == p - 1:  # order exactly 2n for power-of-two n
            return c
        g += 1
        if g > 10000:
            raise ValueError(f"no primitive 2n-th root found mod {p}")


class PrimeKernel:
    """Negacyclic NTT context for one word-size prime p = 1 mod 2n.

    fwd/inv operate in the butterfly-native ("kernel") ordering; the
    exponent table maps kernel positions to evaluation points so callers
    can recover the natural slot order z_k = m(psi^(2k+1)).
    """

    def __init__(self, p, n):
        if p >= (1 << 61):
            raise ValueError("prime too large for the 64-bit kernels")
        self.p = int(p)
        self.n = int(n)
        logn = n.bit_length() - 1
        psi = find_2nth_root(p, n)
        self.psi = psi
        pm = _U64(p)

        def shoup(vals):
            w = np.array(vals, dtype=np.uint64)
            wsh = np.array([(int(v) << 64) // p for v in vals], dtype=np.uint64)
            return w, wsh

        psi_inv = pow(psi, p - 2, p)
        self.psis, self.psis_sh = shoup(
            [pow(psi, _bit_reverse(j, logn), p) for j in range(n)]
        )
        self.ipsis, self.ipsis_sh = shoup(
            [pow(psi_inv, _bit_reverse(j, logn), p) for j in range(n)]
        )
        n_inv = pow(n, p - 2, p)
        self.n_inv = _U64(n_inv)
        self.n_inv_sh = _U64((n_inv << 64) // p)
        self.p_u64 = pm
        self.p_neg_inv = _U64((-pow(p, -1, 1 << 64)) % (1 << 64))
        self.r2 = _U64((1 << 128) % p)

        # kernel position -> evaluation exponent e (odd, in Z_2n), found by
        # transforming the monomial X and taking discrete logs of psi
        mono = np.zeros(n, dtype=np.uint64)
        mono[1] = 1
        out = self.fwd(mono)
        dlog = {pow(psi, e, p): e for e in range(2 * n)}
        self.eval_exp = np.array([dlog[int(v)] for v in out], dtype=np.int64)
        pos_of_exp = {int(e): j for j, e in enumerate(self.eval_exp)}
        # natural slot k evaluates at psi^(2k+1)
        self.natural_to_kernel = np.array(
            [pos_of_exp[2 * k + 1] for k in range(n)], dtype=np.int64
        )

        # construction-time self check: one round trip
        probe = np.arange(n, dtype=np.uint64) % pm
        if not np.array_equal(self.inv(self.fwd(probe.copy())), probe):
            raise AssertionError("NTT round-trip self-check failed")

    def fwd(self, a):
        """In-place forward transform of a uint64 coefficient array."""
        if USE_NUMBA:
            return _ntt_fwd_nb(a, self.psis, self.psis_sh, self.p_u64)
        return _ntt_fwd_np(a, self.psis, self.psis_sh, self.p_u64)

    def inv(self, a):
        if USE_NUMBA:
            return _ntt_inv_nb(
                a, self.ipsis, self.ipsis_sh, self.n_inv, self.n_inv_sh, self.p_u64
            )
        return _ntt_inv_np(
            a, self.ipsis, self.ipsis_sh, self.n_inv, self.n_inv_sh, self.p_u64
        )

    def fwd_natural(self, a):
        """Forward transform returning slots in natural order (slot k = eval
        at psi^(2k+1))."""
        return self.fwd(np.array(a, dtype=np.uint64))[self.natural_to_kernel]

    def inv_natural(self, z):
        buf = np.empty(self.n, dtype=np.uint64)
        buf[self.natural_to_kernel] = np.asarray(z, dtype=np.uint64)
        return self.inv(buf)

    def mulmod(self, a, b):
        if USE_NUMBA:
            out = np.empty_like(a)
            return _mulmod_nb(a, b, out, self.p_u64, self.p_neg_inv, self.r2)
        return _mulmod_np(a, b, self.p_u64, self.p_neg_inv, self.r2)

    def muladd(self, a, b, acc):
        """acc += a*b (mod p), elementwise, in place."""
        if USE_NUMBA:
            return _muladd_nb(a, b, acc, self.p_u64, self.p_neg_inv, self.r2)
        t = _mulmod_np(a, b, self.p_u64, self.p_neg_inv, self.r2)
        acc += t
        np.subtract(acc, self.p_u64, out=acc, where=acc >= self.p_u64)
        return acc

    def addmod(self, a, b):
        s = a + b
        return np.where(s >= self.p_u64, s - self.p_u64, s)

    def negacyclic_mul(self, a, b):
        """Exact negacyclic product of two uint64 coefficient arrays mod p."""
        fa = self.fwd(np.array(a, dtype=np.uint64))
        fb = self.fwd(np.array(b, dtype=np.uint64))
        return self.inv(self.mulmod(fa, fb))


_KERNELS = {}


def get_kernel(p, n):
    key = (int(p), int(n))
    k = _KERNELS.get(key)
    if k is None:
        k = _KERNELS[key] = PrimeKernel(p, n)
    return k


# ---------------------------------------------------------------------------
# Galois automorphism X -> X^g on Z[X]/(X^n + 1): coefficient permutation + sign

_GALOIS = {}


def galois_maps(n, g):
    """(dst, sign) with out[dst[i]] = sign[i] * in[i]."""
    key = (n, g % (2 * n))
    maps = _GALOIS.get(key)
    if maps is None:
        idx = (np.arange(n, dtype=np.int64) * g) % (2 * n)
        sgn = np.where(idx < n, 1, -1).astype(np.int64)
        dst = np.where(idx < n, idx, idx - n)
        maps = _GALOIS[key] = (dst, sgn)
    return maps


def apply_galois_int64(coeffs, n, g):
    """Apply the automorphism to a signed coefficient array (no reduction)."""
    dst, sgn = galois_maps(n, g)
    out = np.zeros_like(coeffs)
    out[dst] = sgn * coeffs
    return out


# ---------------------------------------------------------------------------
# exact signed lane packing for Kronecker-substitution convolution (gmpy2)

_ONES = {}


def _ones_mask(n_lanes, lane_bits):
    key = (n_lanes, lane_bits)
    v = _ONES.get(key)
    if v is None:
        v = _ONES[key] = ((mpz(1) << (lane_bits * n_lanes)) - 1) // (
            (mpz(1) << lane_bits) - 1
        )
    return v


def pack_signed(values, lane_bits):
    """Pack signed ints (|v| < 2^(lane_bits-2)) into one integer, lane_bits apart."""
    n = len(values)
    k = 1 << (lane_bits - 2)
    return gmpy2.pack([int(v) + k for v in values], lane_bits) - k * _ones_mask(
        n, lane_bits
    )


def unpack_signed(packed, lane_bits, n_lanes):
    """Inverse of pack_signed for values with |v| < 2^(lane_bits-1).

    Returns an object ndarray of python/mpz ints, zero-padded to n_lanes.
    """
    off = mpz(1) << (lane_bits - 1)
    shifted = packed + off * _ones_mask(n_lanes, lane_bits)
    if shifted < 0:
        raise ValueError("lane offset too small for packed value")
    lanes = gmpy2.unpack(shifted, lane_bits)
    if len(lanes) < n_lanes:
        lanes = list(lanes) + [off] * (n_lanes - len(lanes))
    # np.fromiter sidesteps numpy's per-element array-likeness probing
    out = np.fromiter(lanes, dtype=object, count=n_lanes)
    out -= off
    return out


def negacyclic_convolve_exact(a_vals, b_vals, coeff_bits):
    """Exact negacyclic convolution over Z of signed coefficient lists.

    coeff_bits bounds |coefficient| of either operand; the product is
    computed with a single big-integer multiply (Kronecker substitution).
    """
    n = len(a_vals)
    lane_bits = 2 * coeff_bits + n.bit_length() + 4
    lane_bits += (-lane_bits) % 8  # byte-align for cheap pack/unpack
    pa = pack_signed(a_vals, lane_bits)
    pb = pack_signed(b_vals, lane_bits)
    conv = unpack_signed(pa * pb, lane_bits, 2 * n)
    return [int(v) for v in conv[:n] - conv[n:]]
