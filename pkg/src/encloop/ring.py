"""Exact arithmetic in Z_n and R_n = Z_n[X]/(X^N + 1).

Residues follow the minimal-residue convention: [z]_n is the unique
representative in (-n/2, n/2].  Large moduli are carried as an RNS limb
set of word-size primes; per-limb values are what the kernels touch, and
full-width values are reconstructed only where an operation genuinely
needs them (see bfv.mult).
"""

from dataclasses import dataclass
from functools import lru_cache

import gmpy2
import numpy as np

from . import _kernels
from .errors import ParameterError, StructuralError


def reduce_minimal(z, n):
    """Minimal residue of z modulo n, in (-n/2, n/2]."""
    if n < 2:
        raise ParameterError("modulus must be >= 2")
    r = z % n
    return r - n if 2 * r > n else r


@lru_cache(maxsize=None)
def _crt_constants(limbs):
    q = 1
    for p in limbs:
        q *= p
    out = []
    for p in limbs:
        qi = q // p
        out.append(int(qi * pow(qi, -1, p) % q))
    return tuple(out)


def _minimal_arr(arr, p):
    """Vectorized minimal residues of a nonnegative int array mod p."""
    a = np.asarray(arr, dtype=np.int64)
    return np.where(2 * a > p, a - p, a)


@dataclass(frozen=True)
class Modulus:
    value: int
    limbs: tuple
    is_prime: bool
    ntt_friendly: bool

    @classmethod
    def create(cls, limbs, degree):
        """Build a modulus from one or more limb factors for ring degree N."""
        limbs = tuple(int(p) for p in limbs)
        value = 1
        for p in limbs:
            if p < 2:
                raise ParameterError("limb must be >= 2")
            value *= p
        is_prime = len(limbs) == 1 and gmpy2.is_prime(limbs[0])
        friendly = all(
            gmpy2.is_prime(p) and (p - 1) % (2 * degree) == 0 and p < (1 << 61)
            for p in limbs
        )
        return cls(value=value, limbs=limbs, is_prime=is_prime, ntt_friendly=friendly)

    def __str__(self):
        return f"Modulus({self.value}, limbs={self.limbs})"


class RingElement:
    """A polynomial in R_n, stored as per-limb residue rows (uint64, [0, p))."""

    __slots__ = ("modulus", "n", "_res")

    def __init__(self, modulus, n, residues):
        self.modulus = modulus
        self.n = n
        self._res = residues  # shape (num_limbs, n), uint64

    @classmethod
    def from_coeffs(cls, coeffs, modulus, n):
        coeffs = list(coeffs)
        if len(coeffs) != n:
            raise StructuralError(f"expected {n} coefficients, got {len(coeffs)}")
        rows = []
        for p in modulus.limbs:
            if max(abs(int(c)) for c in coeffs) < (1 << 62) and p < (1 << 62):
                row = np.asarray(coeffs, dtype=np.int64) % np.int64(p)
            else:
                row = np.array([int(c) % p for c in coeffs], dtype=np.uint64)
            rows.append(np.asarray(row, dtype=np.uint64))
        return cls(modulus, n, np.stack(rows))

    @classmethod
    def zero(cls, modulus, n):
        return cls(modulus, n, np.zeros((len(modulus.limbs), n), dtype=np.uint64))

    @property
    def coeffs(self):
        """Minimal residues mod the full modulus value.

        int64 for a single word-size limb, python ints (object dtype) for
        an RNS modulus.
        """
        if len(self.modulus.limbs) == 1:
            return _minimal_arr(self._res[0], self.modulus.limbs[0])
        return self.crt_coeffs()

    def crt_coeffs(self):
        """Full-width minimal residues mod the modulus value (object array)."""
        q = self.modulus.value
        consts = _crt_constants(self.modulus.limbs)
        acc = np.zeros(self.n, dtype=object)
        for row, c in zip(self._res, consts):
            acc += row.astype(object) * c
        acc %= q
        return np.where(2 * acc > q, acc - q, acc)

    def limb_residues(self):
        return self._res

    def copy(self):
        return RingElement(self.modulus, self.n, self._res.copy())

    def _check_compatible(self, other):
        if self.n != other.n or self.modulus != other.modulus:
            raise StructuralError("ring elements have mismatched modulus or degree")

    def __eq__(self, other):
        return (
            isinstance(other, RingElement)
            and self.n == other.n
            and self.modulus == other.modulus
            and np.array_equal(self._res, other._res)
        )

    def __add__(self, other):
        return poly_add(self, other)

    def __sub__(self, other):
        return poly_sub(self, other)

    def __neg__(self):
        return poly_scalar_mul(self, -1)

    def __mul__(self, other):
        if isinstance(other, RingElement):
            return poly_mul_negacyclic(self, other)
        return poly_scalar_mul(self, other)

    __rmul__ = __mul__

    def __repr__(self):
        return f"RingElement(n={self.n}, mod={self.modulus.value})"


def poly_add(a, b):
    a._check_compatible(b)
    out = np.empty_like(a._res)
    for i, p in enumerate(a.modulus.limbs):
        s = a._res[i] + b._res[i]
        out[i] = np.where(s >= np.uint64(p), s - np.uint64(p), s)
    return RingElement(a.modulus, a.n, out)


def poly_sub(a, b):
    a._check_compatible(b)
    out = np.empty_like(a._res)
    for i, p in enumerate(a.modulus.limbs):
        pv = np.uint64(p)
        out[i] = np.where(a._res[i] >= b._res[i], a._res[i] - b._res[i],
                          a._res[i] + pv - b._res[i])
    return RingElement(a.modulus, a.n, out)


def poly_scalar_mul(a, scalar):
    scalar = int(scalar)
    out = np.empty_like(a._res)
    for i, p in enumerate(a.modulus.limbs):
        s = scalar % p
        if _limb_kernel(a.modulus, i, a.n) is not None:
            k = _kernels.get_kernel(p, a.n)
            out[i] = k.mulmod(a._res[i], np.full(a.n, np.uint64(s)))
        else:
            out[i] = (a._res[i].astype(object) * s % p).astype(np.uint64)
    return RingElement(a.modulus, a.n, out)


def _limb_kernel(modulus, i, n):
    p = modulus.limbs[i]
    if gmpy2.is_prime(p) and (p - 1) % (2 * n) == 0 and 2 < p < (1 << 61):
        return _kernels.get_kernel(p, n)
    return None


def poly_mul_negacyclic(a, b):
    """Product in Z_n[X]/(X^N + 1); always equals the schoolbook result.

    NTT-friendly limb primes use the fast transform; anything else falls
    back to an exact big-int Kronecker convolution.
    """
    a._check_compatible(b)
    out = np.empty_like(a._res)
    slow = None
    for i, p in enumerate(a.modulus.limbs):
        k = _limb_kernel(a.modulus, i, a.n)
        if k is not None:
            out[i] = k.negacyclic_mul(a._res[i], b._res[i])
        else:
            if slow is None:
                bits = max(p.bit_length() for p in a.modulus.limbs) + 1
                slow = _kernels.negacyclic_convolve_exact(
                    [int(x) for x in a.coeffs], [int(x) for x in b.coeffs], bits
                )
            out[i] = np.array([v % p for v in slow], dtype=np.uint64)
    return RingElement(a.modulus, a.n, out)


class NttTables:
    """Slot transform tables for a plaintext prime T = 1 mod 2N.

    zeta is the primitive 2N-th root used by the canonical slot map
    (slot k holds m(zeta^(2k+1)), 0-based); omega = zeta^2 drives the
    cyclic part, xi and pi are their inverses, and 1/N is cached.
    """

    def __init__(self, t, n):
        if not gmpy2.is_prime(t):
            raise ParameterError("plaintext modulus must be prime for slot packing")
        if (t - 1) % (2 * n) != 0:
            raise ParameterError(f"{t} is not 1 mod {2 * n}; no slot transform")
        self.t = int(t)
        self.n = int(n)
        self.kernel = _kernels.get_kernel(t, n)
        self.zeta = self.kernel.psi
        self.omega = pow(self.zeta, 2, t)
        self.xi = pow(self.zeta, t - 2, t)
        self.pi = pow(self.omega, t - 2, t)
        self.n_inv = pow(n, t - 2, t)

    def __repr__(self):
        return f"NttTables(T={self.t}, N={self.n}, zeta={self.zeta})"


def ntt_forward(coeffs, tables):
    """Coefficients -> slot values z_k = m(zeta^(2k+1)), minimal residues."""
    t = tables.t
    arr = np.asarray(coeffs, dtype=np.int64) % np.int64(t)
    z = tables.kernel.fwd_natural(arr.astype(np.uint64))
    return _minimal_arr(z, t)


def ntt_inverse(slots, tables):
    """Slot values -> coefficients; inverse of ntt_forward."""
    t = tables.t
    arr = np.asarray(slots, dtype=np.int64) % np.int64(t)
    m = tables.kernel.inv_natural(arr.astype(np.uint64))
    return _minimal_arr(m, t)
