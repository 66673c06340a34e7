"""BFV leveled homomorphic encryption with RNS ciphertext arithmetic.

Ciphertexts live in R_Q^2 (transiently R_Q^3 between mult and relin) with
Q a product of word-size NTT-friendly primes.  Ring products mod Q run
per limb through the NTT kernels; the tensor products inside mult, whose
rescale ⌊(T/Q)x⌉ needs the canonical representative over Z, go through an
exact big-int Kronecker convolution and exact rational rounding — no
floating point anywhere in the ciphertext path.

Slot rotation is the Galois automorphism X -> X^3 followed by a
key-switch; on the packed layout of the encoding module this shifts the
usable slot row one position left.
"""

import math
import struct
from contextlib import contextmanager
from dataclasses import dataclass
from functools import lru_cache

import gmpy2
import numpy as np

from . import _kernels
from .errors import (
    KeyMaterialError,
    NoiseBudgetError,
    ParameterError,
    StructuralError,
)
from .ring import Modulus, RingElement

ROTATION_GALOIS_EXPONENT = 3  # X -> X^3: left-rotate-by-1 on the usable slot row

MAGIC = b"EIOH"
FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# parameters

@dataclass(frozen=True)
class BfvParams:
    n: int
    t: Modulus
    q: Modulus
    w: int
    noise_std: float
    security_bits: int

    def __post_init__(self):
        n, t, q = self.n, self.t.value, self.q.value
        if n < 4 or n & (n - 1):
            raise ParameterError("ring degree must be a power of two >= 4")
        if not self.t.is_prime or (t - 1) % (2 * n) != 0:
            raise ParameterError("plaintext modulus must be prime and 1 mod 2N")
        if not self.q.ntt_friendly:
            raise ParameterError("every ciphertext limb must be an NTT prime for N")
        if math.gcd(q, t) != 1:
            raise ParameterError("Q and T must be coprime")
        if self.w < 2:
            raise ParameterError("decomposition base W must be >= 2")
        if self.ell < 1:
            raise ParameterError("W too large: need floor(log_W Q) >= 1")
        if self.noise_std <= 0:
            raise ParameterError("noise std must be positive")

    @property
    def ell(self):
        e = 0
        while self.w ** (e + 1) <= self.q.value:
            e += 1
        return e

    @property
    def delta(self):
        return self.q.value // self.t.value

    @property
    def slots(self):
        return self.n // 2

    @property
    def noise_clip(self):
        return int(6 * self.noise_std)

    @property
    def lane_bits(self):
        # signed Kronecker lanes wide enough for sums of two tensor products
        qb = self.q.value.bit_length()
        bits = 2 * (qb + 1) + self.n.bit_length() + 4
        return bits + (-bits) % 8

    @classmethod
    def default(cls):
        """N=4096 profile: 25-bit plaintext prime, 109-bit two-limb Q.

        T sits at the top of the 25-bit range: the decoded values live in
        (-T/2, T/2] * delta_K * delta_d, and the tank's input transients
        need every bit of that headroom.
        """
        n = 4096
        t = _first_prime_below(1 << 25, 2 * n)
        q1 = _first_prime_below(1 << 55, 2 * n)
        q2 = _first_prime_below(1 << 54, 2 * n)
        return cls(
            n=n,
            t=Modulus.create([t], n),
            q=Modulus.create([q1, q2], n),
            w=1 << 20,
            noise_std=3.2,
            security_bits=128,
        )

    @classmethod
    def toy(cls, n=16):
        """Small-degree profile for fast property testing; no security claim."""
        t = _first_prime_below(1 << 25, 2 * n)
        q1 = _first_prime_above(1 << 44, 2 * n)
        q2 = _first_prime_above(q1 + 1, 2 * n)
        return cls(
            n=n,
            t=Modulus.create([t], n),
            q=Modulus.create([q1, q2], n),
            w=1 << 10,
            noise_std=3.2,
            security_bits=0,
        )


@lru_cache(maxsize=None)
def _first_prime_above(lo, step):
    p = lo // step * step + 1
    while p <= lo or not gmpy2.is_prime(p):
        p += step
    return int(p)


@lru_cache(maxsize=None)
def _first_prime_below(hi, step):
    p = (hi - 2) // step * step + 1
    while not gmpy2.is_prime(p):
        p -= step
    if p < 3:
        raise ParameterError("no NTT prime below bound")
    return int(p)


def profile(name):
    if name == "default":
        return BfvParams.default()
    if name == "toy":
        return BfvParams.toy()
    raise ParameterError(f"unknown profile {name!r}")


# ---------------------------------------------------------------------------
# key material and ciphertexts

class KeySet:
    """Key material bundle; any subset of the four keys may be present.

    Role views hand each protocol party exactly the keys the setup
    distributes: plant pk+sk, operator pk, controller rlk+gk.  A party
    without sk structurally cannot decrypt.
    """

    __slots__ = ("params", "sk", "pk", "rlk", "gk", "_cache")

    def __init__(self, params, sk=None, pk=None, rlk=(), gk=()):
        self.params = params
        self.sk = sk
        self.pk = tuple(pk) if pk else None
        self.rlk = tuple(tuple(pair) for pair in rlk)
        self.gk = tuple(tuple(pair) for pair in gk)
        self._cache = None

    def plant_view(self):
        return KeySet(self.params, sk=self.sk, pk=self.pk)

    def operator_view(self):
        return KeySet(self.params, pk=self.pk)

    def controller_view(self):
        return KeySet(self.params, rlk=self.rlk, gk=self.gk)

    def eval_cache(self):
        if self._cache is None:
            self._cache = _KeyEvalCache(self)
        return self._cache


class _KeyEvalCache:
    """NTT-domain copies of everything that gets multiplied repeatedly."""

    def __init__(self, ks):
        self._ks = ks
        params = ks.params
        self.kernels = [_kernels.get_kernel(p, params.n) for p in params.q.limbs]
        self._fields = {}

    def _fwd_rows(self, re):
        params = self._ks.params
        return [
            k.fwd(row.astype(np.uint64))
            for k, row in zip(self.kernels, _lift_to_q(re, params))
        ]

    def _get(self, name, builder):
        if name not in self._fields:
            self._fields[name] = builder()
        return self._fields[name]

    @property
    def sk_fwd(self):
        if self._ks.sk is None:
            raise KeyMaterialError("secret key not held by this party")
        return self._get("sk", lambda: self._fwd_rows(self._ks.sk))

    @property
    def pk_fwd(self):
        if self._ks.pk is None:
            raise KeyMaterialError("public key not held by this party")
        return self._get("pk", lambda: [self._fwd_rows(p) for p in self._ks.pk])

    @property
    def rlk_fwd(self):
        if not self._ks.rlk:
            raise KeyMaterialError("relinearization key missing")
        return self._get(
            "rlk", lambda: [[self._fwd_rows(p) for p in pair] for pair in self._ks.rlk]
        )

    @property
    def gk_fwd(self):
        if not self._ks.gk:
            raise KeyMaterialError("galois key missing")
        return self._get(
            "gk", lambda: [[self._fwd_rows(p) for p in pair] for pair in self._ks.gk]
        )


def _lift_to_q(re, params):
    """Per-limb nonneg residues of a (possibly small-modulus) element mod Q."""
    if re.modulus == params.q:
        return re.limb_residues()
    vals = re.coeffs  # minimal residues; small moduli only (sk, plaintext)
    return [
        (np.asarray(vals, dtype=np.int64) % np.int64(p)).astype(np.uint64)
        for p in params.q.limbs
    ]


class Ciphertext:
    __slots__ = ("parts", "delta_product", "_packed")

    def __init__(self, parts, delta_product=None):
        parts = tuple(parts)
        if len(parts) not in (2, 3):
            raise StructuralError("ciphertext must have 2 or 3 parts")
        self.parts = parts
        self.delta_product = delta_product
        self._packed = None

    @property
    def degree(self):
        return len(self.parts)

    def copy(self):
        return Ciphertext([p.copy() for p in self.parts], self.delta_product)


# ---------------------------------------------------------------------------
# operation tally (used by the protocol layer to check per-step op counts)

class OpCounter:
    __slots__ = ("enc", "dec", "add", "mult", "relin", "rotate")

    def __init__(self):
        self.enc = self.dec = self.add = self.mult = self.relin = self.rotate = 0

    def as_dict(self):
        return {
            "enc": self.enc,
            "dec": self.dec,
            "add": self.add,
            "mult": self.mult,
            "relin": self.relin,
            "rotate": self.rotate,
        }


_ACTIVE_COUNTER = None


@contextmanager
def count_ops():
    global _ACTIVE_COUNTER
    prev = _ACTIVE_COUNTER
    counter = OpCounter()
    _ACTIVE_COUNTER = counter
    try:
        yield counter
    finally:
        _ACTIVE_COUNTER = prev


def _tick(name):
    if _ACTIVE_COUNTER is not None:
        setattr(_ACTIVE_COUNTER, name, getattr(_ACTIVE_COUNTER, name) + 1)


# ---------------------------------------------------------------------------
# sampling

def _sample_noise(params, rng):
    e = np.rint(rng.normal(0.0, params.noise_std, params.n)).astype(np.int64)
    clip = params.noise_clip
    return np.clip(e, -clip, clip)


def _sample_binary(params, rng):
    return rng.integers(0, 2, params.n).astype(np.int64)


def _sample_uniform_q(params, rng):
    rows = [
        rng.integers(0, p, params.n, dtype=np.int64).astype(np.uint64)
        for p in params.q.limbs
    ]
    return RingElement(params.q, params.n, np.stack(rows))


def _signed_to_q(vals, params):
    rows = [
        (np.asarray(vals, dtype=np.int64) % np.int64(p)).astype(np.uint64)
        for p in params.q.limbs
    ]
    return RingElement(params.q, params.n, np.stack(rows))


# ---------------------------------------------------------------------------
# keygen

def keygen(params, seed):
    """Deterministic key generation from 32 bytes of entropy.

    Emits sk, pk, the relinearization key, and the galois key for the
    rotate-by-one automorphism (distributed alongside rlk).
    """
    if not isinstance(seed, (bytes, bytearray)) or len(seed) != 32:
        raise ParameterError("seed must be 32 bytes")
    rng = np.random.default_rng(int.from_bytes(seed, "big"))
    n = params.n
    kernels = [_kernels.get_kernel(p, n) for p in params.q.limbs]

    s_vals = _sample_binary(params, rng)
    sk = RingElement.from_coeffs(s_vals.tolist(), Modulus.create([2], n), n)
    s_q = _signed_to_q(s_vals, params)
    s_fwd = [k.fwd(row.copy()) for k, row in zip(kernels, s_q.limb_residues())]

    def rlwe_pair(rng, extra_rows=None):
        # (-(a*s + e) [+ extra], a)
        a = _sample_uniform_q(params, rng)
        e = _sample_noise(params, rng)
        rows = []
        for i, (k, p) in enumerate(zip(kernels, params.q.limbs)):
            prod = k.inv(k.mulmod(k.fwd(a.limb_residues()[i].copy()), s_fwd[i]))
            ev = (e % np.int64(p)).astype(np.uint64)
            acc = k.addmod(prod, ev)
            neg = np.where(acc == 0, acc, np.uint64(p) - acc)
            if extra_rows is not None:
                neg = k.addmod(neg, extra_rows[i])
            rows.append(neg)
        return RingElement(params.q, n, np.stack(rows)), a

    pk = rlwe_pair(rng)

    # s^2 and tau(s) per limb, for rlk / gk payloads
    s2_rows = [k.inv(k.mulmod(s_fwd[i].copy(), s_fwd[i])) for i, k in enumerate(kernels)]
    tau_s = _kernels.apply_galois_int64(s_vals, n, ROTATION_GALOIS_EXPONENT)
    tau_rows = _signed_to_q(tau_s, params).limb_residues()

    def switching_key(payload_rows):
        pairs = []
        for i in range(params.ell + 1):
            wi = pow(params.w, i, params.q.value)
            extra = [
                k.mulmod(row, np.full(n, np.uint64(wi % p), dtype=np.uint64))
                for k, row, p in zip(kernels, payload_rows, params.q.limbs)
            ]
            pairs.append(rlwe_pair(rng, extra_rows=extra))
        return pairs

    rlk = switching_key(s2_rows)
    gk = switching_key(tau_rows)
    return KeySet(params, sk, pk, rlk, gk)


# ---------------------------------------------------------------------------
# enc / dec

def enc(params, keyset, m, rng):
    """Encrypt a plaintext ring element m in R_T."""
    _tick("enc")
    if m.modulus != params.t or m.n != params.n:
        raise StructuralError("plaintext must be an element of R_T")
    if keyset.pk is None:
        raise KeyMaterialError("encryption requires the public key")
    cache = keyset.eval_cache()
    kernels = cache.kernels
    u = _sample_binary(params, rng)
    e0 = _sample_noise(params, rng)
    e1 = _sample_noise(params, rng)
    m_vals = np.asarray(m.coeffs, dtype=np.int64)

    rows0, rows1 = [], []
    for i, (k, p) in enumerate(zip(kernels, params.q.limbs)):
        u_fwd = k.fwd((u % np.int64(p)).astype(np.uint64))
        p0u = k.inv(k.mulmod(cache.pk_fwd[0][i], u_fwd.copy()))
        p1u = k.inv(k.mulmod(cache.pk_fwd[1][i], u_fwd))
        dm = (m_vals % np.int64(p)).astype(np.uint64)
        dm = k.mulmod(dm, np.full(params.n, np.uint64(params.delta % p)))
        c0 = k.addmod(k.addmod(p0u, (e0 % np.int64(p)).astype(np.uint64)), dm)
        c1 = k.addmod(p1u, (e1 % np.int64(p)).astype(np.uint64))
        rows0.append(c0)
        rows1.append(c1)
    return Ciphertext(
        [
            RingElement(params.q, params.n, np.stack(rows0)),
            RingElement(params.q, params.n, np.stack(rows1)),
        ]
    )


def _phase(params, keyset, ct):
    """c0 + c1 s (+ c2 s^2) mod Q, as minimal big-int coefficients."""
    cache = keyset.eval_cache()
    kernels = cache.kernels
    rows = []
    for i, k in enumerate(kernels):
        acc = ct.parts[0].limb_residues()[i].copy()
        c1f = k.fwd(ct.parts[1].limb_residues()[i].copy())
        acc = k.addmod(acc, k.inv(k.mulmod(c1f, cache.sk_fwd[i])))
        if ct.degree == 3:
            c2f = k.fwd(ct.parts[2].limb_residues()[i].copy())
            c2ss = k.inv(
                k.mulmod(k.mulmod(c2f, cache.sk_fwd[i]), cache.sk_fwd[i])
            )
            acc = k.addmod(acc, c2ss)
        rows.append(acc)
    return RingElement(params.q, params.n, np.stack(rows)).crt_coeffs()


_DEBUG_NOISE = False


def debug_noise_checks(enabled):
    """Make dec() raise NoiseBudgetError when the residual sits within one
    bit of the decryption threshold.  A heuristic tripwire: an actually
    overflowed ciphertext wraps onto a nearby lattice point, so the true
    noise is not observable at decryption time, but both near-threshold
    and freshly-wrapped ciphertexts land in this band."""
    global _DEBUG_NOISE
    _DEBUG_NOISE = bool(enabled)


def dec(params, keyset, ct):
    """Decrypt to R_T: round((T/Q) * [c0 + c1 s (+ c2 s^2)]_Q) mod T."""
    _tick("dec")
    if keyset.sk is None:
        raise KeyMaterialError("decryption requires the secret key")
    x = _phase(params, keyset, ct)
    t, q = params.t.value, params.q.value
    m = (x * (2 * t) + q) // (2 * q)
    if _DEBUG_NOISE:
        v = (x - m * params.delta) % q
        v = np.where(2 * v > q, v - q, v)
        worst = int(max(abs(int(c)) for c in v))
        if 4 * t * worst >= q:
            raise NoiseBudgetError(
                f"noise margin below 1 bit (residual {worst}, threshold {q // (2 * t)})"
            )
    m %= t
    m = np.where(2 * m > t, m - t, m)
    return RingElement.from_coeffs([int(v) for v in m], params.t, params.n)


def noise_margin(params, keyset, ct):
    """Remaining noise budget in bits: log2(Q/2T) - log2 ||noise||_inf.

    Positive means decryption is guaranteed correct.  Requires sk, so
    only the key-holding party (or tests) can evaluate it.
    """
    x = _phase(params, keyset, ct)
    t, q = params.t.value, params.q.value
    m = (x * (2 * t) + q) // (2 * q)
    v = (x - m * params.delta) % q
    v = np.where(2 * v > q, v - q, v)
    worst = int(max(abs(int(c)) for c in v))
    budget = math.log2(q / (2 * t))
    if worst == 0:
        return float("inf")
    return budget - math.log2(worst)


# ---------------------------------------------------------------------------
# homomorphic ops

def _merge_delta(a, b, multiply=False):
    if a is None:
        return b
    if b is None:
        return a
    if multiply:
        return a * b
    if not math.isclose(a, b, rel_tol=1e-12):
        raise StructuralError("adding ciphertexts with different sensitivities")
    return a


def add(ct1, ct2):
    _tick("add")
    if ct1.degree != 2 or ct2.degree != 2:
        raise StructuralError("add expects 2-part ciphertexts; relinearize first")
    parts = [a + b for a, b in zip(ct1.parts, ct2.parts)]
    return Ciphertext(parts, _merge_delta(ct1.delta_product, ct2.delta_product))


def _packed_parts(params, ct):
    if ct._packed is None:
        lane = params.lane_bits
        ct._packed = tuple(
            _kernels.pack_signed([int(v) for v in part.crt_coeffs()], lane)
            for part in ct.parts
        )
    return ct._packed


def _rescale_rows(conv, params):
    """⌊(T/Q)x⌉ mod Q for signed big-int coefficients, as limb rows."""
    t, q = params.t.value, params.q.value
    r = (conv * (2 * t) + q) // (2 * q)
    rows = [(r % p).astype(np.uint64) for p in params.q.limbs]
    return RingElement(params.q, params.n, np.stack(rows))


def mult(params, ct1, ct2):
    """Tensor product with exact (T/Q)-rescale; returns a 3-part ciphertext."""
    _tick("mult")
    if ct1.degree != 2 or ct2.degree != 2:
        raise StructuralError("mult expects 2-part ciphertexts")
    n, lane = params.n, params.lane_bits
    a0, a1 = _packed_parts(params, ct1)
    b0, b1 = _packed_parts(params, ct2)
    p00 = a0 * b0
    p11 = a1 * b1
    cross = (a0 + a1) * (b0 + b1) - p00 - p11

    def fold(packed):
        lanes = _kernels.unpack_signed(packed, lane, 2 * n)
        return lanes[:n] - lanes[n:]

    c0 = _rescale_rows(fold(p00), params)
    c1 = _rescale_rows(fold(cross), params)
    c2 = _rescale_rows(fold(p11), params)
    return Ciphertext(
        [c0, c1, c2], _merge_delta(ct1.delta_product, ct2.delta_product, multiply=True)
    )


def _balanced_digits(vals, params):
    """Balanced base-W digits of minimal big-int coefficients.

    Returns a list of ell+1 int64 arrays (digit i of every coefficient).
    For power-of-two W the coefficients are offset to make every digit
    nonnegative, packed into word-aligned lanes, and sliced out of the
    raw bytes with vectorized shifts; other bases take a divmod loop.
    """
    w = params.w
    nd = params.ell + 1
    q_half = params.q.value // 2
    w_bits = w.bit_length() - 1
    shift = (w // 2 - 1) * ((w**nd - 1) // (w - 1))
    lane_words = -(w_bits * nd // -64)
    if w & (w - 1) == 0 and shift > q_half and q_half + shift < 1 << (64 * lane_words):
        n = len(vals)
        packed = gmpy2.pack([int(v) + shift for v in vals], 64 * lane_words)
        raw = int(packed).to_bytes(n * lane_words * 8, "little")
        words = np.frombuffer(raw, dtype="<u8").reshape(n, lane_words)
        mask = np.uint64(w - 1)
        digits = []
        for i in range(nd):
            s = w_bits * i
            w0, r = divmod(s, 64)
            if r + w_bits <= 64:
                d = (words[:, w0] >> np.uint64(r)) & mask
            else:
                d = (
                    (words[:, w0] >> np.uint64(r))
                    | (words[:, w0 + 1] << np.uint64(64 - r))
                ) & mask
            digits.append(d.astype(np.int64) - (w // 2 - 1))
        return digits
    x = np.fromiter((int(v) for v in vals), dtype=object, count=len(vals))
    digits = []
    for _ in range(nd):
        r = x % w
        d = np.where(2 * r > w, r - w, r)
        digits.append(d.astype(np.int64))
        x = (x - d) // w
    if any(int(v) != 0 for v in x):
        raise StructuralError("digit decomposition did not terminate")
    return digits


def _key_switch(params, key_fwd, target_vals):
    """Σ_i key[i] * digit_i(target) as two R_Q elements (c0-like, c1-like)."""
    n = params.n
    kernels = [_kernels.get_kernel(p, n) for p in params.q.limbs]
    digits = _balanced_digits(target_vals, params)
    acc0 = [np.zeros(n, dtype=np.uint64) for _ in kernels]
    acc1 = [np.zeros(n, dtype=np.uint64) for _ in kernels]
    for i, d64 in enumerate(digits):
        for j, (k, p) in enumerate(zip(kernels, params.q.limbs)):
            df = k.fwd((d64 % np.int64(p)).astype(np.uint64))
            k.muladd(key_fwd[i][0][j], df, acc0[j])
            k.muladd(key_fwd[i][1][j], df, acc1[j])
    rows0 = [k.inv(a) for k, a in zip(kernels, acc0)]
    rows1 = [k.inv(a) for k, a in zip(kernels, acc1)]
    return (
        RingElement(params.q, n, np.stack(rows0)),
        RingElement(params.q, n, np.stack(rows1)),
    )


def relin(params, keyset, ct3):
    """Reduce a 3-part ciphertext back to 2 parts using rlk."""
    _tick("relin")
    if ct3.degree != 3:
        raise StructuralError("relin expects a 3-part ciphertext")
    if not keyset.rlk:
        raise KeyMaterialError("relinearization key missing")
    cache = keyset.eval_cache()
    s0, s1 = _key_switch(params, cache.rlk_fwd, ct3.parts[2].crt_coeffs())
    return Ciphertext(
        [ct3.parts[0] + s0, ct3.parts[1] + s1], ct3.delta_product
    )


def _apply_galois_q(params, re, g):
    dst, sgn = _kernels.galois_maps(params.n, g)
    rows = []
    for row, p in zip(re.limb_residues(), params.q.limbs):
        flipped = np.where(sgn > 0, row, np.where(row == 0, row, np.uint64(p) - row))
        out = np.zeros_like(row)
        out[dst] = flipped
        rows.append(out)
    return RingElement(params.q, params.n, np.stack(rows))


def rotate(params, keyset, ct):
    """Left-rotate the usable slot row by one position."""
    _tick("rotate")
    if ct.degree != 2:
        raise StructuralError("rotate expects a 2-part ciphertext")
    if not keyset.gk:
        raise KeyMaterialError("galois key missing")
    g = ROTATION_GALOIS_EXPONENT
    h0 = _apply_galois_q(params, ct.parts[0], g)
    h1 = _apply_galois_q(params, ct.parts[1], g)
    cache = keyset.eval_cache()
    s0, s1 = _key_switch(params, cache.gk_fwd, h1.crt_coeffs())
    return Ciphertext([h0 + s0, s1], ct.delta_product)


def transparent_zero(params, delta=None):
    """The (0, 0) ciphertext: decrypts to zero, carries no randomness.

    Used by the key-less controller to reset the freed queue slot; the
    slot only ever becomes visible after fresh ciphertexts are added in.
    """
    return Ciphertext(
        [RingElement.zero(params.q, params.n), RingElement.zero(params.q, params.n)],
        delta_product=delta,
    )


# ---------------------------------------------------------------------------
# serialization: magic, version, N, limb primes, T, then payload

def _header(params):
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<H", FORMAT_VERSION)
    buf += struct.pack("<I", params.n)
    buf += struct.pack("<B", len(params.q.limbs))
    for p in params.q.limbs:
        buf += struct.pack("<Q", p)
    buf += struct.pack("<Q", params.t.value)
    return bytes(buf)


def _check_header(data, params):
    if data[:4] != MAGIC:
        raise StructuralError("bad magic")
    (ver,) = struct.unpack_from("<H", data, 4)
    if ver != FORMAT_VERSION:
        raise StructuralError(f"unsupported format version {ver}")
    (n,) = struct.unpack_from("<I", data, 6)
    (nl,) = struct.unpack_from("<B", data, 10)
    off = 11
    limbs = struct.unpack_from(f"<{nl}Q", data, off)
    off += 8 * nl
    (t,) = struct.unpack_from("<Q", data, off)
    off += 8
    if n != params.n or limbs != params.q.limbs or t != params.t.value:
        raise StructuralError("serialized object was made with other parameters")
    return off


def _pack_element(re):
    return b"".join(row.astype("<u8").tobytes() for row in re.limb_residues())


def _unpack_element(data, off, params, modulus):
    n = params.n
    rows = []
    for _ in modulus.limbs:
        rows.append(np.frombuffer(data, dtype="<u8", count=n, offset=off).copy())
        off += 8 * n
    return RingElement(modulus, n, np.stack(rows)), off


def serialize_ciphertext(params, ct):
    buf = bytearray(_header(params))
    buf += b"C"
    buf += struct.pack("<B", ct.degree)
    has_delta = ct.delta_product is not None
    buf += struct.pack("<Bd", int(has_delta), ct.delta_product or 0.0)
    for part in ct.parts:
        buf += _pack_element(part)
    return bytes(buf)


def deserialize_ciphertext(params, data):
    off = _check_header(data, params)
    if data[off : off + 1] != b"C":
        raise StructuralError("not a ciphertext blob")
    off += 1
    (degree,) = struct.unpack_from("<B", data, off)
    off += 1
    has_delta, delta = struct.unpack_from("<Bd", data, off)
    off += struct.calcsize("<Bd")
    parts = []
    for _ in range(degree):
        part, off = _unpack_element(data, off, params, params.q)
        parts.append(part)
    return Ciphertext(parts, delta if has_delta else None)


def serialize_keyset(keyset):
    if keyset.sk is None or keyset.pk is None or not keyset.rlk or not keyset.gk:
        raise KeyMaterialError("only complete keysets are serialized")
    params = keyset.params
    buf = bytearray(_header(params))
    buf += b"K"
    buf += struct.pack("<B", params.ell)
    buf += keyset.sk.limb_residues()[0].astype("<u8").tobytes()
    for part in keyset.pk:
        buf += _pack_element(part)
    for pair in keyset.rlk + keyset.gk:
        for part in pair:
            buf += _pack_element(part)
    return bytes(buf)


def deserialize_keyset(params, data):
    off = _check_header(data, params)
    if data[off : off + 1] != b"K":
        raise StructuralError("not a keyset blob")
    off += 1
    (ell,) = struct.unpack_from("<B", data, off)
    off += 1
    if ell != params.ell:
        raise StructuralError("decomposition depth mismatch")
    n = params.n
    sk_row = np.frombuffer(data, dtype="<u8", count=n, offset=off).copy()
    off += 8 * n
    sk = RingElement(Modulus.create([2], n), n, sk_row[None, :])
    pk = []
    for _ in range(2):
        part, off = _unpack_element(data, off, params, params.q)
        pk.append(part)
    pairs = []
    for _ in range(2 * (ell + 1)):
        p0, off = _unpack_element(data, off, params, params.q)
        p1, off = _unpack_element(data, off, params, params.q)
        pairs.append((p0, p1))
    rlk = pairs[: ell + 1]
    gk = pairs[ell + 1 :]
    return KeySet(params, sk, tuple(pk), rlk, gk)
