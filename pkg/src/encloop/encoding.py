"""Fixed-point encoding and CRT slot packing.

The encoder maps reals to Z_T residues, x -> [round(x/delta)]_T, with
round(v) = floor(v + 1/2); the decoder multiplies back.  Packing places a
vector on the "usable" slot row: for power-of-two cyclotomics the N slots
split into two rows of N/2 that the rotation automorphism X -> X^3 shifts
independently, so all layouts use the S = N/2 slots in the orbit of 3 and
a single rotate moves every usable value one position left.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import bfv
from .errors import CapacityError, EncodingRangeError, ParameterError, StructuralError
from .ring import NttTables, RingElement, ntt_forward, ntt_inverse


@dataclass(frozen=True)
class Sensitivity:
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ParameterError("sensitivity must be positive")


def _delta_value(delta):
    if isinstance(delta, Sensitivity):
        return delta.delta
    return float(delta)


def ecd(x, delta, t_value):
    """Encode reals elementwise: [round(x/delta)]_T, guarded against wrap."""
    d = _delta_value(delta)
    v = np.floor(np.asarray(x, dtype=float) / d + 0.5)
    if np.any(2 * np.abs(v) > t_value):
        raise EncodingRangeError(
            f"value {np.max(np.abs(v)) * d:g} overflows the plaintext range at delta={d:g}"
        )
    out = v.astype(np.int64)
    return out if out.ndim else int(out)


def dcd(z, delta):
    """Decode residues elementwise: delta * z (z in minimal-residue form)."""
    d = _delta_value(delta)
    z = np.asarray(z, dtype=np.int64)
    out = d * z.astype(float)
    return out if out.ndim else float(out)


def quantize(x, delta):
    """The quantizer dcd . ecd with an unbounded range (analysis helper)."""
    d = _delta_value(delta)
    return d * np.floor(np.asarray(x, dtype=float) / d + 0.5)


@lru_cache(maxsize=None)
def _slot_order(t_value, n):
    """Natural-order indices of the usable row, in rotation order.

    Usable slot i sits at the evaluation point zeta^(3^i mod 2N); one
    application of X -> X^3 maps slot i+1's value onto slot i.
    """
    order = []
    e = 1
    for _ in range(n // 2):
        order.append((e - 1) // 2)
        e = (e * 3) % (2 * n)
    return np.array(order, dtype=np.int64)


@lru_cache(maxsize=None)
def _tables(t_value, n):
    return NttTables(t_value, n)


def pack(params, values):
    """Embed up to S = N/2 residues on the usable slot row of R_T."""
    values = np.asarray(values, dtype=np.int64)
    s = params.slots
    if values.ndim != 1:
        raise StructuralError("pack expects a vector")
    if len(values) > s:
        raise CapacityError(f"{len(values)} values exceed {s} usable slots")
    t = params.t.value
    full = np.zeros(params.n, dtype=np.int64)
    full[_slot_order(t, params.n)[: len(values)]] = values % np.int64(t)
    coeffs = ntt_inverse(full, _tables(t, params.n))
    return RingElement.from_coeffs(coeffs.tolist(), params.t, params.n)


def unpack(params, m):
    """Read the usable slot row (length S) as minimal residues."""
    if m.modulus != params.t:
        raise StructuralError("unpack expects an element of R_T")
    slots = ntt_forward(np.asarray(m.coeffs, dtype=np.int64), _tables(params.t.value, params.n))
    return slots[_slot_order(params.t.value, params.n)]


def enc_delta(params, keyset, values, delta, rng):
    """Enc . pack . ecd: encrypt a real vector at sensitivity delta."""
    encoded = ecd(np.asarray(values, dtype=float), delta, params.t.value)
    ct = bfv.enc(params, keyset, pack(params, encoded), rng)
    ct.delta_product = _delta_value(delta)
    return ct


def dec_delta(params, keyset, ct, delta=None):
    """dcd . unpack . dec: decrypt to a real vector of the S usable slots.

    If delta is omitted the ciphertext's accumulated sensitivity is used
    (delta_K * delta_d after one gain-by-data product).
    """
    d = _delta_value(delta) if delta is not None else ct.delta_product
    if d is None:
        raise StructuralError("no sensitivity known for this ciphertext")
    return dcd(unpack(params, bfv.dec(params, keyset, ct)), d)


# ---------------------------------------------------------------------------
# slot layouts for the encrypted controller

def layout_gain(block):
    """Row-major flattening of an m-by-h integer gain block."""
    block = np.asarray(block, dtype=np.int64)
    if block.ndim != 2:
        raise StructuralError("gain block must be a matrix")
    return block.reshape(-1)


def layout_data(dims, r=None, y=None, u=None):
    """The [r y u] block (width h = q + l + m) repeated m times.

    Missing segments stay zero, so the r-only, y-only and u-only layouts
    sum to the full data block slotwise.
    """
    q, l, m = dims
    h = q + l + m
    block = np.zeros(h, dtype=np.int64)
    for seg, start, width, name in ((r, 0, q, "r"), (y, q, l, "y"), (u, q + l, m, "u")):
        if seg is None:
            continue
        seg = np.asarray(seg, dtype=np.int64)
        if seg.shape != (width,):
            raise StructuralError(f"{name} segment must have length {width}")
        block[start : start + width] = seg
    return np.tile(block, m)
