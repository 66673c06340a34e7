"""Encrypted matrix-vector products on packed slots.

A matrix rides in one ciphertext as its row-major flattening, the vector
as m stacked copies; one homomorphic multiply makes all the elementwise
products and cols-1 rotate-and-add passes collapse each row segment onto
its first slot.  Slots outside the extraction stride carry reduction
garbage by design and are never constrained.
"""

from dataclasses import dataclass

import numpy as np

from . import bfv, encoding
from .errors import CapacityError, StructuralError


@dataclass(frozen=True)
class PackedMatrix:
    ct: bfv.Ciphertext
    rows: int
    cols: int


@dataclass(frozen=True)
class PackedVector:
    ct: bfv.Ciphertext
    rows: int
    cols: int


def _check_capacity(params, rows, cols):
    if rows * cols > params.slots:
        raise CapacityError(
            f"{rows}x{cols} needs {rows * cols} slots, only {params.slots} usable"
        )


def pack_matrix(params, keyset, matrix, rng, delta=None):
    """Encrypt an integer (or, with delta, real) matrix in row-major layout."""
    matrix = np.asarray(matrix)
    rows, cols = matrix.shape
    _check_capacity(params, rows, cols)
    if delta is not None:
        ct = encoding.enc_delta(params, keyset, matrix.reshape(-1), delta, rng)
    else:
        ct = bfv.enc(
            params, keyset, encoding.pack(params, encoding.layout_gain(matrix)), rng
        )
    return PackedMatrix(ct=ct, rows=rows, cols=cols)


def pack_vector(params, keyset, vec, rows, rng, delta=None):
    """Encrypt a vector replicated `rows` times (one copy per matrix row)."""
    vec = np.asarray(vec)
    cols = len(vec)
    _check_capacity(params, rows, cols)
    tiled = np.tile(vec, rows)
    if delta is not None:
        ct = encoding.enc_delta(params, keyset, tiled, delta, rng)
    else:
        ct = bfv.enc(params, keyset, encoding.pack(params, tiled.astype(np.int64)), rng)
    return PackedVector(ct=ct, rows=rows, cols=cols)


def _reduce_rotate_add(params, keyset, acc, width):
    running = acc
    for _ in range(width - 1):
        running = bfv.rotate(params, keyset, running)
        acc = bfv.add(acc, running)
    return acc


def matvec(params, keyset, mat, vec):
    """Encrypted M @ v; slots 0, cols, 2*cols, ... of the result hold [Mv]_T."""
    if (mat.rows, mat.cols) != (vec.rows, vec.cols):
        raise StructuralError(
            f"shape mismatch: matrix {mat.rows}x{mat.cols}, vector packed {vec.rows}x{vec.cols}"
        )
    acc = bfv.relin(params, keyset, bfv.mult(params, mat.ct, vec.ct))
    return _reduce_rotate_add(params, keyset, acc, mat.cols)


def extract(slots, rows, stride):
    """Pick entries 0, stride, ..., (rows-1)*stride from a slot readout."""
    slots = np.asarray(slots)
    top = (rows - 1) * stride
    if rows < 1 or stride < 1 or top >= len(slots):
        raise StructuralError(
            f"extraction of {rows} values at stride {stride} exceeds {len(slots)} slots"
        )
    return slots[0 : top + 1 : stride].copy()


def matvec_sum(params, keyset, gains, datas):
    """Encrypted sum of block products Σ_i G_i @ d_i over a shared layout.

    All blocks must be the same m-by-h shape; cost is exactly len(gains)
    multiplies (with relinearization), len(gains)-1 + h-1 additions, and
    h-1 rotations.
    """
    if len(gains) != len(datas) or not gains:
        raise StructuralError("need equally many gain and data ciphertexts")
    shape = (gains[0].rows, gains[0].cols)
    for g, d in zip(gains, datas):
        if (g.rows, g.cols) != shape or (d.rows, d.cols) != shape:
            raise StructuralError("all blocks must share one m-by-h shape")
    acc = bfv.relin(params, keyset, bfv.mult(params, gains[0].ct, datas[0].ct))
    for g, d in zip(gains[1:], datas[1:]):
        acc = bfv.add(acc, bfv.relin(params, keyset, bfv.mult(params, g.ct, d.ct)))
    return _reduce_rotate_add(params, keyset, acc, shape[1])
