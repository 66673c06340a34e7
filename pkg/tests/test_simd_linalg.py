import numpy as np
import pytest

from encloop import bfv, encoding, simd_linalg
from encloop.errors import CapacityError, StructuralError
from encloop.ring import reduce_minimal
from encloop.simd_linalg import extract, matvec, matvec_sum, pack_matrix, pack_vector


def run_matvec(params, keys, M, v, rng):
    pm = pack_matrix(params, keys, M, rng)
    pv = pack_vector(params, keys, v, M.shape[0], rng)
    ct = matvec(params, keys, pm, pv)
    slots = encoding.unpack(params, bfv.dec(params, keys, ct))
    return extract(slots, M.shape[0], M.shape[1])


def modular_matvec(M, v, t):
    out = (np.asarray(M, dtype=object) @ np.asarray(v, dtype=object)) % t
    return [reduce_minimal(int(x), t) for x in out]


def test_identity_matrix(toy_params, toy_keys, rng):
    got = run_matvec(toy_params, toy_keys, np.eye(2, dtype=np.int64), np.array([41, -7]), rng)
    assert list(got) == [41, -7]


def test_worked_example_2x3(toy_params, toy_keys, rng):
    M = np.array([[1, 2, 3], [4, 5, 6]])
    v = np.array([7, 8, 9])
    got = run_matvec(toy_params, toy_keys, M, v, rng)
    assert list(got) == [50, 122]


def test_random_2x3_against_oracle(toy_params, toy_keys, rng):
    t = toy_params.t.value
    for _ in range(40):
        M = rng.integers(-1000, 1000, (2, 3))
        v = rng.integers(-1000, 1000, 3)
        got = run_matvec(toy_params, toy_keys, M, v, rng)
        assert [int(x) for x in got] == modular_matvec(M, v, t)


def test_random_shapes_against_oracle(toy_params, toy_keys, rng):
    t = toy_params.t.value
    s = toy_params.slots
    for _ in range(30):
        m = int(rng.integers(1, 4))
        n = int(rng.integers(1, s // m + 1))
        M = rng.integers(-200, 200, (m, n))
        v = rng.integers(-200, 200, n)
        got = run_matvec(toy_params, toy_keys, M, v, rng)
        assert [int(x) for x in got] == modular_matvec(M, v, t)


def test_shape_mismatch(toy_params, toy_keys, rng):
    pm = pack_matrix(toy_params, toy_keys, np.eye(2, dtype=int), rng)
    pv = pack_vector(toy_params, toy_keys, np.array([1, 2, 3]), 2, rng)
    with pytest.raises(StructuralError):
        matvec(toy_params, toy_keys, pm, pv)


def test_capacity_guard(toy_params, toy_keys, rng):
    with pytest.raises(CapacityError):
        pack_matrix(toy_params, toy_keys, np.ones((3, 3), dtype=int), rng)


def test_extract_basics():
    assert list(extract(np.array([5]), 1, 1)) == [5]
    slots = np.array([50, 0, 0, 122, 0, 0, 7, 7])
    assert list(extract(slots, 2, 3)) == [50, 122]
    # stride-h variant: index arithmetic oracle
    slots = np.arange(40)
    for m, h in [(2, 4), (3, 5), (4, 6)]:
        assert list(extract(slots, m, h)) == [i * h for i in range(m)]
    with pytest.raises(StructuralError):
        extract(np.arange(4), 3, 2)


def test_matvec_sum_single_block_reduces_to_matvec(toy_params, toy_keys, rng):
    t = toy_params.t.value
    M = rng.integers(-50, 50, (2, 3))
    v = rng.integers(-50, 50, 3)
    pm = pack_matrix(toy_params, toy_keys, M, rng)
    pv = pack_vector(toy_params, toy_keys, v, 2, rng)
    ct = matvec_sum(toy_params, toy_keys, [pm], [pv])
    slots = encoding.unpack(toy_params, bfv.dec(toy_params, toy_keys, ct))
    assert [int(x) for x in extract(slots, 2, 3)] == modular_matvec(M, v, t)


def test_matvec_sum_zero_data(toy_params, toy_keys, rng):
    blocks = [rng.integers(-50, 50, (2, 4)) for _ in range(2)]
    gains = [pack_matrix(toy_params, toy_keys, b, rng) for b in blocks]
    datas = [
        pack_vector(toy_params, toy_keys, np.zeros(4, dtype=int), 2, rng)
        for _ in range(2)
    ]
    ct = matvec_sum(toy_params, toy_keys, gains, datas)
    slots = encoding.unpack(toy_params, bfv.dec(toy_params, toy_keys, ct))
    assert not extract(slots, 2, 4).any()


def test_matvec_sum_tank_shape_oracle(toy_keys, rng):
    # L=2 with 2x6 blocks needs 12 slots: run at degree 64
    params = bfv.BfvParams.toy(n=64)
    keys = bfv.keygen(params, bytes(32))
    t = params.t.value
    for _ in range(10):
        Ks = [rng.integers(-300, 300, (2, 6)) for _ in range(3)]
        ds = [rng.integers(-300, 300, 6) for _ in range(3)]
        gains = [pack_matrix(params, keys, K, rng) for K in Ks]
        datas = [pack_vector(params, keys, d, 2, rng) for d in ds]
        ct = matvec_sum(params, keys, gains, datas)
        slots = encoding.unpack(params, bfv.dec(params, keys, ct))
        want = np.sum([np.asarray(K, dtype=object) @ d for K, d in zip(Ks, ds)], axis=0)
        want = [reduce_minimal(int(x), t) for x in want]
        assert [int(x) for x in extract(slots, 2, 6)] == want


def test_matvec_sum_operation_counts(toy_params, toy_keys, rng):
    L, m, h = 2, 2, 4  # m*h = 8 fits the toy profile
    gains = [
        pack_matrix(toy_params, toy_keys, rng.integers(-9, 9, (m, h)), rng)
        for _ in range(L + 1)
    ]
    datas = [
        pack_vector(toy_params, toy_keys, rng.integers(-9, 9, h), m, rng)
        for _ in range(L + 1)
    ]
    with bfv.count_ops() as ops:
        matvec_sum(toy_params, toy_keys, gains, datas)
    assert ops.mult == L + 1
    assert ops.relin == L + 1
    assert ops.rotate == h - 1
    assert ops.add == L + (h - 1)


def test_matvec_sum_shape_validation(toy_params, toy_keys, rng):
    g = pack_matrix(toy_params, toy_keys, np.eye(2, dtype=int), rng)
    d = pack_vector(toy_params, toy_keys, np.array([1, 2, 3]), 2, rng)
    with pytest.raises(StructuralError):
        matvec_sum(toy_params, toy_keys, [g], [d])
    with pytest.raises(StructuralError):
        matvec_sum(toy_params, toy_keys, [g], [])
