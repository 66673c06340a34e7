import numpy as np
import pytest

from encloop import bfv, encsys, quadtank
from encloop.encoding import dec_delta
from encloop.errors import CapacityError, KeyMaterialError
from encloop.histfb import simulate_plain, transform

from loop_ensembles import random_stable_loop


def toy_loop(rng_seed=11, l_len=2):
    """Small single-channel loop that fits the toy slot budget (m*h = 3)."""
    from encloop.histfb import Plant, StateSpaceController

    ctrl = StateSpaceController(
        A=[[0.7]], B=[[-0.4]], C=[[0.3]], D=[[-0.8]], E=[[0.5]], F=[[0.9]]
    )
    plant = Plant(A=[[0.8]], B=[[0.5]], C=[[1.0]])
    gain = transform(ctrl, l_len)
    return ctrl, plant, gain


@pytest.fixture(scope="module")
def toy_system(toy_params):
    ctrl, plant, gain = toy_loop()
    loop = encsys.setup(toy_params, gain, delta_k=2e-4, delta_d=1e-3, seed=bytes(32))
    return ctrl, plant, gain, loop


def fresh_loop(params, gain, seed=bytes(32), **kw):
    return encsys.setup(params, gain, delta_k=2e-4, delta_d=1e-3, seed=seed, **kw)


# ---------------------------------------------------------------------------
# setup

def test_setup_queue_decrypts_to_zero(toy_params):
    _, _, gain = toy_loop()
    loop = fresh_loop(toy_params, gain)
    for slot in loop.controller.queue.slots:
        vals = dec_delta(toy_params, loop.keyset, slot)
        assert not vals.any()


def test_setup_gain_ciphertexts_shapes(toy_params):
    _, _, gain = toy_loop()
    loop = fresh_loop(toy_params, gain)
    assert len(loop.controller.gain_cts) == gain.length + 1
    for pm in loop.controller.gain_cts:
        assert (pm.rows, pm.cols) == (1, 3)
    assert len(loop.controller.queue) == gain.length + 1


def test_setup_deterministic_transcript(toy_params):
    _, _, gain = toy_loop()
    blobs = []
    for _ in range(2):
        loop = fresh_loop(toy_params, gain, seed=bytes(range(32)))
        blob = b"".join(
            bfv.serialize_ciphertext(toy_params, pm.ct) for pm in loop.controller.gain_cts
        ) + b"".join(
            bfv.serialize_ciphertext(toy_params, ct) for ct in loop.controller.queue.slots
        )
        blobs.append(blob)
    assert blobs[0] == blobs[1]
    other = fresh_loop(toy_params, gain, seed=bytes([7] * 32))
    assert blobs[0] != b"".join(
        bfv.serialize_ciphertext(toy_params, pm.ct) for pm in other.controller.gain_cts
    ) + b"".join(
        bfv.serialize_ciphertext(toy_params, ct) for ct in other.controller.queue.slots
    )


def test_setup_capacity_guard(toy_params):
    ctrl = quadtank.controller()
    gain = transform(ctrl, 2)  # m*h = 12 > 8 toy slots
    with pytest.raises(CapacityError):
        fresh_loop(toy_params, gain)


def test_setup_warns_on_oversized_delta_k(toy_params):
    _, plant, gain = toy_loop()
    with pytest.warns(UserWarning, match="stability threshold"):
        encsys.setup(toy_params, gain, delta_k=0.5, delta_d=1e-3, seed=bytes(32), plant=plant)


# ---------------------------------------------------------------------------
# stepping

def test_zero_inputs_give_zero_u(toy_params):
    _, _, gain = toy_loop()
    loop = fresh_loop(toy_params, gain)
    u, _ = loop.step(np.zeros(1), np.zeros(1))
    assert not u.any()


def test_step_matches_integer_oracle(toy_params, rng):
    _, _, gain = toy_loop()
    loop = fresh_loop(toy_params, gain)
    oracle = encsys.QuantizedIntegerOracle(toy_params, gain, loop.delta_k, loop.delta_d)
    for _ in range(30):
        r = rng.normal(0, 0.5, 1)
        y = rng.normal(0, 0.5, 1)
        u, _ = loop.step(r, y)
        u_ref = oracle.step(r, y)
        assert np.array_equal(u, u_ref)


def test_step_operation_counts_match_cost_table(toy_params, rng):
    _, _, gain = toy_loop()
    loop = fresh_loop(toy_params, gain)
    L, h = gain.length, gain.h
    _, transcript = loop.step(np.array([0.3]), np.array([-0.2]))
    ctrl = transcript.counts["controller"]
    assert ctrl["add"] == L + h + 2
    assert ctrl["mult"] == L + 1
    assert ctrl["relin"] == L + 1
    assert ctrl["rotate"] == h - 1
    assert ctrl["enc"] == 0 and ctrl["dec"] == 0
    assert transcript.counts["operator"] == {
        "enc": 1, "dec": 0, "add": 0, "mult": 0, "relin": 0, "rotate": 0,
    }
    plant_ops = transcript.counts["plant"]
    assert plant_ops["enc"] == 2 and plant_ops["dec"] == 1
    assert transcript.messages == {
        "operator->controller": 1,
        "plant->controller": 2,
        "controller->plant": 1,
    }


def test_queue_ages_after_each_step(toy_params, rng):
    # slot i holds the data of age L-i (decrypt-and-check instrumentation)
    _, _, gain = toy_loop()
    loop = fresh_loop(toy_params, gain)
    L = gain.length
    hist = []
    for t in range(6):
        r = np.array([float(t + 1)])
        y = np.array([-float(t + 1)])
        u, _ = loop.step(r, y)
        hist.append((r[0], y[0], u[0]))
        qv = [
            dec_delta(toy_params, loop.keyset, slot)[:3]
            for slot in loop.controller.queue.slots
        ]
        # back slot is empty until the next step's additions
        assert not qv[-1].any()
        for i in range(L):
            age = L - i
            if t + 1 - age >= 0:
                r_want, y_want, u_want = hist[t + 1 - age]
                got = qv[i]
                assert got[0] == pytest.approx(r_want, abs=1e-3)
                assert got[1] == pytest.approx(y_want, abs=1e-3)
                assert got[2] == pytest.approx(u_want, abs=1e-3)


def test_controller_never_holds_sk(toy_params):
    _, _, gain = toy_loop()
    loop = fresh_loop(toy_params, gain)
    assert loop.controller.keys.sk is None
    assert loop.controller.keys.pk is None
    with pytest.raises(KeyMaterialError):
        bfv.dec(toy_params, loop.controller.keys, loop.controller.queue.slots[0])


def test_noise_margin_stays_positive_over_steps(toy_params, rng):
    _, _, gain = toy_loop()
    loop = fresh_loop(toy_params, gain)
    for t in range(40):
        _, transcript = loop.step(
            rng.normal(0, 0.4, 1), rng.normal(0, 0.4, 1), measure_margins=True
        )
        assert min(transcript.queue_margins) > 0


# ---------------------------------------------------------------------------
# closed loop

def test_closed_loop_tracks_plain_loop(toy_params):
    _, plant, gain = toy_loop()
    loop = fresh_loop(toy_params, gain)
    refs = np.concatenate([np.zeros((20, 1)), 0.4 * np.ones((60, 1))])
    res = encsys.run_closed_loop(loop, plant, refs, 80, x0=[0.5])
    assert res["oracle_mismatches"] == 0
    # encrypted loop follows the exact loop to quantization accuracy
    assert np.max(np.abs(res["y"] - res["y_plain"])) < 5e-3
    assert abs(res["y"][-1, 0] - res["y_plain"][-1, 0]) < 1e-3


def test_closed_loop_deterministic(toy_params):
    _, plant, gain = toy_loop()
    refs = 0.3 * np.ones((25, 1))
    outs = []
    for _ in range(2):
        loop = fresh_loop(toy_params, gain, seed=bytes([3] * 32))
        res = encsys.run_closed_loop(loop, plant, refs, 25, compare_plain=False)
        outs.append(res["u"].copy())
    assert np.array_equal(outs[0], outs[1])


def test_closed_loop_with_noise_seeded(toy_params):
    _, plant, gain = toy_loop()
    loop = fresh_loop(toy_params, gain)
    steps = 30
    noise_rng = np.random.default_rng(5)
    w = noise_rng.normal(0, np.sqrt(1e-3), (steps, plant.n))
    v = noise_rng.normal(0, np.sqrt(1e-3), (steps, plant.l))
    refs = np.zeros((steps, 1))
    res = encsys.run_closed_loop(
        loop, plant, refs, steps, process_noise=w, measurement_noise=v
    )
    assert res["oracle_mismatches"] == 0
    assert np.isfinite(res["y"]).all()


# ---------------------------------------------------------------------------
# bench

def test_bench_shape_and_ordering(toy_params):
    table = encsys.bench(toy_params, trials=20, seed=1)
    assert set(table) == {"sigma", "sigma_inv", "enc", "dec", "mult", "add", "rotate"}
    for stats in table.values():
        assert set(stats) == {"min_ms", "avg_ms", "max_ms", "std_us"}
        assert stats["min_ms"] <= stats["avg_ms"] <= stats["max_ms"]
    assert table["mult"]["avg_ms"] > table["add"]["avg_ms"]
    assert table["mult"]["avg_ms"] > table["rotate"]["avg_ms"]
