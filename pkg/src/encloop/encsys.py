"""Three-party encrypted control loop with input re-encryption.

Roles: a designer generates and distributes keys (plant: pk+sk,
operator: pk, controller: rlk+galois), encrypts the gain blocks once,
and seeds the data queue with encryptions of zero.  Each sampling step
the operator and plant add the current reference and measurement into
the queue's back slot, the controller evaluates the gain-by-history sum
with the SIMD kernel and shifts the queue, and the plant decrypts the
input, applies it, and re-encrypts it fresh into the second-from-back
slot.

Re-encryption keeps every queue ciphertext at sensitivity delta_d and
fresh noise, so the loop runs indefinitely without overflow.  All
parties are in-process actors exchanging immutable ciphertexts; one step
is strictly sequential.
"""

import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import analysis, bfv, encoding, simd_linalg
from .errors import CapacityError
from .ring import reduce_minimal


def _seed_bytes(seed_seq):
    return seed_seq.generate_state(8, dtype=np.uint32).tobytes()


def _ciphertext_bytes(params, degree=2):
    header = 11 + 8 * len(params.q.limbs) + 8 + 12
    return header + degree * len(params.q.limbs) * params.n * 8


@dataclass
class StepTranscript:
    index: int
    u: np.ndarray
    counts: dict
    messages: dict
    message_bytes: int
    timings: dict
    queue_margins: list = None


class Operator:
    """Schedule player: encrypts the reference into its layout slots."""

    def __init__(self, params, keys, rng, dims):
        self.params = params
        self.keys = keys
        self.rng = rng
        self.dims = dims

    def encrypt_reference(self, r_t):
        return _encrypt_segment(self.params, self.keys, self.rng, self.dims, r=r_t)


class PlantIO:
    """Crypto endpoint at the plant: the only party able to decrypt."""

    def __init__(self, params, keys, rng, dims, delta_d):
        self.params = params
        self.keys = keys
        self.rng = rng
        self.dims = dims
        self.delta_d = delta_d

    def encrypt_output(self, y_t):
        return _encrypt_segment(self.params, self.keys, self.rng, self.dims, y=y_t)

    def decrypt_input(self, ct):
        slots = encoding.dec_delta(self.params, self.keys, ct)
        h = sum(self.dims.block)
        return simd_linalg.extract(slots, self.dims.m, h)

    def reencrypt_input(self, u_t):
        return _encrypt_segment(self.params, self.keys, self.rng, self.dims, u=u_t)


@dataclass(frozen=True)
class _Dims:
    q: int
    l: int
    m: int
    delta_d: float

    @property
    def block(self):
        return (self.q, self.l, self.m)


def _encrypt_segment(params, keys, rng, dims, r=None, y=None, u=None):
    """Enc_{delta_d} of the repeated [r y u] layout with absent parts zero."""
    t = params.t.value
    enc_seg = lambda v: None if v is None else encoding.ecd(np.asarray(v, float), dims.delta_d, t)
    vec = encoding.layout_data(dims.block, r=enc_seg(r), y=enc_seg(y), u=enc_seg(u))
    ct = bfv.enc(params, keys, encoding.pack(params, vec), rng)
    ct.delta_product = dims.delta_d
    return ct


class CipherQueue:
    """L+1 encrypted data slots; index 0 = oldest, index L = current step."""

    def __init__(self, slots):
        self.slots = list(slots)

    def __len__(self):
        return len(self.slots)

    def add_into_back(self, ct):
        self.slots[-1] = bfv.add(self.slots[-1], ct)

    def add_into_reentry(self, ct):
        self.slots[-2] = bfv.add(self.slots[-2], ct)

    def shift(self, fresh_back):
        self.slots = self.slots[1:] + [fresh_back]


class Controller:
    """Evaluates the encrypted gain-by-history sum; holds no decryption key."""

    def __init__(self, params, keys, gain_cts, queue, shape, delta_d):
        self.params = params
        self.keys = keys
        self.gain_cts = gain_cts
        self.queue = queue
        self.shape = shape  # (m, h)
        self.delta_d = delta_d

    def absorb_reference(self, ct_r):
        self.queue.add_into_back(ct_r)

    def absorb_output(self, ct_y):
        self.queue.add_into_back(ct_y)

    def compute_input(self):
        m, h = self.shape
        datas = [
            simd_linalg.PackedVector(ct=ct, rows=m, cols=h) for ct in self.queue.slots
        ]
        ct = simd_linalg.matvec_sum(self.params, self.keys, self.gain_cts, datas)
        self.queue.shift(bfv.transparent_zero(self.params, delta=self.delta_d))
        return ct

    def absorb_input(self, ct_u):
        self.queue.add_into_reentry(ct_u)


class EncryptedLoop:
    """One protocol instance wired together; step() runs Alg-2's loop body."""

    def __init__(self, params, gain, operator, plant_io, controller, keyset, delta_k, delta_d):
        self.params = params
        self.gain = gain
        self.operator = operator
        self.plant_io = plant_io
        self.controller = controller
        self.keyset = keyset  # full set, for instrumentation only
        self.delta_k = delta_k
        self.delta_d = delta_d
        self.step_index = 0

    def step(self, r_t, y_t, measure_margins=False):
        timings = {}
        counts = {}

        t0 = time.perf_counter()
        with bfv.count_ops() as ops:
            ct_r = self.operator.encrypt_reference(r_t)
        counts["operator"] = ops.as_dict()
        timings["operator"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        with bfv.count_ops() as ops:
            ct_y = self.plant_io.encrypt_output(y_t)
        plant_ops = ops.as_dict()
        timings["plant"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        with bfv.count_ops() as ops:
            self.controller.absorb_reference(ct_r)
            self.controller.absorb_output(ct_y)
            ct = self.controller.compute_input()
        ctrl_ops = ops.as_dict()
        timings["controller"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        with bfv.count_ops() as ops:
            u_t = self.plant_io.decrypt_input(ct)
            ct_u = self.plant_io.reencrypt_input(u_t)
        plant_ops = {k: plant_ops[k] + v for k, v in ops.as_dict().items()}
        timings["plant"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        with bfv.count_ops() as ops:
            self.controller.absorb_input(ct_u)
        ctrl_ops = {k: ctrl_ops[k] + v for k, v in ops.as_dict().items()}
        timings["controller"] += time.perf_counter() - t0
        counts["plant"] = plant_ops
        counts["controller"] = ctrl_ops

        margins = None
        if measure_margins:
            margins = [
                bfv.noise_margin(self.params, self.keyset, slot)
                for slot in self.controller.queue.slots
            ]

        nbytes = _ciphertext_bytes(self.params)
        transcript = StepTranscript(
            index=self.step_index,
            u=u_t,
            counts=counts,
            messages={
                "operator->controller": 1,
                "plant->controller": 2,
                "controller->plant": 1,
            },
            message_bytes=4 * nbytes,
            timings=timings,
            queue_margins=margins,
        )
        self.step_index += 1
        return u_t, transcript


def setup(params, gain, delta_k, delta_d, seed, plant=None):
    """Designer preprocessing: keygen, key distribution, gain encryption,
    and an all-zero encrypted queue.  Deterministic given the seed."""
    h = gain.h
    m = gain.dims[2]
    if m * h > params.slots:
        raise CapacityError(f"gain blocks need {m * h} slots, have {params.slots}")
    if plant is not None:
        from .histfb import lift_plant

        lifted = lift_plant(plant, gain.length, gain.dims[0])
        cert = analysis.delta_k_bound(lifted, gain.K)
        if not cert.admits(delta_k):
            warnings.warn(
                f"delta_k={delta_k:g} exceeds the stability threshold "
                f"{cert.delta_k_max:g}; quantized loop may destabilize",
                stacklevel=2,
            )
    master = np.random.SeedSequence(int.from_bytes(seed, "big") if isinstance(seed, bytes) else seed)
    kg_seq, enc_seq, op_seq, plant_seq = master.spawn(4)
    keyset = bfv.keygen(params, _seed_bytes(kg_seq))

    designer_rng = np.random.default_rng(enc_seq)
    gain_cts = []
    for i in range(gain.length + 1):
        block = gain.hat_block(i)
        gain_cts.append(
            simd_linalg.pack_matrix(params, keyset, block, designer_rng, delta=delta_k)
        )
    queue = CipherQueue(
        [
            encoding.enc_delta(params, keyset, np.zeros(m * h), delta_d, designer_rng)
            for _ in range(gain.length + 1)
        ]
    )

    dims = _Dims(q=gain.dims[0], l=gain.dims[1], m=m, delta_d=delta_d)
    operator = Operator(params, keyset.operator_view(), np.random.default_rng(op_seq), dims)
    plant_io = PlantIO(
        params, keyset.plant_view(), np.random.default_rng(plant_seq), dims, delta_d
    )
    controller = Controller(
        params, keyset.controller_view(), gain_cts, queue, shape=(m, h), delta_d=delta_d
    )
    return EncryptedLoop(
        params, gain, operator, plant_io, controller, keyset, delta_k, delta_d
    )


# ---------------------------------------------------------------------------
# exact fixed-point reference for the decoded input

class QuantizedIntegerOracle:
    """Integer replay of the controller arithmetic: quantized gain times
    quantized data, accumulated over Z and reduced mod T.  The decoded
    control input of the encrypted loop must match this bit for bit."""

    def __init__(self, params, gain, delta_k, delta_d):
        t = params.t.value
        self.t = t
        self.delta_k = delta_k
        self.delta_d = delta_d
        self.dims = gain.dims
        self.m = gain.dims[2]
        self.h = gain.h
        self.gain_ints = [
            np.asarray(encoding.ecd(gain.hat_block(i), delta_k, t), dtype=np.int64)
            for i in range(gain.length + 1)
        ]
        self.queue = [np.zeros(self.h, dtype=np.int64) for _ in range(gain.length + 1)]

    def step(self, r_t, y_t):
        t = self.t
        q, l, m = self.dims
        enc = lambda v: np.asarray(encoding.ecd(np.asarray(v, float), self.delta_d, t), dtype=np.int64)
        self.queue[-1][:q] += enc(r_t)
        self.queue[-1][q : q + l] += enc(y_t)
        acc = np.zeros(self.m, dtype=np.int64)
        for k_int, d_int in zip(self.gain_ints, self.queue):
            acc += k_int @ d_int
        acc = np.array([reduce_minimal(int(v), t) for v in acc], dtype=np.int64)
        u_t = (self.delta_k * self.delta_d) * acc.astype(float)
        self.queue = self.queue[1:] + [np.zeros(self.h, dtype=np.int64)]
        self.queue[-2][q + l :] += enc(u_t)
        return u_t


def run_closed_loop(
    loop,
    plant,
    refs,
    steps,
    x0=None,
    process_noise=None,
    measurement_noise=None,
    compare_plain=True,
    check_oracle=True,
    measure_margins=False,
):
    """Drive the physical plant with the encrypted controller.

    Optionally simulates the unencrypted gain loop on the same noise
    draws (y_plain/u_plain columns) and replays the exact integer oracle,
    recording any deviation of the decoded inputs.
    """
    refs = np.asarray(refs, dtype=float)
    n, l, m = plant.n, plant.l, plant.m
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    w = np.zeros((steps, n)) if process_noise is None else np.asarray(process_noise)
    v = np.zeros((steps, l)) if measurement_noise is None else np.asarray(measurement_noise)

    oracle = (
        QuantizedIntegerOracle(loop.params, loop.gain, loop.delta_k, loop.delta_d)
        if check_oracle
        else None
    )
    plain = None
    if compare_plain:
        from .histfb import _HistoryWindow

        plain = {
            "window": _HistoryWindow(loop.gain.length, loop.gain.dims[0], l, m),
            "x": x.copy(),
        }

    out = {
        "t": np.arange(steps),
        "r": refs[:steps].copy(),
        "y": np.empty((steps, l)),
        "u": np.empty((steps, m)),
        "step_seconds": np.empty(steps),
        "oracle_mismatches": 0,
        "margins": [] if measure_margins else None,
        "counts": None,
    }
    if compare_plain:
        out["y_plain"] = np.empty((steps, l))
        out["u_plain"] = np.empty((steps, m))

    for t in range(steps):
        r_t = refs[t]
        y_t = plant.C @ x + v[t]
        tic = time.perf_counter()
        u_t, transcript = loop.step(r_t, y_t, measure_margins=measure_margins)
        out["step_seconds"][t] = time.perf_counter() - tic
        if oracle is not None:
            u_ref = oracle.step(r_t, y_t)
            if not np.array_equal(u_t, u_ref):
                out["oracle_mismatches"] += 1
        if measure_margins:
            out["margins"].append(transcript.queue_margins)
        out["y"][t] = y_t
        out["u"][t] = u_t
        x = plant.A @ x + plant.B @ u_t + w[t]

        if plain is not None:
            yp = plant.C @ plain["x"] + v[t]
            dp = plain["window"].data_vector(r_t, yp)
            up = loop.gain.apply(dp)
            plain["window"].push(r_t, yp, up)
            out["y_plain"][t] = yp
            out["u_plain"][t] = up
            plain["x"] = plant.A @ plain["x"] + plant.B @ up + w[t]
        out["counts"] = transcript.counts
    return out


# ---------------------------------------------------------------------------
# primitive benchmark

def bench(params, trials, seed=2024):
    """Per-primitive wall-clock stats over `trials` runs each.

    Measures slot packing (sigma), unpacking (sigma^-1), Enc, Dec,
    Mult (incl. Relin), Add and Rotate at the given parameter set.
    """
    rng = np.random.default_rng(seed)
    keyset = bfv.keygen(params, rng.bytes(32))
    t = params.t.value
    timings = {name: [] for name in ("sigma", "sigma_inv", "enc", "dec", "mult", "add", "rotate")}

    vec = rng.integers(-1000, 1000, params.slots)
    plain = encoding.pack(params, vec)
    ct_a = bfv.enc(params, keyset, plain, rng)
    ct_b = bfv.enc(params, keyset, plain, rng)

    def timed(name, fn):
        tic = time.perf_counter()
        result = fn()
        timings[name].append(time.perf_counter() - tic)
        return result

    for _ in range(trials):
        vec = rng.integers(-1000, 1000, params.slots)
        m = timed("sigma", lambda: encoding.pack(params, vec))
        timed("sigma_inv", lambda: encoding.unpack(params, m))
        ct = timed("enc", lambda: bfv.enc(params, keyset, m, rng))
        timed("dec", lambda: bfv.dec(params, keyset, ct))
        timed(
            "mult",
            lambda: bfv.relin(params, keyset, bfv.mult(params, ct_a, ct_b)),
        )
        timed("add", lambda: bfv.add(ct_a, ct_b))
        timed("rotate", lambda: bfv.rotate(params, keyset, ct_a))
        ct_a = bfv.enc(params, keyset, m, rng)
        ct_b = bfv.enc(params, keyset, plain, rng)

    table = {}
    for name, vals in timings.items():
        arr = np.asarray(vals)
        table[name] = {
            "min_ms": float(arr.min() * 1e3),
            "avg_ms": float(arr.mean() * 1e3),
            "max_ms": float(arr.max() * 1e3),
            "std_us": float(arr.std() * 1e6),
        }
    return table
