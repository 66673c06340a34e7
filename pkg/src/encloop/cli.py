"""Command line front end: keygen / transform / analyze / simulate / bench / demo.

Models are JSON, trajectories and timings are CSV, keys and ciphertexts
use the library's binary format.  Report-producing subcommands also
render PNG figures next to their CSVs unless --no-plot is given.
"""

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, bfv, encsys, plots, quadtank
from .encoding import quantize
from .errors import EncLoopError
from .histfb import HistoryGain, Plant, StateSpaceController, lift_plant, transform


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _mat(obj, key):
    return np.asarray(obj[key], dtype=float)


def load_controller(path):
    data = _load_json(path)
    return StateSpaceController(
        A=_mat(data, "A"), B=_mat(data, "B"), C=_mat(data, "C"),
        D=_mat(data, "D"), E=_mat(data, "E"), F=_mat(data, "F"),
    )


def load_plant(path):
    data = _load_json(path)
    return Plant(A=_mat(data, "Ap"), B=_mat(data, "Bp"), C=_mat(data, "Cp"))


def save_gain(gain, path):
    with open(path, "w") as fh:
        json.dump(
            {
                "K": gain.K.tolist(),
                "L": gain.length,
                "dims": {"q": gain.dims[0], "l": gain.dims[1], "m": gain.dims[2]},
            },
            fh,
            indent=2,
        )


def load_gain(path):
    data = _load_json(path)
    dims = data["dims"]
    return HistoryGain(
        K=np.asarray(data["K"], dtype=float),
        length=int(data["L"]),
        dims=(int(dims["q"]), int(dims["l"]), int(dims["m"])),
    )


def load_schedule(path, steps):
    data = _load_json(path)
    segments = []
    for item in data:
        if isinstance(item, dict):
            segments.append((int(item["t"]), item["r"]))
        else:
            segments.append((int(item[0]), item[1]))
    return quadtank.reference_schedule(steps, segments)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _parse_seed(hex_str):
    raw = bytes.fromhex(hex_str)
    if len(raw) > 32:
        raise EncLoopError("seed longer than 32 bytes")
    return raw.rjust(32, b"\0")


# ---------------------------------------------------------------------------
# subcommands

def cmd_keygen(args):
    params = bfv.profile(args.profile)
    keyset = bfv.keygen(params, _parse_seed(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "keyset.bin"
    path.write_bytes(bfv.serialize_keyset(keyset))
    print(f"wrote {path} ({path.stat().st_size} bytes, profile={args.profile})")
    return 0


def cmd_transform(args):
    ctrl = load_controller(args.controller)
    tic = time.perf_counter()
    gain = transform(ctrl, args.length)
    elapsed = time.perf_counter() - tic
    save_gain(gain, args.out)
    print(
        f"gain {gain.K.shape[0]}x{gain.K.shape[1]} at L={gain.length} "
        f"written to {args.out} ({elapsed * 1e3:.1f} ms)"
    )
    return 0


def cmd_analyze(args):
    plant = load_plant(args.plant)
    ctrl = load_controller(args.controller)
    gain = transform(ctrl, args.length)
    lifted = lift_plant(plant, gain.length, ctrl.q)
    cert = analysis.delta_k_bound(lifted, gain.K)
    k_bar = quantize(gain.K, args.delta_k)
    eta_d, eta_k = analysis.quantization_bounds(
        gain.length, gain.dims, args.delta_d, args.delta_k
    )
    report = {
        "dims": {"q": gain.dims[0], "l": gain.dims[1], "m": gain.dims[2], "L": gain.length},
        "eta_d": eta_d,
        "eta_k": eta_k,
        "rho_closed_loop": cert.rho,
        "delta_k_max": cert.delta_k_max,
        "delta_k_max_alt": cert.delta_k_max_alt,
        "delta_k": args.delta_k,
        "delta_d": args.delta_d,
        "delta_k_admitted": bool(cert.admits(args.delta_k)),
    }
    if args.b_r is not None:
        err = analysis.error_bound(
            lifted, gain.K, k_bar, np.asarray(args.x0, dtype=float), args.b_r,
            args.delta_d, gamma=args.gamma,
        )
        report["error_bound"] = {
            "gamma": err.gamma,
            "c": err.c,
            "tau": err.tau,
            "theta": [err.theta1, err.theta2, err.theta3],
            "bound": err.bound,
        }
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _simulation_rows(res, steps):
    q = res["r"].shape[1]
    l = res["y"].shape[1]
    m = res["u"].shape[1]
    header = (
        ["t"]
        + [f"r{i+1}" for i in range(q)]
        + [f"y{i+1}" for i in range(l)]
        + [f"u{i+1}" for i in range(m)]
        + [f"y_plain{i+1}" for i in range(l)]
        + [f"u_plain{i+1}" for i in range(m)]
        + ["step_time_ms"]
    )
    rows = []
    for t in range(steps):
        rows.append(
            [t]
            + list(res["r"][t])
            + list(res["y"][t])
            + list(res["u"][t])
            + list(res["y_plain"][t])
            + list(res["u_plain"][t])
            + [res["step_seconds"][t] * 1e3]
        )
    return header, rows


def _render_simulation_figures(res, steps, out_csv):
    base = Path(out_csv)
    t = np.arange(steps)
    err_cm = np.linalg.norm(
        (res["y"] - res["y_plain"]) / quadtank.SENSOR_GAIN, axis=1
    )
    track = base.with_name(base.stem + "_tracking.png")
    err = base.with_name(base.stem + "_error.png")
    plots.tracking_figure(t, res["r"], res["y"], res["y_plain"], track)
    plots.error_figure(t, err_cm, err)
    return [track, err]


def cmd_simulate(args):
    params = bfv.profile(args.profile)
    plant = load_plant(args.plant)
    gain = load_gain(args.gain)
    refs = load_schedule(args.schedule, args.steps)
    loop = encsys.setup(
        params, gain, delta_k=args.delta_k, delta_d=args.delta_d,
        seed=_parse_seed(args.seed), plant=plant,
    )
    noise_kw = {}
    if args.noise_var > 0:
        noise_rng = np.random.default_rng(int.from_bytes(_parse_seed(args.seed), "big") ^ 0xA5)
        noise_kw = {
            "process_noise": noise_rng.normal(0, np.sqrt(args.noise_var), (args.steps, plant.n)),
            "measurement_noise": noise_rng.normal(0, np.sqrt(args.noise_var), (args.steps, plant.l)),
        }
    res = encsys.run_closed_loop(
        loop, plant, refs, args.steps, x0=args.x0, compare_plain=args.plain, **noise_kw
    )
    if not args.plain:
        res["y_plain"] = res["y"]
        res["u_plain"] = res["u"]
    header, rows = _simulation_rows(res, args.steps)
    _write_csv(args.out, header, rows)
    err_cm = float(
        np.max(np.linalg.norm((res["y"] - res["y_plain"]) / quadtank.SENSOR_GAIN, axis=1))
    )
    print(
        f"{args.steps} steps, oracle mismatches: {res['oracle_mismatches']}, "
        f"max output error: {err_cm:.4f} cm, "
        f"avg step: {np.mean(res['step_seconds']) * 1e3:.1f} ms -> {args.out}"
    )
    if not args.no_plot:
        for path in _render_simulation_figures(res, args.steps, args.out):
            print(f"figure: {path}")
    return 0


def cmd_bench(args):
    params = bfv.profile(args.profile)
    table = encsys.bench(params, args.trials)
    rows = [
        ["min_ms"] + [f"{table[k]['min_ms']:.4f}" for k in table],
        ["avg_ms"] + [f"{table[k]['avg_ms']:.4f}" for k in table],
        ["max_ms"] + [f"{table[k]['max_ms']:.4f}" for k in table],
        ["std_us"] + [f"{table[k]['std_us']:.2f}" for k in table],
    ]
    _write_csv(args.out, ["stat"] + list(table), rows)
    print(f"bench over {args.trials} trials (profile={args.profile}) -> {args.out}")
    for name, stats in table.items():
        print(f"  {name:10s} avg {stats['avg_ms']:8.3f} ms")
    if not args.no_plot:
        path = Path(args.out).with_suffix(".png")
        plots.bench_figure(table, path)
        print(f"figure: {path}")
    return 0


def cmd_demo(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = bfv.profile(args.profile)
    plant = quadtank.plant()
    ctrl = quadtank.controller()
    print("== transform")
    gain = transform(ctrl, quadtank.DATA_LENGTH)
    save_gain(gain, out / "gain.json")
    k_err = float(np.max(np.abs(gain.K - quadtank.EXPECTED_GAIN)))
    print(f"gain 2x16, max deviation from reference entries: {k_err:.2e}")

    print("== analyze")
    lifted = lift_plant(plant, gain.length, ctrl.q)
    cert = analysis.delta_k_bound(lifted, gain.K)
    k_bar = quantize(gain.K, quadtank.DELTA_K)
    rho = max(
        analysis.spectral_radius(analysis.closed_loop(lifted, gain.K)),
        analysis.spectral_radius(analysis.closed_loop(lifted, k_bar)),
    )
    err_rep = analysis.error_bound(
        lifted, gain.K, k_bar, quadtank.INITIAL_STATE,
        quadtank.reference_bound(quadtank.reference_schedule()),
        quadtank.DELTA_D, gamma=(1 + 1e-6) * rho,
    )
    print(f"delta_k threshold: {cert.delta_k_max:.4e} (delta_k={quadtank.DELTA_K:g} admitted)")
    print(
        f"worst-case output error bound: {err_rep.bound:.4f} "
        f"(gamma={err_rep.gamma:.4f}, c={err_rep.c:.4f}, tau={err_rep.tau})"
    )

    print(f"== simulate ({args.steps} steps, profile={args.profile})")
    refs = quadtank.reference_schedule(args.steps)
    loop = encsys.setup(
        params, gain, delta_k=quadtank.DELTA_K, delta_d=quadtank.DELTA_D,
        seed=_parse_seed(args.seed),
    )
    res = encsys.run_closed_loop(
        loop, plant, refs, args.steps, x0=quadtank.INITIAL_STATE
    )
    header, rows = _simulation_rows(res, args.steps)
    _write_csv(out / "trajectory.csv", header, rows)
    err_cm = np.linalg.norm((res["y"] - res["y_plain"]) / quadtank.SENSOR_GAIN, axis=1)
    ctrl_ms = np.mean(res["step_seconds"]) * 1e3
    print(f"oracle mismatches: {res['oracle_mismatches']}")
    print(f"max output error: {float(err_cm.max()):.4f} cm")
    print(f"avg step time: {ctrl_ms:.1f} ms")
    if not args.no_plot:
        figs = _render_simulation_figures(res, args.steps, out / "trajectory.csv")
        for path in figs:
            print(f"figure: {path}")
    summary = {
        "gain_max_deviation": k_err,
        "delta_k_max": cert.delta_k_max,
        "error_bound": err_rep.bound,
        "max_output_error_cm": float(err_cm.max()),
        "avg_step_ms": float(ctrl_ms),
        "oracle_mismatches": int(res["oracle_mismatches"]),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"summary -> {out / 'summary.json'}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="encloop",
        description="Encrypted linear control with homomorphic encryption",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate and store a key set")
    p.add_argument("--profile", choices=["default", "toy"], default="default")
    p.add_argument("--seed", required=True, help="hex entropy, up to 32 bytes")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_keygen)

    p = sub.add_parser("transform", help="controller -> history-feedback gain")
    p.add_argument("--controller", required=True)
    p.add_argument("--length", type=int, default=None, help="data window L (default: controller order)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_transform)

    p = sub.add_parser("analyze", help="stability / degradation bounds")
    p.add_argument("--plant", required=True)
    p.add_argument("--controller", required=True)
    p.add_argument("--length", type=int, default=None)
    p.add_argument("--delta-k", type=float, required=True)
    p.add_argument("--delta-d", type=float, required=True)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--b-r", type=float, default=None, help="reference bound sup ||r||")
    p.add_argument("--x0", type=float, nargs="+", default=[0.0])
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("simulate", help="run the encrypted loop on a plant")
    p.add_argument("--plant", required=True)
    p.add_argument("--gain", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--delta-k", type=float, required=True)
    p.add_argument("--delta-d", type=float, required=True)
    p.add_argument("--seed", required=True)
    p.add_argument("--profile", choices=["default", "toy"], default="default")
    p.add_argument("--plain", action=argparse.BooleanOptionalAction, default=True,
                   help="also run the unencrypted loop for comparison")
    p.add_argument("--noise-var", type=float, default=0.0)
    p.add_argument("--x0", type=float, nargs="+", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("bench", help="time the scheme primitives")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--profile", choices=["default", "toy"], default="default")
    p.add_argument("--out", required=True)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("demo", help="end-to-end tank walkthrough")
    p.add_argument("--steps", type=int, default=quadtank.TOTAL_STEPS)
    p.add_argument("--profile", choices=["default"], default="default")
    p.add_argument("--seed", default="00" * 32)
    p.add_argument("--out", default="demo_out")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(fn=cmd_demo)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except EncLoopError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
