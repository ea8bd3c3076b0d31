"""Command-line interface.

Subcommands::

    imucal simulate  CONFIG OUT_CSV [--seed S] [--noiseless]
    imucal calibrate DATA_CSV OUT_JSON [--rig GUESS] [--policy P] [--lambda L] [--m M]
    imucal sensitivity DATA_CSV RIG_REF OUT_CSV [--dp-grid ...] [--dq-grid ...]
    imucal bench OUT_CSV [--policy P] [--L-grid ...]

Exit codes: 0 on success, 1 for input errors (files, formats, arguments),
2 for numerical failures such as unobservable calibration parameters.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from . import geometry as geo
from . import information as info_mod
from . import simulator as sim
from ._parallel import thread_count
from .errors import ConfigError, InputError, NumericalError
from .estimation import LMOptions
from .selection import POLICIES, run_policy

log = logging.getLogger("imucal")

DEFAULT_DP_GRID = (0.0, 0.05, 0.1, 0.2)
DEFAULT_DQ_GRID = (0.0, 5.0, 15.0, 45.0)
DEFAULT_L_GRID = (8, 16, 32, 64)


# ---------------------------------------------------------------- config files


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc


def bundled_config(name):
    """Path-like handle of a config shipped in ``imucal/data``."""
    return resources.files("imucal") / "data" / name


def resolve_config_path(arg):
    """A file path, or the name of a bundled config such as ``edge_case``."""
    p = Path(arg)
    if p.exists():
        return p
    ref = bundled_config(arg if arg.endswith(".json") else arg + ".json")
    if ref.is_file():
        return ref
    raise ConfigError(f"{arg}: no such file or bundled config")


def _imu_from_dict(d, i):
    try:
        p = np.asarray(d["p"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"imus[{i}]: missing or invalid 'p'") from exc
    if "euler_xyz_deg" in d:
        q = geo.euler_xyz_to_quat(np.asarray(d["euler_xyz_deg"], dtype=float))
    else:
        q = np.asarray(d.get("q_xyzw", geo.IDENTITY), dtype=float)
    return p, q, d.get("q_g_xyzw")


def simulation_from_config(cfg, seed=0, noiseless=False):
    """Rig and trajectory of a simulation config; returns ``(rig, traj)``.

    Gyroscope misalignments are drawn from ``gyro_misalignment_deg`` with
    ``seed`` unless every IMU lists ``q_g_xyzw`` explicitly.
    """
    try:
        noise = sim.NoiseSpec.from_dict(cfg["noise"])
        imus_cfg = cfg["imus"]
        tcfg = cfg["trajectory"]
    except KeyError as exc:
        raise ConfigError(f"simulation config lacks {exc}") from exc
    if noiseless:
        noise = dataclasses.replace(noise, sigma_a=0.0, sigma_ba=0.0, sigma_g=0.0, sigma_bg=0.0)
    parsed = [_imu_from_dict(d, i) for i, d in enumerate(imus_cfg)]
    if all(qg is not None for *_, qg in parsed):
        q_g = [np.asarray(qg, dtype=float) for *_, qg in parsed]
    else:
        q_g = sim.random_gyro_misalignment(seed, float(cfg.get("gyro_misalignment_deg", 0.0)), len(parsed))
    gravity = cfg.get("gravity", sim.DEFAULT_GRAVITY)
    rig = sim.RigConfig([sim.ImuExtrinsics(p, q, g) for (p, q, _), g in zip(parsed, q_g)], noise, gravity)
    try:
        osc = [sim.Oscillation(float(o["start"]), float(o["end"]), o["axis"], float(o["amplitude"]),
                               float(o["frequency"])) for o in tcfg["oscillations"]]
        trans = [sim.Translation(o["axis"], float(o["amplitude"]), float(o["frequency"]))
                 for o in tcfg.get("translation", [])]
        duration = float(tcfg["duration"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid trajectory config: {exc}") from exc
    traj = sim.sinusoidal_euler_trajectory(duration, noise.dt, osc, trans, gravity=rig.gravity)
    return rig, traj


def load_rig_any(path):
    """Rig JSON, or a ground-truth sidecar holding one under ``rig``."""
    doc = _read_json(path)
    return sim.RigConfig.from_dict(doc.get("rig", doc) if isinstance(doc, dict) else doc)


def _noise_for(data, rig=None, config=None, noise_path=None):
    if noise_path is not None:
        noise = sim.NoiseSpec.from_dict(_read_json(noise_path))
    elif config and "noise" in config:
        noise = sim.NoiseSpec.from_dict(config["noise"])
    elif rig is not None:
        noise = rig.noise
    else:
        noise = dataclasses.replace(sim.EDGE_CASE_NOISE, dt=data.dt)
    if abs(noise.dt - data.dt) > 1e-6 * data.dt:
        log.warning("noise dt %.6g s differs from the data interval %.6g s; using the data interval", noise.dt, data.dt)
        noise = dataclasses.replace(noise, dt=data.dt)
    return noise


def _grid(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"invalid grid {text!r}") from exc
    if not vals:
        raise ConfigError("grid is empty")
    return vals


def _segment_length(data, seconds):
    if not seconds > 0:
        raise ConfigError("--segment-seconds must be positive")
    K = int(round(seconds / data.dt))
    if K < 2:
        raise ConfigError("segments must span at least two samples")
    return K


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _finite(x):
    x = float(x)
    return x if np.isfinite(x) else str(x)


# ---------------------------------------------------------------- commands


def cmd_simulate(args):
    path = resolve_config_path(args.config)
    cfg = _read_json(path)
    rig, traj = simulation_from_config(cfg, args.seed, args.noiseless)
    data = sim.simulate(traj, rig, seed=args.seed, noisy=not args.noiseless)
    sim.save_csv(data, args.out_csv)
    side = sim.truth_path(args.out_csv)
    sim.save_truth(data.ground_truth, side, extra={
        "config": {"path": str(path), "seed": args.seed, "noiseless": args.noiseless, "simulation": cfg},
        "imucal_version": __version__,
    })
    print(f"wrote {data.n_steps} timesteps x {data.n_imus} IMUs to {args.out_csv}; truth in {side}")
    return 0


def cmd_calibrate(args):
    file_cfg = _read_json(args.config) if args.config else {}

    def pick(name, default):
        # flags > config file > defaults
        v = getattr(args, name)
        return v if v is not None else file_cfg.get(name, default)

    policy = pick("policy", "greedy-init")
    lam = float(pick("lam", 0.5))
    M = pick("m", None)
    seconds = float(pick("segment_seconds", 1.0))
    rig_path = pick("rig", None)
    truth = pick("truth", None)

    data = sim.load_csv(args.data_csv)
    rig_guess = load_rig_any(rig_path) if rig_path else None
    noise = _noise_for(data, rig_guess, file_cfg, args.noise)
    K = _segment_length(data, seconds)
    theta0 = None
    if rig_guess is not None:
        from .initialization import initial_state
        theta0 = initial_state(data, rig_guess)
    opts = LMOptions(**file_cfg.get("lm", {}))

    report = run_policy(policy, data, noise, K=K, lam=lam, M=None if M is None else int(M), theta0=theta0, options=opts)

    chosen = [s for s in data.segments(K) if s.index in set(report.selected)]
    info = info_mod.segments_information(chosen, report.state, noise)
    sigma, _ = info_mod.marginal_covariance(info, require_observable=True)
    sd = np.sqrt(np.clip(np.diag(sigma), 0.0, None))
    n = report.state.n
    extra = {
        "imucal_version": __version__,
        "config": {
            "data": str(args.data_csv), "policy": policy, "lambda": lam, "M": M, "segment_seconds": seconds,
            "K": K, "rig_guess": rig_path, "noise": noise.to_dict(), "lm": opts.to_dict(),
            "threads": thread_count(), "config_file": args.config,
        },
        "std_dev": {
            "p_cm": (100.0 * sd[: 3 * n]).reshape(n, 3).tolist(),
            "q_deg": np.degrees(sd[3 * n: 6 * n]).reshape(n, 3).tolist(),
            "q_g_deg": np.degrees(sd[6 * n:]).reshape(n + 1, 3).tolist(),
        },
        "reprojection": an.reprojection_error(data, report.state, noise),
    }
    truth = truth or (str(sim.truth_path(args.data_csv)) if sim.truth_path(args.data_csv).exists() else None)
    if truth:
        extra["config"]["truth"] = str(truth)
        extra["errors"] = an.extrinsic_errors(report.state, load_rig_any(truth))
    report.save_json(args.out_json, extra)
    if args.trace:
        report.save_trace_csv(args.trace)
    msg = f"{policy}: selected {len(report.selected)}/{report.n_segments} segments"
    if "errors" in extra:
        e = extra["errors"]
        msg += (f"; max error p {e['max_p_cm']:.4f} cm, q {e['max_q_deg']:.4f} deg,"
                f" q_g {e['max_q_g_deg']:.4f} deg")
    print(msg)
    return 0


def cmd_sensitivity(args):
    data = sim.load_csv(args.data_csv)
    rig = load_rig_any(args.rig_ref)
    noise = _noise_for(data, rig)
    K = _segment_length(data, args.segment_seconds)
    res = an.sensitivity_sweep(data, rig, _grid(args.dp_grid), _grid(args.dq_grid), args.seed, K, noise)
    an.write_sweep_csv(res.rows, args.out_csv)
    if args.json:
        doc = res.to_dict()
        doc["config"] = {"data": str(args.data_csv), "rig_ref": str(args.rig_ref), "K": K,
                         "dp_grid": args.dp_grid, "dq_grid": args.dq_grid, "noise": noise.to_dict()}
        doc["imucal_version"] = __version__
        _write_json(args.json, doc)
    for dp, dq, rho in res.rows:
        print(f"dp={dp:g} m dq={dq:g} deg rho={rho:.4f}")
    return 0


def cmd_bench(args):
    policies = ("greedy-original", "greedy-init") if args.policy == "both" else (args.policy,)
    L_grid = [int(v) for v in _grid(args.L_grid)]
    if any(v < 1 for v in L_grid):
        raise ConfigError("L values must be positive")
    out = Path(args.out_csv)
    summary = {"imucal_version": __version__,
               "config": {"L_grid": L_grid, "K": args.K, "N": args.N, "lambda": args.lam, "seed": args.seed,
                          "repeats": args.repeats},
               "policies": {}}
    for pol in policies:
        rows = an.bench_complexity(L_grid, pol, N=args.N, K=args.K, lam=args.lam, seed=args.seed,
                                   repeats=args.repeats)
        path = out if len(policies) == 1 else out.with_name(f"{out.stem}.{pol}{out.suffix}")
        an.write_bench_csv(rows, path)
        summary["policies"][pol] = {"csv": str(path), "rows": rows, **an.bench_summary(rows)}
    if args.json:
        _write_json(args.json, summary)
    print(json.dumps({p: {k: v for k, v in s.items() if k != "rows"} for p, s in summary["policies"].items()},
                     indent=2, default=_finite))
    return 0


# ---------------------------------------------------------------- entry point


def build_parser():
    ap = argparse.ArgumentParser(prog="imucal", description="Multi-IMU extrinsic self-calibration")
    ap.add_argument("--version", action="version", version=f"imucal {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a rig along a trajectory")
    s.add_argument("config", help="simulation JSON, or a bundled name such as edge_case")
    s.add_argument("out_csv")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noiseless", action="store_true")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("calibrate", help="select segments and calibrate")
    c.add_argument("data_csv")
    c.add_argument("out_json")
    c.add_argument("--rig", help="initial guess (rig JSON or truth sidecar)")
    c.add_argument("--policy", choices=POLICIES)
    c.add_argument("--lambda", dest="lam", type=float)
    c.add_argument("--m", type=int, help="subset size for m-largest")
    c.add_argument("--segment-seconds", type=float)
    c.add_argument("--noise", help="noise JSON; defaults to the rig guess, then built-in values")
    c.add_argument("--truth", help="ground truth for error reporting (default: the CSV's sidecar if present)")
    c.add_argument("--config", help="JSON with defaults for any of the options above")
    c.add_argument("--trace", help="write the per-segment decision trace CSV here")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("sensitivity", help="rank correlation of segment information under perturbations")
    e.add_argument("data_csv")
    e.add_argument("rig_ref")
    e.add_argument("out_csv")
    e.add_argument("--dp-grid", default=",".join(f"{v:g}" for v in DEFAULT_DP_GRID), help="metres")
    e.add_argument("--dq-grid", default=",".join(f"{v:g}" for v in DEFAULT_DQ_GRID), help="degrees")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--segment-seconds", type=float, default=1.0)
    e.add_argument("--json", help="also write directions and configuration here")
    e.set_defaults(func=cmd_sensitivity)

    b = sub.add_parser("bench", help="evaluation counters and runtimes of the greedy policies")
    b.add_argument("out_csv")
    b.add_argument("--policy", choices=("greedy-original", "greedy-init", "both"), default="both")
    b.add_argument("--L-grid", default=",".join(str(v) for v in DEFAULT_L_GRID))
    b.add_argument("--K", type=int, default=20)
    b.add_argument("--N", type=int, default=1)
    b.add_argument("--lambda", dest="lam", type=float, default=0.0)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--repeats", type=int, default=1, help="time each L this many times and keep the fastest")
    b.add_argument("--json", help="summary with fitted exponents")
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"imucal: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (InputError, OSError) as exc:
        print(f"imucal: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
