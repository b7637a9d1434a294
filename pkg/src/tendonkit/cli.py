"""Command-line entry points.

Commands: train, rollout, eval, estimate, calibrate-sim, serve-bridge, run-loop.
Every command is deterministic given --seed.  Relative output paths resolve
under $TDK_LOG_DIR when it is set.  Exit codes: 0 ok, 1 usage, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .env import (
    BallConfig,
    DrRanges,
    EnvConfig,
    HandEnv,
    RewardWeights,
    TRAJECTORY_HEADER,
)
from .estimator import ekf_init, ekf_predict, ekf_update
from .handmodel import builtin_proto0, load_hand_model
from .rl import TrainConfig, load_policy, mlp_forward, train
from .runtime import (
    ControlLoopConfig,
    LoopbackDriver,
    NetworkDriver,
    network_bridge,
    run_control_loop,
)
from .stats import read_csv_dicts, rotation_stats, write_csv
from .tendon import SmoothedDifferentiator, calibrate, motor_angles_to_tendon_lengths


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this artifact reserves 1 for usage."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: usage error: {message}\n")


def _out_path(p) -> Path:
    p = Path(p)
    root = os.environ.get("TDK_LOG_DIR")
    if root and not p.is_absolute():
        p = Path(root) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _load_model(path):
    if path is None:
        return builtin_proto0()
    return load_hand_model(Path(path).read_text())


def _dataclass_from_dict(cls, data, nested=()):
    """Build a (frozen) config dataclass from a plain dict, rejecting unknown keys."""
    if data is None:
        return cls()
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - fields
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = dict(nested).get(key)
        if sub is not None:
            value = _dataclass_from_dict(sub, value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def env_config_from_dict(data) -> EnvConfig:
    return _dataclass_from_dict(
        EnvConfig, data,
        nested=(("dr", DrRanges), ("ball", BallConfig), ("weights", RewardWeights)),
    )


def train_config_from_dict(data) -> TrainConfig:
    return _dataclass_from_dict(TrainConfig, data)


def _policy_metadata(env: HandEnv) -> dict:
    cfg = env.config
    return {
        "obs_scale": cfg.obs_scale,
        "history_depth": cfg.history_depth,
        "q_min": env.q_lo.tolist(),
        "q_max": env.q_hi.tolist(),
        "action_dim": env.n_act,
        "rotation_axis": cfg.rotation_axis,
        "rotation_direction": cfg.rotation_direction,
        "task": cfg.task,
    }


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    doc = yaml.safe_load(Path(args.config).read_text()) or {}
    env_cfg = env_config_from_dict(doc.get("env"))
    if "task" in doc:
        env_cfg = dataclasses.replace(env_cfg, task=doc["task"])
    train_cfg = train_config_from_dict(doc.get("train"))
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    model = _load_model(doc.get("hand"))
    env = HandEnv(model, env_cfg, num_envs=train_cfg.num_envs, seed=train_cfg.seed)

    out_dir = _out_path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    policy_path = out_dir / "policy.json"
    log_path = out_dir / "training.csv"

    def progress(row):
        if not args.quiet and (row["iter"] % max(1, train_cfg.iterations // 10) == 0):
            print(f"iter {row['iter']:4d}  reward {row['mean_reward']:+.4f}  "
                  f"omega {row['mean_omega_target']:+.3f}  clip {row['clip_frac']:.2f}")

    result = train(env, train_cfg, policy_path=str(policy_path), log_path=str(log_path),
                   metadata=_policy_metadata(env), progress=progress)
    first, last = result.log_rows[0], result.log_rows[-1]
    print(f"trained {train_cfg.iterations} iterations: "
          f"reward {first['mean_reward']:+.4f} -> {last['mean_reward']:+.4f}")
    print(f"policy: {policy_path}")
    print(f"log:    {log_path}")
    return 0


def cmd_rollout(args) -> int:
    actor, head, meta = load_policy(Path(args.policy).read_text())
    model = _load_model(args.hand)
    env_cfg = EnvConfig(
        obs_scale=float(meta.get("obs_scale", 1.0)),
        rotation_axis=meta.get("rotation_axis", args.axis),
        rotation_direction=meta.get("rotation_direction", args.direction),
        task=meta.get("task", "ball"),
    )
    env = HandEnv(model, env_cfg, num_envs=args.envs, seed=args.seed)
    rows = []
    obs = env.build_actor_observation()
    for step in range(args.steps):
        action, _ = mlp_forward(actor, obs)
        obs, _, _, _, _ = env.step(action)
        rows.extend(env.snapshot_rows(step))
    out = _out_path(args.out)
    write_csv(out, TRAJECTORY_HEADER, rows)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def cmd_eval(args) -> int:
    rows = read_csv_dicts(args.inp)
    stats = rotation_stats(rows, axis=args.axis, direction=args.direction, alpha=args.alpha)
    out = _out_path(args.out)
    with open(out, "w") as f:
        json.dump(stats.summary(), f, indent=2)
    plot_path = _out_path(args.plot_out) if args.plot_out else out.with_suffix(".plot.csv")
    plot_rows = [
        [i, float(raw), float(sm), int(stats.band[0] <= raw <= stats.band[1])]
        for i, (raw, sm) in enumerate(zip(stats.samples, stats.smoothed))
    ]
    write_csv(plot_path, ["index", "omega_raw", "omega_smoothed", "in_band"], plot_rows)
    print(f"mean omega_{args.axis} (smoothed): {stats.mean:+.3f} rad/s; "
          f"in-band fraction: {stats.in_band_fraction:.3f}")
    print(f"stats: {out}\nplot data: {plot_path}")
    return 0


def cmd_estimate(args) -> int:
    model = _load_model(args.hand)
    rows = read_csv_dicts(args.inp)
    if not rows:
        raise ValueError("motor log is empty")
    n = model.n_motors
    theta_cols = [f"theta{i}" for i in range(n)]
    vel_cols = [f"thetadot{i}" for i in range(n)]
    missing = [c for c in ["t"] + theta_cols if c not in rows[0]]
    if missing:
        raise ValueError(f"motor log is missing columns: {missing}")
    have_vel = all(c in rows[0] for c in vel_cols)

    t = np.array([float(r["t"]) for r in rows])
    dt = float(np.median(np.diff(t))) if len(t) > 1 else 1.0 / 20.0
    q_cal = np.zeros(model.n_actuated)
    theta0 = np.array([float(rows[0][c]) for c in theta_cols])
    cal = calibrate(model, theta0, q_cal)
    ekf = ekf_init(q_cal, dt=dt, n_motors=n)
    differ = SmoothedDifferentiator(dt=dt, alpha=args.alpha)

    out_rows = []
    for r in rows:
        theta = np.array([float(r[c]) for c in theta_cols])
        theta_dot = np.array([float(r[c]) for c in vel_cols]) if have_vel else None
        z = motor_angles_to_tendon_lengths(model, cal, theta, theta_dot)
        if z.ldot is None:
            z.ldot = differ.update(z.l)
        ekf = ekf_update(ekf_predict(ekf), z, model, cal)
        out_rows.append([float(r["t"])] + [float(x) for x in ekf.q])
    out = _out_path(args.out)
    write_csv(out, ["t"] + [f"qhat{i}" for i in range(model.n_actuated)], out_rows)
    print(f"estimated {len(out_rows)} steps -> {out}")
    return 0


def cmd_calibrate_sim(args) -> int:
    model = _load_model(args.hand)
    driver = LoopbackDriver(n_motors=model.n_motors)
    state = driver.read_motor_state()
    q_cal = np.zeros(model.n_actuated)
    cal = calibrate(model, state.theta, q_cal)
    out = _out_path(args.out)
    with open(out, "w") as f:
        json.dump({
            "theta_cal": cal.theta_cal.tolist(),
            "q_cal": cal.q_cal.tolist(),
            "l_cal": cal.l_cal.tolist(),
        }, f, indent=2)
    print(f"calibration written to {out}")
    return 0


def _parse_addr(text):
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must be host:port, got {text!r}")
    return host, int(port)


def cmd_serve_bridge(args) -> int:
    model = _load_model(args.hand)
    server = network_bridge(_parse_addr(args.addr), LoopbackDriver(n_motors=model.n_motors))
    host, port = server.address
    print(f"bridge serving loopback driver on {host}:{port} (ctrl-c to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def cmd_run_loop(args) -> int:
    model = _load_model(args.hand)
    cfg = ControlLoopConfig(rate=args.rate, obs_scale=args.scale,
                            realtime=not args.no_realtime)
    if args.addr:
        driver = NetworkDriver(_parse_addr(args.addr), timeout=cfg.watchdog_timeout)
    else:
        driver = LoopbackDriver(n_motors=model.n_motors, rate=args.rate)
    out = _out_path(args.out)
    records = run_control_loop(model, driver, Path(args.policy).read_text(), cfg,
                               ticks=args.ticks, telemetry_path=str(out))
    faults = sum(1 for r in records if r.fault)
    print(f"ran {len(records)} ticks ({faults} faulted); telemetry: {out}")
    return 0 if not records or records[-1].fault < 2 else 2


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="tendonkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a policy per a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="train_out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rollout", help="run a policy and log a trajectory CSV")
    p.add_argument("--policy", required=True)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--envs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--axis", choices=["x", "y", "z"], default="y")
    p.add_argument("--direction", choices=["pos", "neg"], default="neg")
    p.add_argument("--hand", default=None)
    p.add_argument("--out", default="trajectory.csv")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("eval", help="rotation statistics from a trajectory CSV")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--axis", choices=["x", "y", "z"], default="y")
    p.add_argument("--direction", choices=["pos", "neg"], default="neg")
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--out", default="rotation_stats.json")
    p.add_argument("--plot-out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("estimate", help="replay a motor-angle log through the EKF")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--hand", default=None)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--out", default="qhat.csv")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("calibrate-sim", help="boot calibration against the loopback driver")
    p.add_argument("--hand", default=None)
    p.add_argument("--out", default="calibration.json")
    p.set_defaults(func=cmd_calibrate_sim)

    p = sub.add_parser("serve-bridge", help="serve a simulated driver over TCP")
    p.add_argument("--addr", default="127.0.0.1:7433")
    p.add_argument("--hand", default=None)
    p.set_defaults(func=cmd_serve_bridge)

    p = sub.add_parser("run-loop", help="run the 20 Hz closed control loop")
    p.add_argument("--policy", required=True)
    p.add_argument("--ticks", type=int, default=100)
    p.add_argument("--rate", type=float, default=20.0)
    p.add_argument("--scale", type=float, default=0.5)
    p.add_argument("--addr", default=None, help="bridge address (default: in-process loopback)")
    p.add_argument("--no-realtime", action="store_true")
    p.add_argument("--hand", default=None)
    p.add_argument("--out", default="telemetry.csv")
    p.set_defaults(func=cmd_run_loop)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse handled --help or a usage error
        return int(e.code or 0)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as e:  # named error, nonzero exit
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
