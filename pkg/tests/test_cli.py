import csv
import json

import numpy as np
import pytest

from tendonkit.cli import main
from tendonkit.env import TRAJECTORY_HEADER
from tendonkit.stats import exponential_smoothing, rotation_stats, read_csv_dicts
from tendonkit.tendon import calibrate, joints_to_motor_angles


# -- smoothing -------------------------------------------------------------------

def test_smoothing_constant_series():
    out = exponential_smoothing(np.full(10, 3.5), alpha=0.4)
    assert np.array_equal(out, np.full(10, 3.5))


def test_smoothing_alpha_one_passthrough():
    x = np.random.default_rng(0).standard_normal(20)
    assert np.array_equal(exponential_smoothing(x, alpha=1.0), x)


def test_smoothing_step_responses():
    # step already present at t=0 passes through; a later step relaxes in
    ones = exponential_smoothing(np.ones(5), alpha=0.5)
    assert np.array_equal(ones, np.ones(5))
    delayed = exponential_smoothing(np.array([0.0, 1.0, 1.0, 1.0]), alpha=0.5)
    assert np.allclose(delayed, [0.0, 0.5, 0.75, 0.875], atol=1e-15)


def test_smoothing_empty_series_rejected():
    with pytest.raises(ValueError):
        exponential_smoothing([], alpha=0.5)


def test_smoothing_alpha_range():
    with pytest.raises(ValueError):
        exponential_smoothing([1.0], alpha=0.0)
    with pytest.raises(ValueError):
        exponential_smoothing([1.0], alpha=1.5)


# -- rotation stats ------------------------------------------------------------------

def _rows(omegas, axis="y"):
    return [{f"omega_{axis}": str(w), "omega_x": "0", "omega_z": "0"} for w in omegas]


def test_stats_all_in_band():
    stats = rotation_stats(_rows([-1.5] * 40), axis="y", direction="neg")
    assert stats.in_band_fraction == 1.0
    assert stats.band == (-2.0, -1.0)
    assert stats.mean == pytest.approx(-1.5)


def test_stats_none_in_band():
    stats = rotation_stats(_rows([0.0] * 40), axis="y", direction="neg")
    assert stats.in_band_fraction == 0.0


def test_stats_empty_log():
    stats = rotation_stats([], axis="y", direction="neg")
    assert stats.in_band_fraction == 0.0
    assert stats.mean == 0.0


def test_stats_missing_column():
    with pytest.raises(ValueError):
        rotation_stats([{"omega_x": "0"}], axis="y", direction="neg")


def test_stats_reversed_direction_band():
    stats = rotation_stats(_rows([1.5] * 10), axis="y", direction="pos")
    assert stats.band == (1.0, 2.0)
    assert stats.in_band_fraction == 1.0


# -- commands ------------------------------------------------------------------------

TOY_CONFIG = """
task: joint_tracking
env:
  episode_length: 12
train:
  num_envs: 4
  rollout_len: 8
  iterations: 3
  hidden: [8, 8]
  minibatch_size: 32
  seed: 5
"""


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "toy.yaml"
    cfg.write_text(TOY_CONFIG)
    out = root / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    return out


def test_train_outputs_exist(trained):
    assert (trained / "policy.json").exists()
    log = list(csv.DictReader(open(trained / "training.csv")))
    assert len(log) == 3
    assert list(log[0].keys()) == ["iter", "mean_reward", "mean_omega_target",
                                   "clip_frac", "actor_loss", "critic_loss"]


def test_train_deterministic_across_runs(tmp_path):
    cfg = tmp_path / "toy.yaml"
    cfg.write_text(TOY_CONFIG)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--config", str(cfg), "--out", str(out), "--quiet",
                     "--seed", "7"]) == 0
        outs.append((out / "training.csv").read_bytes())
    assert outs[0] == outs[1]


def test_rollout_contract(trained, tmp_path):
    traj = tmp_path / "traj.csv"
    assert main(["rollout", "--policy", str(trained / "policy.json"),
                 "--steps", "25", "--envs", "2", "--seed", "1",
                 "--out", str(traj)]) == 0
    rows = list(csv.reader(open(traj)))
    assert rows[0] == TRAJECTORY_HEADER
    assert len(rows) == 1 + 25 * 2


def test_eval_contract_and_cross_module_consistency(trained, tmp_path):
    traj = tmp_path / "traj.csv"
    main(["rollout", "--policy", str(trained / "policy.json"),
          "--steps", "30", "--envs", "2", "--seed", "2", "--out", str(traj)])
    out = tmp_path / "stats.json"
    assert main(["eval", "--in", str(traj), "--axis", "y", "--direction", "neg",
                 "--out", str(out)]) == 0
    stats = json.loads(out.read_text())
    assert {"mean", "median", "in_band_fraction", "band"} <= set(stats)
    # the eval fraction equals the fraction of rows whose rotation term is maximal
    rows = read_csv_dicts(traj)
    frac_from_rot_term = np.mean([float(r["rot_term"]) == 2.0 for r in rows])
    assert stats["in_band_fraction"] == pytest.approx(frac_from_rot_term, abs=1e-12)
    assert (tmp_path / "stats.plot.csv").exists()


def test_estimate_command(proto0, tmp_path):
    # synthetic motor log around a slow sine; the estimate must track it
    cal = calibrate(proto0, np.zeros(16), np.zeros(11))
    rows = []
    dt = 0.02
    qs = []
    for k in range(120):
        t = k * dt
        q = 0.2 * np.sin(2 * np.pi * t / 3.0) * np.ones(11)
        qs.append(q)
        theta = joints_to_motor_angles(proto0, cal, q)
        rows.append([t] + [float(x) for x in theta])
    log = tmp_path / "motors.csv"
    with open(log, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t"] + [f"theta{i}" for i in range(16)])
        writer.writerows(rows)
    out = tmp_path / "qhat.csv"
    assert main(["estimate", "--in", str(log), "--out", str(out)]) == 0
    est = list(csv.DictReader(open(out)))
    assert len(est) == 120
    err = abs(float(est[-1]["qhat0"]) - qs[-1][0])
    assert err < 0.05


def test_estimate_command_with_velocity_columns(proto0, tmp_path):
    from tendonkit.tendon import muscle_jacobian

    cal = calibrate(proto0, np.zeros(16), np.zeros(11))
    spool = np.array([m.attachments[0].spool_radius for m in proto0.motors])
    winding = np.array([m.attachments[0].winding for m in proto0.motors])
    rows = []
    dt = 0.02
    for k in range(80):
        t = k * dt
        q = 0.15 * np.sin(2 * np.pi * t / 2.5) * np.ones(11)
        qd = 0.15 * (2 * np.pi / 2.5) * np.cos(2 * np.pi * t / 2.5) * np.ones(11)
        theta = joints_to_motor_angles(proto0, cal, q)
        theta_dot = winding * (muscle_jacobian(proto0, q) @ qd) / spool
        rows.append([t] + list(theta) + list(theta_dot))
    log = tmp_path / "motors.csv"
    with open(log, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t"] + [f"theta{i}" for i in range(16)]
                        + [f"thetadot{i}" for i in range(16)])
        writer.writerows(rows)
    out = tmp_path / "qhat.csv"
    assert main(["estimate", "--in", str(log), "--out", str(out)]) == 0
    est = list(csv.DictReader(open(out)))
    q_final = 0.15 * np.sin(2 * np.pi * (79 * dt) / 2.5)
    assert abs(float(est[-1]["qhat0"]) - q_final) < 0.03


def test_calibrate_sim_command(tmp_path):
    out = tmp_path / "cal.json"
    assert main(["calibrate-sim", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["theta_cal"]) == 16
    assert len(doc["q_cal"]) == 11
    assert len(doc["l_cal"]) == 16


def test_run_loop_command(trained, tmp_path):
    out = tmp_path / "telemetry.csv"
    assert main(["run-loop", "--policy", str(trained / "policy.json"),
                 "--ticks", "12", "--no-realtime", "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert len(rows) == 13
    assert rows[0][:2] == ["tick", "t_wall"]
    assert rows[0][-1] == "fault"


def test_usage_error_exit_code_is_one():
    assert main(["rollout"]) == 1            # missing required --policy
    assert main(["eval", "--in", "x.csv", "--axis", "q"]) == 1  # bad choice


def test_runtime_error_exit_code_is_two(tmp_path):
    missing = tmp_path / "nope.json"
    assert main(["rollout", "--policy", str(missing), "--out", str(tmp_path / "t.csv")]) == 2


def test_unknown_config_key_is_runtime_error(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("train: {definitely_not_a_field: 1}\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_log_dir_env_var(trained, tmp_path, monkeypatch):
    monkeypatch.setenv("TDK_LOG_DIR", str(tmp_path / "logs"))
    assert main(["rollout", "--policy", str(trained / "policy.json"),
                 "--steps", "5", "--out", "nested/traj.csv"]) == 0
    assert (tmp_path / "logs" / "nested" / "traj.csv").exists()


def test_env_config_nested_overrides():
    from tendonkit.cli import env_config_from_dict

    cfg = env_config_from_dict({
        "episode_length": 99,
        "dr": {"obs_noise": [0.0, 0.0], "friction": [1.0, 1.0]},
        "ball": {"radius": 0.05},
        "weights": {"rotation": 0.02},
    })
    assert cfg.episode_length == 99
    assert cfg.dr.obs_noise == (0.0, 0.0)
    assert cfg.dr.joint_range == (0.9, 1.1)  # untouched fields keep defaults
    assert cfg.ball.radius == 0.05
    assert cfg.weights.rotation == 0.02


def test_env_config_rejects_unknown_keys():
    from tendonkit.cli import env_config_from_dict

    with pytest.raises(ValueError, match="unknown"):
        env_config_from_dict({"not_a_field": 1})


def test_stats_smoothing_preserves_sample_count():
    stats = rotation_stats(_rows(np.linspace(-3, 1, 57)), axis="y", direction="neg")
    assert len(stats.smoothed) == len(stats.samples) == 57
    assert 0.0 <= stats.in_band_fraction <= 1.0


def test_rollout_deterministic_given_seed(trained, tmp_path):
    outs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        assert main(["rollout", "--policy", str(trained / "policy.json"),
                     "--steps", "15", "--envs", "2", "--seed", "4",
                     "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_emitted_csvs_roundtrip_through_own_parsers(trained, tmp_path):
    traj = tmp_path / "traj.csv"
    main(["rollout", "--policy", str(trained / "policy.json"),
          "--steps", "10", "--out", str(traj)])
    stats = tmp_path / "stats.json"
    main(["eval", "--in", str(traj), "--out", str(stats)])
    telemetry = tmp_path / "telemetry.csv"
    main(["run-loop", "--policy", str(trained / "policy.json"),
          "--ticks", "5", "--no-realtime", "--out", str(telemetry)])
    for path, expect_rows in ((trained / "training.csv", 3), (traj, 10),
                              (tmp_path / "stats.plot.csv", 10), (telemetry, 5)):
        rows = read_csv_dicts(path)
        assert len(rows) == expect_rows
        assert all(None not in r.values() for r in rows)  # no ragged rows
