import dataclasses

import numpy as np
import pytest

from tendonkit.env import (
    ACTOR_DIM,
    CRITIC_DIM,
    DrRanges,
    EnvConfig,
    HandEnv,
    TRAJECTORY_HEADER,
    actor_observation,
    compute_reward,
    direction_sign,
    domain_randomize,
    integrate_command,
    normalize_joints,
    numerical_angular_velocity,
    rotation_reward,
    rotation_reward_band,
)
from tendonkit.kinematics import quat_from_axis_angle


@pytest.fixture
def env(proto0):
    return HandEnv(proto0, EnvConfig(), num_envs=4, seed=0)


# -- domain randomization ------------------------------------------------------

def test_dr_collapsed_ranges_exact():
    ranges = DrRanges(**{name: (1.0, 1.0) for name in DrRanges.__dataclass_fields__})
    params = domain_randomize(np.random.default_rng(0), ranges)
    assert all(getattr(params, n) == 1.0 for n in DrRanges.__dataclass_fields__)


def test_dr_same_stream_identical():
    a = domain_randomize(np.random.default_rng(42), DrRanges())
    b = domain_randomize(np.random.default_rng(42), DrRanges())
    assert a == b


def test_dr_statistics():
    ranges = DrRanges()
    rng = np.random.default_rng(7)
    samples = [domain_randomize(rng, ranges) for _ in range(10_000)]
    for name in DrRanges.__dataclass_fields__:
        lo, hi = getattr(ranges, name)
        vals = np.array([getattr(s, name) for s in samples])
        assert vals.min() >= lo and vals.max() <= hi
        if hi > lo:
            mid, width = 0.5 * (lo + hi), hi - lo
            assert abs(vals.mean() - mid) < 0.05 * width


def test_dr_bad_range_rejected():
    ranges = dataclasses.replace(DrRanges(), friction=(1.2, 0.8))
    with pytest.raises(ValueError):
        domain_randomize(np.random.default_rng(0), ranges)


# -- reset ----------------------------------------------------------------------

def test_reset_deterministic(proto0):
    a = HandEnv(proto0, EnvConfig(), num_envs=3, seed=5)
    b = HandEnv(proto0, EnvConfig(), num_envs=3, seed=5)
    assert np.array_equal(a.q, b.q)
    assert np.array_equal(a.ball_pos, b.ball_pos)
    assert {k: np.array_equal(a.dr[k], b.dr[k]) for k in a.dr} == {k: True for k in a.dr}


def test_reset_pose_within_limits(env):
    assert np.all(env.q >= env.q_lo) and np.all(env.q <= env.q_hi)
    assert np.array_equal(env.qbar, env.q)


def test_reset_ball_not_dropped(env):
    dist = np.linalg.norm(env.ball_pos - env.x_hand, axis=-1)
    assert np.all(dist < env.config.drop_distance)


def test_reset_history_padded_with_initial_pose(env):
    expected = env.config.obs_scale * env.q
    for k in range(env.config.history_depth):
        assert np.array_equal(env.history[:, k], expected)


def test_reset_resamples_domain_params(proto0):
    env = HandEnv(proto0, EnvConfig(), num_envs=2, seed=1)
    before = {k: v.copy() for k, v in env.dr.items()}
    env.reset([0])
    changed = any(not np.array_equal(before[k][0], env.dr[k][0]) for k in env.dr)
    assert changed
    unchanged = all(np.array_equal(before[k][1], env.dr[k][1]) for k in env.dr)
    assert unchanged


# -- action integration ------------------------------------------------------------

def test_apply_action_zero_keeps_command(env):
    before = env.qbar.copy()
    env.apply_action(np.zeros((4, 11)))
    assert np.array_equal(env.qbar, before)


def test_apply_action_rate_limit(env):
    # a = 1, v_max = 5 rad/s, dt = 0.05 s -> +0.25 rad before the range clip
    before = env.qbar.copy()
    env.apply_action(np.ones((4, 11)))
    moved = env.qbar - before
    free = env.qbar < env.q_hi  # entries that did not hit the limit
    assert np.allclose(moved[free], 0.25, atol=1e-12)


def test_apply_action_clips_at_limits(env):
    env.qbar[:] = env.q_hi
    env.apply_action(np.ones((4, 11)))
    assert np.array_equal(env.qbar, np.broadcast_to(env.q_hi, env.qbar.shape))


def test_apply_action_clips_action_itself(env):
    before = env.qbar.copy()
    env.apply_action(np.full((4, 11), 10.0))  # clipped to 1
    assert np.all(env.qbar - before <= 0.25 + 1e-12)


def test_integrate_command_invariants(joint_ranges):
    lo, hi = joint_ranges
    rng = np.random.default_rng(0)
    qbar = (lo + hi) / 2
    for _ in range(1000):
        new, _ = integrate_command(qbar, rng.uniform(-3, 3, 11), 5.0, 0.05, lo, hi)
        assert np.all(np.abs(new - qbar) <= 0.25 + 1e-12)
        assert np.all(new >= lo) and np.all(new <= hi)
        qbar = new


# -- stepping ---------------------------------------------------------------------

def test_step_zero_action_from_rest(env):
    _, _, rew, done, _ = env.step(np.zeros((4, 11)))
    # q == qbar and a static ball: rotation term is exactly min(1, 2, 4) = 1
    assert np.array_equal(rew.rotation, np.ones(4))
    assert np.array_equal(rew.torque, np.zeros(4))
    assert np.array_equal(rew.action, np.zeros(4))
    assert np.array_equal(rew.drop, np.zeros(4))
    assert not done.any()


def test_step_drop_penalty_and_reset(env):
    env.ball_pos[0] = np.array([0.0, -1.0, 0.0])
    episode_before = env.episode.copy()
    _, _, rew, done, info = env.step(np.zeros((4, 11)))
    assert done[0] and rew.drop[0] == 1.0
    assert rew.total[0] == pytest.approx(0.01 * rew.rotation[0] - 1.0, abs=1e-9)
    assert 0 in info["reset_indices"]
    assert env.episode[0] == episode_before[0] + 1
    assert not done[1:].any()


def test_step_timeout_resets(proto0):
    env = HandEnv(proto0, EnvConfig(episode_length=3), num_envs=2, seed=0)
    for k in range(3):
        _, _, _, done, _ = env.step(np.zeros((2, 11)))
    assert done.all()
    assert env.step_count.max() == 0  # fresh episodes


def test_step_nonfinite_guard(env):
    env.q[2, 0] = np.nan
    _, _, _, done, info = env.step(np.zeros((4, 11)))
    assert 2 in info["nonfinite_indices"]
    assert done[2]
    assert np.all(np.isfinite(env.q))


def test_natural_drop_through_dynamics(proto0):
    # with a tight contact margin, fully extending the fingers loses the grip:
    # the ball must free-fall past the drop distance and end the episode on
    # its own (at the default margin the flat hand still cradles the ball,
    # which a palm-up hand without wrist tilt legitimately does)
    from tendonkit.env import BallConfig

    cfg = dataclasses.replace(EnvConfig(), episode_length=400,
                              ball=BallConfig(contact_margin=0.006))
    env = HandEnv(proto0, cfg, num_envs=1, seed=1)
    for _ in range(10):  # grip survives holding still
        _, _, _, done, _ = env.step(np.zeros((1, 11)))
        assert not done[0]
    dropped = False
    for _ in range(120):
        _, _, rew, done, _ = env.step(np.full((1, 11), -1.0))  # extend everything
        if done[0] and rew.drop[0] == 1.0:
            dropped = True
            break
    assert dropped


def test_reward_total_identity_random_rollout(env):
    rng = np.random.default_rng(3)
    for _ in range(50):
        _, _, rew, _, _ = env.step(rng.uniform(-1, 1, (4, 11)))
        expected = 0.01 * rew.rotation - 0.02 * rew.torque - 0.002 * rew.action - 1.0 * rew.drop
        assert np.abs(rew.total - expected).max() < 1e-12


def test_batched_equals_sequential_bitexact(proto0):
    cfg = EnvConfig()
    B, T = 4, 30
    batch = HandEnv(proto0, cfg, num_envs=B, seed=11)
    acts = np.random.default_rng(5).uniform(-1, 1, (T, B, 11))
    rows = []
    for t in range(T):
        ao, co, rew, done, _ = batch.step(acts[t])
        rows.append((ao.copy(), co.copy(), rew.total.copy(), batch.ball_quat.copy()))
    for i in range(B):
        single = HandEnv(proto0, cfg, num_envs=1, seed=11, env_index_offset=i)
        for t in range(T):
            ao, co, rew, done, _ = single.step(acts[t, i:i + 1])
            assert np.array_equal(ao[0], rows[t][0][i])
            assert np.array_equal(co[0], rows[t][1][i])
            assert rew.total[0] == rows[t][2][i]
            assert np.array_equal(single.ball_quat[0], rows[t][3][i])


# -- angular velocity ----------------------------------------------------------------

def test_angvel_zero_for_equal_quats():
    q = quat_from_axis_angle(np.array([0, 1.0, 0]), 0.3)
    assert np.allclose(numerical_angular_velocity(q, q, 0.05), 0.0, atol=1e-15)


def test_angvel_known_rotation():
    prev = np.array([1.0, 0, 0, 0])
    now = quat_from_axis_angle(np.array([0, 1.0, 0]), 0.1)
    omega = numerical_angular_velocity(prev, now, 0.05)
    assert np.abs(omega - np.array([0.0, 2.0, 0.0])).max() < 1e-9


def test_angvel_antisymmetric():
    rng = np.random.default_rng(0)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    a = quat_from_axis_angle(axis, 0.4)
    b = quat_from_axis_angle(axis, 1.1)
    fwd = numerical_angular_velocity(a, b, 0.02)
    back = numerical_angular_velocity(b, a, 0.02)
    assert np.allclose(fwd, -back, atol=1e-12)


def test_angvel_recovers_constant_rate():
    from tendonkit.kinematics import quat_mul

    rng = np.random.default_rng(1)
    dt = 0.05
    for _ in range(50):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        rate = rng.uniform(-0.95, 0.95) * np.pi / dt  # |omega| dt < pi
        prev = quat_from_axis_angle(axis, rng.uniform(0, 2))
        step = quat_from_axis_angle(axis, rate * dt)
        now = quat_mul(step, prev)
        omega = numerical_angular_velocity(prev, now, dt)
        assert np.abs(omega - rate * axis).max() < 1e-9 * max(1.0, abs(rate))


def test_angvel_rejects_bad_dt():
    q = np.array([1.0, 0, 0, 0])
    with pytest.raises(ValueError):
        numerical_angular_velocity(q, q, 0.0)


# -- reward function ------------------------------------------------------------------

def test_rotation_reward_spot_values():
    s = direction_sign("neg")  # +1
    assert s == 1.0
    assert rotation_reward(-1.5, s) == 2.0
    assert rotation_reward(0.0, s) == 1.0
    assert rotation_reward(1.0, s) == 0.0


def test_rotation_reward_plateau_and_band():
    s = 1.0
    assert rotation_reward_band(s) == (-2.0, -1.0)
    w = np.linspace(-6, 6, 2001)
    r = rotation_reward(w, s)
    assert r.max() == 2.0
    plateau = w[r == 2.0]
    assert plateau.min() >= -2.0 - 1e-9 and plateau.max() <= -1.0 + 1e-9


def test_rotation_reward_direction_symmetry():
    rng = np.random.default_rng(0)
    w = rng.uniform(-8, 8, 1000)
    assert np.array_equal(rotation_reward(w, 1.0), rotation_reward(-w, -1.0))


def test_compute_reward_weighted_identity_random_states():
    rng = np.random.default_rng(1)
    cfg = EnvConfig()
    omega = rng.uniform(-5, 5, (10_000, 3))
    tau = rng.uniform(-3, 3, (10_000, 11))
    action = rng.uniform(-1, 1, (10_000, 11))
    dist = rng.uniform(0, 0.5, 10_000)
    out = compute_reward(omega, tau, action, dist, cfg)
    expected = (0.01 * out.rotation - 0.02 * out.torque
                - 0.002 * out.action - 1.0 * out.drop)
    assert np.abs(out.total - expected).max() < 1e-12
    assert np.array_equal(out.drop, (dist > 0.24).astype(float))


def test_compute_reward_uses_configured_axis():
    cfg = dataclasses.replace(EnvConfig(), rotation_axis="x", rotation_direction="pos")
    omega = np.array([[1.5, 0.0, 0.0]])
    out = compute_reward(omega, np.zeros((1, 11)), np.zeros((1, 11)), np.zeros(1), cfg)
    assert out.rotation[0] == 2.0  # s = -1, plateau at +[1, 2]


# -- observations -------------------------------------------------------------------

def test_actor_obs_dims(env):
    assert env.build_actor_observation().shape == (4, ACTOR_DIM)


def test_critic_obs_dims(env):
    assert env.build_critic_observation().shape == (4, CRITIC_DIM)


def test_normalization_endpoints(joint_ranges):
    lo, hi = joint_ranges
    assert np.allclose(normalize_joints(hi, lo, hi), 1.0)
    assert np.allclose(normalize_joints(lo, lo, hi), -1.0)
    assert np.allclose(normalize_joints((lo + hi) / 2, lo, hi), 0.0)


def test_actor_obs_layout(env):
    obs = env.build_actor_observation()
    manual = actor_observation(env.qbar, env.history, env.prev_action, env.q_lo, env.q_hi)
    assert np.array_equal(obs, manual)
    qbar_n = normalize_joints(env.qbar, env.q_lo, env.q_hi)
    assert np.array_equal(obs[:, :11], qbar_n)
    hist_n = normalize_joints(env.history, env.q_lo, env.q_hi).reshape(4, 55)
    assert np.array_equal(obs[:, 11:66], hist_n)
    assert np.array_equal(obs[:, 66:], env.prev_action)


def test_history_is_oldest_to_newest(proto0):
    env = HandEnv(proto0, EnvConfig(dr=DrRanges(obs_noise=(0.0, 0.0))), num_envs=1, seed=0)
    q_first = env.q[0].copy()
    env.step(np.ones((1, 11)) * 0.5)
    assert np.array_equal(env.history[0, -1], env.config.obs_scale * env.q[0])
    assert np.array_equal(env.history[0, 0], env.config.obs_scale * q_first)


def test_obs_scale_halves_measurements(proto0):
    cfg = dataclasses.replace(EnvConfig(), obs_scale=0.5,
                              dr=DrRanges(obs_noise=(0.0, 0.0)))
    env = HandEnv(proto0, cfg, num_envs=1, seed=0)
    env.step(np.zeros((1, 11)))
    assert np.array_equal(env.history[0, -1], 0.5 * env.q[0])
    obs = env.build_actor_observation()
    expected = normalize_joints(0.5 * env.q[0], env.q_lo, env.q_hi)
    assert np.array_equal(obs[0, 55:66], expected)


def test_obs_noise_affects_actor_not_critic(proto0):
    noisy_cfg = dataclasses.replace(EnvConfig(), dr=DrRanges(obs_noise=(0.01, 0.01)))
    clean_cfg = dataclasses.replace(EnvConfig(), dr=DrRanges(obs_noise=(0.0, 0.0)))
    noisy = HandEnv(proto0, noisy_cfg, num_envs=1, seed=9)
    clean = HandEnv(proto0, clean_cfg, num_envs=1, seed=9)
    a_n, c_n, *_ = noisy.step(np.zeros((1, 11)))
    a_c, c_c, *_ = clean.step(np.zeros((1, 11)))
    assert np.array_equal(c_n, c_c)          # privileged rows are noise-free
    assert not np.array_equal(a_n, a_c)      # the actor's history rows carry noise


def test_critic_obs_velocity_rows_zero_at_rest(env):
    obs = env.build_critic_observation()
    assert np.allclose(obs[:, 22:33], 0.0)        # joint velocity
    assert np.allclose(obs[:, 51:54], 0.0)        # object linear vel
    assert np.allclose(obs[:, 54:57], 0.0)        # object angular vel


def test_critic_obs_table_order(env):
    obs = env.build_critic_observation()
    assert np.array_equal(obs[:, :11], normalize_joints(env.q, env.q_lo, env.q_hi))
    assert np.array_equal(obs[:, 11:22], normalize_joints(env.qbar, env.q_lo, env.q_hi))
    assert np.array_equal(obs[:, 33:44], env.tau)
    assert np.array_equal(obs[:, 44:47], env.ball_pos)
    assert np.array_equal(obs[:, 47:51], env.ball_quat)
    assert np.array_equal(obs[:, 57:72], env.tips_pos.reshape(4, 15))
    assert np.array_equal(obs[:, 72:92], env.tips_quat.reshape(4, 20))
    assert np.array_equal(obs[:, 137:148], env.prev_action)


def test_trajectory_snapshot_rows(env):
    env.step(np.zeros((4, 11)))
    rows = env.snapshot_rows(step=0)
    assert len(rows) == 4
    assert all(len(r) == len(TRAJECTORY_HEADER) for r in rows)


# -- joint tracking task ------------------------------------------------------------

def test_joint_tracking_reward_is_negative_distance(proto0):
    cfg = dataclasses.replace(EnvConfig(), task="joint_tracking")
    env = HandEnv(proto0, cfg, num_envs=2, seed=0)
    _, _, rew, done, _ = env.step(np.zeros((2, 11)))
    expected = -np.linalg.norm(env.q - env.q_track_target, axis=-1)
    assert np.allclose(rew.total, expected, atol=1e-12)
    assert not done.any()


def test_config_validation():
    with pytest.raises(ValueError):
        EnvConfig(history_depth=4).validate()
    with pytest.raises(ValueError):
        EnvConfig(rotation_axis="w").validate()
    with pytest.raises(ValueError):
        EnvConfig(obs_scale=0.0).validate()


@pytest.mark.parametrize("axis,direction", [("x", "pos"), ("z", "neg")])
def test_alternative_rotation_axes_supported(proto0, axis, direction):
    # x/z targets stay available as config options
    cfg = dataclasses.replace(EnvConfig(), rotation_axis=axis, rotation_direction=direction)
    env = HandEnv(proto0, cfg, num_envs=2, seed=0)
    _, _, rew, _, _ = env.step(np.full((2, 11), 0.3))
    s = direction_sign(direction)
    idx = {"x": 0, "y": 1, "z": 2}[axis]
    expected = rotation_reward(env.last_snapshot["omega"][:, idx], s)
    assert np.array_equal(rew.rotation, expected)


def test_train_config_validation():
    from tendonkit.rl import TrainConfig

    with pytest.raises(ValueError):
        TrainConfig(gamma=1.5).validate()
    with pytest.raises(ValueError):
        TrainConfig(clip_eps=0.0).validate()
