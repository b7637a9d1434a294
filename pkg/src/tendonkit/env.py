"""Batched in-hand rotation environment.

Physics runs at 60 Hz with the policy acting every 3 substeps (20 Hz).  The
object is a ball resting on a fingertip cradle: contacting fingertip motion
drives its rotation through a least-squares rigid-rotation fit, the center
tracks the cradle with a first-order lag, and the ball free-falls once fewer
than two fingertips stay in contact for a grace period.

All per-step math is elementwise numpy (norms via sqrt-of-sum), so stepping a
batch of N environments is bit-identical to stepping N single environments.
Per-env randomness comes from counter-keyed streams (seed, env index, episode),
consumed in fixed env order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .handmodel import HandModel
from .kinematics import (
    quat_conjugate,
    quat_from_axis_angle,
    quat_identity,
    quat_mul,
    quat_normalize,
    quat_to_rotvec,
    _kino,
)

AXIS_INDEX = {"x": 0, "y": 1, "z": 2}

TRAJECTORY_HEADER = (
    ["step", "env"]
    + [f"q{i}" for i in range(11)]
    + [f"qbar{i}" for i in range(11)]
    + ["ball_qw", "ball_qx", "ball_qy", "ball_qz"]
    + ["omega_x", "omega_y", "omega_z"]
    + ["rot_term", "total_reward", "done"]
)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DrRanges:
    """Uniform sampling ranges for the per-episode domain randomization."""
    obs_noise: tuple = (0.0, 0.01)        # sigma in normalized joint units
    joint_stiffness: tuple = (0.8, 1.2)   # multipliers
    joint_damping: tuple = (0.8, 1.2)
    tendon_stiffness: tuple = (0.8, 1.2)
    tendon_damping: tuple = (0.8, 1.2)
    joint_range: tuple = (0.9, 1.1)
    hand_mass: tuple = (0.75, 1.25)
    object_mass: tuple = (0.75, 1.25)
    friction: tuple = (0.75, 1.25)
    object_scale: tuple = (0.9, 1.1)


DR_FIELDS = tuple(DrRanges.__dataclass_fields__)


@dataclass(frozen=True)
class DomainParams:
    obs_noise: float = 0.0
    joint_stiffness: float = 1.0
    joint_damping: float = 1.0
    tendon_stiffness: float = 1.0
    tendon_damping: float = 1.0
    joint_range: float = 1.0
    hand_mass: float = 1.0
    object_mass: float = 1.0
    friction: float = 1.0
    object_scale: float = 1.0


def domain_randomize(rng: np.random.Generator, ranges: DrRanges) -> DomainParams:
    """Sample one DomainParams, each field uniform in its range (lo <= hi)."""
    values = {}
    for name in DR_FIELDS:
        lo, hi = getattr(ranges, name)
        if lo > hi:
            raise ValueError(f"dr range {name}: lo > hi")
        values[name] = float(rng.uniform(lo, hi))
    return DomainParams(**values)


@dataclass(frozen=True)
class BallConfig:
    radius: float = 0.0275          # m, before object-scale randomization
    contact_margin: float = 0.020   # m added to the radius for the contact test
    cradle_height: float = 0.010    # m, cradle point above the fingertip centroid (+y)
    pos_lag: float = 0.25           # per-substep first-order tracking of the cradle
    omega_lag: float = 0.30         # per-substep blend toward the fitted rotation
    friction_gain: float = 1.0      # scales the fitted rotation before blending
    fall_grace: int = 5             # substeps with < 2 contacts before free fall
    gravity: float = 9.81           # m/s^2, along -y
    contact_stiffness: float = 400.0  # N/m penalty spring for the fingertip force rows


@dataclass(frozen=True)
class RewardWeights:
    rotation: float = 0.01
    torque: float = -0.02
    action: float = -0.002
    drop: float = -1.0


@dataclass(frozen=True)
class EnvConfig:
    sim_rate: float = 60.0
    substeps: int = 3               # policy period = substeps / sim_rate (20 Hz)
    v_max: float = 5.0              # rad/s command speed cap
    drop_distance: float = 0.24     # m from the hand reference point
    rotation_axis: str = "y"
    rotation_direction: str = "neg"  # "neg": target -y spin; "pos": reversed
    obs_scale: float = 1.0          # joint measurement scaling (0.5 for real-robot replay)
    history_depth: int = 5
    episode_length: int = 400       # policy steps
    kp: float = 1.5                 # servo stiffness (torque per rad)
    kd: float = 0.35                # servo damping
    hand_mass: float = 0.02        # inertia proxy dividing the PD torque
    weights: RewardWeights = field(default_factory=RewardWeights)
    dr: DrRanges = field(default_factory=DrRanges)
    ball: BallConfig = field(default_factory=BallConfig)
    x_hand: tuple = (0.0, 0.0, 0.0)  # hand reference point for the drop test
    rest_fraction: float = 0.45     # nominal grasp pose as a fraction of each joint range
    reset_noise: float = 0.08       # rad, uniform reset pose perturbation
    task: str = "ball"              # "ball" or "joint_tracking" (toy reward -|q - q*|)
    tracking_target_fraction: float = 0.5  # q* for the toy task
    compute_critic_obs: bool = True

    @property
    def policy_dt(self) -> float:
        return self.substeps / self.sim_rate

    @property
    def sim_dt(self) -> float:
        return 1.0 / self.sim_rate

    def validate(self):
        if self.sim_rate <= 0 or self.substeps < 1:
            raise ValueError("sim_rate must be > 0 and substeps >= 1")
        if self.history_depth != 5:
            raise ValueError("history_depth must be 5 (the 77-d actor layout assumes it)")
        if self.rotation_axis not in AXIS_INDEX:
            raise ValueError(f"rotation_axis must be one of {sorted(AXIS_INDEX)}")
        if self.rotation_direction not in ("pos", "neg"):
            raise ValueError("rotation_direction must be 'pos' or 'neg'")
        if not 0.0 < self.obs_scale <= 1.0:
            raise ValueError("obs_scale must be in (0, 1]")


@dataclass
class RewardBreakdown:
    rotation: np.ndarray  # rotation reward term (unweighted)
    torque: np.ndarray    # ||tau||_2
    action: np.ndarray    # ||a||_2
    drop: np.ndarray      # 1.0 where the drop penalty fires
    total: np.ndarray     # weighted sum


# ---------------------------------------------------------------------------
# pure helpers (shared with the runtime and the eval pipeline)
# ---------------------------------------------------------------------------

def direction_sign(direction: str) -> float:
    """Sign s in the rotation term: +1 targets negative-axis spin, -1 reversed."""
    return 1.0 if direction == "neg" else -1.0


def rotation_reward(omega_component, sign: float):
    """min(-s*w + 1, 2, s*w + 4): a plateau of 2 around the target velocity band."""
    w = np.asarray(omega_component, dtype=float)
    return np.minimum(np.minimum(-sign * w + 1.0, 2.0), sign * w + 4.0)


def rotation_reward_band(sign: float) -> tuple:
    """The omega interval on which rotation_reward == 2 (its maximum)."""
    return (-2.0, -1.0) if sign > 0 else (1.0, 2.0)


def compute_reward(omega, tau, action, obj_dist, config: EnvConfig) -> RewardBreakdown:
    """Evaluate the reward table on (batched) post-step quantities.

    omega: (..., 3) numerically differenced object angular velocity (rad/s)
    tau: (..., 11) recorded joint torques; action: (..., 11) clipped actions
    obj_dist: (...,) distance of the object from the hand reference point
    """
    s = direction_sign(config.rotation_direction)
    axis = AXIS_INDEX[config.rotation_axis]
    rot = rotation_reward(np.asarray(omega, dtype=float)[..., axis], s)
    tau_n = np.sqrt(np.sum(np.asarray(tau, dtype=float) ** 2, axis=-1))
    act_n = np.sqrt(np.sum(np.asarray(action, dtype=float) ** 2, axis=-1))
    drop = (np.asarray(obj_dist, dtype=float) > config.drop_distance).astype(float)
    w = config.weights
    total = w.rotation * rot + w.torque * tau_n + w.action * act_n + w.drop * drop
    return RewardBreakdown(rotation=rot, torque=tau_n, action=act_n, drop=drop, total=total)


def numerical_angular_velocity(quat_prev, quat_now, dt: float):
    """World-frame angular velocity from two orientations: rotvec(now * prev^-1) / dt."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    rel = quat_mul(np.asarray(quat_now, dtype=float), quat_conjugate(np.asarray(quat_prev, dtype=float)))
    return quat_to_rotvec(rel) / dt


def normalize_joints(q, q_lo, q_hi):
    """Map joint angles to [-1, 1] over the nominal range."""
    return 2.0 * (q - q_lo) / (q_hi - q_lo) - 1.0


def integrate_command(qbar, action, v_max: float, dt: float, q_lo, q_hi):
    """Joint command update: clip action to [-1, 1], rate-limit, clip to range."""
    a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
    return np.clip(qbar + v_max * dt * a, q_lo, q_hi), a


def actor_observation(qbar, history, prev_action, q_lo, q_hi):
    """Assemble the actor vector: [norm(qbar) (11), norm(history) oldest->newest (55), prev action (11)].

    history holds already-scaled joint measurements, shape (..., depth, 11).
    """
    qbar_n = normalize_joints(qbar, q_lo, q_hi)
    hist_n = normalize_joints(history, q_lo, q_hi)
    flat = hist_n.reshape(hist_n.shape[:-2] + (-1,))
    return np.concatenate([qbar_n, flat, np.asarray(prev_action, dtype=float)], axis=-1)


def _solve3x3(A, b):
    """Solve A x = b for (..., 3, 3) symmetric A via the adjugate (elementwise)."""
    a00, a01, a02 = A[..., 0, 0], A[..., 0, 1], A[..., 0, 2]
    a10, a11, a12 = A[..., 1, 0], A[..., 1, 1], A[..., 1, 2]
    a20, a21, a22 = A[..., 2, 0], A[..., 2, 1], A[..., 2, 2]
    c00 = a11 * a22 - a12 * a21
    c01 = a12 * a20 - a10 * a22
    c02 = a10 * a21 - a11 * a20
    det = a00 * c00 + a01 * c01 + a02 * c02
    c10 = a02 * a21 - a01 * a22
    c11 = a00 * a22 - a02 * a20
    c12 = a01 * a20 - a00 * a21
    c20 = a01 * a12 - a02 * a11
    c21 = a02 * a10 - a00 * a12
    c22 = a00 * a11 - a01 * a10
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    x0 = (c00 * b0 + c10 * b1 + c20 * b2) / det
    x1 = (c01 * b0 + c11 * b1 + c21 * b2) / det
    x2 = (c02 * b0 + c12 * b1 + c22 * b2) / det
    return np.stack([x0, x1, x2], axis=-1)


# ---------------------------------------------------------------------------
# the environment
# ---------------------------------------------------------------------------

ACTOR_DIM = 77
CRITIC_DIM = 148


class HandEnv:
    """Vectorized hand + ball environment.

    seed/env_index_offset define the per-env random streams: env i uses the
    stream keyed (seed, env_index_offset + i, episode), so a batch of N envs
    reproduces N separate single-env instances constructed with matching
    offsets, bit for bit.
    """

    def __init__(self, model: HandModel, config: EnvConfig, num_envs: int,
                 seed: int = 0, env_index_offset: int = 0):
        config.validate()
        self.model = model
        self.config = config
        self.num_envs = num_envs
        self.seed = seed
        self.env_index_offset = env_index_offset
        self.n_act = model.n_actuated

        jmap = {j.name: j for j in model.joints}
        self.q_lo = np.array([jmap[n].q_min for n in model.actuated_joints])
        self.q_hi = np.array([jmap[n].q_max for n in model.actuated_joints])
        self.q_rest = self.q_lo + config.rest_fraction * (self.q_hi - self.q_lo)
        self.q_track_target = self.q_lo + config.tracking_target_fraction * (self.q_hi - self.q_lo)
        self.x_hand = np.asarray(config.x_hand, dtype=float)
        self._kino = _kino(model)
        self._exp_src, self._exp_scale = self._kino.expansion

        B = num_envs
        self.q = np.zeros((B, self.n_act))
        self.qdot = np.zeros((B, self.n_act))
        self.qbar = np.zeros((B, self.n_act))
        self.tau = np.zeros((B, self.n_act))
        self.prev_action = np.zeros((B, self.n_act))
        self.history = np.zeros((B, config.history_depth, self.n_act))
        self.ball_pos = np.zeros((B, 3))
        self.ball_quat = quat_identity((B,))
        self.ball_linvel = np.zeros((B, 3))
        self.ball_angvel = np.zeros((B, 3))
        self.ball_radius = np.full(B, config.ball.radius)
        self.prev_step_quat = quat_identity((B,))
        self.tips_pos = np.zeros((B, 5, 3))
        self.tips_quat = quat_identity((B, 5))
        self.tips_prev = np.zeros((B, 5, 3))
        self.tips_linvel = np.zeros((B, 5, 3))
        self.tips_angvel = np.zeros((B, 5, 3))
        self.tip_forces = np.zeros((B, 5, 3))
        self.fall_count = np.zeros(B, dtype=int)
        self.step_count = np.zeros(B, dtype=int)
        self.episode = np.full(B, -1, dtype=int)
        self.dr = {name: np.ones(B) for name in DR_FIELDS}
        self.dr["obs_noise"] = np.zeros(B)
        self._gens = [None] * B
        self.last_snapshot = None

        self.reset()

    # -- per-env randomness ------------------------------------------------

    def _spawn_stream(self, i: int) -> np.random.Generator:
        return np.random.default_rng(
            (self.seed, self.env_index_offset + i, int(self.episode[i]))
        )

    # -- reset ---------------------------------------------------------------

    def reset(self, indices=None):
        """Reset the given envs (all when indices is None); returns (actor_obs, critic_obs)."""
        if indices is None:
            indices = np.arange(self.num_envs)
        indices = np.asarray(indices, dtype=int)
        cfg = self.config
        for i in indices:
            self.episode[i] += 1
            gen = self._spawn_stream(int(i))
            self._gens[i] = gen
            params = domain_randomize(gen, cfg.dr)
            for name in DR_FIELDS:
                self.dr[name][i] = getattr(params, name)
            noise = gen.uniform(-cfg.reset_noise, cfg.reset_noise, self.n_act)
            self.q[i] = np.clip(self.q_rest + noise, self.q_lo, self.q_hi)
        self.qdot[indices] = 0.0
        self.qbar[indices] = self.q[indices]
        self.tau[indices] = 0.0
        self.prev_action[indices] = 0.0
        self.history[indices] = (cfg.obs_scale * self.q[indices])[:, None, :]
        self.step_count[indices] = 0
        self.fall_count[indices] = 0

        q_full = self.q[indices][:, self._exp_src] * self._exp_scale
        pos, quat = self._kino.tip_poses(q_full)
        self.tips_pos[indices] = pos
        self.tips_quat[indices] = quat
        self.tips_prev[indices] = pos
        self.tips_linvel[indices] = 0.0
        self.tips_angvel[indices] = 0.0
        self.tip_forces[indices] = 0.0

        self.ball_radius[indices] = cfg.ball.radius * self.dr["object_scale"][indices]
        cradle = np.mean(pos, axis=1)
        cradle[:, 1] += cfg.ball.cradle_height
        self.ball_pos[indices] = cradle
        self.ball_quat[indices] = quat_identity((len(indices),))
        self.ball_linvel[indices] = 0.0
        self.ball_angvel[indices] = 0.0
        self.prev_step_quat[indices] = self.ball_quat[indices]
        return self.build_actor_observation(), self.build_critic_observation()

    # -- action + dynamics -----------------------------------------------------

    def apply_action(self, action):
        """Integrate the joint command (Eq.-style relative update); returns the clipped action."""
        cfg = self.config
        self.qbar, a = integrate_command(self.qbar, action, cfg.v_max, cfg.policy_dt,
                                         self.q_lo, self.q_hi)
        return a

    def _substep(self):
        cfg = self.config
        dt = cfg.sim_dt
        kp = cfg.kp * self.dr["joint_stiffness"] * self.dr["tendon_stiffness"]
        kd = cfg.kd * self.dr["joint_damping"] * self.dr["tendon_damping"]
        mass = cfg.hand_mass * self.dr["hand_mass"]
        tau = kp[:, None] * (self.qbar - self.q) - kd[:, None] * self.qdot
        self.tau = tau
        self.qdot = self.qdot + dt * tau / mass[:, None]
        q_new = self.q + dt * self.qdot
        # joint stops sit at the randomized range of motion
        half = 0.5 * (self.q_hi - self.q_lo) * self.dr["joint_range"][:, None]
        center = 0.5 * (self.q_hi + self.q_lo)
        clipped = np.clip(q_new, center - half, center + half)
        self.qdot = np.where(q_new == clipped, self.qdot, 0.0)
        self.q = clipped

        q_full = self.q[:, self._exp_src] * self._exp_scale
        pos, quat = self._kino.tip_poses(q_full)
        self.tips_prev = self.tips_pos
        self.tips_pos = pos
        self.tips_quat = quat
        tip_vel = (pos - self.tips_prev) / dt
        self._ball_substep(tip_vel, dt)

    def _ball_substep(self, tip_vel, dt):
        ball = self.config.ball
        rel = self.tips_pos - self.ball_pos[:, None, :]
        dist = np.sqrt(np.sum(rel * rel, axis=-1))
        thresh = (self.ball_radius + ball.contact_margin)[:, None]
        contact = dist <= thresh
        n_contacts = np.sum(contact, axis=1)

        # penalty-spring fingertip forces, zero for non-contacting fingers
        depth = np.maximum(0.0, thresh - dist)
        safe = np.where(dist > 1e-12, dist, 1.0)
        normal = rel / safe[..., None]
        self.tip_forces = ball.contact_stiffness * depth[..., None] * normal

        self.fall_count = np.where(n_contacts < 2, self.fall_count + 1, 0)
        falling = self.fall_count > ball.fall_grace

        # rigid-rotation least squares over contacting tip velocities
        v_rel = tip_vel - self.ball_linvel[:, None, :]
        vn = np.sum(v_rel * normal, axis=-1, keepdims=True)
        v_tan = v_rel - vn * normal
        mask = contact[..., None]
        r = np.where(mask, rel, 0.0)
        v = np.where(mask, v_tan, 0.0)
        rr = np.sum(r * r, axis=-1)
        A = -r[..., :, None] * r[..., None, :]
        A[..., 0, 0] += rr
        A[..., 1, 1] += rr
        A[..., 2, 2] += rr
        A = np.sum(A, axis=1)
        A[..., 0, 0] += 1e-9
        A[..., 1, 1] += 1e-9
        A[..., 2, 2] += 1e-9
        b = np.sum(np.cross(r, v), axis=1)
        omega_fit = _solve3x3(A, b)

        held = ~falling
        blend = np.clip(ball.omega_lag / self.dr["object_mass"], 0.0, 1.0)[:, None]
        gain = (ball.friction_gain * self.dr["friction"])[:, None]
        new_omega = self.ball_angvel + blend * (gain * omega_fit - self.ball_angvel)
        self.ball_angvel = np.where(held[:, None], new_omega, self.ball_angvel)

        cradle = np.mean(self.tips_pos, axis=1)
        cradle[:, 1] += ball.cradle_height
        tracked = self.ball_pos + ball.pos_lag * (cradle - self.ball_pos)
        vel_held = (tracked - self.ball_pos) / dt
        vel_fall = self.ball_linvel + dt * np.array([0.0, -ball.gravity, 0.0])
        self.ball_linvel = np.where(held[:, None], vel_held, vel_fall)
        self.ball_pos = np.where(held[:, None], tracked, self.ball_pos + dt * self.ball_linvel)

        w = self.ball_angvel
        wnorm = np.sqrt(np.sum(w * w, axis=-1))
        axis = w / np.where(wnorm > 1e-12, wnorm, 1.0)[:, None]
        dq = quat_from_axis_angle(axis, wnorm * dt)
        self.ball_quat = quat_normalize(quat_mul(dq, self.ball_quat))

    # -- step -------------------------------------------------------------------

    def step(self, action):
        """One 20 Hz policy step: returns (actor_obs, critic_obs, RewardBreakdown, done, info)."""
        cfg = self.config
        a = self.apply_action(action)
        for _ in range(cfg.substeps):
            self._substep()
        self.step_count += 1

        omega = numerical_angular_velocity(self.prev_step_quat, self.ball_quat, cfg.policy_dt)
        self.prev_step_quat = self.ball_quat.copy()

        diff = self.ball_pos - self.x_hand
        obj_dist = np.sqrt(np.sum(diff * diff, axis=-1))
        reward = compute_reward(omega, self.tau, a, obj_dist, cfg)
        if cfg.task == "joint_tracking":
            err = self.q - self.q_track_target
            reward.total = -np.sqrt(np.sum(err * err, axis=-1))

        timeout = self.step_count >= cfg.episode_length
        dropped = reward.drop > 0.0
        nonfinite = ~(
            np.all(np.isfinite(self.q), axis=-1)
            & np.all(np.isfinite(self.ball_pos), axis=-1)
            & np.all(np.isfinite(self.qdot), axis=-1)
        )
        done = dropped | timeout | nonfinite
        if cfg.task == "joint_tracking":
            done = timeout | nonfinite

        # per-env measurement push (fixed order keeps batched == sequential)
        q_meas = self.q.copy()
        span = 0.5 * (self.q_hi - self.q_lo)
        for i in range(self.num_envs):
            sigma = self.dr["obs_noise"][i]
            if sigma > 0.0:
                q_meas[i] = q_meas[i] + sigma * span * self._gens[i].standard_normal(self.n_act)
        self.history = np.concatenate(
            [self.history[:, 1:], (cfg.obs_scale * q_meas)[:, None, :]], axis=1
        )
        self.prev_action = a

        if cfg.compute_critic_obs:
            # directional central difference of FK along qdot (two evaluations)
            eps = 1e-6
            plus = self.q + eps * self.qdot
            minus = self.q - eps * self.qdot
            p_plus, r_plus = self._kino.tip_poses(plus[:, self._exp_src] * self._exp_scale)
            p_minus, r_minus = self._kino.tip_poses(minus[:, self._exp_src] * self._exp_scale)
            self.tips_linvel = (p_plus - p_minus) / (2.0 * eps)
            rel_rot = quat_mul(r_plus, quat_conjugate(r_minus))
            self.tips_angvel = quat_to_rotvec(rel_rot) / (2.0 * eps)

        snapshot = {
            "q": self.q.copy(), "qbar": self.qbar.copy(),
            "ball_quat": self.ball_quat.copy(), "omega": omega,
            "rot_term": reward.rotation.copy(), "total": reward.total.copy(),
            "done": done.copy(),
        }
        self.last_snapshot = snapshot

        info = {"reset_indices": np.flatnonzero(done), "nonfinite_indices": np.flatnonzero(nonfinite)}
        if np.any(done):
            self.reset(info["reset_indices"])
        actor_obs = self.build_actor_observation()
        critic_obs = self.build_critic_observation()
        return actor_obs, critic_obs, reward, done, info

    # -- observations ------------------------------------------------------------

    def build_actor_observation(self):
        """(N, 77): joint command (11) + scaled joint pos history (55) + previous action (11)."""
        return actor_observation(self.qbar, self.history, self.prev_action, self.q_lo, self.q_hi)

    def build_critic_observation(self):
        """(N, 148): all privileged rows in table order, noise-free."""
        if not self.config.compute_critic_obs:
            return np.zeros((self.num_envs, CRITIC_DIM))
        parts = [
            normalize_joints(self.q, self.q_lo, self.q_hi),
            normalize_joints(self.qbar, self.q_lo, self.q_hi),
            self.qdot,
            self.tau,
            self.ball_pos,
            self.ball_quat,
            self.ball_linvel,
            self.ball_angvel,
            self.tips_pos.reshape(self.num_envs, -1),
            self.tips_quat.reshape(self.num_envs, -1),
            self.tips_linvel.reshape(self.num_envs, -1),
            self.tips_angvel.reshape(self.num_envs, -1),
            self.tip_forces.reshape(self.num_envs, -1),
            self.prev_action,
        ]
        return np.concatenate(parts, axis=-1)

    # -- logging -------------------------------------------------------------------

    def snapshot_rows(self, step: int):
        """Trajectory CSV rows (one per env) for the last completed step."""
        s = self.last_snapshot
        rows = []
        for i in range(self.num_envs):
            rows.append(
                [step, i]
                + [float(x) for x in s["q"][i]]
                + [float(x) for x in s["qbar"][i]]
                + [float(x) for x in s["ball_quat"][i]]
                + [float(x) for x in s["omega"][i]]
                + [float(s["rot_term"][i]), float(s["total"][i]), int(s["done"][i])]
            )
        return rows
