"""Asymmetric actor-critic PPO with plain-numpy MLPs.

The actor consumes the 77-d proprioceptive observation, the critic the 148-d
privileged observation.  Forward passes use einsum with a fixed contraction
order, so evaluating a minibatch reproduces the rollout's per-row outputs bit
for bit (the PPO ratio is exactly 1 on fresh data).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

POLICY_FORMAT_VERSION = 1


class TrainingError(Exception):
    pass


class PolicyFormatError(Exception):
    pass


# ---------------------------------------------------------------------------
# MLP with manual backprop
# ---------------------------------------------------------------------------

def elu(z):
    return np.where(z >= 0.0, z, np.exp(np.minimum(z, 0.0)) - 1.0)


def elu_grad(z):
    return np.where(z >= 0.0, 1.0, np.exp(np.minimum(z, 0.0)))


@dataclass
class MlpWeights:
    weights: list          # list of (out, in) matrices
    biases: list           # list of (out,) vectors
    activation: str = "elu"

    @property
    def dims(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


def mlp_init(dims, rng: np.random.Generator, out_gain: float = 1.0) -> MlpWeights:
    """Orthogonal init, sqrt(2) gain on hidden layers, out_gain on the last."""
    weights, biases = [], []
    for k in range(len(dims) - 1):
        fan_in, fan_out = dims[k], dims[k + 1]
        a = rng.standard_normal((fan_out, fan_in))
        u, _, vt = np.linalg.svd(a, full_matrices=False)
        gain = out_gain if k == len(dims) - 2 else math.sqrt(2.0)
        weights.append(gain * (u @ vt))
        biases.append(np.zeros(fan_out))
    return MlpWeights(weights=weights, biases=biases)


def mlp_forward(w: MlpWeights, x):
    """x: (..., in) -> (out (..., out), cache for backprop)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != w.weights[0].shape[1]:
        raise ValueError(f"input dim {x.shape[-1]} != expected {w.weights[0].shape[1]}")
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    pre = []
    acts = [h]
    n = len(w.weights)
    for k, (W, b) in enumerate(zip(w.weights, w.biases)):
        z = np.einsum("ij,kj->ik", h, W, optimize=False) + b
        pre.append(z)
        h = elu(z) if k < n - 1 else z
        acts.append(h)
    out = h[0] if squeeze else h
    return out, (acts, pre)


def mlp_backward(w: MlpWeights, cache, dout):
    """Exact reverse-mode gradients; returns ([(dW, db), ...], dx)."""
    acts, pre = cache
    dout = np.asarray(dout, dtype=float)
    squeeze = dout.ndim == 1
    dz = dout[None, :] if squeeze else dout
    grads = [None] * len(w.weights)
    n = len(w.weights)
    for k in range(n - 1, -1, -1):
        if k < n - 1:
            dz = dz * elu_grad(pre[k])
        dW = dz.T @ acts[k]
        db = dz.sum(axis=0)
        grads[k] = (dW, db)
        if k > 0:
            dz = dz @ w.weights[k]
        else:
            dx = dz @ w.weights[0]
    return grads, (dx[0] if squeeze else dx)


# ---------------------------------------------------------------------------
# Gaussian policy head
# ---------------------------------------------------------------------------

@dataclass
class PolicyHead:
    log_std: np.ndarray  # (action_dim,), state independent

    @property
    def action_dim(self):
        return self.log_std.shape[0]


def gaussian_log_prob(mean, log_std, action):
    """Exact diagonal-Gaussian log density, summed over the action dim."""
    mean = np.asarray(mean, dtype=float)
    z = (np.asarray(action, dtype=float) - mean) * np.exp(-log_std)
    return (-0.5 * np.sum(z * z, axis=-1)
            - np.sum(log_std)
            - 0.5 * mean.shape[-1] * math.log(2.0 * math.pi))


def policy_sample(mean, head: PolicyHead, rng: np.random.Generator, deterministic: bool = False):
    """Sample a ~ N(mean, diag(exp(2 log_std))); returns (action, log_prob)."""
    mean = np.asarray(mean, dtype=float)
    if deterministic:
        return mean.copy(), gaussian_log_prob(mean, head.log_std, mean)
    eps = rng.standard_normal(mean.shape)
    action = mean + np.exp(head.log_std) * eps
    return action, gaussian_log_prob(mean, head.log_std, action)


# ---------------------------------------------------------------------------
# GAE
# ---------------------------------------------------------------------------

def compute_gae(rewards, values, dones, gamma: float, lam: float):
    """rewards/dones: (T, N); values: (T+1, N) incl. bootstrap.  Returns (adv, returns)."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    not_done = 1.0 - np.asarray(dones, dtype=float)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1])
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * values[t + 1] * not_done[t] - values[t]
        last = delta + gamma * lam * not_done[t] * last
        adv[t] = last
    return adv, adv + values[:-1]


# ---------------------------------------------------------------------------
# rollout storage
# ---------------------------------------------------------------------------

@dataclass
class RolloutBuffer:
    actor_obs: np.ndarray   # (T, N, obs_a)
    critic_obs: np.ndarray  # (T, N, obs_c)
    actions: np.ndarray     # (T, N, act)
    log_probs: np.ndarray   # (T, N)
    values: np.ndarray      # (T+1, N)
    rewards: np.ndarray     # (T, N)
    dones: np.ndarray       # (T, N)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def flatten(self):
        T, N = self.rewards.shape
        return {
            "actor_obs": self.actor_obs.reshape(T * N, -1),
            "critic_obs": self.critic_obs.reshape(T * N, -1),
            "actions": self.actions.reshape(T * N, -1),
            "log_probs": self.log_probs.reshape(T * N),
            "advantages": self.advantages.reshape(T * N),
            "returns": self.returns.reshape(T * N),
        }


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, params, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def clip_grad_norm(grads, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


# ---------------------------------------------------------------------------
# PPO
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    num_envs: int = 64
    rollout_len: int = 64
    iterations: int = 200
    epochs: int = 4
    minibatch_size: int = 1024
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-4
    entropy_coef: float = 0.002
    value_coef: float = 0.5
    max_grad_norm: float = 1.0
    hidden: tuple = (512, 512, 256, 128)
    log_std_init: float = -0.5
    seed: int = 0
    checkpoint_every: int = 0  # iterations between checkpoints; 0 = final only

    def validate(self):
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma and lam must be in [0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be > 0")


def normalize_advantages(adv):
    mu = adv.mean()
    std = adv.std()
    return (adv - mu) / (std + 1e-8)


def ppo_update(actor: MlpWeights, head: PolicyHead, critic: MlpWeights,
               opt_actor: Adam, opt_critic: Adam, buffer: RolloutBuffer,
               config: TrainConfig, rng: np.random.Generator) -> dict:
    """Clipped-surrogate update over shuffled minibatches; returns stats."""
    flat = buffer.flatten()
    n = flat["log_probs"].shape[0]
    mb = min(config.minibatch_size, n)
    stats = {"ratio": 0.0, "clip_frac": 0.0, "actor_loss": 0.0, "critic_loss": 0.0, "entropy": 0.0}
    count = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            idx = order[start:start + mb]
            obs_a = flat["actor_obs"][idx]
            obs_c = flat["critic_obs"][idx]
            act = flat["actions"][idx]
            logp_old = flat["log_probs"][idx]
            adv = flat["advantages"][idx]
            ret = flat["returns"][idx]
            k = idx.shape[0]

            mean, cache_a = mlp_forward(actor, obs_a)
            logp = gaussian_log_prob(mean, head.log_std, act)
            ratio = np.exp(logp - logp_old)
            unclipped = ratio * adv
            clipped = np.clip(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps) * adv
            surrogate = np.minimum(unclipped, clipped)
            entropy = float(np.sum(head.log_std) + 0.5 * head.action_dim * (1.0 + math.log(2.0 * math.pi)))
            actor_loss = -float(np.mean(surrogate)) - config.entropy_coef * entropy

            value, cache_c = mlp_forward(critic, obs_c)
            value = value[:, 0]
            verr = value - ret
            critic_loss = 0.5 * float(np.mean(verr * verr))

            if not (math.isfinite(actor_loss) and math.isfinite(critic_loss)):
                raise TrainingError(
                    f"non-finite loss in epoch {epoch}, minibatch at offset {start}"
                )

            # d surrogate / d logp: active only on the unclipped branch
            use_unclipped = (unclipped <= clipped).astype(float)
            dlogp = -(use_unclipped * ratio * adv) / k
            inv_var = np.exp(-2.0 * head.log_std)
            diff = act - mean
            dmean = dlogp[:, None] * diff * inv_var
            dlog_std = np.sum(dlogp[:, None] * (diff * diff * inv_var - 1.0), axis=0)
            dlog_std -= config.entropy_coef  # d(-c * H)/d log_std
            grads_a, _ = mlp_backward(actor, cache_a, dmean)
            ga = [g for pair in grads_a for g in pair] + [dlog_std]
            clip_grad_norm(ga, config.max_grad_norm)
            opt_actor.step(actor.params() + [head.log_std], ga)

            dvalue = (config.value_coef * verr / k)[:, None]
            grads_c, _ = mlp_backward(critic, cache_c, dvalue)
            gc = [g for pair in grads_c for g in pair]
            clip_grad_norm(gc, config.max_grad_norm)
            opt_critic.step(critic.params(), gc)

            stats["ratio"] += float(np.mean(ratio))
            stats["clip_frac"] += float(np.mean((np.abs(ratio - 1.0) > config.clip_eps)))
            stats["actor_loss"] += actor_loss
            stats["critic_loss"] += critic_loss
            stats["entropy"] += entropy
            count += 1
    for key in stats:
        stats[key] /= max(count, 1)
    return stats


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    actor: MlpWeights
    head: PolicyHead
    critic: MlpWeights
    log_rows: list  # dicts: iter, mean_reward, mean_omega_target, clip_frac, actor_loss, critic_loss

TRAIN_LOG_HEADER = ["iter", "mean_reward", "mean_omega_target", "clip_frac",
                    "actor_loss", "critic_loss"]


def collect_rollout(env, actor, head, critic, config: TrainConfig,
                    rng: np.random.Generator):
    """Gather one on-policy rollout; returns (buffer, mean target-direction omega)."""
    from .env import AXIS_INDEX, direction_sign

    T, N = config.rollout_len, env.num_envs
    buf = RolloutBuffer(
        actor_obs=np.zeros((T, N, env.build_actor_observation().shape[-1])),
        critic_obs=np.zeros((T, N, env.build_critic_observation().shape[-1])),
        actions=np.zeros((T, N, head.action_dim)),
        log_probs=np.zeros((T, N)),
        values=np.zeros((T + 1, N)),
        rewards=np.zeros((T, N)),
        dones=np.zeros((T, N)),
    )
    axis = AXIS_INDEX[env.config.rotation_axis]
    sign = direction_sign(env.config.rotation_direction)
    obs_a = env.build_actor_observation()
    obs_c = env.build_critic_observation()
    omega_sum = 0.0
    for t in range(T):
        mean, _ = mlp_forward(actor, obs_a)
        action, logp = policy_sample(mean, head, rng)
        value, _ = mlp_forward(critic, obs_c)
        buf.actor_obs[t] = obs_a
        buf.critic_obs[t] = obs_c
        buf.actions[t] = action
        buf.log_probs[t] = logp
        buf.values[t] = value[:, 0]
        obs_a, obs_c, reward, done, _ = env.step(action)
        buf.rewards[t] = reward.total
        buf.dones[t] = done.astype(float)
        # angular velocity along the commanded direction (positive = desired)
        omega_sum += float(np.mean(-sign * env.last_snapshot["omega"][:, axis]))
    value, _ = mlp_forward(critic, obs_c)
    buf.values[T] = value[:, 0]
    return buf, omega_sum / T


def train(env, config: TrainConfig, policy_path=None, log_path=None,
          metadata=None, progress=None) -> TrainResult:
    """Alternate rollout collection and PPO updates; fully seeded and deterministic."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    obs_a_dim = env.build_actor_observation().shape[-1]
    obs_c_dim = env.build_critic_observation().shape[-1]
    act_dim = env.n_act
    actor = mlp_init([obs_a_dim, *config.hidden, act_dim], rng, out_gain=0.01)
    critic = mlp_init([obs_c_dim, *config.hidden, 1], rng, out_gain=1.0)
    head = PolicyHead(log_std=np.full(act_dim, config.log_std_init))
    opt_a = Adam(actor.params() + [head.log_std], lr=config.lr)
    opt_c = Adam(critic.params(), lr=config.lr)

    log_rows = []
    for it in range(config.iterations):
        try:
            buf, mean_omega = collect_rollout(env, actor, head, critic, config, rng)
            buf.advantages, buf.returns = compute_gae(buf.rewards, buf.values, buf.dones,
                                                      config.gamma, config.lam)
            buf.advantages = normalize_advantages(buf.advantages)
            stats = ppo_update(actor, head, critic, opt_a, opt_c, buf, config, rng)
        except TrainingError as e:
            raise TrainingError(f"iteration {it}: {e}") from e
        row = {
            "iter": it,
            "mean_reward": float(np.mean(buf.rewards)),
            "mean_omega_target": mean_omega,
            "clip_frac": stats["clip_frac"],
            "actor_loss": stats["actor_loss"],
            "critic_loss": stats["critic_loss"],
        }
        log_rows.append(row)
        if progress is not None:
            progress(row)
        if policy_path and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            _write_policy(policy_path, actor, head, metadata, critic)
    if policy_path:
        _write_policy(policy_path, actor, head, metadata, critic)
    if log_path:
        import csv
        with open(log_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=TRAIN_LOG_HEADER)
            writer.writeheader()
            for row in log_rows:
                writer.writerow(row)
    return TrainResult(actor=actor, head=head, critic=critic, log_rows=log_rows)


def _write_policy(path, actor, head, metadata, critic=None):
    with open(path, "w") as f:
        f.write(save_policy(actor, head, metadata or {}, critic=critic))


# ---------------------------------------------------------------------------
# portable policy document
# ---------------------------------------------------------------------------

def _mlp_to_doc(w: MlpWeights):
    return {
        "dims": w.dims,
        "activation": w.activation,
        "layers": [
            {"weight": W.tolist(), "bias": b.tolist()}
            for W, b in zip(w.weights, w.biases)
        ],
    }


def _mlp_from_doc(doc) -> MlpWeights:
    weights, biases = [], []
    dims = doc["dims"]
    for k, layer in enumerate(doc["layers"]):
        W = np.array(layer["weight"], dtype=float)
        b = np.array(layer["bias"], dtype=float)
        if W.shape != (dims[k + 1], dims[k]) or b.shape != (dims[k + 1],):
            raise PolicyFormatError(
                f"layer {k}: shape {W.shape} inconsistent with dims {dims}"
            )
        weights.append(W)
        biases.append(b)
    mlp = MlpWeights(weights=weights, biases=biases, activation=doc.get("activation", "elu"))
    if not all(np.all(np.isfinite(w)) for w in mlp.weights):
        raise PolicyFormatError("non-finite weights in policy document")
    return mlp


def save_policy(actor: MlpWeights, head: PolicyHead, metadata: dict,
                critic: MlpWeights | None = None) -> str:
    """Serialize to versioned JSON; floats round-trip exactly (repr shortest form)."""
    doc = {
        "format_version": POLICY_FORMAT_VERSION,
        "actor": _mlp_to_doc(actor),
        "log_std": head.log_std.tolist(),
        "metadata": dict(metadata),
    }
    if critic is not None:
        doc["critic"] = _mlp_to_doc(critic)
    return json.dumps(doc)


def load_policy(document: str):
    """Parse a policy document; returns (actor, head, metadata [, critic in metadata])."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as e:
        raise PolicyFormatError(f"policy document is not valid JSON: {e}") from e
    version = doc.get("format_version")
    if version != POLICY_FORMAT_VERSION:
        raise PolicyFormatError(f"unsupported policy format version {version!r}")
    actor = _mlp_from_doc(doc["actor"])
    log_std = np.array(doc["log_std"], dtype=float)
    if log_std.shape[0] != actor.dims[-1]:
        raise PolicyFormatError("log_std length does not match the actor output dim")
    head = PolicyHead(log_std=log_std)
    metadata = dict(doc.get("metadata", {}))
    if "critic" in doc:
        metadata["_critic"] = _mlp_from_doc(doc["critic"])
    return actor, head, metadata
