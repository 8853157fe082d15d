"""Reward function, rollout collection, GAE, PPO, behavior cloning and
value pretraining for the walking policies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import sim
from .env import WalkingEnv
from .expert import GainSet, expert_action
from .nets import MlpGrads, apply_grads, mlp_forward, mlp_gradient
from .policy import (GaussianMlpPolicy, PolicyKind, ValueNet,
                     policy_sample, scaled_to_action)
from .sim import SimParams, Stance

LOG_STD_MIN = -3.0
LOG_STD_MAX = 1.0


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    C1: float = 1.0
    C2: float = 0.3
    C3: float = 0.01
    v_tgt: float = 0.4
    T_max_steps: int = 10000
    torque_penalty_C4: float = 0.0  # 1e-6 is the variant's working value
    # unit balance between axial force (N) and hip torque (N m) penalties
    torque_scale: float = 25.0

    def __post_init__(self) -> None:
        if self.C1 < 0 or self.C2 < 0 or self.C3 < 0:
            raise ValueError("reward constants must be non-negative")
        if self.T_max_steps <= 0:
            raise ValueError("T_max_steps must be positive")


def reward(v_act: float, pitch_rate: float, fell: bool,
           cfg: RewardConfig) -> float:
    """Per-step walking reward; the fall branch is a one-off penalty scaled
    by the episode cap (so surviving longer always pays)."""
    if fell:
        return -cfg.C3 * cfg.T_max_steps
    return -cfg.C1 * (v_act - cfg.v_tgt) ** 2 - cfg.C2 * pitch_rate ** 2 + 1.0


def reward_torque_penalty(base: float, stance_axial: float, hip_torque: float,
                          cfg: RewardConfig) -> float:
    return base - cfg.torque_penalty_C4 * (
        stance_axial ** 2 + hip_torque ** 2 * cfg.torque_scale)


@dataclass
class RolloutBatch:
    obs: np.ndarray          # (N, 6)
    pre: np.ndarray          # (N, 3) pre-squash actions
    logprob: np.ndarray      # (N,)
    reward: np.ndarray       # (N,)
    value: np.ndarray        # (N,)
    done: np.ndarray         # (N,) bool
    fell: np.ndarray         # (N,) bool
    episodes: list[tuple[int, int]]
    # value bootstrap past each episode end: 0 after a fall, V(s_next) at a
    # time-limit truncation (treating the cap as a true terminal would give
    # the last steps of every successful episode large bogus negative
    # advantages and make PPO unlearn a policy that stops falling)
    bootstrap: np.ndarray | None = None
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return self.obs.shape[0]

    def episode_returns(self) -> np.ndarray:
        return np.array([self.reward[a:b].sum() for a, b in self.episodes])

    def episode_lengths(self) -> np.ndarray:
        return np.array([b - a for a, b in self.episodes])

    def fall_fraction(self) -> float:
        return float(np.mean([self.fell[b - 1] for _, b in self.episodes]))


@dataclass(frozen=True)
class PpoConfig:
    clip_eps: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    learning_rate: float = 3e-4
    epochs: int = 10
    minibatch: int = 4096
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    samples_per_iter: int = 30000
    episode_len_max_s: float = 10.0
    value_learning_rate: float | None = None  # defaults to learning_rate
    anneal_lr: bool = True

    def __post_init__(self) -> None:
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must be in (0, 1)")
        if not (0 <= self.gamma <= 1 and 0 <= self.lam <= 1):
            raise ValueError("gamma and lam must be in [0, 1]")


@dataclass(frozen=True)
class EnvSpec:
    """Everything needed to build training episodes: simulator parameters,
    controller gains, and the terrain distribution."""
    params: SimParams = field(default_factory=SimParams)
    gains: GainSet = field(default_factory=GainSet)
    terrain_max_dev: float = 0.10
    terrain_step_min: float = 0.5
    terrain_step_max: float = 1.5
    terrain_extent: float = 30.0
    preloaded_start: bool = False

    def make_env(self, terrain_seed: int | None = None) -> WalkingEnv:
        if terrain_seed is None or self.terrain_max_dev == 0.0:
            terrain = sim.flat_terrain()
        else:
            terrain = sim.generate_terrain(terrain_seed, self.terrain_max_dev,
                                           self.terrain_step_min,
                                           self.terrain_step_max,
                                           self.terrain_extent)
        return WalkingEnv(self.params, self.gains, terrain,
                          preloaded_start=self.preloaded_start)


def _step_reward(state, fell: bool, cfg: RewardConfig) -> float:
    r = reward(state.dx, state.pitch_rate, fell, cfg)
    if cfg.torque_penalty_C4 > 0.0 and not fell \
            and state.stance_leg != Stance.FLIGHT:
        leg = state.stance()
        r = reward_torque_penalty(r, leg.axial_force, leg.hip_torque_actual, cfg)
    return r


def collect_rollouts(env_spec: EnvSpec, policy: GaussianMlpPolicy,
                     value_net: ValueNet, reward_cfg: RewardConfig,
                     n_min: int, rng: np.random.Generator,
                     episode_len_max_s: float = 10.0,
                     fresh_terrain: bool = True) -> RolloutBatch:
    """Run whole episodes until at least n_min transitions are collected."""
    if n_min <= 0:
        raise ValueError("n_min must be positive")
    obs_l, pre_l, lp_l, r_l, v_l, done_l, fell_l = [], [], [], [], [], [], []
    episodes, boots = [], []
    cap = int(round(episode_len_max_s / env_spec.params.dt))
    while len(obs_l) < n_min:
        seed = int(rng.integers(2 ** 31)) if fresh_terrain else None
        env = env_spec.make_env(seed)
        state = env.reset()
        start = len(obs_l)
        fell = False
        for step_i in range(cap):
            obs = env.observe()
            vec, pre, lp = policy_sample(policy, obs, rng)
            action = scaled_to_action(policy, vec, state)
            state, fell = env.step(action)
            r = _step_reward(state, fell, reward_cfg)
            done = fell or step_i == cap - 1
            obs_l.append(obs)
            pre_l.append(pre)
            lp_l.append(lp)
            r_l.append(r)
            v_l.append(value_net.value(obs))
            done_l.append(done)
            fell_l.append(fell)
            if fell:
                break
        episodes.append((start, len(obs_l)))
        boots.append(0.0 if fell else value_net.value(env.observe()))
    return RolloutBatch(
        obs=np.array(obs_l), pre=np.array(pre_l), logprob=np.array(lp_l),
        reward=np.array(r_l), value=np.array(v_l),
        done=np.array(done_l, dtype=bool), fell=np.array(fell_l, dtype=bool),
        episodes=episodes, bootstrap=np.array(boots))


def compute_gae(batch: RolloutBatch, gamma: float,
                lam: float) -> tuple[np.ndarray, np.ndarray]:
    """GAE advantages (normalized over the batch) and value targets.

    The bootstrap value after a fall is zero; a time-limit truncation
    bootstraps with the value of the next state (batch.bootstrap) so the
    cap does not masquerade as a terminal event.
    """
    adv = np.zeros(batch.n_steps)
    for ep, (a, b) in enumerate(batch.episodes):
        acc = 0.0
        for t in range(b - 1, a - 1, -1):
            if batch.done[t]:
                v_next = 0.0 if batch.bootstrap is None else batch.bootstrap[ep]
                if batch.fell[t]:
                    v_next = 0.0
            else:
                v_next = batch.value[t + 1]
            delta = batch.reward[t] + gamma * v_next - batch.value[t]
            acc = delta if batch.done[t] else delta + gamma * lam * acc
            adv[t] = acc
    returns = adv + batch.value
    std = adv.std()
    norm = (adv - adv.mean()) / (std + 1e-8)
    batch.advantages = norm
    batch.returns = returns
    return norm, returns


def _clip_global_norm(groups: list[np.ndarray | MlpGrads],
                      max_norm: float) -> float:
    sq = 0.0
    for g in groups:
        if isinstance(g, MlpGrads):
            sq += g.sq_norm()
        else:
            sq += float(np.sum(g * g))
    norm = math.sqrt(sq)
    if norm > max_norm:
        factor = max_norm / norm
        for g in groups:
            if isinstance(g, MlpGrads):
                g.scale(factor)
            else:
                g *= factor
    return norm


def ppo_policy_gradient(policy: GaussianMlpPolicy, obs: np.ndarray,
                        pre: np.ndarray, old_logprob: np.ndarray,
                        adv: np.ndarray, clip_eps: float):
    """Ascent gradient of the clipped surrogate over one minibatch.

    Returns (mean-net grads, log_std grad, per-sample ratios, per-sample
    surrogate terms).  Samples whose clipped branch is active contribute
    zero gradient, matching the piecewise objective exactly (verified
    against central finite differences).
    """
    m = len(obs)
    mean = mlp_forward(policy.mean_net, obs)
    std = np.exp(policy.log_std)
    z = (pre - mean) / std
    lp = (-0.5 * np.sum(z * z, axis=-1) - np.sum(policy.log_std)
          - 0.5 * pre.shape[-1] * math.log(2.0 * math.pi))
    rho = np.exp(lp - old_logprob)
    clipped = np.clip(rho, 1.0 - clip_eps, 1.0 + clip_eps)
    surr = np.minimum(rho * adv, clipped * adv)
    # active samples: where the unclipped branch drives the objective
    active = np.where(adv >= 0.0, rho <= 1.0 + clip_eps, rho >= 1.0 - clip_eps)
    coeff = np.where(active, rho * adv, 0.0) / m
    # d logprob / d mean = z / std
    up_mean = coeff[:, None] * (z / std)
    g_pol, _ = mlp_gradient(policy.mean_net, obs, up_mean)
    g_logstd = np.sum(coeff[:, None] * (z * z - 1.0), axis=0)
    return g_pol, g_logstd, rho, surr


def ppo_update(policy: GaussianMlpPolicy, value_net: ValueNet,
               batch: RolloutBatch, cfg: PpoConfig,
               rng: np.random.Generator,
               lr_scale: float = 1.0) -> tuple[GaussianMlpPolicy, ValueNet, dict]:
    """Clipped-surrogate PPO epochs over shuffled minibatches.

    Returns updated copies of the policy and value net plus summary stats.
    """
    if batch.n_steps == 0:
        raise EmptyDataset("empty rollout batch")
    if batch.advantages is None:
        raise ValueError("advantages not computed; call compute_gae first")
    pol = policy.copy()
    val = value_net.copy()
    n = batch.n_steps
    eps = cfg.clip_eps
    lr = cfg.learning_rate * lr_scale
    vlr = cfg.value_learning_rate if cfg.value_learning_rate is not None else cfg.learning_rate
    vlr *= lr_scale
    ratios, clip_flags, pol_losses, val_losses = [], [], [], []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch):
            idx = order[lo:lo + cfg.minibatch]
            obs = batch.obs[idx]
            pre = batch.pre[idx]
            adv = batch.advantages[idx]
            old_lp = batch.logprob[idx]
            ret = batch.returns[idx]
            m = len(idx)

            g_pol, g_logstd, rho, surr = ppo_policy_gradient(
                pol, obs, pre, old_lp, adv, eps)

            v = mlp_forward(val.net, obs)[:, 0]
            verr = v - ret
            up_v = (cfg.value_coef * 2.0 * verr / m)[:, None]
            g_val, _ = mlp_gradient(val.net, obs, up_v)

            if not (np.all(np.isfinite(rho)) and np.isfinite(np.sum(verr ** 2))):
                raise sim.NonFiniteError("ppo loss diverged")

            _clip_global_norm([g_pol, g_logstd], cfg.max_grad_norm)
            _clip_global_norm([g_val], cfg.max_grad_norm)
            apply_grads(pol.mean_net, g_pol, +lr)      # ascend surrogate
            pol.log_std += lr * g_logstd
            np.clip(pol.log_std, LOG_STD_MIN, LOG_STD_MAX, out=pol.log_std)
            apply_grads(val.net, g_val, -vlr)          # descend value loss

            ratios.append(float(rho.mean()))
            clip_flags.append(float(np.mean((rho < 1 - eps) | (rho > 1 + eps))))
            pol_losses.append(float(-surr.mean()))
            val_losses.append(float(np.mean(verr ** 2)))
    stats = {
        "mean_ratio": float(np.mean(ratios)),
        "clip_fraction": float(np.mean(clip_flags)),
        "policy_loss": float(np.mean(pol_losses)),
        "value_loss": float(np.mean(val_losses)),
    }
    return pol, val, stats


# --- expert demonstrations ---

def collect_expert_dataset(env_spec: EnvSpec, n_samples: int, seed: int,
                           reward_cfg: RewardConfig | None = None,
                           flat: bool = True,
                           episode_len_max_s: float = 10.0,
                           init_jitter: float = 1.0):
    """(obs, expert scaled actions, rewards, dones) from expert episodes.

    Episodes start with jittered initial conditions so the dataset covers
    a neighborhood of the start transient, where a clone's foot-placement
    error is otherwise most damaging.
    """
    reward_cfg = reward_cfg or RewardConfig(v_tgt=env_spec.gains.v_tgt)
    rng = np.random.default_rng(seed)
    obs_l, act_l, r_l, done_l = [], [], [], []
    cap = int(round(episode_len_max_s / env_spec.params.dt))
    while len(obs_l) < n_samples:
        t_seed = None if flat else int(rng.integers(2 ** 31))
        env = env_spec.make_env(t_seed)
        env.init_jitter = init_jitter
        state = env.reset(seed=int(rng.integers(2 ** 31)))
        for step_i in range(cap):
            obs = env.observe()
            act = expert_action(state, env_spec.gains)
            state, fell = env.step(act)
            obs_l.append(obs)
            act_l.append((act.F_x, act.F_z, act.x_p))
            r_l.append(_step_reward(state, fell, reward_cfg))
            done_l.append(fell or step_i == cap - 1)
            if fell:
                break
    return (np.array(obs_l), np.array(act_l), np.array(r_l),
            np.array(done_l, dtype=bool))


def expert_targets_for_kind(policy: GaussianMlpPolicy, actions: np.ndarray,
                            gains: GainSet) -> np.ndarray:
    """Expert supervision in the policy's own action space.

    PureNN imitates the expert's (F_x, F_z, x_p) directly; the heuristic
    kind imitates the expert's fixed setpoints (theta_des, z_des, 0).
    """
    if policy.kind == PolicyKind.PURE_NN:
        return actions
    tgt = np.tile(np.array([gains.theta_des, gains.z_des, 0.0]),
                  (actions.shape[0], 1))
    return tgt


def behavior_clone(obs: np.ndarray, expert_actions: np.ndarray,
                   policy: GaussianMlpPolicy, lr: float, epochs: int,
                   rng: np.random.Generator,
                   minibatch: int = 1024,
                   fit_log_std: bool = False) -> GaussianMlpPolicy:
    """Maximum-likelihood fit of the Gaussian policy to expert pairs.

    Expert actions are mapped into pre-squash space through the clipped
    inverse of the squash-scale map so cloning and PPO share one space.
    log_std is frozen by default: co-fitting it scales the mean gradient
    by 1/std^2 as the residual shrinks and the minibatch updates start to
    oscillate instead of converging.
    """
    if len(obs) == 0:
        raise EmptyDataset("no expert pairs")
    pol = policy.copy()
    pre_tgt = pol.unsquash(expert_actions)
    n = len(obs)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, minibatch):
            idx = order[lo:lo + minibatch]
            x = obs[idx]
            tgt = pre_tgt[idx]
            m = len(idx)
            mean = mlp_forward(pol.mean_net, x)
            std = np.exp(pol.log_std)
            z = (tgt - mean) / std
            up = (z / std) / m   # d mean-logprob / d mean
            g, _ = mlp_gradient(pol.mean_net, x, up)
            apply_grads(pol.mean_net, g, +lr)
            if fit_log_std:
                g_logstd = np.sum(z * z - 1.0, axis=0) / m
                pol.log_std += lr * g_logstd
                np.clip(pol.log_std, LOG_STD_MIN, LOG_STD_MAX,
                        out=pol.log_std)
    return pol


def bc_logprob_gradient(policy: GaussianMlpPolicy, obs: np.ndarray,
                        pre_targets: np.ndarray) -> tuple[MlpGrads, np.ndarray]:
    """Gradient of the mean log-likelihood (for gradient checking)."""
    mean = mlp_forward(policy.mean_net, np.atleast_2d(obs))
    std = np.exp(policy.log_std)
    z = (np.atleast_2d(pre_targets) - mean) / std
    m = mean.shape[0]
    up = (z / std) / m
    g, _ = mlp_gradient(policy.mean_net, np.atleast_2d(obs), up)
    g_logstd = np.sum(z * z - 1.0, axis=0) / m
    return g, g_logstd


def value_pretrain(obs: np.ndarray, rewards: np.ndarray, dones: np.ndarray,
                   value_net: ValueNet, gamma: float, lr: float, epochs: int,
                   rng: np.random.Generator, minibatch: int = 1024) -> ValueNet:
    """Minimize the squared TD error over expert transitions.

    The full gradient of the TD loss is used (both V(s_t) and V(s_{t+1})
    contribute), matching a finite-difference check of the loss.
    """
    if len(obs) == 0:
        raise EmptyDataset("no expert transitions")
    val = value_net.copy()
    n = len(obs)
    idx_all = np.arange(n)
    next_idx = np.minimum(idx_all + 1, n - 1)
    not_done = (~dones).astype(float)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, minibatch):
            idx = order[lo:lo + minibatch]
            g, loss = td_loss_gradient(val, obs, rewards, dones, idx, gamma,
                                       next_idx, not_done)
            apply_grads(val.net, g, -lr)
    return val


def td_loss_gradient(val: ValueNet, obs: np.ndarray, rewards: np.ndarray,
                     dones: np.ndarray, idx: np.ndarray, gamma: float,
                     next_idx: np.ndarray | None = None,
                     not_done: np.ndarray | None = None) -> tuple[MlpGrads, float]:
    if next_idx is None:
        next_idx = np.minimum(np.arange(len(obs)) + 1, len(obs) - 1)
    if not_done is None:
        not_done = (~dones).astype(float)
    m = len(idx)
    x = obs[idx]
    x_next = obs[next_idx[idx]]
    nd = not_done[idx]
    v = mlp_forward(val.net, x)[:, 0]
    v_next = mlp_forward(val.net, x_next)[:, 0]
    resid = v - rewards[idx] - gamma * v_next * nd
    loss = float(np.mean(resid ** 2))
    up = (2.0 * resid / m)[:, None]
    g1, _ = mlp_gradient(val.net, x, up)
    g2, _ = mlp_gradient(val.net, x_next, -gamma * up * nd[:, None])
    for a, b in zip(g1.weights, g2.weights):
        a += b
    for a, b in zip(g1.biases, g2.biases):
        a += b
    return g1, loss


@dataclass
class CurveRow:
    iteration: int
    mean_reward: float
    std_reward: float
    mean_episode_steps: float
    fall_fraction: float


def train_loop(env_spec: EnvSpec, policy: GaussianMlpPolicy,
               value_net: ValueNet, reward_cfg: RewardConfig, cfg: PpoConfig,
               iterations: int, seed: int,
               progress=None) -> tuple[GaussianMlpPolicy, ValueNet, list[CurveRow]]:
    """collect -> GAE -> PPO, with fresh random terrain every episode."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    rng = np.random.default_rng(seed)
    curve: list[CurveRow] = []
    for it in range(iterations):
        batch = collect_rollouts(env_spec, policy, value_net, reward_cfg,
                                 cfg.samples_per_iter, rng,
                                 episode_len_max_s=cfg.episode_len_max_s)
        compute_gae(batch, cfg.gamma, cfg.lam)
        # linear step-size anneal freezes the policy toward the end of the run
        scale = 1.0 - it / iterations if cfg.anneal_lr else 1.0
        policy, value_net, stats = ppo_update(policy, value_net, batch, cfg,
                                              rng, lr_scale=scale)
        rets = batch.episode_returns()
        row = CurveRow(
            iteration=it,
            mean_reward=float(rets.mean()),
            std_reward=float(rets.std()),
            mean_episode_steps=float(batch.episode_lengths().mean()),
            fall_fraction=batch.fall_fraction(),
        )
        curve.append(row)
        if progress is not None:
            progress(row, stats)
    return policy, value_net, curve
