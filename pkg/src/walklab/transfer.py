"""Sim-to-sim transfer harness: a perturbed "hardware surrogate" simulator,
policy-population evaluation, and post-training gain retuning.

The key surrogate perturbation is the starting condition: training episodes
begin with an unloaded series spring (the controller must push to build
force), while the hardware-like start has the spring pre-deflected to carry
the robot's full weight, so a learned initial push launches the robot.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .expert import GainSet
from .learning import EnvSpec, RewardConfig, _step_reward
from .policy import (GaussianMlpPolicy, KindMismatch, PolicyKind,
                     policy_mean_action_vec, scaled_to_action)
from .sim import SimParams


class InitMode(Enum):
    UNLOADED_DROP = "unloaded_drop"
    PRELOADED_LOWERED = "preloaded_lowered"


@dataclass(frozen=True)
class PerturbationSpec:
    init_mode: InitMode = InitMode.PRELOADED_LOWERED
    mass_scale: float = 1.05
    inertia_scale: float = 1.05
    hip_lag_scale: float = 2.0
    spring_k_scale: float = 0.9
    sensor_noise_std: tuple[float, ...] = (0.0,) * 6

    def __post_init__(self) -> None:
        for name in ("mass_scale", "inertia_scale", "hip_lag_scale",
                     "spring_k_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


IDENTITY_SPEC = PerturbationSpec(init_mode=InitMode.UNLOADED_DROP,
                                 mass_scale=1.0, inertia_scale=1.0,
                                 hip_lag_scale=1.0, spring_k_scale=1.0)


def make_surrogate(params: SimParams, spec: PerturbationSpec) -> tuple[SimParams, bool]:
    """Scaled simulator parameters and whether starts are pre-loaded."""
    scaled = replace(
        params,
        mass=params.mass * spec.mass_scale,
        inertia=params.inertia * spec.inertia_scale,
        hip_lag=params.hip_lag * spec.hip_lag_scale,
        spring_k=params.spring_k * spec.spring_k_scale,
    )
    return scaled, spec.init_mode == InitMode.PRELOADED_LOWERED


def surrogate_env_spec(base: EnvSpec, spec: PerturbationSpec) -> EnvSpec:
    params, preloaded = make_surrogate(base.params, spec)
    return replace(base, params=params, preloaded_start=preloaded)


@dataclass
class EvalResult:
    n_episodes: int
    n_success: int
    mean_reward: float
    mean_steps: float
    fall_steps: list[int]

    @property
    def success_rate(self) -> float:
        return self.n_success / self.n_episodes


def evaluate_policy(env_spec: EnvSpec, policy: GaussianMlpPolicy,
                    n_episodes: int, seed: int,
                    reward_cfg: RewardConfig | None = None,
                    episode_len_s: float = 10.0,
                    init_jitter: float = 1.0,
                    sensor_noise_std: np.ndarray | None = None) -> EvalResult:
    """Deterministic (mean-action) evaluation over seeded episodes.

    Success means no fall for the full episode.  Episodes differ through
    seeded start-condition jitter (and fresh terrain when the spec's
    terrain distribution is rough).
    """
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    reward_cfg = reward_cfg or RewardConfig(v_tgt=policy.gains.v_tgt)
    rng = np.random.default_rng(seed)
    cap = int(round(episode_len_s / env_spec.params.dt))
    n_success = 0
    rewards, steps, fall_steps = [], [], []
    for _ in range(n_episodes):
        t_seed = int(rng.integers(2 ** 31)) if env_spec.terrain_max_dev > 0 else None
        env = env_spec.make_env(t_seed)
        env.init_jitter = init_jitter
        env.sensor_noise_std = sensor_noise_std
        state = env.reset(seed=int(rng.integers(2 ** 31)))
        total = 0.0
        fell = False
        i = 0
        for i in range(cap):
            obs = env.observe()
            vec = policy_mean_action_vec(policy, obs)
            action = scaled_to_action(policy, vec, state)
            state, fell = env.step(action)
            total += _step_reward(state, fell, reward_cfg)
            if fell:
                break
        rewards.append(total)
        steps.append(i + 1)
        if fell:
            fall_steps.append(i + 1)
        else:
            n_success += 1
    return EvalResult(n_episodes=n_episodes, n_success=n_success,
                      mean_reward=float(np.mean(rewards)),
                      mean_steps=float(np.mean(steps)),
                      fall_steps=fall_steps)


@dataclass
class TransferRow:
    policy_id: str
    kind: PolicyKind
    env: str                 # "nominal" | "surrogate"
    result: EvalResult


@dataclass
class TransferReport:
    rows: list[TransferRow] = field(default_factory=list)

    def aggregate_rate(self, kind: PolicyKind, env: str) -> float:
        sel = [r.result for r in self.rows
               if r.kind == kind and r.env == env]
        if not sel:
            return float("nan")
        return sum(r.n_success for r in sel) / sum(r.n_episodes for r in sel)


def transfer_experiment(policies: list[tuple[str, GaussianMlpPolicy]],
                        nominal_spec: EnvSpec, surrogate: PerturbationSpec,
                        n_episodes: int, seed: int,
                        reward_cfg: RewardConfig | None = None) -> TransferReport:
    """Evaluate every policy on the nominal and the surrogate environment.

    The same evaluation seed is used per (policy, env) pair so an identity
    surrogate reproduces the nominal results exactly.
    """
    surr_spec = surrogate_env_spec(nominal_spec, surrogate)
    noise = np.array(surrogate.sensor_noise_std)
    if not noise.any():
        noise = None
    report = TransferReport()
    for pid, pol in policies:
        res_nom = evaluate_policy(nominal_spec, pol, n_episodes, seed,
                                  reward_cfg=reward_cfg)
        res_sur = evaluate_policy(surr_spec, pol, n_episodes, seed,
                                  reward_cfg=reward_cfg,
                                  sensor_noise_std=noise)
        report.rows.append(TransferRow(pid, pol.kind, "nominal", res_nom))
        report.rows.append(TransferRow(pid, pol.kind, "surrogate", res_sur))
    return report


def retune_gain(policy: GaussianMlpPolicy, gain_name: str,
                new_value: float) -> GaussianMlpPolicy:
    """Replace one gain of a HeuristicNN policy, network untouched.

    Rejected for PureNN: its network outputs forces directly, so there is
    no interpretable gain left for the user to adjust.
    """
    if policy.kind != PolicyKind.HEURISTIC_NN:
        raise KindMismatch("only HeuristicNN policies expose tunable gains")
    if gain_name not in GainSet.__dataclass_fields__:
        raise ValueError(f"unknown gain {gain_name!r}")
    new_gains = replace(policy.gains, **{gain_name: new_value})
    out = GaussianMlpPolicy(policy.mean_net, policy.log_std, policy.kind,
                            policy.range_center, policy.range_half, new_gains)
    return out
