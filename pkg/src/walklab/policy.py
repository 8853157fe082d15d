"""Gaussian MLP policies: the direct GRF architecture and the
network-inside-heuristic architecture, plus the value network and the
checkpoint file format.

Sampling happens in pre-squash space (diagonal Gaussian around the network
mean); the sample is then tanh-squashed and affinely mapped into each action
dimension's range.  Log-probabilities are taken pre-squash, which keeps
importance ratios exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .expert import Action, GainSet
from .nets import DimensionMismatch, MlpParams, mlp_forward
from .sim import RobotState

LOG_2PI = math.log(2.0 * math.pi)


class KindMismatch(TypeError):
    pass


class PolicyKind(Enum):
    PURE_NN = "pure_nn"
    HEURISTIC_NN = "heuristic_nn"


# Action ranges.  PureNN outputs GRFs and a foot placement directly; the
# heuristic kind outputs targets around the expert's setpoints.
PURE_NN_CENTER = (0.0, 750.0, 0.0)
PURE_NN_HALF = (300.0, 750.0, 0.6)
HEURISTIC_HALF = (0.3, 0.15, 0.2)


@dataclass
class GaussianMlpPolicy:
    mean_net: MlpParams
    log_std: np.ndarray
    kind: PolicyKind
    range_center: np.ndarray
    range_half: np.ndarray
    gains: GainSet = field(default_factory=GainSet)

    @classmethod
    def create(cls, kind: PolicyKind, rng: np.random.Generator,
               hidden: tuple[int, ...] = (64, 64),
               gains: GainSet | None = None,
               log_std_init: float = -1.0) -> "GaussianMlpPolicy":
        gains = gains if gains is not None else GainSet()
        net = MlpParams.init((6, *hidden, 3), rng)
        if kind == PolicyKind.PURE_NN:
            center = np.array(PURE_NN_CENTER)
            half = np.array(PURE_NN_HALF)
        else:
            center = np.array([gains.theta_des, gains.z_des, 0.0])
            half = np.array(HEURISTIC_HALF)
        return cls(mean_net=net,
                   log_std=np.full(3, float(log_std_init)),
                   kind=kind, range_center=center, range_half=half,
                   gains=gains)

    def copy(self) -> "GaussianMlpPolicy":
        return GaussianMlpPolicy(self.mean_net.copy(), self.log_std.copy(),
                                 self.kind, self.range_center.copy(),
                                 self.range_half.copy(), self.gains)

    @property
    def output_ranges(self) -> list[tuple[float, float]]:
        return [(float(c - h), float(c + h))
                for c, h in zip(self.range_center, self.range_half)]

    def squash(self, pre: np.ndarray) -> np.ndarray:
        return self.range_center + np.tanh(pre) * self.range_half

    def unsquash(self, action: np.ndarray, clip: float = 0.999) -> np.ndarray:
        u = (np.asarray(action, dtype=float) - self.range_center) / self.range_half
        return np.arctanh(np.clip(u, -clip, clip))


@dataclass
class ValueNet:
    net: MlpParams

    @classmethod
    def create(cls, rng: np.random.Generator,
               hidden: tuple[int, ...] = (64, 64)) -> "ValueNet":
        return cls(MlpParams.init((6, *hidden, 1), rng, final_scale=1.0))

    def copy(self) -> "ValueNet":
        return ValueNet(self.net.copy())

    def value(self, obs: np.ndarray) -> float:
        return float(mlp_forward(self.net, obs)[0])

    def values(self, obs_batch: np.ndarray) -> np.ndarray:
        return mlp_forward(self.net, obs_batch)[:, 0]


def policy_logprob(policy: GaussianMlpPolicy, obs: np.ndarray,
                   pre_squash_action: np.ndarray) -> float:
    mean = mlp_forward(policy.mean_net, obs)
    a = np.asarray(pre_squash_action, dtype=float)
    if a.shape != mean.shape:
        raise DimensionMismatch("action dim does not match policy output")
    std = np.exp(policy.log_std)
    z = (a - mean) / std
    return float(-0.5 * np.sum(z * z) - np.sum(policy.log_std)
                 - 0.5 * a.shape[-1] * LOG_2PI)


def logprob_batch(policy: GaussianMlpPolicy, obs: np.ndarray,
                  pre: np.ndarray) -> np.ndarray:
    mean = mlp_forward(policy.mean_net, obs)
    std = np.exp(policy.log_std)
    z = (pre - mean) / std
    return (-0.5 * np.sum(z * z, axis=-1) - np.sum(policy.log_std)
            - 0.5 * pre.shape[-1] * LOG_2PI)


def policy_sample(policy: GaussianMlpPolicy, obs: np.ndarray,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, float]:
    """(scaled action, pre-squash sample, logprob), deterministic in rng."""
    mean = mlp_forward(policy.mean_net, obs)
    std = np.exp(policy.log_std)
    pre = mean + std * rng.standard_normal(mean.shape)
    action = policy.squash(pre)
    return action, pre, policy_logprob(policy, obs, pre)


def policy_mean_action_vec(policy: GaussianMlpPolicy, obs: np.ndarray) -> np.ndarray:
    """Deterministic (mean) scaled action, used for evaluation."""
    return policy.squash(mlp_forward(policy.mean_net, obs))


def pure_nn_action(policy: GaussianMlpPolicy, obs: np.ndarray,
                   rng: np.random.Generator | None = None) -> Action:
    """Direct (F_x, F_z, x_p) output; rng None evaluates the mean action."""
    if policy.kind != PolicyKind.PURE_NN:
        raise KindMismatch("pure_nn_action needs a PureNN policy")
    if rng is None:
        vec = policy_mean_action_vec(policy, obs)
    else:
        vec, _, _ = policy_sample(policy, obs, rng)
    return Action(F_x=float(vec[0]), F_z=float(vec[1]), x_p=float(vec[2]))


def heuristic_targets_to_action(targets: np.ndarray, state: RobotState,
                                gains: GainSet) -> Action:
    """Feed (theta_NN, z_NN, x_NN) through the fixed feedback structure."""
    theta_nn = float(targets[0])
    z_nn = float(targets[1])
    x_nn = float(targets[2])
    F_x = gains.K_pt * (theta_nn - state.pitch) + gains.K_dt * (-state.pitch_rate)
    F_z = gains.K_pz * (z_nn - state.z) + gains.K_dz * (-state.dz)
    x_p = gains.k * (state.dx - gains.v_tgt) + 0.5 * state.dx * gains.T + x_nn
    return Action(F_x=F_x, F_z=F_z, x_p=x_p)


def heuristic_nn_action(policy: GaussianMlpPolicy, obs: np.ndarray,
                        state: RobotState, gains: GainSet,
                        rng: np.random.Generator | None = None) -> Action:
    if policy.kind != PolicyKind.HEURISTIC_NN:
        raise KindMismatch("heuristic_nn_action needs a HeuristicNN policy")
    if rng is None:
        vec = policy_mean_action_vec(policy, obs)
    else:
        vec, _, _ = policy_sample(policy, obs, rng)
    return heuristic_targets_to_action(vec, state, gains)


def scaled_to_action(policy: GaussianMlpPolicy, vec: np.ndarray,
                     state: RobotState) -> Action:
    """Dispatch a scaled action vector through the policy's architecture."""
    if policy.kind == PolicyKind.PURE_NN:
        return Action(F_x=float(vec[0]), F_z=float(vec[1]), x_p=float(vec[2]))
    return heuristic_targets_to_action(vec, state, policy.gains)


# --- checkpoint files (JSON; documented in FORMATS.md) ---

POLICY_FORMAT = "walklab-policy-v1"
VALUE_FORMAT = "walklab-value-v1"


def _gains_dict(g: GainSet) -> dict:
    return {k: getattr(g, k) for k in ("K_pt", "K_dt", "K_pz", "K_dz",
                                       "theta_des", "z_des", "k", "v_tgt",
                                       "T", "clearance")}


def save_policy(policy: GaussianMlpPolicy, path: str) -> None:
    doc = {
        "format": POLICY_FORMAT,
        "kind": policy.kind.value,
        "layer_sizes": list(policy.mean_net.layer_sizes),
        "weights": [w.tolist() for w in policy.mean_net.weights],
        "biases": [b.tolist() for b in policy.mean_net.biases],
        "log_std": policy.log_std.tolist(),
        "range_center": policy.range_center.tolist(),
        "range_half": policy.range_half.tolist(),
        "gains": _gains_dict(policy.gains),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_policy(path: str) -> GaussianMlpPolicy:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != POLICY_FORMAT:
        raise ValueError(f"not a {POLICY_FORMAT} file: {path}")
    net = MlpParams(tuple(doc["layer_sizes"]),
                    [np.array(w) for w in doc["weights"]],
                    [np.array(b) for b in doc["biases"]])
    return GaussianMlpPolicy(
        mean_net=net,
        log_std=np.array(doc["log_std"]),
        kind=PolicyKind(doc["kind"]),
        range_center=np.array(doc["range_center"]),
        range_half=np.array(doc["range_half"]),
        gains=GainSet(**doc["gains"]),
    )


def save_value(value: ValueNet, path: str) -> None:
    doc = {
        "format": VALUE_FORMAT,
        "layer_sizes": list(value.net.layer_sizes),
        "weights": [w.tolist() for w in value.net.weights],
        "biases": [b.tolist() for b in value.net.biases],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_value(path: str) -> ValueNet:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != VALUE_FORMAT:
        raise ValueError(f"not a {VALUE_FORMAT} file: {path}")
    net = MlpParams(tuple(doc["layer_sizes"]),
                    [np.array(w) for w in doc["weights"]],
                    [np.array(b) for b in doc["biases"]])
    return ValueNet(net)
