"""Episode runtime: turns controller actions into motor commands and runs
the stance/swing state machine around the simulator.

The controller is queried every simulator step (1 kHz).  The swing spline is
re-planned each step from the current foot state toward the latest foot
placement target with the remaining swing time, so the target stays current
as the velocity estimate changes.
"""

from __future__ import annotations

import math

import numpy as np

from . import sim
from .expert import (Action, GainSet, TOUCHDOWN_SPEED, expert_action,
                     inverse_dynamics, inverse_kinematics, plan_swing,
                     swing_setpoint)
from .sim import (LegState, MotorCommand, RobotState, SimParams, Stance,
                  Terrain, terrain_height)

OBS_SCALES = np.array([1.0, 1.0, 1.0, 1.0, 0.5, 2.0])
OBS_DIM = 6


def stance_foot_x(state: RobotState) -> float:
    """Pin of the current stance leg; in flight, of the most recent one."""
    if state.stance_leg == Stance.LEFT:
        return state.left.pinned_x
    if state.stance_leg == Stance.RIGHT:
        return state.right.pinned_x
    leg = state.left if state.left.swing_time <= state.right.swing_time else state.right
    return leg.pinned_x


def observe(state: RobotState) -> np.ndarray:
    """Normalized 6-vector observation; CoM x is taken relative to the
    stance foot so the observation is translation invariant."""
    raw = np.array([
        state.x - stance_foot_x(state),
        state.dx,
        state.z,
        state.dz,
        state.pitch,
        state.pitch_rate,
    ])
    return raw / OBS_SCALES


def standard_start(params: SimParams, gains: GainSet, terrain: Terrain,
                   preloaded: bool = False,
                   jitter: np.ndarray | None = None) -> RobotState:
    """Start on the right leg under the CoM, zero velocities.

    Unloaded (training default): spring deflection zero, CoM released 1 cm
    above the controller's supported height, so stance must build force from
    nothing.  Preloaded (hardware-like): spring pre-deflected to carry the
    full weight.
    """
    ground = terrain_height(terrain, 0.0)
    z_eq = gains.z_des - params.mass * params.gravity / gains.K_pz
    z0 = z_eq + 0.01
    dx0 = dz0 = pitch0 = 0.0
    swing_angle_off = 0.0
    if jitter is not None:
        z0 += float(jitter[0])
        dx0 = float(jitter[1])
        pitch0 = float(jitter[2])
        swing_angle_off = float(jitter[3])
    length = z0 - ground
    length = min(max(length, params.leg_len_min), params.leg_len_max)
    deflection = params.mass * params.gravity / params.spring_k if preloaded else 0.0
    stance = LegState(
        angle=0.0, length=length,
        motor_length=min(length + deflection, params.leg_len_max),
        foot_x=0.0, foot_z=ground,
        in_contact=True, pinned_x=0.0,
    )
    swing_angle = 0.25 + swing_angle_off
    swing_len = 0.75
    swing = LegState(
        angle=swing_angle, length=swing_len,
        motor_length=swing_len,
        foot_x=swing_len * math.sin(swing_angle),
        foot_z=z0 - swing_len * math.cos(swing_angle),
        in_contact=False,
    )
    return RobotState(
        x=0.0, z=ground + length, dx=dx0, dz=dz0, pitch=pitch0, pitch_rate=0.0,
        left=swing, right=stance, stance_leg=Stance.RIGHT,
    )


def _swing_command(state: RobotState, leg: LegState, action: Action,
                   params: SimParams, gains: GainSet, ground_rel: float,
                   start_foot: tuple[float, float],
                   start_vel: tuple[float, float]) -> tuple[float, float, float, float]:
    """Joint-space swing targets.

    The spline is rebuilt every step so the placement target and the
    ground-speed-matching end velocity stay current, but it is anchored at
    the swing-onset foot state and evaluated at the current phase; planning
    from the instantaneous foot state instead feeds tracking error back into
    the plan and blows up as the horizon shrinks.
    """
    traj = plan_swing(start_foot, action.x_p, state.dx, ground_rel, gains,
                      start_vel=start_vel)
    (px, pz), (tvx, tvz) = swing_setpoint(traj, leg.swing_time + params.dt)
    if pz >= 0.0:
        pz = -params.leg_len_min
    angle_t, length_t, _ = inverse_kinematics((px, pz), params)
    sin_t = math.sin(angle_t)
    cos_t = math.cos(angle_t)
    length_rate_t = tvx * sin_t - tvz * cos_t
    angle_rate_t = (tvx * cos_t + tvz * sin_t) / length_t
    return angle_t, length_t, angle_rate_t, length_rate_t


def _leg_foot_rel(state: RobotState, leg: LegState) -> tuple[tuple[float, float],
                                                             tuple[float, float]]:
    foot_rel = (leg.foot_x - state.x, leg.foot_z - state.z)
    sin_a = math.sin(leg.angle)
    cos_a = math.cos(leg.angle)
    vx = leg.length_rate * sin_a + leg.length * leg.angle_rate * cos_a
    vz = -leg.length_rate * cos_a + leg.length * leg.angle_rate * sin_a
    return foot_rel, (vx, vz)


def action_to_command(state: RobotState, action: Action, params: SimParams,
                      gains: GainSet,
                      start_foot: tuple[float, float] = (0.0, -0.75),
                      start_vel: tuple[float, float] = (0.0, 0.0)) -> MotorCommand:
    """Shared stance/swing pipeline of both the expert and the NN policies."""
    if state.stance_leg != Stance.FLIGHT:
        st = state.stance()
        motor_len, tau = inverse_dynamics(
            action.F_x, action.F_z, st.angle, st.length, st.length_rate, params)
        sw = state.swing()
        ground_rel = st.foot_z - state.z  # assume ground continues level
        a_t, l_t, ar_t, lr_t = _swing_command(state, sw, action, params, gains,
                                              ground_rel, start_foot, start_vel)
        return MotorCommand(
            stance_motor_length=motor_len,
            stance_hip_torque=tau,
            swing_angle_target=a_t,
            swing_length_target=l_t,
            swing_angle_rate_target=ar_t,
            swing_length_rate_target=lr_t,
        )
    # flight: move the swing leg toward a landing pose under the target
    reach = min(params.leg_len_max, max(state.z * 0.9, params.leg_len_min))
    foot = (action.x_p, -reach)
    angle_t, length_t, _ = inverse_kinematics(foot, params)
    return MotorCommand(
        swing_angle_target=angle_t,
        swing_length_target=length_t,
        swing_angle_rate_target=0.0,
        swing_length_rate_target=-TOUCHDOWN_SPEED,
    )


class WalkingEnv:
    """Stateful episode wrapper with deterministic seeded resets."""

    def __init__(self, params: SimParams, gains: GainSet, terrain: Terrain,
                 preloaded_start: bool = False,
                 sensor_noise_std: np.ndarray | None = None,
                 init_jitter: float = 0.0):
        self.params = params
        self.gains = gains
        self.terrain = terrain
        self.preloaded_start = preloaded_start
        self.sensor_noise_std = sensor_noise_std
        self.init_jitter = init_jitter
        self.min_swing_time = 0.5 * gains.T
        self.min_stance_time = 0.5 * gains.T
        self.state: RobotState | None = None
        self._rng = np.random.default_rng(0)
        self._swing_start_foot = (0.0, -0.75)
        self._swing_start_vel = (0.0, 0.0)

    def _record_swing_onset(self) -> None:
        if self.state.stance_leg != Stance.FLIGHT:
            foot, vel = _leg_foot_rel(self.state, self.state.swing())
            self._swing_start_foot = foot
            self._swing_start_vel = vel

    def reset(self, seed: int | None = None) -> RobotState:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        jitter = None
        if self.init_jitter > 0.0:
            # start-condition variability: height, speed, pitch, swing pose
            scales = np.array([0.01, 0.05, 0.02, 0.05]) * self.init_jitter
            jitter = self._rng.uniform(-1.0, 1.0, size=4) * scales
        self.state = standard_start(self.params, self.gains, self.terrain,
                                    preloaded=self.preloaded_start,
                                    jitter=jitter)
        self._record_swing_onset()
        return self.state

    def observe(self) -> np.ndarray:
        obs = observe(self.state)
        if self.sensor_noise_std is not None:
            obs = obs + self._rng.normal(0.0, self.sensor_noise_std)
        return obs

    def step(self, action: Action) -> tuple[RobotState, bool]:
        """Advance one simulator step under the given action.

        Returns (state, fell).  Raises sim.NonFiniteError on blow-up.
        """
        cmd = action_to_command(self.state, action, self.params, self.gains,
                                self._swing_start_foot, self._swing_start_vel)
        noise = 0.0
        if self.params.torque_noise > 0.0:
            noise = float(self._rng.uniform(-self.params.torque_noise,
                                            self.params.torque_noise))
        prev_steps = self.state.steps_taken
        prev_stance = self.state.stance_leg
        st = sim.step(self.state, cmd, self.params, self.terrain, torque_noise=noise)
        st = sim.fsm_update(st, self.terrain, self.params,
                            self.min_stance_time, self.min_swing_time)
        self.state = st
        if st.steps_taken != prev_steps or st.stance_leg != prev_stance:
            self._record_swing_onset()
        return st, sim.check_fall(st, self.params)


def run_expert_episode(env: WalkingEnv, max_time: float = 10.0,
                       seed: int | None = 0,
                       record: list | None = None) -> tuple[bool, RobotState]:
    """Run the expert controller; returns (survived, final_state)."""
    state = env.reset(seed=seed)
    n = int(round(max_time / env.params.dt))
    for _ in range(n):
        action = expert_action(state, env.gains)
        state, fell = env.step(action)
        if record is not None:
            record.append((state, action))
        if fell:
            return False, state
    return True, state
