"""Fixed-step planar physics for a torso with two massless series-elastic legs.

World frame: x forward, z up.  Torso pitch is positive when the torso leans
backward (counter-clockwise with x to the right); with this convention a
positive hip torque on the stance leg pitches the torso backward, which is
what makes the reactive pitch feedback stable.  Leg angle is measured from
the downward vertical, positive when the foot is ahead of the hip, so

    foot = hip + length * (sin(angle), -cos(angle))

The hip coincides with the CoM; all mass and inertia live in the torso.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, replace
from enum import Enum

# Motor-side leg-length command is rate limited (series-elastic power bound).
MOTOR_RATE_LIMIT = 2.0  # m/s

# Consecutive unloaded steps before stance is declared lifted off.
LIFTOFF_UNLOAD_STEPS = 5


class NonFiniteError(RuntimeError):
    """A state component left the finite range (unstable gains or blow-up)."""


class Stance(Enum):
    LEFT = "left"
    RIGHT = "right"
    FLIGHT = "flight"


@dataclass(frozen=True)
class SimParams:
    mass: float = 64.0            # kg
    inertia: float = 2.2          # kg m^2 about the CoM
    gravity: float = 9.81         # m/s^2
    dt: float = 0.001             # s
    spring_k: float = 1.0e4       # N/m axial series spring
    spring_d: float = 100.0       # N s/m axial damping
    hip_lag: float = 0.02         # s first-order torque/position tracking
    leg_len_min: float = 0.5      # m
    leg_len_max: float = 1.0      # m
    torque_max: float = 200.0     # N m hip torque saturation
    axial_force_max: float = 2000.0  # N
    friction_mu: float = 1.0
    fall_pitch: float = 0.5       # rad
    fall_height: float = 0.5      # m
    torque_noise: float = 0.0     # N m, half-width of optional uniform noise

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not self.leg_len_min < self.leg_len_max:
            raise ValueError("leg_len_min must be below leg_len_max")
        for name in ("mass", "inertia", "spring_k", "spring_d", "hip_lag",
                     "torque_max", "axial_force_max", "friction_mu"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.fall_height < self.leg_len_max:
            raise ValueError("fall_height must be below leg_len_max")


@dataclass(frozen=True)
class Terrain:
    """Piecewise-constant ground height.

    Each (start_x, height) segment extends to the next start_x; the last
    extends to +inf and the first also covers everything to its left.
    """

    segments: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("terrain needs at least one segment")
        starts = [s for s, _ in self.segments]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segment start_x must be strictly increasing")
        object.__setattr__(self, "_starts", starts)


def terrain_height(terrain: Terrain, x: float) -> float:
    i = bisect_right(terrain._starts, x) - 1
    if i < 0:
        i = 0
    return terrain.segments[i][1]


def flat_terrain(height: float = 0.0) -> Terrain:
    return Terrain(((-100.0, height),))


def generate_terrain(seed: int, max_dev: float, step_len_min: float,
                     step_len_max: float, extent: float) -> Terrain:
    """Random piecewise terrain; the segment under the start is flat (h = 0)."""
    if max_dev < 0:
        raise ValueError("max_dev must be non-negative")
    if not 0 < step_len_min <= step_len_max:
        raise ValueError("need 0 < step_len_min <= step_len_max")
    if extent < 0:
        raise ValueError("extent must be non-negative")
    import numpy as np

    rng = np.random.default_rng(seed)
    segs = [(-100.0, 0.0)]
    x = float(rng.uniform(step_len_min, step_len_max))
    while x < extent:
        h = float(rng.uniform(-max_dev, max_dev))
        segs.append((x, h))
        x += float(rng.uniform(step_len_min, step_len_max))
    return Terrain(tuple(segs))


@dataclass(frozen=True)
class LegState:
    angle: float            # rad from downward vertical, + = foot forward
    length: float           # m hip to foot
    angle_rate: float = 0.0
    length_rate: float = 0.0
    motor_length: float = 0.8   # m motor-side spring set position
    hip_torque_actual: float = 0.0
    foot_x: float = 0.0
    foot_z: float = 0.0
    in_contact: bool = False
    pinned_x: float = 0.0       # valid only while in_contact
    axial_force: float = 0.0    # last applied axial force (liftoff detection)
    swing_time: float = 0.0     # s since this leg last left stance


@dataclass(frozen=True)
class RobotState:
    x: float
    z: float
    dx: float
    dz: float
    pitch: float
    pitch_rate: float
    left: LegState
    right: LegState
    stance_leg: Stance
    t: float = 0.0
    steps_taken: int = 0
    stance_time: float = 0.0
    unload_count: int = 0
    # Forces actually applied to the torso on the last step (logging/tests).
    applied_fx: float = 0.0
    applied_fz: float = 0.0

    def stance(self) -> LegState:
        if self.stance_leg == Stance.LEFT:
            return self.left
        if self.stance_leg == Stance.RIGHT:
            return self.right
        raise ValueError("no stance leg in flight")

    def swing(self) -> LegState:
        if self.stance_leg == Stance.LEFT:
            return self.right
        if self.stance_leg == Stance.RIGHT:
            return self.left
        raise ValueError("no swing leg in flight")


@dataclass(frozen=True)
class MotorCommand:
    stance_motor_length: float = 0.8
    stance_hip_torque: float = 0.0
    swing_angle_target: float = 0.0
    swing_length_target: float = 0.8
    swing_angle_rate_target: float = 0.0
    swing_length_rate_target: float = 0.0


def axial_spring_force(motor_length: float, length: float, length_rate: float,
                       params: SimParams) -> float:
    """Series-spring axial force; positive = compression pushing torso away."""
    return params.spring_k * (motor_length - length) - params.spring_d * length_rate


def check_fall(state: RobotState, params: SimParams) -> bool:
    return abs(state.pitch) > params.fall_pitch or state.z < params.fall_height


def _clamp(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


def _stance_leg_geometry(x: float, z: float, dx: float, dz: float,
                         px: float, pz: float) -> tuple[float, float, float, float]:
    """(angle, length, angle_rate, length_rate) of a leg pinned at (px, pz)."""
    rx = px - x
    rz = pz - z
    length = math.hypot(rx, rz)
    angle = math.atan2(rx, -rz)
    # r = pin - hip, dr/dt = (-dx, -dz)
    length_rate = -(rx * dx + rz * dz) / length
    # foot velocity in hip frame: v = (-dx, -dz); angle_rate from the Jacobian
    sin_a = rx / length
    cos_a = -rz / length
    angle_rate = (-dx * cos_a - dz * sin_a) / length
    return angle, length, angle_rate, length_rate


def _track_swing(leg: LegState, angle_tgt: float, length_tgt: float,
                 angle_rate_tgt: float, length_rate_tgt: float,
                 hip_x: float, hip_z: float, params: SimParams) -> LegState:
    """Massless swing leg: first-order tracking of joint targets."""
    dt = params.dt
    angle_rate = angle_rate_tgt + (angle_tgt - leg.angle) / params.hip_lag
    length_rate = length_rate_tgt + (length_tgt - leg.length) / params.hip_lag
    angle = leg.angle + dt * angle_rate
    length = _clamp(leg.length + dt * length_rate,
                    params.leg_len_min, params.leg_len_max)
    return replace(
        leg,
        angle=angle,
        length=length,
        angle_rate=angle_rate,
        length_rate=length_rate,
        motor_length=length,
        hip_torque_actual=0.0,
        foot_x=hip_x + length * math.sin(angle),
        foot_z=hip_z - length * math.cos(angle),
        in_contact=False,
        axial_force=0.0,
        swing_time=leg.swing_time + dt,
    )


def step(state: RobotState, cmd: MotorCommand, params: SimParams,
         terrain: Terrain, torque_noise: float = 0.0) -> RobotState:
    """One semi-implicit Euler step of params.dt.

    torque_noise is an already-sampled additive hip torque disturbance; the
    step itself stays deterministic.
    """
    dt = params.dt
    in_stance = state.stance_leg != Stance.FLIGHT

    fx = fz = 0.0
    stance_new = None
    if in_stance:
        leg = state.stance()
        px = leg.pinned_x
        pz = terrain_height(terrain, px)

        ml_tgt = _clamp(cmd.stance_motor_length, params.leg_len_min, params.leg_len_max)
        max_dl = MOTOR_RATE_LIMIT * dt
        ml = leg.motor_length + _clamp(ml_tgt - leg.motor_length, -max_dl, max_dl)

        tau_cmd = _clamp(cmd.stance_hip_torque + torque_noise,
                         -params.torque_max, params.torque_max)
        tau = leg.hip_torque_actual + (dt / params.hip_lag) * (tau_cmd - leg.hip_torque_actual)
        tau = _clamp(tau, -params.torque_max, params.torque_max)

        angle, length, angle_rate, length_rate = _stance_leg_geometry(
            state.x, state.z, state.dx, state.dz, px, pz)
        f_ax = axial_spring_force(ml, length, length_rate, params)
        f_ax = _clamp(f_ax, -params.axial_force_max, params.axial_force_max)

        sin_a = math.sin(angle)
        cos_a = math.cos(angle)
        # F = F_axial * (-u) + (tau/L) * u_perp, u = hip->foot unit vector
        fx = -f_ax * sin_a + (tau / length) * cos_a
        fz = f_ax * cos_a + (tau / length) * sin_a
        if fz < 0.0:
            fz = 0.0
        lim = params.friction_mu * fz
        fx = _clamp(fx, -lim, lim)

        ddx = fx / params.mass
        ddz = fz / params.mass - params.gravity
        dda = tau / params.inertia
        stance_new = (px, pz, ml, tau, f_ax)
    else:
        ddx = 0.0
        ddz = -params.gravity
        dda = 0.0

    dx = state.dx + dt * ddx
    dz = state.dz + dt * ddz
    pr = state.pitch_rate + dt * dda
    x = state.x + dt * dx
    z = state.z + dt * dz
    pitch = state.pitch + dt * pr

    if in_stance:
        px, pz, ml, tau, f_ax = stance_new
        # hard stops on stance leg length: project the CoM radially
        rx = px - x
        rz = pz - z
        dist = math.hypot(rx, rz)
        if dist > params.leg_len_max or dist < params.leg_len_min:
            lim_len = params.leg_len_max if dist > params.leg_len_max else params.leg_len_min
            scale = lim_len / dist
            x = px - rx * scale
            z = pz - rz * scale
            rx = px - x
            rz = pz - z
            # remove the radial velocity component (inelastic stop)
            ux = -rx / lim_len
            uz = -rz / lim_len
            vr = dx * ux + dz * uz
            dx -= vr * ux
            dz -= vr * uz
        angle, length, angle_rate, length_rate = _stance_leg_geometry(
            x, z, dx, dz, px, pz)
        stance_leg_state = LegState(
            angle=angle,
            length=length,
            angle_rate=angle_rate,
            length_rate=length_rate,
            motor_length=ml,
            hip_torque_actual=tau,
            foot_x=px,
            foot_z=pz,
            in_contact=True,
            pinned_x=px,
            axial_force=f_ax,
            swing_time=0.0,
        )
        swing_leg_state = _track_swing(
            state.swing(), cmd.swing_angle_target, cmd.swing_length_target,
            cmd.swing_angle_rate_target, cmd.swing_length_rate_target,
            x, z, params)
        if state.stance_leg == Stance.LEFT:
            left, right = stance_leg_state, swing_leg_state
        else:
            left, right = swing_leg_state, stance_leg_state
    else:
        # flight: the recently lifted leg holds pose, the other follows targets
        def hold(leg: LegState) -> LegState:
            return _track_swing(leg, leg.angle, leg.length, 0.0, 0.0, x, z, params)

        def follow(leg: LegState) -> LegState:
            return _track_swing(leg, cmd.swing_angle_target, cmd.swing_length_target,
                                cmd.swing_angle_rate_target,
                                cmd.swing_length_rate_target, x, z, params)

        if state.left.swing_time <= state.right.swing_time:
            left, right = hold(state.left), follow(state.right)
        else:
            left, right = follow(state.left), hold(state.right)

    new = RobotState(
        x=x, z=z, dx=dx, dz=dz, pitch=pitch, pitch_rate=pr,
        left=left, right=right, stance_leg=state.stance_leg,
        t=state.t + dt, steps_taken=state.steps_taken,
        stance_time=state.stance_time + dt if in_stance else 0.0,
        unload_count=state.unload_count,
        applied_fx=fx, applied_fz=fz,
    )
    for v in (new.x, new.z, new.dx, new.dz, new.pitch, new.pitch_rate):
        if not math.isfinite(v):
            raise NonFiniteError(f"non-finite state at t={state.t:.3f}")
    return new


def _pin_leg(leg: LegState, x: float, z: float, dx: float, dz: float,
             px: float, pz: float) -> LegState:
    angle, length, angle_rate, length_rate = _stance_leg_geometry(
        x, z, dx, dz, px, pz)
    return replace(
        leg,
        angle=angle, length=length,
        angle_rate=angle_rate, length_rate=length_rate,
        motor_length=leg.motor_length,
        foot_x=px, foot_z=pz,
        in_contact=True, pinned_x=px,
        swing_time=0.0,
    )


def fsm_update(state: RobotState, terrain: Terrain, params: SimParams,
               min_stance_time: float, min_swing_time: float = 0.17) -> RobotState:
    """Touchdown / liftoff transitions; single-stance exchange at touchdown."""
    if state.stance_leg != Stance.FLIGHT:
        swing = state.swing()
        th = terrain_height(terrain, swing.foot_x)
        if swing.foot_z <= th and swing.swing_time >= min_swing_time:
            new_stance = _pin_leg(swing, state.x, state.z, state.dx, state.dz,
                                  swing.foot_x, th)
            old = state.stance()
            released = replace(old, in_contact=False, motor_length=old.length,
                               axial_force=0.0, swing_time=0.0)
            if state.stance_leg == Stance.LEFT:
                left, right = released, new_stance
                leg = Stance.RIGHT
            else:
                left, right = new_stance, released
                leg = Stance.LEFT
            return replace(state, left=left, right=right, stance_leg=leg,
                           steps_taken=state.steps_taken + 1,
                           stance_time=0.0, unload_count=0)
        # liftoff: sustained tension after the minimum stance time
        stance = state.stance()
        count = state.unload_count + 1 if stance.axial_force <= 0.0 else 0
        if count >= LIFTOFF_UNLOAD_STEPS and state.stance_time >= min_stance_time:
            released = replace(stance, in_contact=False,
                               motor_length=stance.length,
                               axial_force=0.0, swing_time=0.0)
            if state.stance_leg == Stance.LEFT:
                left, right = released, state.right
            else:
                left, right = state.left, released
            return replace(state, left=left, right=right,
                           stance_leg=Stance.FLIGHT,
                           stance_time=0.0, unload_count=0)
        if count != state.unload_count:
            return replace(state, unload_count=count)
        return state

    # flight: land on whichever leg reaches ground after its guard time
    for leg, name in ((state.left, Stance.LEFT), (state.right, Stance.RIGHT)):
        th = terrain_height(terrain, leg.foot_x)
        if leg.foot_z <= th and leg.swing_time >= min_swing_time:
            pinned = _pin_leg(leg, state.x, state.z, state.dx, state.dz,
                              leg.foot_x, th)
            if name == Stance.LEFT:
                left, right = pinned, state.right
            else:
                left, right = state.left, pinned
            return replace(state, left=left, right=right, stance_leg=name,
                           steps_taken=state.steps_taken + 1,
                           stance_time=0.0, unload_count=0)
    return state
