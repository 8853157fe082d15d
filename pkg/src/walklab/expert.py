"""Feedback-based reactive walking controller.

Stance: PD regulation of torso pitch and CoM height expressed as desired
ground reaction forces, realized through the leg's inverse dynamics.
Swing: Raibert-style foot placement with a quintic swing spline that ends
with ground-speed matching (foot stationary relative to the ground at
touchdown).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .sim import RobotState, SimParams


@dataclass(frozen=True)
class GainSet:
    K_pt: float = 600.0     # N/rad pitch proportional
    K_dt: float = 60.0      # N s/rad pitch derivative
    K_pz: float = 5000.0    # N/m height proportional
    K_dz: float = 300.0     # N s/m height derivative
    theta_des: float = 0.0  # rad
    z_des: float = 0.9      # m
    k: float = 0.2          # s, velocity feedback on foot placement
    v_tgt: float = 0.4      # m/s
    T: float = 0.34         # s swing duration
    clearance: float = 0.10  # m swing apex clearance

    def __post_init__(self) -> None:
        if self.K_pt <= 0 or self.K_pz <= 0:
            raise ValueError("proportional gains must be positive")
        if self.T <= 0:
            raise ValueError("swing duration must be positive")
        if self.z_des <= 0:
            raise ValueError("z_des must be positive")


@dataclass(frozen=True)
class Action:
    """One controller decision: commanded GRF pair plus foot placement."""

    F_x: float  # N
    F_z: float  # N
    x_p: float  # m, touchdown foot offset from the CoM


def stance_grf(pitch: float, pitch_rate: float, z: float, dz: float,
               gains: GainSet) -> tuple[float, float]:
    F_x = gains.K_pt * (gains.theta_des - pitch) + gains.K_dt * (-pitch_rate)
    F_z = gains.K_pz * (gains.z_des - z) + gains.K_dz * (-dz)
    return F_x, F_z


def foot_placement(v_act: float, gains: GainSet) -> float:
    return gains.k * (v_act - gains.v_tgt) + 0.5 * v_act * gains.T


# vertical touchdown speed, downward (ground-speed matching fixes only the
# horizontal component)
TOUCHDOWN_SPEED = 0.2  # m/s


@dataclass(frozen=True)
class SwingTrajectory:
    """Two degree-5 polynomials in normalized time s = t / duration."""

    start_foot: tuple[float, float]
    target_x: float
    duration: float
    coeff_x: tuple[float, ...]
    coeff_z: tuple[float, ...]


def _quintic(p0: float, v0: float, p1: float, v1: float) -> list[float]:
    """Quintic on s in [0,1] with positions/velocities given and zero end
    accelerations (velocities already scaled to normalized time)."""
    # p(s) = c0 + c1 s + c2 s^2 + c3 s^3 + c4 s^4 + c5 s^5
    # with p''(0) = p''(1) = 0; remaining coefficients from
    #   p(1) = p1, p'(1) = v1, p''(1) = 0.
    c0 = p0
    c1 = v0
    c2 = 0.0
    d = p1 - p0 - v0
    e = v1 - v0
    # inverse of [[1,1,1],[3,4,5],[6,12,20]] applied to (d, e, 0)
    c3 = 10.0 * d - 4.0 * e
    c4 = -15.0 * d + 7.0 * e
    c5 = 6.0 * d - 3.0 * e
    return [c0, c1, c2, c3, c4, c5]


def plan_swing(current_foot: tuple[float, float], x_p: float, v_act: float,
               terrain_h_rel: float, gains: GainSet,
               start_vel: tuple[float, float] = (0.0, 0.0),
               duration: float | None = None) -> SwingTrajectory:
    """Plan a swing spline in hip-relative coordinates.

    Horizontal end velocity is -v_act (foot stationary over ground); the
    vertical spline ends at the expected ground height moving down at
    TOUCHDOWN_SPEED, with an apex bump of gains.clearance at mid-swing.
    """
    T = gains.T if duration is None else duration
    if T <= 0:
        raise ValueError("swing duration must be positive")
    cx = _quintic(current_foot[0], start_vel[0] * T, x_p, -v_act * T)
    cz = _quintic(current_foot[1], start_vel[1] * T,
                  terrain_h_rel, -TOUCHDOWN_SPEED * T)
    # clearance bump 16 s^2 (1-s)^2: zero position/velocity at both ends
    c = gains.clearance
    cz[2] += 16.0 * c
    cz[3] += -32.0 * c
    cz[4] += 16.0 * c
    return SwingTrajectory(
        start_foot=(current_foot[0], current_foot[1]),
        target_x=x_p,
        duration=T,
        coeff_x=tuple(cx),
        coeff_z=tuple(cz),
    )


def _poly(coeff: tuple[float, ...], s: float) -> tuple[float, float]:
    """Value and derivative (w.r.t. s) by Horner evaluation."""
    p = 0.0
    dp = 0.0
    for c in reversed(coeff):
        dp = dp * s + p
        p = p * s + c
    return p, dp


def swing_setpoint(traj: SwingTrajectory, t: float) -> tuple[tuple[float, float],
                                                             tuple[float, float]]:
    """Foot position/velocity target at swing time t (hip frame).

    Past the nominal duration the target keeps moving at the terminal
    velocity: sideways at the ground-matching speed and downward at the
    touchdown speed.  Holding position instead leaves the foot hovering
    whenever the ground turns out lower than planned, and the robot then
    runs away on one leg.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    T = traj.duration
    s = min(t / T, 1.0)
    px, vx = _poly(traj.coeff_x, s)
    pz, vz = _poly(traj.coeff_z, s)
    vx /= T
    vz /= T
    if t > T:
        px += (t - T) * vx
        pz += (t - T) * vz
    return (px, pz), (vx, vz)


def inverse_kinematics(foot_rel_hip: tuple[float, float],
                       params: SimParams) -> tuple[float, float, bool]:
    """(angle, length, out_of_reach); length clamped into joint limits."""
    fx, fz = foot_rel_hip
    if fz >= 0:
        raise ValueError("foot must be below the hip")
    length = math.hypot(fx, fz)
    angle = math.atan2(fx, -fz)
    out_of_reach = False
    if length < params.leg_len_min:
        length = params.leg_len_min
        out_of_reach = True
    elif length > params.leg_len_max:
        length = params.leg_len_max
        out_of_reach = True
    return angle, length, out_of_reach


def inverse_dynamics(F_x: float, F_z: float, angle: float, length: float,
                     length_rate: float, params: SimParams) -> tuple[float, float]:
    """Map a desired GRF to (stance_motor_length, stance_hip_torque).

    Saturates F_z >= 0 and F_x to the friction cone before conversion, and
    the hip torque to +-torque_max.
    """
    if F_z < 0.0:
        F_z = 0.0
    lim = params.friction_mu * F_z
    F_x = max(-lim, min(lim, F_x))
    sin_a = math.sin(angle)
    cos_a = math.cos(angle)
    f_axial = F_z * cos_a - F_x * sin_a
    tau = length * (F_x * cos_a + F_z * sin_a)
    tau = max(-params.torque_max, min(params.torque_max, tau))
    motor_length = length + (f_axial + params.spring_d * length_rate) / params.spring_k
    return motor_length, tau


def expert_action(state: RobotState, gains: GainSet) -> Action:
    F_x, F_z = stance_grf(state.pitch, state.pitch_rate, state.z, state.dz, gains)
    x_p = foot_placement(state.dx, gains)
    return Action(F_x=F_x, F_z=F_z, x_p=x_p)
