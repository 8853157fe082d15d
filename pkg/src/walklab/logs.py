"""Plain-text run artifacts: trajectory, reward-curve and transfer-report
CSV files.  Floats are written with repr (shortest round-trip form) so
reruns with the same seed produce byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass

from .expert import Action
from .learning import CurveRow
from .sim import RobotState
from .transfer import TransferReport

TRAJECTORY_COLUMNS = (
    "t", "x", "z", "dx", "dz", "pitch", "pitch_rate", "stance_leg",
    "left_angle", "left_length", "right_angle", "right_length",
    "Fx_cmd", "Fz_cmd", "xp_cmd", "axial_force", "hip_torque",
    "reward", "fell",
)

CURVE_COLUMNS = ("iteration", "mean_reward", "std_reward",
                 "mean_episode_steps", "fall_fraction")

TRANSFER_COLUMNS = ("policy_id", "kind", "env", "n_episodes", "n_success",
                    "success_rate", "mean_reward", "mean_steps")


def _cell(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class TrajectoryLog:
    rows: list[tuple]

    def __init__(self):
        self.rows = []

    def append(self, state: RobotState, action: Action, reward: float,
               fell: bool) -> None:
        stance = state.stance_leg.value
        if stance == "flight":
            axial = 0.0
            torque = 0.0
        else:
            leg = state.stance()
            axial = leg.axial_force
            torque = leg.hip_torque_actual
        self.rows.append((
            state.t, state.x, state.z, state.dx, state.dz,
            state.pitch, state.pitch_rate, stance,
            state.left.angle, state.left.length,
            state.right.angle, state.right.length,
            action.F_x, action.F_z, action.x_p,
            axial, torque, reward, fell,
        ))

    def __len__(self) -> int:
        return len(self.rows)


def _write_csv(path: str, header: tuple[str, ...], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def write_trajectory(log: TrajectoryLog, path: str) -> None:
    _write_csv(path, TRAJECTORY_COLUMNS, log.rows)


def write_reward_curve(curve: list[CurveRow], path: str) -> None:
    rows = [(r.iteration, r.mean_reward, r.std_reward,
             r.mean_episode_steps, r.fall_fraction) for r in curve]
    _write_csv(path, CURVE_COLUMNS, rows)


def write_transfer_report(report: TransferReport, path: str) -> None:
    rows = []
    for r in report.rows:
        res = r.result
        rows.append((r.policy_id, r.kind.value, r.env, res.n_episodes,
                     res.n_success, res.success_rate, res.mean_reward,
                     res.mean_steps))
    _write_csv(path, TRANSFER_COLUMNS, rows)


def read_csv(path: str) -> tuple[tuple[str, ...], list[list[str]]]:
    """Header and raw string rows of any file written by this module."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = tuple(lines[0].split(","))
    return header, [ln.split(",") for ln in lines[1:]]
