"""Batched quasi-static humanoid plant.

Joints follow a PD law tau = Kp(a - q) - Kd*qdot integrated explicitly with
unit inertia. There is no balance problem: the root is a yaw-only floating
base whose planar velocity is read out of the hip joint means, so a DC offset
on hip pitch/roll/yaw commands forward/lateral/turn motion while antiphase
gait components cancel. Projected gravity is therefore constant (0,0,-1) in
the root frame. All lanes advance in lockstep with no shared mutable state
outside this object.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .robot import RobotSpec, fk_batch
from .rotations import quat_from_yaw

# hip channel indices for the base-velocity readout
_HIP_YAW = (0, 6)
_HIP_ROLL = (1, 7)
_HIP_PITCH = (2, 8)


@dataclass
class SimConfig:
    dt: float = 0.02
    kp: float = 100.0
    kd: float = 20.0
    inertia: float = 1.0
    qdot_cap: float = 10.0
    loco_gain_v: float = 2.5
    loco_gain_w: float = 2.0
    max_base_speed: float = 1.0
    max_base_yaw_rate: float = 1.0


@dataclass
class StepInfo:
    tau: np.ndarray  # (N,L)
    qddot: np.ndarray  # (N,L)
    base_lin_local: np.ndarray  # (N,3) heading-frame velocity
    base_yaw_rate: np.ndarray  # (N,)
    foot_vel: np.ndarray  # (N,F,3) world finite-difference foot velocities


class BodySim:
    """N independent robot lanes stepped together."""

    def __init__(self, spec: RobotSpec, cfg: SimConfig, n_lanes: int):
        if n_lanes < 1:
            raise ContractViolation("need at least one lane")
        self.spec = spec
        self.cfg = cfg
        self.n = n_lanes
        L = spec.dof_count
        self.q = np.tile(spec.posture("neutral") if "neutral" in spec.postures else np.zeros(L), (n_lanes, 1))
        self.qdot = np.zeros((n_lanes, L))
        self.root_pos = np.zeros((n_lanes, 3))
        self.root_pos[:, 2] = spec.root_height
        self.root_yaw = np.zeros(n_lanes)
        self._lower = spec.lower_limits
        self._upper = spec.upper_limits
        self._foot_ids = np.asarray(spec.foot_links, dtype=np.int64)
        self.link_pos, self.link_quat = self.fk()
        self._prev_foot_pos = self.link_pos[:, self._foot_ids].copy()

    @property
    def root_quat(self) -> np.ndarray:
        return quat_from_yaw(self.root_yaw)

    def fk(self) -> tuple[np.ndarray, np.ndarray]:
        return fk_batch(self.spec, self.root_pos, self.root_quat, self.q)

    def set_lanes(self, idx, q, root_pos, root_yaw, qdot=None) -> None:
        """Reset selected lanes; foot velocity history restarts at zero."""
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        self.q[idx] = q
        self.qdot[idx] = 0.0 if qdot is None else qdot
        self.root_pos[idx] = root_pos
        self.root_yaw[idx] = root_yaw
        pos, quat = fk_batch(
            self.spec, self.root_pos[idx], quat_from_yaw(self.root_yaw[idx]), self.q[idx]
        )
        self.link_pos[idx] = pos
        self.link_quat[idx] = quat
        self._prev_foot_pos[idx] = pos[:, self._foot_ids]

    def base_velocity_from_q(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Heading-frame (vx, vy) and yaw rate read out of the hip means."""
        cfg = self.cfg
        vx = -cfg.loco_gain_v * 0.5 * (q[:, _HIP_PITCH[0]] + q[:, _HIP_PITCH[1]])
        vy = cfg.loco_gain_v * 0.5 * (q[:, _HIP_ROLL[0]] + q[:, _HIP_ROLL[1]])
        wz = cfg.loco_gain_w * 0.5 * (q[:, _HIP_YAW[0]] + q[:, _HIP_YAW[1]])
        speed = np.hypot(vx, vy)
        scale = np.where(speed > cfg.max_base_speed, cfg.max_base_speed / np.maximum(speed, 1e-12), 1.0)
        vx = vx * scale
        vy = vy * scale
        wz = np.clip(wz, -cfg.max_base_yaw_rate, cfg.max_base_yaw_rate)
        v_local = np.zeros((q.shape[0], 3))
        v_local[:, 0] = vx
        v_local[:, 1] = vy
        return v_local, wz

    def step(self, actions: np.ndarray) -> StepInfo:
        cfg = self.cfg
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != self.q.shape:
            raise ContractViolation(f"actions shape {actions.shape}, expected {self.q.shape}")
        if not np.all(np.isfinite(actions)):
            raise ContractViolation("non-finite action")
        tau = cfg.kp * (actions - self.q) - cfg.kd * self.qdot
        qddot = tau / cfg.inertia
        qdot_new = np.clip(self.qdot + qddot * cfg.dt, -cfg.qdot_cap, cfg.qdot_cap)
        q_unclamped = self.q + qdot_new * cfg.dt
        q_new = np.clip(q_unclamped, self._lower, self._upper)
        qdot_new = np.where(q_new == q_unclamped, qdot_new, 0.0)
        self.q = q_new
        self.qdot = qdot_new

        v_local, wz = self.base_velocity_from_q(self.q)
        self.root_yaw = self.root_yaw + wz * cfg.dt
        c, s = np.cos(self.root_yaw), np.sin(self.root_yaw)
        self.root_pos[:, 0] += (c * v_local[:, 0] - s * v_local[:, 1]) * cfg.dt
        self.root_pos[:, 1] += (s * v_local[:, 0] + c * v_local[:, 1]) * cfg.dt

        self.link_pos, self.link_quat = self.fk()
        foot_pos = self.link_pos[:, self._foot_ids]
        foot_vel = (foot_pos - self._prev_foot_pos) / cfg.dt
        self._prev_foot_pos = foot_pos.copy()
        return StepInfo(
            tau=tau, qddot=qddot, base_lin_local=v_local, base_yaw_rate=wz, foot_vel=foot_vel
        )

    def proprio(self, prev_action: np.ndarray) -> np.ndarray:
        """(N,90) proprioceptive block: v, omega, g, q, qdot, a_prev."""
        v_local, wz = self.base_velocity_from_q(self.q)
        n = self.n
        omega = np.zeros((n, 3))
        omega[:, 2] = wz
        g = np.tile(np.array([0.0, 0.0, -1.0]), (n, 1))
        return np.concatenate([v_local, omega, g, self.q, self.qdot, prev_action], axis=1)

    def deploy_obs(self, prev_action: np.ndarray) -> np.ndarray:
        """(N,87) deployable block: proprio minus the root linear velocity."""
        return self.proprio(prev_action)[:, 3:]
