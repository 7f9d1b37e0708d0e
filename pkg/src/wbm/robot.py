"""Articulated humanoid model: kinematic chain, joint limits, capsule geometry.

The default morphology has 27 actuated joints, one link per joint:
indices 0-5 left leg, 6-11 right leg, 12-14 torso (yaw/roll/pitch), 15-20
left arm, 21-26 right arm.  The 15 torso+arm links form the upper-body set
used for distance features and contact checks.  Legs exist kinematically
only; balance is not modeled.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .errors import ConfigError, ContractViolation
from .rotations import (
    QUAT_IDENTITY,
    quat_from_axis_angle,
    quat_from_rpy,
    quat_mul,
    quat_normalize,
    quat_rotate,
)


@dataclass(frozen=True)
class Capsule:
    """Capsule in link-local coordinates: segment a-b swept by a sphere."""

    a: np.ndarray
    b: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ContractViolation(f"capsule radius must be > 0, got {self.radius}")


@dataclass(frozen=True)
class LinkSpec:
    name: str
    parent: int  # -1 = root
    offset_pos: np.ndarray  # in parent frame
    offset_quat: np.ndarray
    axis: np.ndarray  # hinge axis in local frame, unit
    lower: float
    upper: float
    capsule: Capsule


@dataclass(frozen=True)
class RobotSpec:
    """Immutable robot description; shareable across workers."""

    links: tuple[LinkSpec, ...]
    upper_body_links: tuple[int, ...]
    foot_links: tuple[int, ...]
    hand_links: tuple[int, ...]
    torso_link: int
    mass_kg: float
    root_height: float
    postures: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.links)
        if n < 1:
            raise ContractViolation("robot needs at least one joint")
        for i, link in enumerate(self.links):
            if not link.parent < i:
                raise ContractViolation(
                    f"link {i} ({link.name}) has parent {link.parent}, tree order requires parent < index"
                )
            if not link.lower < link.upper:
                raise ContractViolation(
                    f"link {i} ({link.name}) has empty limit range [{link.lower}, {link.upper}]"
                )
        for idx in self.upper_body_links + self.foot_links + self.hand_links + (self.torso_link,):
            if not 0 <= idx < n:
                raise ContractViolation(f"link index {idx} out of range")

    @property
    def dof_count(self) -> int:
        return len(self.links)

    @property
    def nsdf_width(self) -> int:
        return len(self.upper_body_links)

    @property
    def lower_limits(self) -> np.ndarray:
        return np.array([l.lower for l in self.links])

    @property
    def upper_limits(self) -> np.ndarray:
        return np.array([l.upper for l in self.links])

    def posture(self, name: str) -> np.ndarray:
        if name not in self.postures:
            raise ConfigError(f"robot spec has no posture named {name!r}")
        return self.postures[name].copy()


@dataclass
class RobotState:
    """Per-environment kinematic state; never shared mutably."""

    q: np.ndarray
    qdot: np.ndarray
    root_pos: np.ndarray
    root_quat: np.ndarray
    root_lin_vel: np.ndarray
    root_ang_vel: np.ndarray
    projected_gravity: np.ndarray

    def validate(self, spec: RobotSpec) -> None:
        n = spec.dof_count
        if self.q.shape != (n,) or self.qdot.shape != (n,):
            raise ContractViolation(
                f"state dimensions {self.q.shape}/{self.qdot.shape} do not match dof_count {n}"
            )
        if abs(np.linalg.norm(self.root_quat) - 1.0) > 1e-9:
            raise ContractViolation("root quaternion is not unit norm")
        if abs(np.linalg.norm(self.projected_gravity) - 1.0) > 1e-9:
            raise ContractViolation("projected gravity must be a unit direction")


def neutral_state(spec: RobotSpec) -> RobotState:
    q = spec.posture("neutral") if "neutral" in spec.postures else np.zeros(spec.dof_count)
    return RobotState(
        q=q,
        qdot=np.zeros(spec.dof_count),
        root_pos=np.array([0.0, 0.0, spec.root_height]),
        root_quat=QUAT_IDENTITY.copy(),
        root_lin_vel=np.zeros(3),
        root_ang_vel=np.zeros(3),
        projected_gravity=np.array([0.0, 0.0, -1.0]),
    )


def fk_batch(
    spec: RobotSpec,
    root_pos: np.ndarray,
    root_quat: np.ndarray,
    q: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Forward kinematics over a batch.

    root_pos (B,3), root_quat (B,4), q (B,L) -> positions (B,L,3), quats (B,L,4).
    One forward pass in tree order; siblings are independent.
    """
    B = root_pos.shape[0]
    L = spec.dof_count
    if q.shape != (B, L):
        raise ContractViolation(f"q has shape {q.shape}, expected {(B, L)}")
    pos = np.empty((B, L, 3))
    quat = np.empty((B, L, 4))
    for i, link in enumerate(spec.links):
        if link.parent < 0:
            pp, pq = root_pos, root_quat
        else:
            pp, pq = pos[:, link.parent], quat[:, link.parent]
        joint_q = quat_from_axis_angle(link.axis, q[:, i])
        frame_q = quat_mul(pq, link.offset_quat)
        pos[:, i] = pp + quat_rotate(pq, link.offset_pos)
        quat[:, i] = quat_mul(frame_q, joint_q)
    return pos, quat


def forward_kinematics(spec: RobotSpec, state: RobotState) -> list[tuple[np.ndarray, np.ndarray]]:
    """World (position, quaternion) frame per link for a single state."""
    state.validate(spec)
    pos, quat = fk_batch(spec, state.root_pos[None], state.root_quat[None], state.q[None])
    return [(pos[0, i], quat[0, i]) for i in range(spec.dof_count)]


def clamp_to_limits(spec: RobotSpec, q: np.ndarray) -> np.ndarray:
    """Elementwise clamp to joint limits; idempotent."""
    return np.clip(q, spec.lower_limits, spec.upper_limits)


# ---------------------------------------------------------------------------
# Default humanoid


def _mk(name, parent, offset, rpy, axis, limits, cap_a, cap_b, cap_r) -> LinkSpec:
    return LinkSpec(
        name=name,
        parent=parent,
        offset_pos=np.asarray(offset, dtype=np.float64),
        offset_quat=quat_from_rpy(*rpy),
        axis=np.asarray(axis, dtype=np.float64),
        lower=float(limits[0]),
        upper=float(limits[1]),
        capsule=Capsule(
            a=np.asarray(cap_a, dtype=np.float64),
            b=np.asarray(cap_b, dtype=np.float64),
            radius=float(cap_r),
        ),
    )


def _leg(side: str, sign: float, base: int) -> list[LinkSpec]:
    p = f"{side}_"
    return [
        _mk(p + "hip_yaw", -1, (0.0, sign * 0.10, -0.05), (0, 0, 0), (0, 0, 1), (-0.8, 0.8),
            (0, 0, 0), (0, 0, 0), 0.05),
        _mk(p + "hip_roll", base, (0, 0, 0), (0, 0, 0), (1, 0, 0), (-0.8, 0.8),
            (0, 0, 0), (0, 0, 0), 0.05),
        _mk(p + "hip_pitch", base + 1, (0, 0, 0), (0, 0, 0), (0, 1, 0), (-1.6, 1.6),
            (0, 0, 0), (0, 0, -0.40), 0.06),
        _mk(p + "knee", base + 2, (0, 0, -0.40), (0, 0, 0), (0, 1, 0), (-0.1, 2.4),
            (0, 0, 0), (0, 0, -0.40), 0.05),
        _mk(p + "ankle_pitch", base + 3, (0, 0, -0.40), (0, 0, 0), (0, 1, 0), (-0.9, 0.9),
            (-0.05, 0, -0.05), (0.13, 0, -0.05), 0.03),
        _mk(p + "ankle_roll", base + 4, (0, 0, 0), (0, 0, 0), (1, 0, 0), (-0.5, 0.5),
            (0, 0, -0.05), (0, 0, -0.05), 0.03),
    ]


def _arm(side: str, sign: float, base: int, chest: int) -> list[LinkSpec]:
    p = f"{side}_"
    return [
        _mk(p + "shoulder_pitch", chest, (0.0, sign * 0.20, 0.15), (0, 0, 0), (0, 1, 0), (-2.8, 1.6),
            (0, 0, 0), (0, 0, 0), 0.045),
        _mk(p + "shoulder_roll", base, (0, 0, 0), (0, 0, 0), (1, 0, 0), (-2.2, 2.2),
            (0, 0, 0), (0, 0, 0), 0.045),
        _mk(p + "shoulder_yaw", base + 1, (0, 0, 0), (0, 0, 0), (0, 0, 1), (-2.2, 2.2),
            (0, 0, 0), (0, 0, -0.26), 0.045),
        _mk(p + "elbow", base + 2, (0, 0, -0.26), (0, 0, 0), (0, 1, 0), (-2.4, 0.1),
            (0, 0, 0), (0, 0, -0.25), 0.04),
        _mk(p + "wrist_roll", base + 3, (0, 0, -0.25), (0, 0, 0), (0, 0, 1), (-1.5, 1.5),
            (0, 0, 0), (0, 0, 0), 0.035),
        _mk(p + "wrist_pitch", base + 4, (0, 0, 0), (0, 0, 0), (0, 1, 0), (-1.2, 1.2),
            (0, 0, 0), (0, 0, -0.10), 0.035),
    ]


# Arm postures (shoulder pitch/roll/yaw, elbow, wrist roll/pitch per arm).
# hug is numerically tuned: at torso-to-center standoffs up to 0.36 m it wraps
# a 0.42 m cylinder at z = 1.0 with 7-11 contact links and satisfies the
# antipodal squeeze test; prehug raises the arms forward without attaching at
# standoffs <= 0.33 m, so closing prehug -> hug is what creates attachment.
_POSTURES = {
    "neutral": {"torso": (0.0, 0.0, 0.0), "left_arm": (0.0, 0.15, 0.0, -0.3, 0.0, 0.0)},
    "prehug": {"torso": (0.0, 0.0, 0.0), "left_arm": (-1.0, 0.1, -0.2, -0.25, 0.0, 0.0)},
    "hug": {"torso": (0.0, 0.0, 0.0), "left_arm": (-0.8, -1.2, 0.55, -0.85, 1.05, -0.75)},
}


def _posture_vector(torso: tuple, left_arm: tuple) -> np.ndarray:
    q = np.zeros(27)
    q[12:15] = torso
    q[15:21] = left_arm
    # mirror: roll and yaw joints flip sign on the right side
    mirror = np.array([1, -1, -1, 1, -1, 1], dtype=np.float64)
    q[21:27] = np.asarray(left_arm) * mirror
    return q


def default_humanoid() -> RobotSpec:
    """27-DoF humanoid: 12 leg, 3 torso, 2x6 arm joints; one link each."""
    links: list[LinkSpec] = []
    links += _leg("L", +1.0, 0)
    links += _leg("R", -1.0, 6)
    links += [
        _mk("waist_yaw", -1, (0.0, 0.0, 0.05), (0, 0, 0), (0, 0, 1), (-0.8, 0.8),
            (0, 0, 0), (0, 0, 0.10), 0.11),
        _mk("waist_roll", 12, (0, 0, 0.10), (0, 0, 0), (1, 0, 0), (-0.5, 0.5),
            (0, 0, 0), (0, 0, 0.10), 0.11),
        _mk("waist_pitch", 13, (0, 0, 0.10), (0, 0, 0), (0, 1, 0), (-0.5, 1.0),
            (0, 0, 0), (0, 0, 0.18), 0.12),
    ]
    links += _arm("L", +1.0, 15, 14)
    links += _arm("R", -1.0, 21, 14)
    postures = {k: _posture_vector(v["torso"], v["left_arm"]) for k, v in _POSTURES.items()}
    return RobotSpec(
        links=tuple(links),
        upper_body_links=tuple(range(12, 27)),
        foot_links=(4, 10),
        hand_links=(20, 26),
        torso_link=14,
        mass_kg=45.0,
        root_height=0.90,
        postures=postures,
    )


# ---------------------------------------------------------------------------
# Config file round trip


def spec_to_dict(spec: RobotSpec) -> dict:
    return {
        "joints": [
            {
                "name": l.name,
                "parent": l.parent,
                "offset": [float(x) for x in l.offset_pos],
                "offset_quat": [float(x) for x in l.offset_quat],
                "axis": [float(x) for x in l.axis],
                "limits": [l.lower, l.upper],
                "capsule": {
                    "a": [float(x) for x in l.capsule.a],
                    "b": [float(x) for x in l.capsule.b],
                    "r": l.capsule.radius,
                },
            }
            for l in spec.links
        ],
        "upper_body_links": list(spec.upper_body_links),
        "foot_links": list(spec.foot_links),
        "hand_links": list(spec.hand_links),
        "torso_link": spec.torso_link,
        "mass_kg": spec.mass_kg,
        "root_height": spec.root_height,
        "postures": {k: [float(x) for x in v] for k, v in spec.postures.items()},
    }


def spec_from_dict(d: dict) -> RobotSpec:
    try:
        links = tuple(
            LinkSpec(
                name=j["name"],
                parent=int(j["parent"]),
                offset_pos=np.asarray(j["offset"], dtype=np.float64),
                offset_quat=quat_normalize(np.asarray(j["offset_quat"], dtype=np.float64)),
                axis=np.asarray(j["axis"], dtype=np.float64),
                lower=float(j["limits"][0]),
                upper=float(j["limits"][1]),
                capsule=Capsule(
                    a=np.asarray(j["capsule"]["a"], dtype=np.float64),
                    b=np.asarray(j["capsule"]["b"], dtype=np.float64),
                    radius=float(j["capsule"]["r"]),
                ),
            )
            for j in d["joints"]
        )
        return RobotSpec(
            links=links,
            upper_body_links=tuple(d["upper_body_links"]),
            foot_links=tuple(d["foot_links"]),
            hand_links=tuple(d["hand_links"]),
            torso_link=int(d["torso_link"]),
            mass_kg=float(d["mass_kg"]),
            root_height=float(d["root_height"]),
            postures={k: np.asarray(v, dtype=np.float64) for k, v in d.get("postures", {}).items()},
        )
    except (KeyError, TypeError, IndexError) as e:
        raise ConfigError(f"malformed robot spec: {e}") from e


def save_robot_spec(spec: RobotSpec, path: str) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(spec_to_dict(spec), f, sort_keys=False)


def load_robot_spec(path: str) -> RobotSpec:
    try:
        with open(path) as f:
            d = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read robot spec {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"robot spec {path} is not valid YAML: {e}") from e
    return spec_from_dict(d)


def with_posture(spec: RobotSpec, name: str, q: np.ndarray) -> RobotSpec:
    postures = dict(spec.postures)
    postures[name] = np.asarray(q, dtype=np.float64)
    return replace(spec, postures=postures)
