"""Quaternion and rotation helpers.

Quaternions are Hamilton convention, scalar-first ``(w, x, y, z)``, stored as
float64 arrays with shape ``(..., 4)``.  All ops broadcast over leading axes so
the same code serves single states and batched environment lanes.
"""

from __future__ import annotations

import numpy as np

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b, broadcasting over leading axes."""
    aw, ax, ay, az = (a[..., i] for i in range(4))
    bw, bx, by, bz = (b[..., i] for i in range(4))
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v by quaternions q (both broadcast over leading axes)."""
    qw = q[..., :1]
    qv = q[..., 1:]
    t = 2.0 * np.cross(qv, v)
    return v + qw * t + np.cross(qv, t)


def quat_rotate_inv(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return quat_rotate(quat_conj(q), v)


def quat_from_axis_angle(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Unit quaternion for a rotation of `angle` radians about unit `axis`.

    `axis` has shape (..., 3); `angle` broadcasts against its leading axes.
    """
    angle = np.asarray(angle, dtype=np.float64)
    half = 0.5 * angle[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def quat_from_yaw(yaw: np.ndarray) -> np.ndarray:
    yaw = np.asarray(yaw, dtype=np.float64)
    half = 0.5 * yaw[..., None]
    zeros = np.zeros_like(half)
    return np.concatenate([np.cos(half), zeros, zeros, np.sin(half)], axis=-1)


def yaw_from_quat(q: np.ndarray) -> np.ndarray:
    """Yaw of the rotated x-axis projected to the horizontal plane."""
    fwd = quat_rotate(q, np.broadcast_to(np.array([1.0, 0.0, 0.0]), q.shape[:-1] + (3,)))
    return np.arctan2(fwd[..., 1], fwd[..., 0])


def heading_frame_inv(yaw: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate world vectors into the heading frame (yaw-only inverse rotation).

    yaw broadcasts against v's leading dims; v is (..., 3).
    """
    yaw = np.asarray(yaw, dtype=np.float64)
    c = np.cos(yaw)[..., None]
    s = np.sin(yaw)[..., None]
    x = v[..., 0:1]
    y = v[..., 1:2]
    return np.concatenate([c * x + s * y, -s * x + c * y, v[..., 2:3]], axis=-1)


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Intrinsic z-y'-x'' (yaw, then pitch, then roll) Euler convention."""
    qz = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
    qy = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), pitch)
    qx = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), roll)
    return quat_mul(quat_mul(qz, qy), qx)


def quat_to_mat(q: np.ndarray) -> np.ndarray:
    """3x3 rotation matrices, shape (..., 3, 3)."""
    w, x, y, z = (q[..., i] for i in range(4))
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def quat_nlerp(a: np.ndarray, b: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Normalized linear interpolation, shortest-arc (sign-corrected)."""
    t = np.asarray(t, dtype=np.float64)[..., None]
    dot = np.sum(a * b, axis=-1, keepdims=True)
    b = np.where(dot < 0.0, -b, b)
    return quat_normalize(a + t * (b - a))


def wrap_angle(a: np.ndarray) -> np.ndarray:
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)
