"""Small rotation helpers. Quaternions are scalar-first ``[w, x, y, z]``."""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray


def skew(v) -> NDArray[np.float64]:
    """Cross-product matrix, ``skew(a) @ b == np.cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_mul(p, q) -> NDArray[np.float64]:
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ]
    )


def quat_conj(q) -> NDArray[np.float64]:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_rotvec(phi) -> NDArray[np.float64]:
    """Exact quaternion of the rotation vector ``phi`` (axis * angle)."""
    phi = np.asarray(phi, dtype=float)
    angle = np.sqrt(phi @ phi)
    if angle < 1e-8:
        # second-order series, exact to double precision at this size
        q = np.array([1.0 - angle**2 / 8.0, *(0.5 * phi)])
        return q / np.sqrt(q @ q)
    half = 0.5 * angle
    return np.array([np.cos(half), *(np.sin(half) / angle * phi)])


def rotvec_from_quat(q) -> NDArray[np.float64]:
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        q = -q
    vnorm = np.sqrt(q[1:] @ q[1:])
    if vnorm < 1e-12:
        return 2.0 * q[1:]
    angle = 2.0 * np.arctan2(vnorm, q[0])
    return angle / vnorm * q[1:]


def quat_to_dcm(q) -> NDArray[np.float64]:
    """Rotation matrix of a unit quaternion (body->nav when ``q`` is body->nav)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_euler(roll: float, pitch: float, yaw: float) -> NDArray[np.float64]:
    """ZYX (yaw-pitch-roll) Euler angles to a body->nav quaternion."""
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    return np.array(
        [
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ]
    )


def euler_from_quat(q) -> NDArray[np.float64]:
    """Body->nav quaternion to ZYX Euler angles ``[roll, pitch, yaw]``."""
    w, x, y, z = q
    roll = np.arctan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    pitch = np.arcsin(np.clip(2 * (w * y - z * x), -1.0, 1.0))
    yaw = np.arctan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return np.array([roll, pitch, yaw])


def quat_from_euler_batch(roll, pitch, yaw) -> NDArray[np.float64]:
    """Vectorised :func:`quat_from_euler`; returns shape ``(n, 4)``."""
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    return np.stack(
        [
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ],
        axis=-1,
    )


def quat_to_dcm_batch(q) -> NDArray[np.float64]:
    """Vectorised :func:`quat_to_dcm`; ``q`` has shape ``(n, 4)``."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    out = np.empty((q.shape[0], 3, 3))
    out[:, 0, 0] = 1 - 2 * (y * y + z * z)
    out[:, 0, 1] = 2 * (x * y - w * z)
    out[:, 0, 2] = 2 * (x * z + w * y)
    out[:, 1, 0] = 2 * (x * y + w * z)
    out[:, 1, 1] = 1 - 2 * (x * x + z * z)
    out[:, 1, 2] = 2 * (y * z - w * x)
    out[:, 2, 0] = 2 * (x * z - w * y)
    out[:, 2, 1] = 2 * (y * z + w * x)
    out[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def euler_from_quat_batch(q) -> NDArray[np.float64]:
    """Vectorised :func:`euler_from_quat`; returns shape ``(n, 3)``."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    roll = np.arctan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    pitch = np.arcsin(np.clip(2 * (w * y - z * x), -1.0, 1.0))
    yaw = np.arctan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return np.column_stack([roll, pitch, yaw])
