"""Flat-Earth NED strapdown mechanization and closed-loop error feedback."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from ._rotations import euler_from_quat, quat_from_rotvec, quat_mul, quat_to_dcm

GRAVITY_NED = np.array([0.0, 0.0, 9.80665])
MAX_DT = 0.1
SMALL_ANGLE_LIMIT = 0.5


class SmallAngleWarning(UserWarning):
    """Attitude correction too large for the small-angle error model."""


def _vec3(v=None) -> NDArray[np.float64]:
    return np.zeros(3) if v is None else np.asarray(v, dtype=float).reshape(3).copy()


@dataclass(frozen=True)
class NavState:
    """Full navigation solution. ``att`` is the body->nav unit quaternion."""

    t: float = 0.0
    pos_n: NDArray[np.float64] = field(default_factory=_vec3)
    vel_n: NDArray[np.float64] = field(default_factory=_vec3)
    att: NDArray[np.float64] = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    accel_bias_hat: NDArray[np.float64] = field(default_factory=_vec3)
    gyro_bias_hat: NDArray[np.float64] = field(default_factory=_vec3)

    @property
    def C_b_n(self) -> NDArray[np.float64]:
        return quat_to_dcm(self.att)

    @property
    def C_n_b(self) -> NDArray[np.float64]:
        return quat_to_dcm(self.att).T

    @property
    def euler(self) -> NDArray[np.float64]:
        """``[roll, pitch, yaw]`` in radians."""
        return euler_from_quat(self.att)


@dataclass(frozen=True)
class ImuSample:
    """IMU output for the interval ending at ``t``."""

    t: float
    specific_force_b: NDArray[np.float64]
    angular_rate_b: NDArray[np.float64]


def propagate(
    state: NavState,
    imu: ImuSample,
    dt: float,
    gravity_n: NDArray[np.float64] = GRAVITY_NED,
) -> NavState:
    """Advance ``state`` by one IMU interval.

    Velocity and position use the attitude at the start of the interval; the
    position step is ``v_old * dt + a * dt**2 / 2``.
    """
    if not 0.0 < dt <= MAX_DT:
        raise ValueError(f"dt must be in (0, {MAX_DT}] s, got {dt}")
    f_b = imu.specific_force_b - state.accel_bias_hat
    w_b = imu.angular_rate_b - state.gyro_bias_hat

    acc_n = quat_to_dcm(state.att) @ f_b + gravity_n
    vel = state.vel_n + acc_n * dt
    pos = state.pos_n + state.vel_n * dt + 0.5 * acc_n * dt * dt

    q = quat_mul(state.att, quat_from_rotvec(w_b * dt))
    q = q / np.sqrt(q @ q)
    return replace(state, t=state.t + dt, pos_n=pos, vel_n=vel, att=q)


def apply_error_correction(state: NavState, dx) -> NavState:
    """Fold a posterior error estimate back into the navigation state.

    ``dx`` is an ``ErrorState`` or a 12-vector ordered ``[dv, eps, dba, dbg]``.
    Velocity error is subtracted; the attitude is rotated so that the
    estimated ``C_n^b`` becomes ``C_n^b (I - [eps x])``; bias residuals are
    added to the bias estimates.
    """
    vec = np.asarray(dx.vector if hasattr(dx, "vector") else dx, dtype=float)
    dv, eps, dba, dbg = vec[0:3], vec[3:6], vec[6:9], vec[9:12]
    if np.sqrt(eps @ eps) > SMALL_ANGLE_LIMIT:
        warnings.warn(
            f"attitude correction of {np.linalg.norm(eps):.3f} rad exceeds the small-angle limit",
            SmallAngleWarning,
            stacklevel=2,
        )
    q = quat_mul(quat_from_rotvec(eps), state.att)
    q = q / np.sqrt(q @ q)
    return replace(
        state,
        vel_n=state.vel_n - dv,
        att=q,
        accel_bias_hat=state.accel_bias_hat + dba,
        gyro_bias_hat=state.gyro_bias_hat + dbg,
    )
