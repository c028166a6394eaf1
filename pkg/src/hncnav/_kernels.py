"""Compiled inner loop: strapdown propagation plus covariance prediction.

Mirrors ``ins.propagate`` followed by ``ekf.build_F/build_G/transition_matrix/
discretize_Q/predict``; tests check the two paths agree.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _dcm(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    C = np.empty((3, 3))
    C[0, 0] = 1 - 2 * (y * y + z * z)
    C[0, 1] = 2 * (x * y - w * z)
    C[0, 2] = 2 * (x * z + w * y)
    C[1, 0] = 2 * (x * y + w * z)
    C[1, 1] = 1 - 2 * (x * x + z * z)
    C[1, 2] = 2 * (y * z - w * x)
    C[2, 0] = 2 * (x * z - w * y)
    C[2, 1] = 2 * (y * z + w * x)
    C[2, 2] = 1 - 2 * (x * x + y * y)
    return C


@njit(cache=True)
def _rotvec_quat(phi):
    angle = np.sqrt(phi[0] ** 2 + phi[1] ** 2 + phi[2] ** 2)
    q = np.empty(4)
    if angle < 1e-8:
        q[0] = 1.0 - angle**2 / 8.0
        q[1:] = 0.5 * phi
        return q / np.sqrt(np.sum(q * q))
    half = 0.5 * angle
    q[0] = np.cos(half)
    q[1:] = np.sin(half) / angle * phi
    return q


@njit(cache=True)
def _qmul(p, q):
    out = np.empty(4)
    out[0] = p[0] * q[0] - p[1] * q[1] - p[2] * q[2] - p[3] * q[3]
    out[1] = p[0] * q[1] + p[1] * q[0] + p[2] * q[3] - p[3] * q[2]
    out[2] = p[0] * q[2] - p[1] * q[3] + p[2] * q[0] + p[3] * q[1]
    out[3] = p[0] * q[3] + p[1] * q[2] - p[2] * q[1] + p[3] * q[0]
    return out


@njit(cache=True)
def _cholesky_ok(P, tol):
    n = P.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        d = P[j, j] + tol - np.sum(L[j, :j] ** 2)
        if not d > 0.0:
            return False
        L[j, j] = np.sqrt(d)
        for i in range(j + 1, n):
            L[i, j] = (P[i, j] - np.sum(L[i, :j] * L[j, :j])) / L[j, j]
    return True


@njit(cache=True)
def predict_step(pos, vel, att, ba, bg, P, f_meas, w_meas, dt, gravity, Qc, order):
    """One IMU interval; returns ``(pos, vel, att, P, psd_ok)``.

    ``psd_ok`` is a Cholesky test of ``P + 1e-9 I``; callers re-check with
    ``ekf.check_covariance`` when it is False.
    """
    C = _dcm(att)
    f_b = f_meas - ba
    w_b = w_meas - bg
    f_n = C @ f_b

    F = np.zeros((12, 12))
    F[0, 4] = -f_n[2]
    F[0, 5] = f_n[1]
    F[1, 3] = f_n[2]
    F[1, 5] = -f_n[0]
    F[2, 3] = -f_n[1]
    F[2, 4] = f_n[0]
    F[0:3, 6:9] = C
    F[3:6, 9:12] = -C
    G = np.zeros((12, 12))
    G[0:3, 0:3] = C
    G[3:6, 3:6] = -C
    for i in range(6, 12):
        G[i, i] = 1.0

    Ft = F * dt
    term = np.eye(12)
    Phi = np.eye(12)
    fact = 1.0
    for r in range(1, order + 1):
        term = term @ Ft
        fact *= r
        Phi += term / fact

    GQG = G @ Qc @ G.T
    Qd = 0.5 * (Phi @ GQG + GQG @ Phi.T) * dt
    Qd = 0.5 * (Qd + Qd.T)
    P_new = Phi @ P @ Phi.T + Qd
    P_new = 0.5 * (P_new + P_new.T)

    acc = f_n + gravity
    pos_new = pos + vel * dt + 0.5 * acc * dt * dt
    vel_new = vel + acc * dt
    q = _qmul(att, _rotvec_quat(w_b * dt))
    q = q / np.sqrt(np.sum(q * q))
    return pos_new, vel_new, q, P_new, _cholesky_ok(P_new, 1e-9)


@njit(cache=True)
def predict_segment(pos, vel, att, ba, bg, P, f_meas, w_meas, dt, gravity, Qc, order,
                    out_pos, out_vel, out_att, out_Pv):
    """Run ``predict_step`` over consecutive IMU samples, writing per-step outputs.

    Returns the final ``(pos, vel, att, P, bad)`` where ``bad`` is the first
    step whose covariance failed the Cholesky test, or -1.
    """
    bad = -1
    for i in range(f_meas.shape[0]):
        pos, vel, att, P, ok = predict_step(pos, vel, att, ba, bg, P, f_meas[i], w_meas[i], dt, gravity, Qc, order)
        out_pos[i] = pos
        out_vel[i] = vel
        out_att[i] = att
        for j in range(3):
            out_Pv[i, j] = P[j, j]
        if not ok:
            bad = i
            break
    return pos, vel, att, P, bad
