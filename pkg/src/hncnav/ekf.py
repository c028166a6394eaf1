"""12-state error-state EKF for INS/DVL fusion.

Error state ordering is ``[dv_n, eps, dba, dbg]``:

* ``dv_n``  velocity error, estimate minus truth (corrected by subtraction),
* ``eps``   misalignment, with estimated ``C_n^b = C_n^b (I + [eps x])``,
* ``dba``, ``dbg``  bias residuals, truth minus estimate (corrected by addition).

With these conventions the linearised model is ``d(dv)/dt = [f^n x] eps + C_b^n dba``
and ``d(eps)/dt = -C_b^n dbg``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import factorial

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ._rotations import quat_to_dcm, skew
from .errors import NumericalFailure, UpdateRejected
from .geometry import BeamGeometry, DvlSample, beam_positions
from .ins import NavState

N_STATES = 12
V, EPS, BA, BG = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12)

SYM_TOL = 1e-9
PSD_TOL = 1e-9
MAX_S_COND = 1e12


@dataclass(frozen=True)
class ErrorState:
    dv_n: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    eps: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    dba: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    dbg: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    @property
    def vector(self) -> NDArray[np.float64]:
        return np.concatenate([self.dv_n, self.eps, self.dba, self.dbg])

    @classmethod
    def from_vector(cls, x: ArrayLike) -> "ErrorState":
        x = np.asarray(x, dtype=float)
        if x.shape != (N_STATES,):
            raise ValueError("error state vector must have 12 entries")
        return cls(x[V].copy(), x[EPS].copy(), x[BA].copy(), x[BG].copy())


@dataclass(frozen=True)
class NoiseConfig:
    """Continuous-time noise densities.

    ``accel_noise_std`` [m/s/sqrt(s)] and ``gyro_noise_std`` [rad/sqrt(s)] are the
    white-noise densities of the sensors; the bias walks are in
    [m/s^2/sqrt(s)] and [rad/s/sqrt(s)].
    """

    accel_noise_std: float = 0.0
    gyro_noise_std: float = 0.0
    accel_bias_walk_std: float = 0.0
    gyro_bias_walk_std: float = 0.0

    def __post_init__(self):
        if min(self.accel_noise_std, self.gyro_noise_std, self.accel_bias_walk_std, self.gyro_bias_walk_std) < 0:
            raise ValueError("noise densities must be non-negative")

    @property
    def Qc(self) -> NDArray[np.float64]:
        """Continuous noise covariance ordered ``[n_a, n_g, n_ab, n_gb]``."""
        d = np.repeat(
            [self.accel_noise_std, self.gyro_noise_std, self.accel_bias_walk_std, self.gyro_bias_walk_std], 3
        )
        return np.diag(d**2)


def default_initial_cov(
    sigma_v: float = 0.1,
    sigma_eps: float = np.radians(1.0),
    sigma_ba: float = 2e-3 * 9.80665,
    sigma_bg: float = np.radians(0.1) / 3600.0,
) -> NDArray[np.float64]:
    return np.diag(np.repeat([sigma_v, sigma_eps, sigma_ba, sigma_bg], 3) ** 2)


@dataclass(frozen=True)
class FilterState:
    P: NDArray[np.float64]
    dx: ErrorState = field(default_factory=ErrorState)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    trans_order: int = 2
    regressed_R_inflation: float = 1.0

    def __post_init__(self):
        if self.P.shape != (N_STATES, N_STATES):
            raise ValueError("P must be 12x12")
        if self.trans_order < 1:
            raise ValueError("trans_order must be >= 1")
        if self.regressed_R_inflation < 1.0:
            raise ValueError("regressed_R_inflation must be >= 1")


@dataclass(frozen=True)
class UpdateInfo:
    innovation: NDArray[np.float64]
    S: NDArray[np.float64]
    nis: float


def check_covariance(P: NDArray[np.float64]) -> NDArray[np.float64]:
    """Symmetrise ``P`` and verify it is PSD within tolerance."""
    P = 0.5 * (P + P.T)
    if not np.all(np.isfinite(P)):
        raise NumericalFailure("covariance has non-finite entries")
    try:
        np.linalg.cholesky(P + PSD_TOL * np.eye(P.shape[0]))
    except np.linalg.LinAlgError:
        min_eig = np.linalg.eigvalsh(P)[0]
        if min_eig < -PSD_TOL:
            raise NumericalFailure(f"covariance lost PSD, min eigenvalue {min_eig:.3e}") from None
    return P


def build_F(state: NavState, f_n: ArrayLike) -> NDArray[np.float64]:
    """System matrix for the low-dynamics 12-state error model."""
    C = quat_to_dcm(state.att)
    F = np.zeros((N_STATES, N_STATES))
    F[V, EPS] = skew(f_n)
    F[V, BA] = C
    F[EPS, BG] = -C
    return F


def build_G(state: NavState) -> NDArray[np.float64]:
    C = quat_to_dcm(state.att)
    G = np.zeros((N_STATES, N_STATES))
    G[V, 0:3] = C
    G[EPS, 3:6] = -C
    G[BA, 6:9] = np.eye(3)
    G[BG, 9:12] = np.eye(3)
    return G


def transition_matrix(F: NDArray[np.float64], tau: float, order: int = 2) -> NDArray[np.float64]:
    """Truncated power series ``sum_{r=0}^{order} (F tau)^r / r!``."""
    if order < 1:
        raise ValueError("order must be >= 1")
    if tau <= 0:
        raise ValueError("tau must be positive")
    Ft = F * tau
    term = np.eye(F.shape[0])
    Phi = term.copy()
    for r in range(1, order + 1):
        term = term @ Ft
        Phi += term / factorial(r)
    return Phi


def discretize_Q(Phi, G, Qc, dt: float) -> NDArray[np.float64]:
    """Trapezoidal discrete process noise ``(Phi G Q G^T + G Q G^T Phi^T) dt / 2``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    GQG = G @ Qc @ G.T
    A = Phi @ GQG
    Qd = 0.5 * (A + GQG @ Phi.T) * dt
    return 0.5 * (Qd + Qd.T)


def predict(fs: FilterState, Phi, Qd) -> FilterState:
    """Zero the error state and propagate ``P <- Phi P Phi^T + Qd``."""
    P = check_covariance(Phi @ fs.P @ Phi.T + Qd)
    return replace(fs, P=P, dx=ErrorState())


def build_H_lc(state: NavState) -> NDArray[np.float64]:
    """Body-velocity measurement matrix ``[C_n^b, -C_n^b [v^n x], 0, 0]``."""
    Cnb = quat_to_dcm(state.att).T
    H = np.zeros((3, N_STATES))
    H[:, V] = Cnb
    H[:, EPS] = -Cnb @ skew(state.vel_n)
    return H


def build_H_tc(state: NavState, geom: BeamGeometry, beam_ids) -> NDArray[np.float64]:
    """Stacked per-beam rows ``b_i^T H_lc`` for the selected beams (numbers 1..4)."""
    idx = beam_positions(beam_ids)
    return geom.T_body[idx] @ build_H_lc(state)


def update(fs: FilterState, H, R, innovation) -> tuple[FilterState, UpdateInfo]:
    """Kalman measurement update with ``P+ = (I - K H) P-``.

    Raises
    ------
    UpdateRejected
        If the innovation covariance is numerically singular.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    dz = np.atleast_1d(np.asarray(innovation, dtype=float))
    if dz.shape != (H.shape[0],) or R.shape != (H.shape[0], H.shape[0]):
        raise ValueError("innovation, H and R dimensions disagree")
    P = fs.P
    PHt = P @ H.T
    S = H @ PHt + R
    S = 0.5 * (S + S.T)
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > MAX_S_COND:
        raise UpdateRejected("innovation covariance is numerically singular")
    K = np.linalg.solve(S, PHt.T).T
    P_post = check_covariance((np.eye(N_STATES) - K @ H) @ P)
    dx = ErrorState.from_vector(K @ dz)
    nis = float(dz @ np.linalg.solve(S, dz))
    return replace(fs, P=P_post, dx=dx), UpdateInfo(innovation=dz, S=S, nis=nis)


def lc_innovation(state: NavState, v_b_dvl: ArrayLike) -> NDArray[np.float64]:
    """``C_n^b v^n - v_b`` using the current estimates."""
    return quat_to_dcm(state.att).T @ state.vel_n - np.asarray(v_b_dvl, dtype=float)


def tc_innovation(state: NavState, geom: BeamGeometry, sample, beam_ids) -> NDArray[np.float64]:
    """Per-beam residuals ``b_i^T C_n^b v^n - y_i`` for the selected beams.

    ``sample`` is a :class:`DvlSample` or a 4-vector of beam values in beam order.
    """
    beams = sample.beams if isinstance(sample, DvlSample) else np.asarray(sample, dtype=float)
    idx = beam_positions(beam_ids)
    predicted = geom.T_body[idx] @ (quat_to_dcm(state.att).T @ state.vel_n)
    return predicted - beams[idx]
