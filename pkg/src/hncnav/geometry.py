"""Janus DVL beam geometry, the beam measurement error model and LS velocity recovery.

Beams are numbered 1..4 in user-facing arguments (``beam_ids``); arrays are
always stored in beam order ``[beam1, beam2, beam3, beam4]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import EstimationError, InvalidGeometryError

BEAM_IDS = (1, 2, 3, 4)


def default_yaw_offsets() -> NDArray[np.float64]:
    """Yaw of beam i is ``(i - 1) * 90 deg + 45 deg``."""
    return np.radians([(i - 1) * 90.0 + 45.0 for i in BEAM_IDS])


def beam_positions(beam_ids) -> NDArray[np.intp]:
    """Convert 1-based beam numbers to array positions, validating them."""
    ids = [int(b) for b in beam_ids]
    if not ids:
        raise ValueError("at least one beam is required")
    if any(b not in BEAM_IDS for b in ids) or len(set(ids)) != len(ids):
        raise ValueError(f"beam ids must be distinct values in 1..4, got {ids}")
    return np.array(sorted(ids), dtype=np.intp) - 1


@dataclass(frozen=True)
class BeamGeometry:
    """Beam directions of a four-beam DVL in its own frame.

    Attributes
    ----------
    pitch_theta : float
        Beam pitch from the DVL z-axis, radians.
    yaw_psi : ndarray, shape (4,)
        Beam yaw angles, radians.
    T : ndarray, shape (4, 3)
        Rows are the unit beam directions, ``v_beam = T @ v_dvl``.
    C_d_to_b : ndarray, shape (3, 3)
        DVL-to-body rotation.
    """

    pitch_theta: float
    yaw_psi: NDArray[np.float64]
    T: NDArray[np.float64]
    C_d_to_b: NDArray[np.float64]
    T_pinv: NDArray[np.float64] = field(repr=False)
    rank: int = field(repr=False)

    @property
    def directions(self) -> NDArray[np.float64]:
        return self.T

    @property
    def T_body(self) -> NDArray[np.float64]:
        """Beam directions expressed in the body frame, ``T @ C_d_to_b.T``."""
        return self.T @ self.C_d_to_b.T


def build_beam_geometry(
    theta: float,
    psi_offsets: ArrayLike | None = None,
    C_d_to_b: ArrayLike | None = None,
) -> BeamGeometry:
    """Build the beam geometry for pitch ``theta`` (radians).

    Raises
    ------
    InvalidGeometryError
        If ``theta`` is not strictly between 0 and 90 degrees, if the yaw set
        leaves ``T`` rank deficient, or if ``C_d_to_b`` is not a proper rotation.
    """
    theta = float(theta)
    if not 0.0 < theta < np.pi / 2:
        raise InvalidGeometryError(f"beam pitch must be in (0, 90) deg, got {np.degrees(theta):g} deg")
    psi = default_yaw_offsets() if psi_offsets is None else np.asarray(psi_offsets, dtype=float)
    if psi.shape != (4,):
        raise InvalidGeometryError("exactly four beam yaw angles are required")
    C = np.eye(3) if C_d_to_b is None else np.asarray(C_d_to_b, dtype=float)
    if C.shape != (3, 3) or not np.allclose(C @ C.T, np.eye(3), atol=1e-9) or np.linalg.det(C) < 0:
        raise InvalidGeometryError("C_d_to_b must be a proper 3x3 rotation")

    T = np.column_stack(
        [np.cos(psi) * np.sin(theta), np.sin(psi) * np.sin(theta), np.full(4, np.cos(theta))]
    )
    rank = int(np.linalg.matrix_rank(T))
    if rank < 3:
        raise InvalidGeometryError("beam yaw set leaves T rank deficient")
    return BeamGeometry(
        pitch_theta=theta,
        yaw_psi=psi,
        T=T,
        C_d_to_b=C,
        T_pinv=np.linalg.pinv(T),
        rank=rank,
    )


def project_velocity_to_beams(geom: BeamGeometry, v_dvl: ArrayLike) -> NDArray[np.float64]:
    """Beam-direction velocities ``T @ v``. Accepts ``(3,)`` or ``(n, 3)``."""
    return np.asarray(v_dvl, dtype=float) @ geom.T.T


@dataclass
class DvlErrorModel:
    """Beam error model ``y = T[v * (1 + s)] + b + n``.

    The model owns its noise generator; successive :func:`corrupt_beams` calls
    advance it, so a fixed ``rng_seed`` reproduces the sample stream exactly.
    """

    bias: NDArray[np.float64] = field(default_factory=lambda: np.zeros(4))
    scale: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    noise_std: float | NDArray[np.float64] = 0.0
    rng_seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.bias = np.broadcast_to(np.asarray(self.bias, dtype=float), (4,)).copy()
        self.scale = np.broadcast_to(np.asarray(self.scale, dtype=float), (3,)).copy()
        std = np.asarray(self.noise_std, dtype=float)
        if std.shape not in ((), (4,)):
            raise ValueError("noise_std must be a scalar or a 4-vector")
        if np.any(std < 0):
            raise ValueError("noise_std must be non-negative")
        if np.any(self.scale <= -1):
            raise ValueError("scale factors must be > -1")
        self.rng = np.random.default_rng(self.rng_seed)

    @classmethod
    def nominal(cls, rng_seed: int = 0) -> "DvlErrorModel":
        """0.01 m/s bias and 0.042 m/s white noise on every beam, no scale error."""
        return cls(bias=np.full(4, 0.01), noise_std=0.042, rng_seed=rng_seed)

    @property
    def beam_variance(self) -> NDArray[np.float64]:
        return np.broadcast_to(np.asarray(self.noise_std, dtype=float) ** 2, (4,)).copy()


def corrupt_beams(geom: BeamGeometry, model: DvlErrorModel, v_dvl: ArrayLike) -> NDArray[np.float64]:
    """Draw noisy beam measurements for ``v_dvl`` (``(3,)`` or ``(n, 3)``)."""
    v = np.asarray(v_dvl, dtype=float)
    clean = project_velocity_to_beams(geom, v * (1.0 + model.scale))
    noise = model.rng.standard_normal(clean.shape) * model.noise_std
    return clean + model.bias + noise


def ls_velocity(geom: BeamGeometry, beams: ArrayLike) -> NDArray[np.float64]:
    """Least-squares DVL-frame velocity from all four beams."""
    y = np.asarray(beams, dtype=float)
    if y.shape != (4,) or not np.all(np.isfinite(y)):
        raise ValueError("ls_velocity needs four finite beam measurements")
    if geom.rank < 3:
        raise EstimationError("beam matrix is rank deficient")
    return geom.T_pinv @ y


def ls_velocity_subset(geom: BeamGeometry, beams: ArrayLike, beam_ids) -> NDArray[np.float64]:
    """Least-squares velocity from a subset of at least three beams.

    ``beams`` holds the values of the selected beams, in beam order.
    """
    idx = beam_positions(beam_ids)
    y = np.asarray(beams, dtype=float)
    if idx.size < 3:
        raise EstimationError("at least three beams are needed for a velocity fix")
    if y.shape != (idx.size,):
        raise ValueError("beam values do not match the selected beam ids")
    A = geom.T[idx]
    if np.linalg.matrix_rank(A) < 3:
        raise EstimationError("selected beams are rank deficient")
    return np.linalg.pinv(A) @ y


def ls_covariance(geom: BeamGeometry, beam_var: ArrayLike, beam_ids=BEAM_IDS) -> NDArray[np.float64]:
    """Body-frame covariance of the LS velocity given per-beam variances.

    For equal variances over all four beams this is ``sigma^2 C (T^T T)^-1 C^T``.
    """
    idx = beam_positions(beam_ids)
    var = np.broadcast_to(np.asarray(beam_var, dtype=float), (idx.size,))
    A_pinv = np.linalg.pinv(geom.T[idx])
    cov_dvl = (A_pinv * var) @ A_pinv.T
    return geom.C_d_to_b @ cov_dvl @ geom.C_d_to_b.T


def dvl_to_body(geom: BeamGeometry, v_dvl: ArrayLike) -> NDArray[np.float64]:
    return geom.C_d_to_b @ np.asarray(v_dvl, dtype=float)


@dataclass(frozen=True)
class DvlSample:
    """One DVL epoch. Withheld (invalid) beams carry ``nan``."""

    t: float
    beams: NDArray[np.float64]
    valid: NDArray[np.bool_]

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.valid))

    @property
    def valid_ids(self) -> tuple[int, ...]:
        return tuple(int(i) + 1 for i in np.flatnonzero(self.valid))
