"""INS/DVL fusion loop with baseline, average-completed and network-completed updates."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from numpy.typing import NDArray

from ._rotations import euler_from_quat_batch, quat_to_dcm
from ._kernels import predict_segment
from .ekf import (
    ErrorState,
    FilterState,
    NoiseConfig,
    build_F,
    check_covariance,
    build_G,
    build_H_lc,
    build_H_tc,
    default_initial_cov,
    discretize_Q,
    lc_innovation,
    predict,
    tc_innovation,
    transition_matrix,
    update,
)
from .errors import ConfigurationError, UpdateRejected
from .geometry import BeamGeometry, beam_positions, dvl_to_body, ls_covariance, ls_velocity, ls_velocity_subset
from .ins import GRAVITY_NED, NavState, apply_error_correction, propagate
from .regressor import AverageEstimator, MissingPattern, NetworkEstimator, RegressorModel, complete_beams
from .sim import ImuErrorModel, RunLog

log = logging.getLogger(__name__)

STRATEGY_KINDS = ("baseline_lc", "baseline_tc", "average_lc", "average_tc", "hnlc", "hntc")
UPDATE_KINDS = ("none", "lc", "tc", "hnlc", "hntc")


@dataclass(frozen=True)
class FusionStrategy:
    """Update strategy; ``models`` maps a missing pattern to its trained network."""

    kind: str
    models: Mapping[MissingPattern, RegressorModel] = field(default_factory=dict)
    regressed_R_inflation: float = 1.0

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigurationError(f"unknown strategy {self.kind!r}")
        if self.regressed_R_inflation < 1.0:
            raise ConfigurationError("regressed_R_inflation must be >= 1")
        for pattern, model in self.models.items():
            if model.pattern != pattern:
                raise ConfigurationError(f"model for {pattern.missing} was trained for {model.pattern.missing}")

    @property
    def coupling(self) -> str:
        return "lc" if self.kind.endswith("lc") else "tc"

    @property
    def completes_beams(self) -> bool:
        return not self.kind.startswith("baseline")

    def estimator(self, pattern: MissingPattern):
        if self.kind.startswith("average"):
            return AverageEstimator(pattern)
        if pattern not in self.models:
            raise ConfigurationError(f"strategy {self.kind} has no model for missing beams {pattern.missing}")
        return NetworkEstimator(self.models[pattern])


@dataclass(frozen=True)
class FilterConfig:
    noise: NoiseConfig
    P0: NDArray[np.float64] = field(default_factory=default_initial_cov)
    trans_order: int = 2
    sigma_beam: float = 0.042
    gravity_n: NDArray[np.float64] = field(default_factory=lambda: GRAVITY_NED.copy())

    @classmethod
    def for_imu(cls, imu: ImuErrorModel, rate_hz: float = 100.0, **kwargs) -> "FilterConfig":
        """Noise densities from ``imu`` and bias priors at 1.5x its turn-on biases."""
        sigma_ba = max(1.5 * float(np.max(np.abs(imu.accel_bias))), 1e-5)
        sigma_bg = max(1.5 * float(np.max(np.abs(imu.gyro_bias))), 1e-9)
        P0 = default_initial_cov(sigma_ba=sigma_ba, sigma_bg=sigma_bg)
        return cls(noise=imu.noise_config(rate_hz), P0=P0, **kwargs)


@dataclass
class FusionOutput:
    """Filter output at every IMU epoch (index 0 is the initial state)."""

    strategy: str
    t: NDArray[np.float64]
    vel: NDArray[np.float64]
    pos: NDArray[np.float64]
    euler: NDArray[np.float64]
    P_v: NDArray[np.float64]  # diagonal of the velocity block
    nis: NDArray[np.float64]  # nan where no update happened
    update_kind: NDArray[np.str_]
    accel_bias: NDArray[np.float64]
    gyro_bias: NDArray[np.float64]
    regressor_calls: int = 0
    rejected_updates: int = 0

    @property
    def vel_std(self) -> NDArray[np.float64]:
        """Root of the velocity-block trace."""
        return np.sqrt(self.P_v.sum(axis=1))


def _missing_patterns(dvl) -> set[MissingPattern]:
    found = set()
    for valid in np.unique(dvl.valid, axis=0):
        n_valid = int(valid.sum())
        if 0 < n_valid < 3:
            found.add(MissingPattern(tuple(int(i) + 1 for i in np.flatnonzero(~valid))))
    return found


class _Updater:
    """DVL-epoch logic shared by all strategies."""

    def __init__(self, strategy: FusionStrategy, geom: BeamGeometry, cfg: FilterConfig, patterns):
        self.strategy = strategy
        self.geom = geom
        self.beam_var = np.full(4, cfg.sigma_beam**2)
        self.estimators = {p: strategy.estimator(p) for p in patterns} if strategy.completes_beams else {}
        depth = max([e.history for e in self.estimators.values()], default=0)
        self.buffer: deque = deque(maxlen=max(depth, 1))
        self.regressor_calls = 0

    def _apply(self, state, fs, y, ids, var, kind):
        if self.strategy.coupling == "lc":
            if len(ids) == 4:
                v_dvl = ls_velocity(self.geom, y)
            else:
                v_dvl = ls_velocity_subset(self.geom, y[beam_positions(ids)], ids)
            R = ls_covariance(self.geom, var[beam_positions(ids)], ids)
            H = build_H_lc(state)
            dz = lc_innovation(state, dvl_to_body(self.geom, v_dvl))
        else:
            H = build_H_tc(state, self.geom, ids)
            dz = tc_innovation(state, self.geom, y, ids)
            R = np.diag(var[beam_positions(ids)])
        fs, info = update(fs, H, R, dz)
        state = apply_error_correction(state, fs.dx)
        return state, fs, kind, info.nis

    def __call__(self, state: NavState, fs: FilterState, beams, valid):
        ids = tuple(int(i) + 1 for i in np.flatnonzero(valid))
        coupling = self.strategy.coupling
        if len(ids) >= 3:
            y = np.where(valid, beams, 0.0)
            result = self._apply(state, fs, y, ids, self.beam_var, coupling)
            if len(ids) == 4:
                self.buffer.append(beams.copy())
            else:
                v = ls_velocity_subset(self.geom, beams[valid], ids)
                self.buffer.append(np.where(valid, beams, self.geom.T @ v))
            return result

        if self.strategy.completes_beams and len(ids) > 0:
            pattern = MissingPattern(tuple(b for b in (1, 2, 3, 4) if b not in ids))
            est = self.estimators[pattern]
            if len(self.buffer) >= est.history:
                past = np.array(list(self.buffer)[-est.history :])
                partial = beams[pattern.measured_idx]
                predicted = est.predict(past, partial)
                self.regressor_calls += 1
                y = complete_beams(pattern, partial, predicted)
                var = self.beam_var.copy()
                var[pattern.missing_idx] *= self.strategy.regressed_R_inflation
                self.buffer.append(y)
                return self._apply(state, fs, y, (1, 2, 3, 4), var, "hn" + coupling)

        if coupling == "tc" and len(ids) > 0:
            return self._apply(state, fs, np.where(valid, beams, 0.0), ids, self.beam_var, "tc")
        return state, fs, "none", np.nan


def run_fusion(
    log_: RunLog,
    strategy: FusionStrategy,
    cfg: FilterConfig,
    geom: BeamGeometry,
    initial_state: NavState | None = None,
    fast: bool = True,
) -> FusionOutput:
    """Propagate INS + EKF at the IMU rate and apply DVL updates per ``strategy``.

    ``fast`` runs the prediction through the compiled kernel; ``fast=False``
    composes the public per-step functions (same numbers, much slower).
    """
    truth, imu, dvl = log_.truth, log_.imu, log_.dvl
    patterns = _missing_patterns(dvl)
    updater = _Updater(strategy, geom, cfg, patterns)

    dt = truth.dt
    state = initial_state or truth.state(0)
    fs = FilterState(P=cfg.P0.copy(), noise=cfg.noise, trans_order=cfg.trans_order,
                     regressed_R_inflation=strategy.regressed_R_inflation)
    Qc = cfg.noise.Qc
    gravity = np.asarray(cfg.gravity_n, dtype=float)

    n = len(truth)
    out_vel = np.empty((n, 3))
    out_pos = np.empty((n, 3))
    out_att = np.empty((n, 4))
    out_Pv = np.empty((n, 3))
    out_ba = np.empty((n, 3))
    out_bg = np.empty((n, 3))
    nis = np.full(n, np.nan)
    kinds = np.full(n, "none", dtype="<U4")
    dvl_at = {int(j): m for m, j in enumerate(dvl.truth_index)}
    rejected = 0

    pos, vel, att = state.pos_n.copy(), state.vel_n.copy(), state.att.copy()
    ba, bg = state.accel_bias_hat.copy(), state.gyro_bias_hat.copy()
    P = fs.P.copy()
    out_vel[0], out_pos[0], out_att[0] = vel, pos, att
    out_Pv[0] = np.diag(P)[:3]
    out_ba[0], out_bg[0] = ba, bg

    stops = sorted(set(dvl_at) | {n - 1})
    cur = 0
    for stop in stops:
        if stop <= cur:
            continue
        seg_start = cur + 1
        if fast:
            while cur < stop:
                sl = slice(cur + 1, stop + 1)
                pos, vel, att, P, bad = predict_segment(
                    pos, vel, att, ba, bg, P, imu.f[cur:stop], imu.w[cur:stop], dt, gravity, Qc,
                    cfg.trans_order, out_pos[sl], out_vel[sl], out_att[sl], out_Pv[sl],
                )
                if bad < 0:
                    cur = stop
                else:
                    P = check_covariance(P)
                    cur += bad + 1
        else:
            for i in range(cur + 1, stop + 1):
                state = NavState(truth.t[i - 1], pos, vel, att, ba, bg)
                sample = imu.sample(i - 1)
                f_n = quat_to_dcm(att) @ (sample.specific_force_b - ba)
                F = build_F(state, f_n)
                G = build_G(state)
                Phi = transition_matrix(F, dt, cfg.trans_order)
                fs = predict(replace(fs, P=P), Phi, discretize_Q(Phi, G, Qc, dt))
                P = fs.P
                state = propagate(state, sample, dt, gravity)
                pos, vel, att = state.pos_n, state.vel_n, state.att
                out_vel[i], out_pos[i], out_att[i] = vel, pos, att
                out_Pv[i] = np.diag(P)[:3]
            cur = stop
        out_ba[seg_start:stop + 1], out_bg[seg_start:stop + 1] = ba, bg
        m = dvl_at.get(stop)
        if m is not None:
            state = NavState(truth.t[stop], pos, vel, att, ba, bg)
            fs = replace(fs, P=P)
            try:
                state, fs, kinds[stop], nis[stop] = updater(state, fs, dvl.beams[m], dvl.valid[m])
            except UpdateRejected as exc:
                rejected += 1
                log.warning("update rejected at t=%.2f: %s", truth.t[stop], exc)
            fs = replace(fs, dx=ErrorState())
            pos, vel, att = state.pos_n, state.vel_n, state.att
            ba, bg = state.accel_bias_hat, state.gyro_bias_hat
            P = fs.P
            out_vel[stop], out_pos[stop], out_att[stop] = vel, pos, att
            out_Pv[stop] = np.diag(P)[:3]
        out_ba[stop], out_bg[stop] = ba, bg

    return FusionOutput(
        strategy=strategy.kind,
        t=truth.t.copy(),
        vel=out_vel,
        pos=out_pos,
        euler=euler_from_quat_batch(out_att),
        P_v=out_Pv,
        nis=nis,
        update_kind=kinds,
        accel_bias=out_ba,
        gyro_bias=out_bg,
        regressor_calls=updater.regressor_calls,
        rejected_updates=rejected,
    )
