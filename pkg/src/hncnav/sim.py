"""Synthetic AUV trajectories, IMU/DVL synthesis and scripted beam outages."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from ._rotations import quat_from_euler_batch, quat_to_dcm_batch
from .ekf import NoiseConfig
from .geometry import BeamGeometry, DvlErrorModel, DvlSample, corrupt_beams
from .ins import GRAVITY_NED, ImuSample, NavState
from .regressor import MissingPattern, THREE_MISSING, TWO_MISSING

MAX_SPEED = 4.0
LEG_KINDS = ("straight", "turn", "dive")


@dataclass(frozen=True)
class Leg:
    """One trajectory segment.

    ``speed`` is the commanded surge speed, reached at the trajectory's
    acceleration limit. ``turn`` legs hold ``turn_rate`` (rad/s); ``dive`` legs
    hold ``pitch`` (rad, negative is nose down). Other legs fly level.
    """

    kind: str
    duration: float
    speed: float
    turn_rate: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        if self.kind not in LEG_KINDS:
            raise ValueError(f"unknown leg kind {self.kind!r}")
        if self.duration <= 0:
            raise ValueError("leg duration must be positive")
        if not 0 <= self.speed <= MAX_SPEED:
            raise ValueError(f"leg speed must be within [0, {MAX_SPEED}] m/s")


@dataclass(frozen=True)
class TrajectorySpec:
    legs: tuple[Leg, ...]
    initial_pos: tuple[float, float, float] = (0.0, 0.0, 0.0)
    initial_heading: float = 0.0
    initial_speed: float | None = None
    accel_limit: float = 0.1
    pitch_rate_limit: float = np.radians(2.0)
    sideslip_gain: float = 1.0
    heave_gain: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "legs", tuple(self.legs))
        if not self.legs:
            raise ValueError("a trajectory needs at least one leg")

    @property
    def duration(self) -> float:
        return float(sum(leg.duration for leg in self.legs))


@dataclass(frozen=True)
class Trajectory:
    """Truth sampled at ``rate_hz``; index 0 is ``t = 0``."""

    t: NDArray[np.float64]
    pos: NDArray[np.float64]
    vel: NDArray[np.float64]
    quat: NDArray[np.float64]
    v_body: NDArray[np.float64]
    rate_hz: float

    def __len__(self) -> int:
        return self.t.size

    @property
    def dt(self) -> float:
        return 1.0 / self.rate_hz

    def state(self, i: int) -> NavState:
        return NavState(t=float(self.t[i]), pos_n=self.pos[i].copy(), vel_n=self.vel[i].copy(), att=self.quat[i].copy())

    def states(self):
        return [self.state(i) for i in range(len(self))]


def _ramp(start: float, target: float, rate: float, tau: NDArray[np.float64]) -> NDArray[np.float64]:
    step = np.minimum(rate * tau, abs(target - start))
    return start + np.sign(target - start) * step


def generate_truth(spec: TrajectorySpec, rate_hz: float = 100.0) -> Trajectory:
    """Kinematic truth: surge/pitch ramp to leg targets, yaw integrates the turn rate.

    Body velocity is ``[u, sideslip_gain * u * r, heave_gain * u * pitch]``;
    position is the trapezoidal integral of the nav-frame velocity.
    """
    dt = 1.0 / rate_hz
    n = int(round(spec.duration * rate_hz))
    t = np.arange(n + 1) * dt
    u = np.empty(n + 1)
    pitch = np.empty(n + 1)
    r = np.zeros(n + 1)

    u0 = spec.legs[0].speed if spec.initial_speed is None else spec.initial_speed
    p0 = spec.legs[0].pitch if spec.legs[0].kind == "dive" else 0.0
    u[0], pitch[0] = u0, p0
    start_idx = 0
    leg_start_t = 0.0
    for leg in spec.legs:
        end_t = leg_start_t + leg.duration
        end_idx = min(n, int(round(end_t * rate_hz)))
        sel = slice(start_idx + 1, end_idx + 1)
        tau = t[sel] - leg_start_t
        u[sel] = _ramp(u0, leg.speed, spec.accel_limit, tau)
        target_pitch = leg.pitch if leg.kind == "dive" else 0.0
        pitch[sel] = _ramp(p0, target_pitch, spec.pitch_rate_limit, tau)
        if leg.kind == "turn":
            r[sel] = leg.turn_rate
        u0, p0 = u[end_idx], pitch[end_idx]
        start_idx, leg_start_t = end_idx, end_t

    yaw = spec.initial_heading + np.concatenate([[0.0], np.cumsum(r[1:]) * dt])
    quat = quat_from_euler_batch(np.zeros(n + 1), pitch, yaw)
    v_body = np.column_stack([u, spec.sideslip_gain * u * r, spec.heave_gain * u * pitch])
    C = quat_to_dcm_batch(quat)
    vel = np.einsum("nij,nj->ni", C, v_body)
    pos = np.empty_like(vel)
    pos[0] = spec.initial_pos
    pos[1:] = pos[0] + np.cumsum(0.5 * (vel[1:] + vel[:-1]) * dt, axis=0)
    return Trajectory(t=t, pos=pos, vel=vel, quat=quat, v_body=v_body, rate_hz=rate_hz)


# ---------------------------------------------------------------------------
# IMU


@dataclass(frozen=True)
class ImuErrorModel:
    """Per-sample white noise stds, constant turn-on biases and bias random walks.

    Bias walks are densities ([m/s^2/sqrt(s)], [rad/s/sqrt(s)]) so they do not
    depend on the sample rate.
    """

    accel_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gyro_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    accel_noise_std: float = 0.0
    gyro_noise_std: float = 0.0
    accel_bias_walk: float = 0.0
    gyro_bias_walk: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.accel_noise_std, self.gyro_noise_std, self.accel_bias_walk, self.gyro_bias_walk) < 0:
            raise ValueError("IMU noise stds must be non-negative")

    @classmethod
    def fog_grade(cls, rng_seed: int = 0) -> "ImuErrorModel":
        """Navigation-grade FOG IMU: 0.05 deg/h gyro bias, 0.1 mg accel bias."""
        mg = 1e-3 * 9.80665
        return cls(
            accel_bias=(0.1 * mg, -0.1 * mg, 0.1 * mg),
            gyro_bias=tuple(np.radians([0.05, -0.05, 0.05]) / 3600.0),
            accel_noise_std=2e-3,
            gyro_noise_std=1.5e-5,
            accel_bias_walk=1e-6,
            gyro_bias_walk=1e-9,
            rng_seed=rng_seed,
        )

    @classmethod
    def mems_grade(cls, rng_seed: int = 0, rate_hz: float = 100.0) -> "ImuErrorModel":
        """Low-cost MEMS IMU (3 deg/sqrt(h) ARW, 10 deg/h gyro bias, 1 mg accel bias).

        Pure-inertial velocity drift reaches the m/s level within 30 s, so
        outage handling is visible in the metrics.
        """
        mg = 1e-3 * 9.80665
        arw = np.radians(3.0) / 60.0  # rad/sqrt(s)
        vrw = 0.05 / 60.0  # m/s/sqrt(s)
        return cls(
            accel_bias=(1.0 * mg, -1.0 * mg, 1.0 * mg),
            gyro_bias=tuple(np.radians([10.0, -10.0, 10.0]) / 3600.0),
            accel_noise_std=vrw * np.sqrt(rate_hz),
            gyro_noise_std=arw * np.sqrt(rate_hz),
            accel_bias_walk=1e-5,
            gyro_bias_walk=np.radians(0.1) / 3600.0,
            rng_seed=rng_seed,
        )

    def noise_config(self, rate_hz: float) -> NoiseConfig:
        """Continuous densities matching this model at ``rate_hz``."""
        root_dt = np.sqrt(1.0 / rate_hz)
        return NoiseConfig(
            accel_noise_std=self.accel_noise_std * root_dt,
            gyro_noise_std=self.gyro_noise_std * root_dt,
            accel_bias_walk_std=self.accel_bias_walk,
            gyro_bias_walk_std=self.gyro_bias_walk,
        )


@dataclass(frozen=True)
class ImuLog:
    """IMU samples; sample ``i`` covers ``(t[i] - dt, t[i]]``."""

    t: NDArray[np.float64]
    f: NDArray[np.float64]
    w: NDArray[np.float64]
    accel_bias: NDArray[np.float64] | None = None
    gyro_bias: NDArray[np.float64] | None = None

    def __len__(self) -> int:
        return self.t.size

    def sample(self, i: int) -> ImuSample:
        return ImuSample(float(self.t[i]), self.f[i], self.w[i])


def _quat_rotvec_batch(q_prev: NDArray, q_next: NDArray) -> NDArray:
    """Rotation vectors of ``conj(q_prev) * q_next`` row by row."""
    pw, pv = q_prev[:, 0], -q_prev[:, 1:]
    qw, qv = q_next[:, 0], q_next[:, 1:]
    w = pw * qw - np.einsum("ij,ij->i", pv, qv)
    v = pw[:, None] * qv + qw[:, None] * pv + np.cross(pv, qv)
    sign = np.where(w < 0, -1.0, 1.0)
    w, v = w * sign, v * sign[:, None]
    vnorm = np.linalg.norm(v, axis=1)
    angle = 2.0 * np.arctan2(vnorm, w)
    scale = np.where(vnorm > 1e-12, angle / np.maximum(vnorm, 1e-300), 2.0)
    return v * scale[:, None]


def synthesize_imu(
    truth: Trajectory,
    model: ImuErrorModel = ImuErrorModel(),
    gravity_n: NDArray[np.float64] = GRAVITY_NED,
) -> ImuLog:
    """Invert the strapdown step so the error-free output reproduces ``truth``."""
    dt = truth.dt
    C_prev = quat_to_dcm_batch(truth.quat[:-1])
    acc_n = np.diff(truth.vel, axis=0) / dt - gravity_n
    f = np.einsum("nji,nj->ni", C_prev, acc_n)
    w = _quat_rotvec_batch(truth.quat[:-1], truth.quat[1:]) / dt

    n = f.shape[0]
    rng = np.random.default_rng(model.rng_seed)
    steps = rng.standard_normal((4, n, 3))
    root_dt = np.sqrt(dt)
    ba = np.asarray(model.accel_bias) + np.cumsum(steps[0] * model.accel_bias_walk * root_dt, axis=0)
    bg = np.asarray(model.gyro_bias) + np.cumsum(steps[1] * model.gyro_bias_walk * root_dt, axis=0)
    f = f + ba + steps[2] * model.accel_noise_std
    w = w + bg + steps[3] * model.gyro_noise_std
    return ImuLog(t=truth.t[1:].copy(), f=f, w=w, accel_bias=ba, gyro_bias=bg)


# ---------------------------------------------------------------------------
# DVL


@dataclass(frozen=True)
class DvlLog:
    """DVL epochs; withheld beams are ``nan`` with ``valid`` cleared.

    ``truth_index`` maps every epoch to its truth/IMU-grid index.
    """

    t: NDArray[np.float64]
    beams: NDArray[np.float64]
    valid: NDArray[np.bool_]
    truth_index: NDArray[np.intp]

    def __len__(self) -> int:
        return self.t.size

    def sample(self, i: int) -> DvlSample:
        return DvlSample(float(self.t[i]), self.beams[i].copy(), self.valid[i].copy())

    def samples(self) -> list[DvlSample]:
        return [self.sample(i) for i in range(len(self))]


def synthesize_dvl(
    truth: Trajectory, geom: BeamGeometry, err: DvlErrorModel, rate_hz: float = 1.0
) -> DvlLog:
    """Beam measurements of the body-frame truth velocity at each DVL epoch."""
    step = int(round(truth.rate_hz / rate_hz))
    if step < 1 or abs(step * rate_hz - truth.rate_hz) > 1e-9:
        raise ValueError("DVL rate must divide the truth rate")
    idx = np.arange(step, len(truth), step)
    v_dvl = truth.v_body[idx] @ geom.C_d_to_b  # C_b^d v_b, row-wise
    beams = corrupt_beams(geom, err, v_dvl)
    return DvlLog(
        t=truth.t[idx].copy(), beams=beams, valid=np.ones_like(beams, dtype=bool), truth_index=idx
    )


@dataclass(frozen=True)
class OutageWindow:
    start: float
    duration: float = 30.0
    pattern: MissingPattern = TWO_MISSING

    def __post_init__(self):
        if self.duration <= 0 or self.start < 0:
            raise ValueError("outage windows need start >= 0 and positive duration")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def contains(self, t) -> NDArray[np.bool_]:
        t = np.asarray(t)
        return (t >= self.start - 1e-9) & (t < self.end - 1e-9)


def apply_outages(log: DvlLog, windows: Sequence[OutageWindow]) -> DvlLog:
    """Withhold the pattern's beams inside each window (value -> nan, valid -> False)."""
    ordered = sorted(windows, key=lambda w: w.start)
    for a, b in zip(ordered, ordered[1:]):
        if b.start < a.end - 1e-9:
            raise ValueError("outage windows overlap")
    if ordered and ordered[-1].end > log.t[-1] + 1.0 + 1e-9:
        raise ValueError("outage window extends past the end of the log")
    beams = log.beams.copy()
    valid = log.valid.copy()
    for w in ordered:
        rows = w.contains(log.t)
        cols = w.pattern.missing_idx
        valid[np.ix_(rows, cols)] = False
    beams[~valid] = np.nan
    return replace(log, beams=beams, valid=valid)


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    trajectory: TrajectorySpec
    imu: ImuErrorModel = field(default_factory=ImuErrorModel.fog_grade)
    dvl_bias: float | tuple[float, ...] = 0.01
    dvl_noise_std: float = 0.042
    dvl_scale: tuple[float, float, float] = (0.0, 0.0, 0.0)
    dvl_seed: int = 0
    outages: tuple[OutageWindow, ...] = ()
    imu_rate_hz: float = 100.0
    dvl_rate_hz: float = 1.0
    theta_deg: float = 20.0

    def dvl_model(self) -> DvlErrorModel:
        return DvlErrorModel(
            bias=np.broadcast_to(np.asarray(self.dvl_bias, dtype=float), (4,)),
            scale=np.asarray(self.dvl_scale, dtype=float),
            noise_std=self.dvl_noise_std,
            rng_seed=self.dvl_seed,
        )


@dataclass(frozen=True)
class RunLog:
    truth: Trajectory
    imu: ImuLog
    dvl: DvlLog
    config: ScenarioConfig | None = None
    metadata: dict = field(default_factory=dict)


def simulate(cfg: ScenarioConfig, geom: BeamGeometry | None = None) -> RunLog:
    from .geometry import build_beam_geometry

    geom = geom or build_beam_geometry(np.radians(cfg.theta_deg))
    truth = generate_truth(cfg.trajectory, cfg.imu_rate_hz)
    imu = synthesize_imu(truth, cfg.imu)
    dvl = synthesize_dvl(truth, geom, cfg.dvl_model(), cfg.dvl_rate_hz)
    dvl = apply_outages(dvl, cfg.outages)
    return RunLog(truth=truth, imu=imu, dvl=dvl, config=cfg, metadata={"name": cfg.name})


def random_legs(rng: np.random.Generator, duration: float, max_speed: float = 3.0) -> tuple[Leg, ...]:
    """Mixed straight/turn/dive legs with speed changes, totalling ``duration``."""
    legs = []
    remaining = duration
    while remaining > 1e-9:
        kind = rng.choice(LEG_KINDS, p=[0.45, 0.35, 0.20])
        length = float(min(remaining, rng.uniform(20.0, 90.0)))
        if remaining - length < 10.0:
            length = remaining
        speed = float(rng.uniform(0.5, max_speed))
        turn_rate = float(np.radians(rng.uniform(1.0, 6.0)) * rng.choice([-1.0, 1.0]))
        pitch = float(np.radians(rng.uniform(5.0, 20.0)) * rng.choice([-1.0, 1.0]))
        legs.append(
            Leg(
                kind=str(kind),
                duration=length,
                speed=speed,
                turn_rate=turn_rate if kind == "turn" else 0.0,
                pitch=pitch if kind == "dive" else 0.0,
            )
        )
        remaining -= length
    return tuple(legs)


def training_corpus(seed: int = 0, n_specs: int = 8, spec_duration: float = 900.0) -> list[ScenarioConfig]:
    """Default training corpus: ``n_specs`` random missions (2 h in total by default).

    Training only consumes the DVL stream, which has no outages here.
    """
    rng = np.random.default_rng(seed)
    configs = []
    for i in range(n_specs):
        spec = TrajectorySpec(
            legs=random_legs(rng, spec_duration),
            initial_heading=float(rng.uniform(-np.pi, np.pi)),
        )
        configs.append(ScenarioConfig(f"train-{seed}-{i}", spec, dvl_seed=int(rng.integers(2**31))))
    return configs


def validation_corpus(seed: int = 1000, n_specs: int = 2, spec_duration: float = 600.0) -> list[ScenarioConfig]:
    """Held-out missions drawn with a separate seed and a turn-heavy leg mix."""
    rng = np.random.default_rng(seed)
    configs = []
    for i in range(n_specs):
        spec = TrajectorySpec(legs=random_legs(rng, spec_duration, max_speed=3.5), initial_heading=float(rng.uniform(-np.pi, np.pi)))
        configs.append(ScenarioConfig(f"val-{seed}-{i}", spec, dvl_seed=int(rng.integers(2**31))))
    return configs


def test_trajectory() -> TrajectorySpec:
    """Fixed maneuvering mission used for outage evaluation (not drawn from the training generator)."""
    d = np.radians
    return TrajectorySpec(
        legs=(
            Leg("straight", 120.0, 1.5),
            Leg("turn", 30.0, 1.5, turn_rate=d(3.0)),
            Leg("straight", 60.0, 2.0),
            Leg("turn", 40.0, 2.0, turn_rate=d(-4.0)),
            Leg("dive", 40.0, 1.0, pitch=d(-10.0)),
            Leg("straight", 60.0, 2.5),
            Leg("turn", 50.0, 2.0, turn_rate=d(3.0)),
        ),
        initial_heading=d(30.0),
    )


def outage_scenario(
    pattern: MissingPattern,
    start: float = 200.0,
    duration: float = 30.0,
    imu: ImuErrorModel | None = None,
    seed: int = 0,
    trajectory: TrajectorySpec | None = None,
) -> ScenarioConfig:
    """Test mission with a single scripted outage of ``pattern``."""
    return ScenarioConfig(
        name=f"test-{pattern.label}",
        trajectory=trajectory or test_trajectory(),
        imu=imu or ImuErrorModel.mems_grade(rng_seed=seed),
        dvl_seed=seed,
        outages=(OutageWindow(start, duration, pattern),),
    )
