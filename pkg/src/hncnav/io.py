"""CSV/JSON serialization of scenarios, run logs and filter outputs."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .harness import UPDATE_KINDS, FusionOutput
from .regressor import MissingPattern
from .sim import DvlLog, ImuErrorModel, ImuLog, Leg, OutageWindow, RunLog, ScenarioConfig, Trajectory, TrajectorySpec

DVL_COLUMNS = ("t", "b1", "b2", "b3", "b4", "v1", "v2", "v3", "v4")
IMU_COLUMNS = ("t", "fx", "fy", "fz", "wx", "wy", "wz")
TRUTH_COLUMNS = (
    "t", "pN", "pE", "pD", "vN", "vE", "vD", "qw", "qx", "qy", "qz", "u", "v", "w",
    "bax", "bay", "baz", "bgx", "bgy", "bgz",
)
OUTPUT_COLUMNS = (
    "t", "vN", "vE", "vD", "roll", "pitch", "yaw", "pN", "pE", "pD", "Pv11", "Pv22", "Pv33", "nis", "update_kind",
)


def _fmt(x: float) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_table(path: Path, header) -> list[list[str]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            found = [h.strip() for h in next(reader)]
            rows = [row for row in reader if row]
    except FileNotFoundError as exc:
        raise ConfigurationError(f"missing file {path}") from exc
    except StopIteration as exc:
        raise ConfigurationError(f"{path} is empty") from exc
    if tuple(found) != tuple(header):
        raise ConfigurationError(f"{path}: expected columns {','.join(header)}, got {','.join(found)}")
    return rows


def _floats(rows, cols) -> np.ndarray:
    out = np.full((len(rows), len(cols)), np.nan)
    for i, row in enumerate(rows):
        for j, c in enumerate(cols):
            if row[c].strip():
                out[i, j] = float(row[c])
    return out


# ---------------------------------------------------------------------------
# individual streams


def write_dvl_csv(log: DvlLog, path) -> None:
    rows = (
        [_fmt(t), *(_fmt(b) if v else "" for b, v in zip(beams, valid)), *(str(int(v)) for v in valid)]
        for t, beams, valid in zip(log.t, log.beams, log.valid)
    )
    _write_rows(Path(path), DVL_COLUMNS, rows)


def read_dvl_csv(path, truth_t: np.ndarray | None = None) -> DvlLog:
    """Read a DVL CSV; ``truth_t`` (the IMU/truth grid) is used to rebuild the epoch index."""
    rows = _read_table(Path(path), DVL_COLUMNS)
    data = _floats(rows, range(5))
    valid = np.array([[row[c].strip() == "1" for c in range(5, 9)] for row in rows], dtype=bool).reshape(-1, 4)
    beams = data[:, 1:5]
    if np.any(valid & ~np.isfinite(beams)):
        raise ConfigurationError(f"{path}: a beam marked valid has no value")
    beams = np.where(valid, beams, np.nan)
    t = data[:, 0]
    if truth_t is None:
        idx = np.arange(t.size, dtype=np.intp)
    else:
        idx = np.searchsorted(truth_t, t - 1e-9)
        if np.any(idx >= truth_t.size) or np.any(np.abs(truth_t[np.minimum(idx, truth_t.size - 1)] - t) > 1e-6):
            raise ConfigurationError(f"{path}: DVL epochs are not on the IMU time grid")
    return DvlLog(t=t, beams=beams, valid=valid, truth_index=idx.astype(np.intp))


def write_imu_csv(log: ImuLog, path) -> None:
    rows = ([_fmt(t), *map(_fmt, f), *map(_fmt, w)] for t, f, w in zip(log.t, log.f, log.w))
    _write_rows(Path(path), IMU_COLUMNS, rows)


def read_imu_csv(path) -> ImuLog:
    data = _floats(_read_table(Path(path), IMU_COLUMNS), range(7))
    if not np.all(np.isfinite(data)):
        raise ConfigurationError(f"{path}: IMU log has empty fields")
    return ImuLog(t=data[:, 0], f=data[:, 1:4], w=data[:, 4:7])


def write_truth_csv(truth: Trajectory, imu: ImuLog | None, path) -> None:
    # bias row i belongs to the IMU sample ending at t[i]; row 0 has none
    n = len(truth)
    ba = np.full((n, 3), np.nan)
    bg = np.full((n, 3), np.nan)
    if imu is not None and imu.accel_bias is not None:
        ba[1:] = imu.accel_bias
    if imu is not None and imu.gyro_bias is not None:
        bg[1:] = imu.gyro_bias
    table = np.column_stack([truth.t, truth.pos, truth.vel, truth.quat, truth.v_body, ba, bg])
    _write_rows(Path(path), TRUTH_COLUMNS, ([_fmt(x) for x in row] for row in table))


def read_truth_csv(path, rate_hz: float):
    data = _floats(_read_table(Path(path), TRUTH_COLUMNS), range(len(TRUTH_COLUMNS)))
    truth = Trajectory(
        t=data[:, 0], pos=data[:, 1:4], vel=data[:, 4:7], quat=data[:, 7:11], v_body=data[:, 11:14], rate_hz=rate_hz
    )
    ba, bg = data[1:, 14:17], data[1:, 17:20]
    return truth, (None if np.isnan(ba).all() else ba), (None if np.isnan(bg).all() else bg)


def write_output_csv(out: FusionOutput, path) -> None:
    table = np.column_stack([out.t, out.vel, out.euler, out.pos, out.P_v, out.nis])
    rows = ([*(_fmt(x) for x in row), kind] for row, kind in zip(table, out.update_kind))
    _write_rows(Path(path), OUTPUT_COLUMNS, rows)


def read_output_csv(path, strategy: str = "") -> FusionOutput:
    rows = _read_table(Path(path), OUTPUT_COLUMNS)
    data = _floats(rows, range(14))
    kinds = np.array([row[14].strip() for row in rows], dtype="<U4")
    bad = set(kinds) - set(UPDATE_KINDS)
    if bad:
        raise ConfigurationError(f"{path}: unknown update kinds {sorted(bad)}")
    n = data.shape[0]
    return FusionOutput(
        strategy=strategy,
        t=data[:, 0],
        vel=data[:, 1:4],
        euler=data[:, 4:7],
        pos=data[:, 7:10],
        P_v=data[:, 10:13],
        nis=data[:, 13],
        update_kind=kinds,
        accel_bias=np.full((n, 3), np.nan),
        gyro_bias=np.full((n, 3), np.nan),
    )


# ---------------------------------------------------------------------------
# scenario manifest


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    doc = asdict(cfg)
    doc["outages"] = [
        {"start": w.start, "duration": w.duration, "missing": list(w.pattern.missing)} for w in cfg.outages
    ]
    doc["dvl_bias"] = list(np.atleast_1d(cfg.dvl_bias).astype(float))
    return doc


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    try:
        doc = dict(doc)
        traj = dict(doc.pop("trajectory"))
        traj["legs"] = tuple(Leg(**leg) for leg in traj["legs"])
        traj["initial_pos"] = tuple(traj.get("initial_pos", (0.0, 0.0, 0.0)))
        imu_doc = dict(doc.pop("imu", {}) or {})
        for key in ("accel_bias", "gyro_bias"):
            if key in imu_doc:
                imu_doc[key] = tuple(imu_doc[key])
        outages = tuple(
            OutageWindow(w["start"], w.get("duration", 30.0), MissingPattern(tuple(w["missing"])))
            for w in doc.pop("outages", [])
        )
        bias = doc.pop("dvl_bias", 0.01)
        bias = float(bias) if np.ndim(bias) == 0 else tuple(float(b) for b in bias)
        if isinstance(bias, tuple) and len(bias) == 1:
            bias = bias[0]
        if "dvl_scale" in doc:
            doc["dvl_scale"] = tuple(doc["dvl_scale"])
        return ScenarioConfig(
            trajectory=TrajectorySpec(**traj),
            imu=ImuErrorModel(**imu_doc),
            outages=outages,
            dvl_bias=bias,
            **doc,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid scenario document: {exc}") from exc


def load_scenario(path) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"missing scenario file {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path} is not valid JSON: {exc}") from exc
    return scenario_from_dict(doc)


def save_scenario(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(cfg), indent=2), encoding="utf-8")


# ---------------------------------------------------------------------------
# run log directories


def save_runlog(log: RunLog, directory) -> Path:
    """Write ``dvl.csv``, ``imu.csv``, ``truth.csv`` and ``scenario.json`` into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_dvl_csv(log.dvl, d / "dvl.csv")
    write_imu_csv(log.imu, d / "imu.csv")
    write_truth_csv(log.truth, log.imu, d / "truth.csv")
    manifest = {"files": {"dvl": "dvl.csv", "imu": "imu.csv", "truth": "truth.csv"}, "metadata": log.metadata}
    if log.config is not None:
        manifest["scenario"] = scenario_to_dict(log.config)
    (d / "scenario.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return d


def load_runlog(directory) -> RunLog:
    d = Path(directory)
    try:
        manifest = json.loads((d / "scenario.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigurationError(f"{d} has no scenario.json") from exc
    cfg = scenario_from_dict(manifest["scenario"]) if "scenario" in manifest else None
    imu = read_imu_csv(d / "imu.csv")
    dt = float(np.median(np.diff(imu.t))) if len(imu) > 1 else 0.01
    rate = cfg.imu_rate_hz if cfg is not None else round(1.0 / dt, 9)
    truth, ba, bg = read_truth_csv(d / "truth.csv", rate)
    imu = ImuLog(t=imu.t, f=imu.f, w=imu.w, accel_bias=ba, gyro_bias=bg)
    if len(truth) != len(imu) + 1:
        raise ConfigurationError(f"{d}: truth and IMU logs differ in length")
    dvl = read_dvl_csv(d / "dvl.csv", truth.t)
    return RunLog(truth=truth, imu=imu, dvl=dvl, config=cfg, metadata=manifest.get("metadata", {}))
