"""Velocity metrics and the strategy x scenario evaluation suite."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ConfigurationError, UndefinedMetricError
from .geometry import BeamGeometry, build_beam_geometry
from .harness import STRATEGY_KINDS, FilterConfig, FusionOutput, FusionStrategy, run_fusion
from .regressor import MissingPattern, RegressorModel, load_model
from .sim import RunLog, ScenarioConfig, simulate

RECOVERY_S = 30.0
SPAN_NOTE = "VRMSE is averaged from the outage window start to the window end plus {recovery:g} s of recovery."


def vrmse(truth_v: ArrayLike, est_v: ArrayLike) -> float:
    """Root of the mean squared velocity-error norm over ``M`` epochs."""
    truth_v = np.atleast_2d(np.asarray(truth_v, dtype=float))
    est_v = np.atleast_2d(np.asarray(est_v, dtype=float))
    if truth_v.shape != est_v.shape:
        raise ValueError(f"shape mismatch {truth_v.shape} vs {est_v.shape}")
    if truth_v.shape[0] == 0:
        raise ValueError("vrmse needs at least one sample")
    err = truth_v - est_v
    return float(np.sqrt(np.sum(err * err) / truth_v.shape[0]))


def vrte(model_vrmse: float, reference_vrmse: float) -> float:
    """Relative difference to the reference VRMSE, in percent."""
    if not reference_vrmse > 0:
        raise UndefinedMetricError("VRTE is undefined for a zero reference VRMSE")
    return abs(model_vrmse - reference_vrmse) / reference_vrmse * 100.0


def evaluation_span(cfg: ScenarioConfig | None, t: NDArray[np.float64], recovery: float = RECOVERY_S):
    """``(start, end)`` covering every outage window plus ``recovery`` seconds, or the whole run."""
    if cfg is None or not cfg.outages:
        return float(t[0]), float(t[-1])
    start = min(w.start for w in cfg.outages)
    end = max(w.end for w in cfg.outages) + recovery
    return float(start), float(min(end, t[-1]))


def _pattern_of(cfg: ScenarioConfig | None) -> MissingPattern | None:
    patterns = {w.pattern for w in cfg.outages} if cfg is not None else set()
    if len(patterns) > 1:
        raise ConfigurationError(f"scenario {cfg.name} mixes outage patterns; evaluate one pattern per scenario")
    return patterns.pop() if patterns else None


@dataclass
class EvaluationReport:
    """One trajectory/pattern: metrics per strategy plus 1 Hz traces for plotting."""

    trajectory_id: str
    pattern: str
    span: tuple[float, float]
    vrmse: dict[str, float]
    vrte_vs_baseline: dict[str, float | None]
    vrte_vs_average: dict[str, float | None]
    traces: dict[str, dict[str, list]] = field(default_factory=dict)
    truth: dict[str, list] = field(default_factory=dict)

    def rows(self) -> list[dict]:
        return [
            {
                "strategy": s,
                "pattern": self.pattern,
                "trajectory": self.trajectory_id,
                "vrmse": self.vrmse[s],
                "vrte_vs_baseline": self.vrte_vs_baseline[s],
                "vrte_vs_average": self.vrte_vs_average[s],
            }
            for s in self.vrmse
        ]

    def to_dict(self) -> dict:
        return {
            "trajectory": self.trajectory_id,
            "pattern": self.pattern,
            "span": list(self.span),
            "rows": self.rows(),
            "traces": self.traces,
            "truth": self.truth,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvaluationReport":
        rows = doc["rows"]
        return cls(
            trajectory_id=doc["trajectory"],
            pattern=doc["pattern"],
            span=tuple(doc["span"]),
            vrmse={r["strategy"]: r["vrmse"] for r in rows},
            vrte_vs_baseline={r["strategy"]: r["vrte_vs_baseline"] for r in rows},
            vrte_vs_average={r["strategy"]: r["vrte_vs_average"] for r in rows},
            traces=doc.get("traces", {}),
            truth=doc.get("truth", {}),
        )


def _reference(kind: str, family: str) -> str:
    return f"{family}_{'lc' if kind.endswith('lc') else 'tc'}"


def _relative(values: Mapping[str, float], family: str) -> dict[str, float | None]:
    out = {}
    for kind, v in values.items():
        ref = values.get(_reference(kind, family))
        out[kind] = None if ref is None or not ref > 0 else vrte(v, ref)
    return out


def _trace(log_: RunLog, out: FusionOutput) -> dict[str, list]:
    idx = np.concatenate([[0], log_.dvl.truth_index])
    err = out.vel[idx] - log_.truth.vel[idx]
    return {
        "t": out.t[idx].tolist(),
        "vel_error": err.tolist(),
        "vel_var": out.P_v[idx].tolist(),
        "cov_trace": out.P_v[idx].sum(axis=1).tolist(),
        "nis": [None if not np.isfinite(x) else float(x) for x in out.nis[idx]],
        "pos_ne": out.pos[idx, :2].tolist(),
        "update_kind": out.update_kind[idx].tolist(),
    }


def _job(args):
    log_, strategy, cfg, geom = args
    return run_fusion(log_, strategy, cfg, geom)


def resolve_models(models) -> dict[MissingPattern, RegressorModel]:
    """Accept models or paths to model JSON files keyed by pattern."""
    resolved = {}
    for pattern, m in (models or {}).items():
        resolved[pattern] = m if isinstance(m, RegressorModel) else load_model(m)
    return resolved


def evaluate_suite(
    scenarios: Sequence[ScenarioConfig | RunLog],
    strategies: Sequence[str] = STRATEGY_KINDS,
    models=None,
    filter_cfg: FilterConfig | None = None,
    geom: BeamGeometry | None = None,
    recovery: float = RECOVERY_S,
    workers: int = 1,
) -> list[EvaluationReport]:
    """Run every (scenario, strategy) pair and collect one report per scenario.

    Scenarios may be configs (simulated here) or ready RunLogs. Each scenario
    carries one outage pattern; hn strategies need a model for it. Without
    ``filter_cfg`` the filter is matched to each scenario's IMU model.
    """
    models = resolve_models(models)
    for kind in strategies:
        if kind not in STRATEGY_KINDS:
            raise ConfigurationError(f"unknown strategy {kind!r}")
    logs = [s if isinstance(s, RunLog) else simulate(s) for s in scenarios]

    jobs, keys = [], []
    for i, log_ in enumerate(logs):
        cfg = log_.config
        pattern = _pattern_of(cfg)
        fcfg = filter_cfg or FilterConfig.for_imu(cfg.imu, cfg.imu_rate_hz)
        g = geom or build_beam_geometry(np.radians(cfg.theta_deg if cfg is not None else 20.0))
        for kind in strategies:
            selected = {}
            if kind.startswith("hn") and pattern is not None:
                if pattern not in models:
                    raise ConfigurationError(f"strategy {kind} needs a model for missing beams {pattern.missing}")
                selected = {pattern: models[pattern]}
            jobs.append((log_, FusionStrategy(kind, models=selected), fcfg, g))
            keys.append((i, kind))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_job, jobs))
    else:
        outputs = [_job(j) for j in jobs]
    results = dict(zip(keys, outputs))

    reports = []
    for i, log_ in enumerate(logs):
        cfg = log_.config
        pattern = _pattern_of(cfg)
        t = log_.truth.t
        span = evaluation_span(cfg, t, recovery)
        sel = (t >= span[0] - 1e-9) & (t <= span[1] + 1e-9)
        ordered = [k for k in STRATEGY_KINDS if k in strategies]
        values = {k: vrmse(log_.truth.vel[sel], results[(i, k)].vel[sel]) for k in ordered}
        idx = np.concatenate([[0], log_.dvl.truth_index])
        reports.append(
            EvaluationReport(
                trajectory_id=cfg.name if cfg is not None else f"run-{i}",
                pattern=pattern.label if pattern is not None else "none",
                span=span,
                vrmse=values,
                vrte_vs_baseline=_relative(values, "baseline"),
                vrte_vs_average=_relative(values, "average"),
                traces={k: _trace(log_, results[(i, k)]) for k in ordered},
                truth={"t": t[idx].tolist(), "pos_ne": log_.truth.pos[idx, :2].tolist()},
            )
        )
    reports.sort(key=lambda r: (r.trajectory_id, r.pattern))
    return reports


def report_to_json(reports: Sequence[EvaluationReport], recovery: float = RECOVERY_S) -> dict:
    return {"span_definition": SPAN_NOTE.format(recovery=recovery), "reports": [r.to_dict() for r in reports]}


def save_report(reports: Sequence[EvaluationReport], path, recovery: float = RECOVERY_S) -> None:
    Path(path).write_text(json.dumps(report_to_json(reports, recovery)), encoding="utf-8")


def load_report(path) -> list[EvaluationReport]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return [EvaluationReport.from_dict(r) for r in doc["reports"]]
    except FileNotFoundError as exc:
        raise ConfigurationError(f"missing report {path}") from exc
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"{path} is not an evaluation report: {exc}") from exc


def render_table(reports: Sequence[EvaluationReport], recovery: float = RECOVERY_S) -> str:
    """Plain-text comparison table (one block per trajectory/pattern)."""
    def pct(x):
        return "   -  " if x is None else f"{x:6.1f}"

    lines = [SPAN_NOTE.format(recovery=recovery), ""]
    header = f"{'trajectory':<22} {'pattern':<11} {'strategy':<12} {'VRMSE[m/s]':>10} {'VRTE/base%':>10} {'VRTE/avg%':>10}"
    lines += [header, "-" * len(header)]
    for r in reports:
        for row in r.rows():
            lines.append(
                f"{row['trajectory']:<22} {row['pattern']:<11} {row['strategy']:<12} {row['vrmse']:10.4f} "
                f"{pct(row['vrte_vs_baseline']):>10} {pct(row['vrte_vs_average']):>10}"
            )
    return "\n".join(lines)
