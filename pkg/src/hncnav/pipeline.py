"""End-to-end helpers: corpus simulation, regressor training, test evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .evaluation import EvaluationReport, evaluate_suite
from .regressor import (
    THREE_MISSING,
    TWO_MISSING,
    BeamDataset,
    MissingPattern,
    RegressorModel,
    TrainConfig,
    TrainResult,
    average_batch,
    build_dataset,
    predict_batch,
    train,
)
from .sim import RunLog, outage_scenario, simulate, training_corpus, validation_corpus

log = logging.getLogger(__name__)

TEST_OUTAGE_START = 240.0


def dataset_from_logs(logs: Sequence[RunLog], pattern: MissingPattern) -> BeamDataset:
    """Windowed samples from every fully measured stretch of the DVL logs."""
    N = pattern.history
    data = BeamDataset(np.zeros((0, N, 4)), np.zeros((0, 4 - pattern.k)), np.zeros((0, pattern.k)))
    for run in logs:
        full = run.dvl.valid.all(axis=1)
        edges = np.flatnonzero(np.diff(np.concatenate([[0], full.astype(int), [0]])))
        for a, b in zip(edges[::2], edges[1::2]):
            data = data.concat(build_dataset(run.dvl.beams[a:b], pattern))
    return data


@dataclass
class TrainedPattern:
    result: TrainResult
    val_mse: float
    val_mse_average: float

    @property
    def model(self) -> RegressorModel:
        return self.result.model


def train_pattern(
    train_logs: Sequence[RunLog],
    pattern: MissingPattern,
    cfg: TrainConfig = TrainConfig(),
    val_logs: Sequence[RunLog] = (),
    seed: int = 0,
) -> TrainedPattern:
    data = dataset_from_logs(train_logs, pattern)
    result = train(RegressorModel.initialize(pattern, seed=seed), data, cfg)
    val_mse = val_avg = float("nan")
    if val_logs:
        val = dataset_from_logs(val_logs, pattern)
        val_mse = float(np.mean((predict_batch(result.model, val) - val.target) ** 2))
        val_avg = float(np.mean((average_batch(pattern, val) - val.target) ** 2))
    log.info("pattern %s: loss %.5f -> %.5f, val mse %.5f (average %.5f)",
             pattern.missing, result.losses[0], result.losses[-1], val_mse, val_avg)
    return TrainedPattern(result, val_mse, val_avg)


@dataclass
class PipelineResult:
    trained: dict[MissingPattern, TrainedPattern]
    reports: list[EvaluationReport]

    @property
    def models(self) -> dict[MissingPattern, RegressorModel]:
        return {p: t.model for p, t in self.trained.items()}


def run_default_pipeline(
    train_cfg: TrainConfig = TrainConfig(),
    corpus_seed: int = 0,
    test_seed: int = 0,
    outage_start: float = TEST_OUTAGE_START,
) -> PipelineResult:
    """Simulate the default corpus, train both pattern models, evaluate the test mission."""
    train_logs = [simulate(c) for c in training_corpus(corpus_seed)]
    val_logs = [simulate(c) for c in validation_corpus()]
    trained = {
        p: train_pattern(train_logs, p, train_cfg, val_logs, seed=corpus_seed) for p in (TWO_MISSING, THREE_MISSING)
    }
    scenarios = [outage_scenario(p, start=outage_start, seed=test_seed) for p in (TWO_MISSING, THREE_MISSING)]
    reports = evaluate_suite(scenarios, models={p: t.model for p, t in trained.items()})
    return PipelineResult(trained, reports)
