# Copyright 2026, the gtsa authors, All Rights Reserved
"""Online stage: classify from the clearing-instant snapshot, fall back to full TDS when unsure."""
from typing import List, Optional, Sequence, Tuple
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path
import logging
import math
import time

import attr
import numpy as np

from gtsa.config import GTSAConfig
from gtsa.gin_network import TsaModel, classify
from gtsa.graph_dataset import GraphSample, graph_from_snapshot
from gtsa.grid_model import GridCase
from gtsa.power_flow import apply_load_factors, solve_power_flow
from gtsa.scenario_gen import ScenarioSpec, draw_assessable_scenario, run_scenario
from gtsa.tds_engine import assess_trajectory, clearing_snapshot, prepare_dynamics, simulate
from gtsa.utils import derive_seed, write_csv

_LOG = logging.getLogger(__name__)


class DecisionSource(Enum):
    MODEL = 'model'
    TDS_FALLBACK = 'tds_fallback'


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class AssessmentOutcome:
    label: int
    source: DecisionSource
    margin: float
    elapsed: float


def decide(s0: float, s1: float, k: float) -> Tuple[Optional[int], float]:
    """ (label, margin); the label is None when |S0 - S1| < k and the caller must simulate """
    margin = abs(s0 - s1)
    if margin >= k:
        return (1 if s1 >= s0 else 0), margin
    return None, margin


def assess_online(model: TsaModel, case: GridCase, scenario: ScenarioSpec, k: float, *,
                  horizon: float = GTSAConfig.TDS_HORIZON,
                  dt: float = GTSAConfig.TDS_STEP) -> AssessmentOutcome:
    assert k >= 0
    start = time.perf_counter()
    scenario_case = apply_load_factors(case, np.array(scenario.load_factors))
    pf = solve_power_flow(scenario_case)
    dynamics = prepare_dynamics(scenario_case, pf, scenario.fault)
    sample = graph_from_snapshot(scenario_case, clearing_snapshot(dynamics, scenario.fault.clear_time, dt))
    s0, s1 = classify(model, sample)
    label, margin = decide(s0, s1, k)
    source = DecisionSource.MODEL
    if label is None:
        source = DecisionSource.TDS_FALLBACK
        label = assess_trajectory(simulate(dynamics, scenario.fault.clear_time, horizon, dt)).label
    return AssessmentOutcome(label=label, source=source, margin=margin, elapsed=time.perf_counter() - start)


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class AssessedScenario:
    scenario_id: int
    outcome: AssessmentOutcome
    truth: int
    baseline_elapsed: float


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if values else math.nan


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class BatchTimingReport:
    scenarios: Tuple[AssessedScenario, ...]

    @property
    def n(self) -> int:
        return len(self.scenarios)

    def _elapsed(self, source: Optional[DecisionSource]) -> List[float]:
        return [s.outcome.elapsed for s in self.scenarios if source is None or s.outcome.source == source]

    @property
    def fallback_fraction(self) -> float:
        return len(self._elapsed(DecisionSource.TDS_FALLBACK)) / self.n

    @property
    def mean_model_time(self) -> float:
        return _mean(self._elapsed(DecisionSource.MODEL))

    @property
    def mean_tds_time(self) -> float:
        return _mean(self._elapsed(DecisionSource.TDS_FALLBACK))

    @property
    def mean_overall_time(self) -> float:
        return _mean(self._elapsed(None))

    @property
    def mean_baseline_time(self) -> float:
        return _mean([s.baseline_elapsed for s in self.scenarios])

    @property
    def accuracy(self) -> float:
        return sum(1 for s in self.scenarios if s.outcome.label == s.truth) / self.n

    @property
    def speedup(self) -> float:
        return self.mean_baseline_time / self.mean_overall_time


def _assess_with_baseline(model: TsaModel, case: GridCase, k: float, horizon: float, dt: float,
                          item: Tuple[int, ScenarioSpec]) -> AssessedScenario:
    scenario_id, scenario = item
    outcome = assess_online(model, case, scenario, k, horizon=horizon, dt=dt)
    start = time.perf_counter()
    _traj, verdict, _sample = run_scenario(case, scenario, horizon=horizon, dt=dt)
    baseline_elapsed = time.perf_counter() - start
    return AssessedScenario(scenario_id=scenario_id, outcome=outcome, truth=verdict.label,
                            baseline_elapsed=baseline_elapsed)


def batch_assess(model: TsaModel, case: GridCase, scenarios: Sequence[Tuple[int, ScenarioSpec]], k: float, *,
                 threads: int = GTSAConfig.WORKERS,
                 horizon: float = GTSAConfig.TDS_HORIZON,
                 dt: float = GTSAConfig.TDS_STEP) -> BatchTimingReport:
    """ Gated assessment of every scenario, each paired with a pure-TDS ground truth run """
    assert scenarios

    def worker(item: Tuple[int, ScenarioSpec]) -> AssessedScenario:
        return _assess_with_baseline(model, case, k, horizon, dt, item)

    if threads <= 1:
        assessed = [worker(item) for item in scenarios]
    else:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            assessed = list(executor.map(worker, scenarios))
    report = BatchTimingReport(scenarios=tuple(assessed))
    _LOG.info("Assessed %d scenarios: %.1f%% fallback, accuracy %.4f",
              report.n, 100 * report.fallback_fraction, report.accuracy)
    return report


def scenarios_from_samples(samples: Sequence[GraphSample]) -> List[Tuple[int, ScenarioSpec]]:
    return [(index, ScenarioSpec.from_meta(sample.meta)) for index, sample in enumerate(samples)]


def scenarios_from_seed(case: GridCase, seed: int, count: int) -> List[Tuple[int, ScenarioSpec]]:
    assert count >= 1
    return [(index, draw_assessable_scenario(case, derive_seed(seed, index))) for index in range(count)]


def write_assessment_csv(report: BatchTimingReport, path: Path) -> None:
    write_csv(
        path,
        ('scenario_id', 'label', 'source', 'margin', 'elapsed'),
        (
            (s.scenario_id, s.outcome.label, s.outcome.source.value, s.outcome.margin, s.outcome.elapsed)
            for s in report.scenarios
        ),
    )
