# Copyright 2026, the gtsa authors, All Rights Reserved
"""Dataset construction: perturb loads, redispatch, fault, simulate, label."""
from typing import Iterator, List, Optional, Tuple
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
import logging

import attr
import numpy as np

from gtsa.config import GTSAConfig
from gtsa.grid_model import GridCase, is_islanding
from gtsa.graph_dataset import GraphSample, SampleMeta, build_graph, write_dataset
from gtsa.power_flow import (
    PowerFlowDivergence, SingularJacobian, apply_load_factors, draw_load_factors, solve_power_flow
)
from gtsa.tds_engine import (
    FaultEnd, FaultSpec, IslandingError, StabilityVerdict, Trajectory,
    assess_trajectory, prepare_dynamics, simulate,
)
from gtsa.utils import derive_seed

_LOG = logging.getLogger(__name__)


class RetryBudgetExhausted(RuntimeError):
    pass


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class ScenarioSpec:
    load_factors: Tuple[float, ...]
    fault: FaultSpec

    @classmethod
    def from_meta(cls, meta: SampleMeta) -> 'ScenarioSpec':
        if meta.line_index is None or meta.faulted_end is None or meta.clear_time is None:
            raise ValueError("sample carries no scenario provenance")
        return cls(
            load_factors=meta.load_factors,
            fault=FaultSpec(
                line_index=meta.line_index,
                faulted_end=FaultEnd(meta.faulted_end),
                clear_time=meta.clear_time,
            ),
        )


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class ScenarioRecord:
    seed: int
    spec: ScenarioSpec
    verdict: StabilityVerdict
    sample: GraphSample

    @property
    def fault(self) -> FaultSpec:
        return self.spec.fault

    @property
    def load_factors(self) -> Tuple[float, ...]:
        return self.spec.load_factors


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class DatasetSummary:
    path: Path
    samples: int
    stable: int
    unstable: int


def draw_scenario(case: GridCase, rng: np.random.Generator) -> ScenarioSpec:
    factors = draw_load_factors(case, rng)
    line_index = int(rng.integers(len(case.lines)))
    faulted_end = FaultEnd.FROM if rng.integers(2) == 0 else FaultEnd.TO
    clear_time = float(rng.uniform(*GTSAConfig.CLEAR_TIME_RANGE))
    return ScenarioSpec(
        load_factors=tuple(float(f) for f in factors),
        fault=FaultSpec(line_index=line_index, faulted_end=faulted_end, clear_time=clear_time),
    )


def run_scenario(case: GridCase, spec: ScenarioSpec, *,
                 seed: Optional[int] = None,
                 horizon: float = GTSAConfig.TDS_HORIZON,
                 dt: float = GTSAConfig.TDS_STEP,
                 early_exit: bool = False) -> Tuple[Trajectory, StabilityVerdict, GraphSample]:
    scenario_case = apply_load_factors(case, np.array(spec.load_factors))
    pf = solve_power_flow(scenario_case)
    model = prepare_dynamics(scenario_case, pf, spec.fault)
    traj = simulate(model, spec.fault.clear_time, horizon, dt, early_exit=early_exit)
    verdict = assess_trajectory(traj)
    meta = SampleMeta(
        seed=seed,
        line_index=spec.fault.line_index,
        faulted_end=spec.fault.faulted_end.value,
        clear_time=spec.fault.clear_time,
        load_factors=spec.load_factors,
        tsi=verdict.tsi,
        max_sep_deg=verdict.max_sep_deg,
    )
    return traj, verdict, build_graph(scenario_case, traj, verdict, meta)


def sample_scenario(case: GridCase, seed: int, *,
                    retries: int = GTSAConfig.SCENARIO_RETRIES,
                    horizon: float = GTSAConfig.TDS_HORIZON,
                    dt: float = GTSAConfig.TDS_STEP,
                    early_exit: bool = True) -> ScenarioRecord:
    """ Draw and simulate one scenario; failed power flows and islanding faults are redrawn """
    rng = np.random.default_rng(seed)
    for attempt in range(retries):
        spec = draw_scenario(case, rng)
        try:
            _traj, verdict, sample = run_scenario(
                case, spec, seed=seed, horizon=horizon, dt=dt, early_exit=early_exit)
        except (PowerFlowDivergence, SingularJacobian, IslandingError) as e:
            _LOG.debug("Seed %d attempt %d redrawn: %s", seed, attempt, e)
            continue
        return ScenarioRecord(seed=seed, spec=spec, verdict=verdict, sample=sample)
    raise RetryBudgetExhausted("no usable scenario for seed {} after {} attempts".format(seed, retries))


def draw_assessable_scenario(case: GridCase, seed: int, *,
                             retries: int = GTSAConfig.SCENARIO_RETRIES) -> ScenarioSpec:
    """ A scenario whose power flow converges and whose fault does not island, without simulating it """
    rng = np.random.default_rng(seed)
    for _attempt in range(retries):
        spec = draw_scenario(case, rng)
        if is_islanding(case, spec.fault.line_index):
            continue
        try:
            solve_power_flow(apply_load_factors(case, np.array(spec.load_factors)))
        except (PowerFlowDivergence, SingularJacobian):
            continue
        return spec
    raise RetryBudgetExhausted("no usable scenario for seed {} after {} attempts".format(seed, retries))


def rebuild_scenario(case: GridCase, meta: SampleMeta, *,
                     horizon: float = GTSAConfig.TDS_HORIZON,
                     dt: float = GTSAConfig.TDS_STEP) -> ScenarioRecord:
    spec = ScenarioSpec.from_meta(meta)
    _traj, verdict, sample = run_scenario(case, spec, seed=meta.seed, horizon=horizon, dt=dt)
    return ScenarioRecord(seed=meta.seed if meta.seed is not None else -1, spec=spec, verdict=verdict, sample=sample)


def _sample_for_pool(case: GridCase, horizon: float, dt: float, seed: int) -> GraphSample:
    return sample_scenario(case, seed, horizon=horizon, dt=dt).sample


def iterate_samples(case: GridCase, n_samples: int, seed: int, *,
                    threads: int = GTSAConfig.WORKERS,
                    horizon: float = GTSAConfig.TDS_HORIZON,
                    dt: float = GTSAConfig.TDS_STEP) -> Iterator[GraphSample]:
    """ Samples in index order; record i is drawn from derive_seed(seed, i) """
    seeds = [derive_seed(seed, index) for index in range(n_samples)]
    worker = partial(_sample_for_pool, case, horizon, dt)
    if threads <= 1:
        yield from map(worker, seeds)
        return
    with ProcessPoolExecutor(max_workers=threads) as executor:
        yield from executor.map(worker, seeds, chunksize=max(1, n_samples // (threads * 8)))


def generate_dataset(case: GridCase, n_samples: int, seed: int, out: Path, *,
                     threads: int = GTSAConfig.WORKERS,
                     horizon: float = GTSAConfig.TDS_HORIZON,
                     dt: float = GTSAConfig.TDS_STEP) -> DatasetSummary:
    assert n_samples >= 1
    samples: List[GraphSample] = []
    for index, sample in enumerate(iterate_samples(case, n_samples, seed, threads=threads, horizon=horizon, dt=dt)):
        samples.append(sample)
        if (index + 1) % 100 == 0:
            _LOG.info("Generated %d/%d samples", index + 1, n_samples)
    write_dataset(samples, out)
    stable = sum(1 for sample in samples if sample.label == 1)
    return DatasetSummary(path=out, samples=len(samples), stable=stable, unstable=len(samples) - stable)
