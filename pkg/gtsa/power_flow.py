# Copyright 2026, the gtsa authors, All Rights Reserved
"""Operating-point preparation: load perturbation, redispatch and AC power flow."""
from typing import Optional, Tuple
import logging

import attr
import numpy as np

from gtsa.config import GTSAConfig
from gtsa.grid_model import GridCase, BusKind, build_ybus

_LOG = logging.getLogger(__name__)


class PowerFlowDivergence(RuntimeError):
    pass


class SingularJacobian(RuntimeError):
    pass


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class PowerFlowSolution:
    v_mag: np.ndarray = attr.ib(eq=attr.cmp_using(eq=np.array_equal))
    v_ang: np.ndarray = attr.ib(eq=attr.cmp_using(eq=np.array_equal))
    p_inj: np.ndarray = attr.ib(eq=attr.cmp_using(eq=np.array_equal))
    q_inj: np.ndarray = attr.ib(eq=attr.cmp_using(eq=np.array_equal))
    iterations: int
    max_mismatch: float

    @property
    def voltage(self) -> np.ndarray:
        result: np.ndarray = self.v_mag * np.exp(1j * self.v_ang)
        return result

    @property
    def losses(self) -> float:
        """ Total generation minus total load, i.e. network losses """
        return float(np.sum(self.p_inj))


def draw_load_factors(case: GridCase, rng: np.random.Generator,
                      low: float = GTSAConfig.LOAD_FACTOR_RANGE[0],
                      high: float = GTSAConfig.LOAD_FACTOR_RANGE[1]) -> np.ndarray:
    result: np.ndarray = rng.uniform(low, high, size=len(case.loads))
    return result


def apply_load_factors(case: GridCase, factors: np.ndarray) -> GridCase:
    assert len(factors) == len(case.loads)
    loads = tuple(
        attr.evolve(load, p=load.p * float(factor), q=load.q * float(factor))
        for load, factor in zip(case.loads, factors)
    )
    base_total = sum(load.p for load in case.loads)
    new_total = sum(load.p for load in loads)
    # Proportional redispatch; the slack machine absorbs the residual (losses included)
    ratio = new_total / base_total if base_total != 0 else 1.0
    generators = tuple(attr.evolve(gen, p_set=gen.p_set * ratio) for gen in case.generators)
    return attr.evolve(case, loads=loads, generators=generators)


def scale_and_dispatch(case: GridCase, rng: np.random.Generator,
                       low: float = GTSAConfig.LOAD_FACTOR_RANGE[0],
                       high: float = GTSAConfig.LOAD_FACTOR_RANGE[1]) -> GridCase:
    return apply_load_factors(case, draw_load_factors(case, rng, low, high))


def scheduled_injections(case: GridCase) -> np.ndarray:
    p_load, q_load = case.load_vectors()
    p_gen = np.zeros(case.n_bus)
    for gen in case.generators:
        p_gen[gen.bus] += gen.p_set
    result: np.ndarray = (p_gen - p_load) - 1j * q_load
    return result


def mismatch(case: GridCase, ybus: np.ndarray, v_mag: np.ndarray, v_ang: np.ndarray) -> np.ndarray:
    """ Residuals of the specified quantities: P at pv/pq buses, Q at pq buses.

    Evaluated from Ybus directly, independently of the Jacobian.
    """
    voltage = v_mag * np.exp(1j * v_ang)
    computed = voltage * np.conj(ybus @ voltage)
    spec = scheduled_injections(case)
    delta = computed - spec
    pvpq, pq = _bus_groups(case)
    result: np.ndarray = np.concatenate([delta.real[pvpq], delta.imag[pq]])
    return result


def _bus_groups(case: GridCase) -> Tuple[np.ndarray, np.ndarray]:
    pvpq = np.array([bus.id for bus in case.buses if bus.kind != BusKind.SLACK], dtype=int)
    pq = np.array([bus.id for bus in case.buses if bus.kind == BusKind.PQ], dtype=int)
    return pvpq, pq


def _jacobian(ybus: np.ndarray, voltage: np.ndarray, pvpq: np.ndarray, pq: np.ndarray) -> np.ndarray:
    current = ybus @ voltage
    v_norm = voltage / np.abs(voltage)
    ds_dvm = np.diag(voltage) @ np.conj(ybus @ np.diag(v_norm)) + np.diag(np.conj(current) * v_norm)
    ds_dva = 1j * np.diag(voltage) @ np.conj(np.diag(current) - ybus @ np.diag(voltage))
    j11 = ds_dva.real[np.ix_(pvpq, pvpq)]
    j12 = ds_dvm.real[np.ix_(pvpq, pq)]
    j21 = ds_dva.imag[np.ix_(pq, pvpq)]
    j22 = ds_dvm.imag[np.ix_(pq, pq)]
    result: np.ndarray = np.block([[j11, j12], [j21, j22]])
    return result


def solve_power_flow(case: GridCase,
                     tol: float = GTSAConfig.POWER_FLOW_TOLERANCE,
                     max_iter: int = GTSAConfig.POWER_FLOW_MAX_ITER,
                     ybus: Optional[np.ndarray] = None) -> PowerFlowSolution:
    assert tol > 0
    if ybus is None:
        ybus = build_ybus(case)
    pvpq, pq = _bus_groups(case)
    v_mag = np.ones(case.n_bus)
    for bus in case.buses:
        if bus.voltage_setpoint is not None:
            v_mag[bus.id] = bus.voltage_setpoint
    v_ang = np.zeros(case.n_bus)

    iterations = 0
    while True:
        residual = mismatch(case, ybus, v_mag, v_ang)
        max_mismatch = float(np.max(np.abs(residual))) if residual.size else 0.0
        if not np.isfinite(max_mismatch):
            raise PowerFlowDivergence("power flow diverged to non-finite values")
        if max_mismatch < tol:
            break
        if iterations >= max_iter:
            raise PowerFlowDivergence(
                "power flow did not converge in {} iterations (mismatch {:.3e})".format(max_iter, max_mismatch))
        jacobian = _jacobian(ybus, v_mag * np.exp(1j * v_ang), pvpq, pq)
        try:
            step = np.linalg.solve(jacobian, -residual)
        except np.linalg.LinAlgError as e:
            raise SingularJacobian("singular power flow Jacobian at iteration {}".format(iterations)) from e
        v_ang[pvpq] += step[:len(pvpq)]
        v_mag[pq] += step[len(pvpq):]
        iterations += 1

    voltage = v_mag * np.exp(1j * v_ang)
    injection = voltage * np.conj(ybus @ voltage)
    _LOG.debug("Power flow converged in %d iterations, mismatch %.3e", iterations, max_mismatch)
    return PowerFlowSolution(
        v_mag=v_mag,
        v_ang=v_ang,
        p_inj=injection.real,
        q_inj=injection.imag,
        iterations=iterations,
        max_mismatch=max_mismatch,
    )


def generator_outputs(case: GridCase, solution: PowerFlowSolution) -> np.ndarray:
    """ Complex power of every machine: bus injection plus local load.

    Machines sharing a bus split P by schedule (slack: evenly) and Q evenly.
    """
    p_load, q_load = case.load_vectors()
    p_bus = solution.p_inj + p_load
    q_bus = solution.q_inj + q_load
    result = np.zeros(len(case.generators), dtype=complex)
    for bus in set(gen.bus for gen in case.generators):
        members = [i for i, gen in enumerate(case.generators) if gen.bus == bus]
        scheduled = np.array([case.generators[i].p_set for i in members])
        if case.buses[bus].kind == BusKind.SLACK or scheduled.sum() == 0:
            p_share = np.full(len(members), p_bus[bus] / len(members))
        else:
            p_share = p_bus[bus] * scheduled / scheduled.sum()
        for member, p in zip(members, p_share):
            result[member] = p + 1j * q_bus[bus] / len(members)
    return result
