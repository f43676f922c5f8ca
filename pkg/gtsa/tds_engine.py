# Copyright 2026, the gtsa authors, All Rights Reserved
"""Classical multi-machine time-domain simulation through a three-phase fault.

Machines are constant EMFs behind transient reactance, loads are constant
admittances, and the network is Kron-reduced onto the machine internal nodes
(plus the infinite bus, when the case has one) for each of the pre-fault,
fault-on and post-fault topologies.
"""
from typing import Optional, Tuple
from enum import Enum
from pathlib import Path
import logging
import math

import attr
import numpy as np

from gtsa.config import GTSAConfig
from gtsa.grid_model import GridCase, build_ybus, is_islanding
from gtsa.power_flow import PowerFlowSolution, generator_outputs
from gtsa.utils import write_csv

_LOG = logging.getLogger(__name__)

_ARRAY_EQ = attr.cmp_using(eq=np.array_equal)


class IslandingError(RuntimeError):
    pass


class FaultEnd(Enum):
    FROM = 'from'
    TO = 'to'


def _clear_time_in_range(_instance: object, _attribute: 'attr.Attribute[float]', value: float) -> None:
    low, high = GTSAConfig.CLEAR_TIME_RANGE
    if not low - 1e-12 <= value <= high + 1e-12:
        raise ValueError("clear_time {} outside [{}, {}]".format(value, low, high))


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class FaultSpec:
    line_index: int
    faulted_end: FaultEnd
    clear_time: float = attr.ib(validator=_clear_time_in_range)

    def faulted_bus(self, case: GridCase) -> int:
        line = case.lines[self.line_index]
        return line.from_bus if self.faulted_end == FaultEnd.FROM else line.to_bus


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class ReducedNetwork:
    y_gen: np.ndarray = attr.ib(eq=_ARRAY_EQ)
    # Coupling of each machine to the infinite bus; zeros without one
    y_source: np.ndarray = attr.ib(eq=_ARRAY_EQ)
    v_source: complex = 0j

    def electrical_power(self, e_mag: np.ndarray, delta: np.ndarray) -> np.ndarray:
        emf = e_mag * np.exp(1j * delta)
        current = self.y_gen @ emf + self.y_source * self.v_source
        result: np.ndarray = (emf * np.conj(current)).real
        return result


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class _Recovery:
    eliminated: np.ndarray = attr.ib(eq=_ARRAY_EQ)
    matrix: np.ndarray = attr.ib(eq=_ARRAY_EQ)
    network_ybus: np.ndarray = attr.ib(eq=_ARRAY_EQ)


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class DynamicsModel:
    # pylint: disable=too-many-instance-attributes
    e_mag: np.ndarray = attr.ib(eq=_ARRAY_EQ)
    delta0: np.ndarray = attr.ib(eq=_ARRAY_EQ)
    # Swing coefficients: m = 2H / omega_s, d = D / omega_s, omega in rad/s
    m: np.ndarray = attr.ib(eq=_ARRAY_EQ)
    d: np.ndarray = attr.ib(eq=_ARRAY_EQ)
    p_mech: np.ndarray = attr.ib(eq=_ARRAY_EQ)
    prefault: ReducedNetwork
    fault: ReducedNetwork
    postfault: ReducedNetwork
    # Unreduced (pre, fault-on, post) matrices with loads as admittances.
    # The bolted fault is imposed as V=0 at fault_bus during reduction,
    # so the fault-on matrix equals the pre-fault one.
    full_ybus_variants: Tuple[np.ndarray, np.ndarray, np.ndarray] = attr.ib(eq=False)
    gen_bus: np.ndarray = attr.ib(eq=_ARRAY_EQ)
    source_bus: Optional[int]
    fault_bus: Optional[int]
    recovery: _Recovery

    @property
    def n_gen(self) -> int:
        return len(self.e_mag)

    @property
    def y_red_prefault(self) -> np.ndarray:
        return self.prefault.y_gen

    @property
    def y_red_fault(self) -> np.ndarray:
        return self.fault.y_gen

    @property
    def y_red_postfault(self) -> np.ndarray:
        return self.postfault.y_gen

    @property
    def has_source(self) -> bool:
        return self.source_bus is not None

    def snapshot_injections(self, delta: np.ndarray) -> np.ndarray:
        """ Net (P, Q) at every bus, on the post-fault network """
        known = self.e_mag * np.exp(1j * delta)
        if self.source_bus is not None:
            known = np.append(known, self.postfault.v_source)
        voltage = np.zeros(self.recovery.network_ybus.shape[0], dtype=complex)
        voltage[self.recovery.eliminated] = self.recovery.matrix @ known
        if self.source_bus is not None:
            voltage[self.source_bus] = self.postfault.v_source
        power = voltage * np.conj(self.recovery.network_ybus @ voltage)
        result: np.ndarray = np.column_stack([power.real, power.imag])
        return result


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class Trajectory:
    times: np.ndarray = attr.ib(eq=_ARRAY_EQ)
    delta: np.ndarray = attr.ib(eq=_ARRAY_EQ)
    omega: np.ndarray = attr.ib(eq=_ARRAY_EQ)
    snapshot_injections: np.ndarray = attr.ib(eq=_ARRAY_EQ)
    # The infinite bus takes part in angle separation as a fixed 0 rad machine
    has_source: bool = False
    diverged: bool = False

    def separation_deg(self) -> np.ndarray:
        angles = self.delta
        if self.has_source:
            angles = np.column_stack([angles, np.zeros(len(angles))])
        result: np.ndarray = np.degrees(angles.max(axis=1) - angles.min(axis=1))
        return result


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class StabilityVerdict:
    tsi: float
    max_sep_deg: float
    label: int

    @classmethod
    def from_separation(cls, max_sep_deg: float) -> 'StabilityVerdict':
        if not math.isfinite(max_sep_deg) or max_sep_deg > GTSAConfig.SEPARATION_SATURATION:
            max_sep_deg = GTSAConfig.SEPARATION_SATURATION
        tsi = (360.0 - max_sep_deg) / (360.0 + max_sep_deg) * 100.0
        return cls(tsi=tsi, max_sep_deg=max_sep_deg, label=1 if tsi > 0 else 0)


def _reduce(y_full: np.ndarray, gen_bus: np.ndarray, xd_prime: np.ndarray,
            source_bus: Optional[int], fault_bus: Optional[int],
            v_source: complex) -> Tuple[ReducedNetwork, _Recovery]:
    n = y_full.shape[0]
    g = len(gen_bus)
    y_internal = 1.0 / (1j * xd_prime)
    extended = np.zeros((n + g, n + g), dtype=complex)
    extended[:n, :n] = y_full
    for k, bus in enumerate(gen_bus):
        extended[bus, bus] += y_internal[k]
        extended[n + k, n + k] += y_internal[k]
        extended[bus, n + k] -= y_internal[k]
        extended[n + k, bus] -= y_internal[k]

    kept = [n + k for k in range(g)]
    if source_bus is not None:
        kept.append(source_bus)
    eliminated = np.array([b for b in range(n) if b not in (source_bus, fault_bus)], dtype=int)
    y_ke = extended[np.ix_(kept, eliminated)]
    y_ee = extended[np.ix_(eliminated, eliminated)]
    y_ek = extended[np.ix_(eliminated, kept)]
    try:
        recovery = -np.linalg.solve(y_ee, y_ek)
    except np.linalg.LinAlgError as e:
        raise IslandingError("singular reduction block: part of the network is isolated") from e
    reduced = extended[np.ix_(kept, kept)] + y_ke @ recovery
    network = ReducedNetwork(
        y_gen=reduced[:g, :g],
        y_source=reduced[:g, g] if source_bus is not None else np.zeros(g, dtype=complex),
        v_source=0j if source_bus is None or source_bus == fault_bus else v_source,
    )
    return network, _Recovery(eliminated=eliminated, matrix=recovery, network_ybus=y_full)


def prepare_dynamics(case: GridCase, pf: PowerFlowSolution, fault: Optional[FaultSpec]) -> DynamicsModel:
    # pylint: disable=too-many-locals
    if fault is not None and is_islanding(case, fault.line_index):
        raise IslandingError("tripping line {} islands the network".format(fault.line_index))
    gen_bus = np.array([gen.bus for gen in case.generators], dtype=int)
    xd_prime = np.array([gen.xd_prime for gen in case.generators])
    voltage = pf.voltage
    terminal = voltage[gen_bus]
    s_gen = generator_outputs(case, pf)
    emf = terminal + 1j * xd_prime * np.conj(s_gen / terminal)

    p_load, q_load = case.load_vectors()
    y_load = (p_load - 1j * q_load) / pf.v_mag ** 2
    network_pre = build_ybus(case)
    network_post = build_ybus(case, skip_line=fault.line_index) if fault is not None else network_pre
    full_pre = network_pre + np.diag(y_load)
    full_post = network_post + np.diag(y_load)

    source_bus = case.source_bus
    v_source = complex(voltage[source_bus]) if source_bus is not None else 0j
    fault_bus = fault.faulted_bus(case) if fault is not None else None

    prefault, _ = _reduce(full_pre, gen_bus, xd_prime, source_bus, None, v_source)
    if fault is not None:
        faulted, _ = _reduce(full_pre, gen_bus, xd_prime, source_bus, fault_bus, v_source)
        postfault, post_recovery = _reduce(full_post, gen_bus, xd_prime, source_bus, None, v_source)
    else:
        faulted = prefault
        postfault, post_recovery = _reduce(full_post, gen_bus, xd_prime, source_bus, None, v_source)
    post_recovery = attr.evolve(post_recovery, network_ybus=network_post)

    omega_s = 2 * math.pi * GTSAConfig.NOMINAL_FREQUENCY
    e_mag = np.abs(emf)
    delta0 = np.angle(emf)
    return DynamicsModel(
        e_mag=e_mag,
        delta0=delta0,
        m=np.array([2.0 * gen.inertia_h / omega_s for gen in case.generators]),
        d=np.array([gen.damping_d / omega_s for gen in case.generators]),
        p_mech=prefault.electrical_power(e_mag, delta0),
        prefault=prefault,
        fault=faulted,
        postfault=postfault,
        full_ybus_variants=(full_pre, full_pre, full_post),
        gen_bus=gen_bus,
        source_bus=source_bus,
        fault_bus=fault_bus,
        recovery=post_recovery,
    )


_State = Tuple[np.ndarray, np.ndarray]


def _rk4_step(model: DynamicsModel, network: ReducedNetwork, state: _State, h: float) -> _State:
    def derivative(delta: np.ndarray, omega: np.ndarray) -> _State:
        p_e = network.electrical_power(model.e_mag, delta)
        return omega, (model.p_mech - p_e - model.d * omega) / model.m

    delta, omega = state
    k1d, k1w = derivative(delta, omega)
    k2d, k2w = derivative(delta + 0.5 * h * k1d, omega + 0.5 * h * k1w)
    k3d, k3w = derivative(delta + 0.5 * h * k2d, omega + 0.5 * h * k2w)
    k4d, k4w = derivative(delta + h * k3d, omega + h * k3w)
    return (
        delta + h / 6.0 * (k1d + 2 * k2d + 2 * k3d + k4d),
        omega + h / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w),
    )


def _max_separation_deg(model: DynamicsModel, delta: np.ndarray) -> float:
    high = float(delta.max())
    low = float(delta.min())
    if model.has_source:
        high = max(high, 0.0)
        low = min(low, 0.0)
    return math.degrees(high - low)


@attr.s(slots=True, auto_attribs=True)
class _Integrator:
    model: DynamicsModel
    clear_time: float
    dt: float
    state: _State = attr.ib(init=False)
    snapshot: Optional[np.ndarray] = attr.ib(init=False, default=None)

    def __attrs_post_init__(self) -> None:
        self.state = (self.model.delta0.copy(), np.zeros(self.model.n_gen))
        if self.clear_time <= 0:
            self.snapshot = self.model.snapshot_injections(self.state[0])

    def advance(self, step_index: int) -> None:
        """ Integrate one grid step, switching topology exactly at clear_time """
        eps = 1e-9 * self.dt
        t0 = step_index * self.dt
        t1 = t0 + self.dt
        if self.snapshot is None and t1 >= self.clear_time - eps:
            h_fault = self.clear_time - t0
            if h_fault > eps:
                self.state = _rk4_step(self.model, self.model.fault, self.state, h_fault)
            self.snapshot = self.model.snapshot_injections(self.state[0])
            h_post = t1 - self.clear_time
            if h_post > eps:
                self.state = _rk4_step(self.model, self.model.postfault, self.state, h_post)
        else:
            network = self.model.fault if self.snapshot is None else self.model.postfault
            self.state = _rk4_step(self.model, network, self.state, self.dt)

    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.state[0])) and np.all(np.isfinite(self.state[1])))


def simulate(model: DynamicsModel,
             clear_time: float,
             horizon: float = GTSAConfig.TDS_HORIZON,
             dt: float = GTSAConfig.TDS_STEP,
             *,
             early_exit: bool = False,
             initial_state: Optional[_State] = None) -> Trajectory:
    assert 0 <= clear_time < horizon and dt > 0
    n_steps = int(round(horizon / dt))
    integrator = _Integrator(model, clear_time, dt)
    if initial_state is not None:
        integrator.state = (np.array(initial_state[0], dtype=float), np.array(initial_state[1], dtype=float))
        if clear_time <= 0:
            integrator.snapshot = model.snapshot_injections(integrator.state[0])
    deltas = [integrator.state[0]]
    omegas = [integrator.state[1]]
    diverged = False
    with np.errstate(over='ignore', invalid='ignore'):
        for step_index in range(n_steps):
            previous = integrator.state
            integrator.advance(step_index)
            if not integrator.finite():
                diverged = True
                if integrator.snapshot is None or not np.all(np.isfinite(integrator.snapshot)):
                    integrator.snapshot = model.snapshot_injections(previous[0])
                break
            deltas.append(integrator.state[0])
            omegas.append(integrator.state[1])
            if early_exit and integrator.snapshot is not None \
                    and _max_separation_deg(model, integrator.state[0]) > 360.0:
                break
    assert integrator.snapshot is not None
    delta = np.array(deltas)
    _LOG.debug("Simulated %d steps (diverged=%s)", len(delta) - 1, diverged)
    return Trajectory(
        times=np.arange(len(delta)) * dt,
        delta=delta,
        omega=np.array(omegas),
        snapshot_injections=integrator.snapshot,
        has_source=model.has_source,
        diverged=diverged,
    )


def clearing_snapshot(model: DynamicsModel, clear_time: float, dt: float = GTSAConfig.TDS_STEP) -> np.ndarray:
    """ Integrate only through the fault-on period and return the bus injections """
    integrator = _Integrator(model, clear_time, dt)
    step_index = 0
    while integrator.snapshot is None:
        integrator.advance(step_index)
        step_index += 1
    return integrator.snapshot


def assess_trajectory(traj: Trajectory) -> StabilityVerdict:
    assert len(traj.times) >= 2
    if traj.diverged:
        return StabilityVerdict.from_separation(math.inf)
    return StabilityVerdict.from_separation(float(np.max(traj.separation_deg())))


def energy(model: DynamicsModel, delta: np.ndarray, omega: np.ndarray,
           network: Optional[ReducedNetwork] = None) -> float:
    """ Kinetic plus potential energy; conserved when transfer conductances vanish and D = 0 """
    if network is None:
        network = model.postfault
    conductance = network.y_gen.real
    susceptance = network.y_gen.imag
    e_mag = model.e_mag
    kinetic = 0.5 * float(np.sum(model.m * omega ** 2))
    potential = -float(np.sum((model.p_mech - e_mag ** 2 * np.diag(conductance)) * delta))
    upper = np.triu_indices(model.n_gen, k=1)
    spread = delta[:, None] - delta[None, :]
    potential -= float(np.sum((np.outer(e_mag, e_mag) * susceptance * np.cos(spread))[upper]))
    if model.has_source:
        coupling = network.y_source * network.v_source
        potential -= float(np.sum(e_mag * np.abs(coupling) * np.cos(delta - np.angle(coupling) + math.pi / 2)))
    return kinetic + potential


def critical_clearing_time(p_mech: float, pmax_pre: float, pmax_post: float,
                           inertia_h: float,
                           frequency: float = GTSAConfig.NOMINAL_FREQUENCY) -> Tuple[float, float]:
    """ Equal-area critical clearing (angle, time) of a SMIB with zero fault-on transfer """
    delta0 = math.asin(p_mech / pmax_pre)
    delta_max = math.pi - math.asin(p_mech / pmax_post)
    cos_critical = (p_mech * (delta_max - delta0) + pmax_post * math.cos(delta_max)) / pmax_post
    delta_critical = math.acos(cos_critical)
    omega_s = 2 * math.pi * frequency
    return delta_critical, math.sqrt(4 * inertia_h * (delta_critical - delta0) / (omega_s * p_mech))


def write_trajectory_csv(traj: Trajectory, path: Path) -> None:
    g = traj.delta.shape[1]
    header = ['t'] + ['delta_{}'.format(i + 1) for i in range(g)] + ['omega_{}'.format(i + 1) for i in range(g)]
    rows = (
        [t] + list(delta) + list(omega)
        for t, delta, omega in zip(traj.times, traj.delta, traj.omega)
    )
    write_csv(path, header, rows)


