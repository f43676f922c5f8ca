# Copyright 2026, the gtsa authors, All Rights Reserved
"""Static network description, case-file IO and the bus admittance matrix."""
from typing import Any, Dict, List, Optional, Sequence, Tuple
from enum import Enum
from pathlib import Path
import math

import attr
import numpy as np
import yaml
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from gtsa.config import GTSAConfig


class CaseParseError(ValueError):
    def __init__(self, path: Path, line: Optional[int], message: str):
        location = str(path) if line is None else '{}:{}'.format(path, line)
        super().__init__('{}: {}'.format(location, message))
        self.line = line


class CaseValidationError(ValueError):
    pass


class BusKind(Enum):
    SLACK = 'slack'
    PV = 'pv'
    PQ = 'pq'


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class Bus:
    # Internal, contiguous index. `number` is the id used in the case file.
    id: int
    number: int
    kind: BusKind
    voltage_setpoint: Optional[float] = None


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class Line:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_shunt: float = 0.0

    @property
    def admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class Generator:
    bus: int
    p_set: float
    inertia_h: float
    damping_d: float
    xd_prime: float


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class Load:
    bus: int
    p: float
    q: float


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class GridCase:
    base_mva: float
    buses: Tuple[Bus, ...]
    lines: Tuple[Line, ...]
    generators: Tuple[Generator, ...]
    loads: Tuple[Load, ...]

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def slack_bus(self) -> int:
        return next(bus.id for bus in self.buses if bus.kind == BusKind.SLACK)

    @property
    def source_bus(self) -> Optional[int]:
        """ A slack bus without a machine is an infinite bus in the dynamics """
        slack = self.slack_bus
        if any(gen.bus == slack for gen in self.generators):
            return None
        return slack

    def load_vectors(self) -> Tuple[np.ndarray, np.ndarray]:
        p = np.zeros(self.n_bus)
        q = np.zeros(self.n_bus)
        for load in self.loads:
            p[load.bus] += load.p
            q[load.bus] += load.q
        return p, q

    def validate(self) -> 'GridCase':
        # pylint: disable=too-many-branches
        ids = [bus.id for bus in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseValidationError("bus ids must be unique")
        if sorted(ids) != list(range(len(ids))):
            raise CaseValidationError("bus ids must be contiguous after renumbering")
        if sum(1 for bus in self.buses if bus.kind == BusKind.SLACK) != 1:
            raise CaseValidationError("exactly one slack bus is required")
        for bus in self.buses:
            if bus.kind != BusKind.PQ:
                if bus.voltage_setpoint is None or not bus.voltage_setpoint > 0:
                    raise CaseValidationError("bus {}: voltage_setpoint must be > 0".format(bus.number))
        n = self.n_bus
        for index, line in enumerate(self.lines):
            if not (0 <= line.from_bus < n and 0 <= line.to_bus < n):
                raise CaseValidationError("line {} references a missing bus".format(index))
            if line.from_bus == line.to_bus:
                raise CaseValidationError("line {}: from_bus must differ from to_bus".format(index))
            if line.x == 0:
                raise CaseValidationError("line {}: x must be nonzero".format(index))
        for index, gen in enumerate(self.generators):
            if not 0 <= gen.bus < n:
                raise CaseValidationError("generator {} references a missing bus".format(index))
            if not gen.inertia_h > 0:
                raise CaseValidationError("generator {}: inertia_h must be > 0".format(index))
            if not gen.xd_prime > 0:
                raise CaseValidationError("generator {}: xd_prime must be > 0".format(index))
            if not gen.damping_d >= 0:
                raise CaseValidationError("generator {}: damping_d must be >= 0".format(index))
            if self.buses[gen.bus].kind == BusKind.PQ:
                raise CaseValidationError("generator {} sits on a pq bus".format(index))
        for bus in self.buses:
            if bus.kind == BusKind.PV and not any(gen.bus == bus.id for gen in self.generators):
                raise CaseValidationError("pv bus {} has no generator".format(bus.number))
        for index, load in enumerate(self.loads):
            if not 0 <= load.bus < n:
                raise CaseValidationError("load {} references a missing bus".format(index))
            if not (math.isfinite(load.p) and math.isfinite(load.q)):
                raise CaseValidationError("load {}: demand must be finite".format(index))
        if not is_connected(n, self.lines):
            raise CaseValidationError("the network of in-service lines must be connected")
        return self


def is_connected(n_bus: int, lines: Sequence[Line]) -> bool:
    if n_bus <= 1:
        return True
    rows = [line.from_bus for line in lines]
    cols = [line.to_bus for line in lines]
    graph = coo_matrix((np.ones(len(lines)), (rows, cols)), shape=(n_bus, n_bus))
    n_components, _ = connected_components(graph, directed=False)
    return bool(n_components == 1)


def is_islanding(case: GridCase, line_index: int) -> bool:
    remaining = case.lines[:line_index] + case.lines[line_index + 1:]
    return not is_connected(case.n_bus, remaining)


def adjacency_pairs(case: GridCase) -> Tuple[Tuple[int, int], ...]:
    """ Distinct undirected bus pairs; parallel lines collapse into one edge """
    pairs = {(min(line.from_bus, line.to_bus), max(line.from_bus, line.to_bus)) for line in case.lines}
    return tuple(sorted(pairs))


def build_ybus(case: GridCase, skip_line: Optional[int] = None) -> np.ndarray:
    n = case.n_bus
    ybus = np.zeros((n, n), dtype=complex)
    for index, line in enumerate(case.lines):
        if index == skip_line:
            continue
        f, t = line.from_bus, line.to_bus
        y = line.admittance
        half_shunt = 0.5j * line.b_shunt
        ybus[f, f] += y + half_shunt
        ybus[t, t] += y + half_shunt
        ybus[f, t] -= y
        ybus[t, f] -= y
    return ybus


_SECTIONS = ('buses', 'lines', 'generators', 'loads')


def resolve_case(name_or_path: str) -> Path:
    if name_or_path in GTSAConfig.CASE_ALIASES:
        return GTSAConfig.CASES_PATH / GTSAConfig.CASE_ALIASES[name_or_path]
    return Path(name_or_path)


def load_case(path: Path) -> GridCase:
    try:
        text = path.read_text(encoding='utf-8')
    except UnicodeDecodeError as e:
        raise CaseParseError(path, None, "not UTF-8 text ({})".format(e)) from e
    loader = yaml.SafeLoader(text)
    try:
        root = loader.get_single_node()
        if root is None:
            raise CaseParseError(path, None, "empty case file")
        data = loader.construct_document(root)
    except yaml.MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark is not None else None
        raise CaseParseError(path, line, str(e.problem)) from e
    finally:
        loader.dispose()
    if not isinstance(data, dict):
        raise CaseParseError(path, root.start_mark.line + 1, "top level must be a mapping")
    return _CaseBuilder(path, root, data).build()


@attr.s(slots=True, auto_attribs=True)
class _CaseBuilder:
    path: Path
    root: yaml.MappingNode
    data: Dict[str, Any]
    scale: float = attr.ib(init=False, default=1.0)
    renumber: Dict[int, int] = attr.ib(init=False, factory=dict)

    def build(self) -> GridCase:
        base_mva = self._number(self.data, 'base_mva', self._key_line('base_mva'))
        units = self.data.get('units', 'mw')
        if units not in ('mw', 'pu'):
            raise CaseParseError(self.path, self._key_line('units'), "units must be 'mw' or 'pu'")
        self.scale = 1.0 / base_mva if units == 'mw' else 1.0

        raw_buses = self._section('buses')
        numbers = [int(self._number(entry, 'id', line)) for line, entry in raw_buses]
        if len(set(numbers)) != len(numbers):
            raise CaseValidationError("bus ids must be unique")
        self.renumber = {number: index for index, number in enumerate(sorted(numbers))}
        buses = sorted(
            (self._bus(line, entry) for line, entry in raw_buses),
            key=lambda b: b.id,
        )
        case = GridCase(
            base_mva=base_mva,
            buses=tuple(buses),
            lines=tuple(self._line(line, entry) for line, entry in self._section('lines')),
            generators=tuple(self._generator(line, entry) for line, entry in self._section('generators')),
            loads=tuple(self._load(line, entry) for line, entry in self._section('loads')),
        )
        return case.validate()

    def _key_line(self, key: str) -> Optional[int]:
        for key_node, _value_node in self.root.value:
            if key_node.value == key:
                return int(key_node.start_mark.line) + 1
        return None

    def _section(self, key: str) -> List[Tuple[int, Dict[str, Any]]]:
        entries = self.data.get(key, [])
        if entries is None:
            entries = []
        if not isinstance(entries, list):
            raise CaseParseError(self.path, self._key_line(key), "'{}' must be a list".format(key))
        nodes: List[yaml.Node] = []
        for key_node, value_node in self.root.value:
            if key_node.value == key and isinstance(value_node, yaml.SequenceNode):
                nodes = value_node.value
        result = []
        for index, entry in enumerate(entries):
            line = int(nodes[index].start_mark.line) + 1 if index < len(nodes) else None
            if not isinstance(entry, dict):
                raise CaseParseError(self.path, line, "{} entries must be mappings".format(key))
            result.append((line if line is not None else 0, entry))
        return result

    def _number(self, entry: Dict[str, Any], field: str, line: Optional[int], default: Optional[float] = None) -> float:
        if field not in entry:
            if default is not None:
                return default
            raise CaseParseError(self.path, line, "missing field '{}'".format(field))
        value = entry[field]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise CaseParseError(self.path, line, "field '{}' must be a number".format(field))
        return float(value)

    def _bus_ref(self, entry: Dict[str, Any], field: str, line: int) -> int:
        number = int(self._number(entry, field, line))
        if number not in self.renumber:
            raise CaseValidationError("line {}: '{}' references missing bus {}".format(line, field, number))
        return self.renumber[number]

    def _bus(self, line: int, entry: Dict[str, Any]) -> Bus:
        number = int(self._number(entry, 'id', line))
        try:
            kind = BusKind(entry.get('kind'))
        except ValueError as e:
            raise CaseParseError(self.path, line, "kind must be slack, pv or pq") from e
        setpoint = entry.get('voltage_setpoint')
        return Bus(
            id=self.renumber[number],
            number=number,
            kind=kind,
            voltage_setpoint=None if setpoint is None else self._number(entry, 'voltage_setpoint', line),
        )

    def _line(self, line: int, entry: Dict[str, Any]) -> Line:
        return Line(
            from_bus=self._bus_ref(entry, 'from_bus', line),
            to_bus=self._bus_ref(entry, 'to_bus', line),
            r=self._number(entry, 'r', line),
            x=self._number(entry, 'x', line),
            b_shunt=self._number(entry, 'b_shunt', line, 0.0),
        )

    def _generator(self, line: int, entry: Dict[str, Any]) -> Generator:
        return Generator(
            bus=self._bus_ref(entry, 'bus', line),
            p_set=self._number(entry, 'p_set', line) * self.scale,
            inertia_h=self._number(entry, 'inertia_h', line),
            damping_d=self._number(entry, 'damping_d', line, 0.0),
            xd_prime=self._number(entry, 'xd_prime', line),
        )

    def _load(self, line: int, entry: Dict[str, Any]) -> Load:
        return Load(
            bus=self._bus_ref(entry, 'bus', line),
            p=self._number(entry, 'p', line) * self.scale,
            q=self._number(entry, 'q', line) * self.scale,
        )


def case_to_dict(case: GridCase) -> Dict[str, Any]:
    """ Per-unit representation; load_case reads it back bit-exactly """
    number = [bus.number for bus in case.buses]
    buses = []
    for bus in case.buses:
        entry: Dict[str, Any] = {'id': bus.number, 'kind': bus.kind.value}
        if bus.voltage_setpoint is not None:
            entry['voltage_setpoint'] = bus.voltage_setpoint
        buses.append(entry)
    return {
        'base_mva': case.base_mva,
        'units': 'pu',
        'buses': buses,
        'lines': [
            {'from_bus': number[l.from_bus], 'to_bus': number[l.to_bus], 'r': l.r, 'x': l.x, 'b_shunt': l.b_shunt}
            for l in case.lines
        ],
        'generators': [
            {
                'bus': number[g.bus], 'p_set': g.p_set, 'inertia_h': g.inertia_h,
                'damping_d': g.damping_d, 'xd_prime': g.xd_prime,
            }
            for g in case.generators
        ],
        'loads': [{'bus': number[l.bus], 'p': l.p, 'q': l.q} for l in case.loads],
    }


def save_case(case: GridCase, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8') as f:
        yaml.safe_dump(case_to_dict(case), f, sort_keys=False)
