# Copyright 2026, the gtsa authors, All Rights Reserved
"""Graph samples, the binary dataset file, stratified folds and feature statistics.

Dataset file layout (little endian):

    magic    4 bytes  b'GTSA'
    version  uint16
    reserved uint16   (zero)
    count    uint32   number of records
    checksum 16 bytes md5 of everything after the header
    records  count * (uint32 length, record bytes)

A record is `uint32 n, uint32 edge_count, uint8 label` followed by the edge
endpoints (uint32, 2 * edge_count), the features (float64, row-major n x 2)
and the provenance as UTF-8 JSON.
"""
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple
from hashlib import md5
from pathlib import Path
import json
import logging
import struct

import attr
import numpy as np

from gtsa.grid_model import GridCase, adjacency_pairs
from gtsa.tds_engine import Trajectory, StabilityVerdict
from gtsa.utils import write_csv

_LOG = logging.getLogger(__name__)

DATASET_MAGIC = b'GTSA'
DATASET_VERSION = 1
_HEADER = struct.Struct('<4sHHI16s')
_RECORD_HEAD = struct.Struct('<IIB')
_LENGTH = struct.Struct('<I')
_NO_LABEL = 255


class DatasetFormatError(ValueError):
    pass


class DatasetCorruptError(ValueError):
    pass


class MissingClassError(ValueError):
    pass


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class SampleMeta:
    seed: Optional[int] = None
    line_index: Optional[int] = None
    faulted_end: Optional[str] = None
    clear_time: Optional[float] = None
    load_factors: Tuple[float, ...] = ()
    tsi: Optional[float] = None
    max_sep_deg: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        result = attr.asdict(self)
        result['load_factors'] = list(self.load_factors)
        return result

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SampleMeta':
        data = dict(data)
        data['load_factors'] = tuple(data.get('load_factors', ()))
        return cls(**data)


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class GraphSample:
    n: int
    # Undirected pairs (i, j), i < j, one per connected bus pair
    edges: np.ndarray = attr.ib(eq=attr.cmp_using(eq=np.array_equal))
    # Columns: active power P, reactive power Q (per-unit)
    features: np.ndarray = attr.ib(eq=attr.cmp_using(eq=np.array_equal))
    label: Optional[int] = None
    meta: SampleMeta = attr.ib(factory=SampleMeta)

    def __attrs_post_init__(self) -> None:
        assert self.features.shape == (self.n, 2)
        assert self.edges.ndim == 2 and self.edges.shape[1] == 2
        if len(self.edges):
            assert 0 <= self.edges.min() and self.edges.max() < self.n
            assert np.all(self.edges[:, 0] != self.edges[:, 1])
            assert len({tuple(sorted(e)) for e in self.edges.tolist()}) == len(self.edges)
        assert self.label in (None, 0, 1)

    def permuted(self, permutation: np.ndarray) -> 'GraphSample':
        """ The same graph with node i renamed to permutation[i] """
        inverse = np.argsort(permutation)
        renamed = permutation[self.edges]
        edges = np.sort(renamed, axis=1) if len(renamed) else self.edges
        return attr.evolve(self, edges=edges, features=self.features[inverse])


def graph_from_snapshot(case: GridCase, snapshot: np.ndarray, label: Optional[int] = None,
                        meta: SampleMeta = SampleMeta()) -> GraphSample:
    assert snapshot.shape == (case.n_bus, 2)
    pairs = adjacency_pairs(case)
    return GraphSample(
        n=case.n_bus,
        edges=np.array(pairs, dtype=np.int64).reshape(len(pairs), 2),
        features=np.array(snapshot, dtype=np.float64),
        label=label,
        meta=meta,
    )


def build_graph(case: GridCase, traj: Trajectory, verdict: Optional[StabilityVerdict],
                meta: SampleMeta = SampleMeta()) -> GraphSample:
    return graph_from_snapshot(case, traj.snapshot_injections, None if verdict is None else verdict.label, meta)


def labels_of(samples: Sequence[GraphSample]) -> np.ndarray:
    assert all(sample.label is not None for sample in samples)
    return np.array([sample.label for sample in samples], dtype=np.int64)


def _encode_record(sample: GraphSample) -> bytes:
    meta = json.dumps(sample.meta.to_dict(), ensure_ascii=False, sort_keys=True).encode('utf-8')
    return b''.join((
        _RECORD_HEAD.pack(sample.n, len(sample.edges), _NO_LABEL if sample.label is None else sample.label),
        np.ascontiguousarray(sample.edges, dtype='<u4').tobytes(),
        np.ascontiguousarray(sample.features, dtype='<f8').tobytes(),
        meta,
    ))


def _decode_record(record: bytes, index: int) -> GraphSample:
    if len(record) < _RECORD_HEAD.size:
        raise DatasetCorruptError("record {} is too short".format(index))
    n, edge_count, label = _RECORD_HEAD.unpack_from(record)
    offset = _RECORD_HEAD.size
    edges_end = offset + 8 * edge_count
    features_end = edges_end + 16 * n
    if features_end > len(record):
        raise DatasetCorruptError("record {} is truncated".format(index))
    edges = np.frombuffer(record[offset:edges_end], dtype='<u4').astype(np.int64).reshape(edge_count, 2)
    features = np.frombuffer(record[edges_end:features_end], dtype='<f8').astype(np.float64).reshape(n, 2)
    try:
        meta = SampleMeta.from_dict(json.loads(record[features_end:].decode('utf-8')))
    except (ValueError, TypeError) as e:
        raise DatasetCorruptError("record {} has unreadable provenance".format(index)) from e
    return GraphSample(
        n=n,
        edges=edges,
        features=features,
        label=None if label == _NO_LABEL else label,
        meta=meta,
    )


def write_dataset(samples: Iterable[GraphSample], path: Path) -> int:
    body = bytearray()
    count = 0
    for sample in samples:
        record = _encode_record(sample)
        body += _LENGTH.pack(len(record))
        body += record
        count += 1
    header = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, 0, count, md5(body).digest())
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('wb') as f:
        f.write(header)
        f.write(body)
    _LOG.info("Wrote %d samples to %s", count, path)
    return count


def read_dataset(path: Path) -> List[GraphSample]:
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        if not DATASET_MAGIC.startswith(data[:4]):
            raise DatasetFormatError("{}: not a dataset file".format(path))
        raise DatasetCorruptError("{}: truncated header".format(path))
    magic, version, _reserved, count, checksum = _HEADER.unpack_from(data)
    if magic != DATASET_MAGIC:
        raise DatasetFormatError("{}: not a dataset file".format(path))
    if version != DATASET_VERSION:
        raise DatasetFormatError("{}: unsupported dataset version {} (expected {})".format(
            path, version, DATASET_VERSION))
    body = data[_HEADER.size:]
    if md5(body).digest() != checksum:
        raise DatasetCorruptError("{}: checksum mismatch".format(path))
    samples = []
    offset = 0
    for index in range(count):
        if offset + _LENGTH.size > len(body):
            raise DatasetCorruptError("{}: record {} is missing".format(path, index))
        (length,) = _LENGTH.unpack_from(body, offset)
        offset += _LENGTH.size
        if offset + length > len(body):
            raise DatasetCorruptError("{}: record {} is truncated".format(path, index))
        samples.append(_decode_record(body[offset:offset + length], index))
        offset += length
    if offset != len(body):
        raise DatasetCorruptError("{}: trailing bytes after the last record".format(path))
    return samples


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class FoldPlan:
    k: int
    assignments: np.ndarray = attr.ib(eq=attr.cmp_using(eq=np.array_equal))

    def fold(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        """ (train, test) indices of one fold """
        assert 0 <= index < self.k
        mask = self.assignments == index
        return np.flatnonzero(~mask), np.flatnonzero(mask)


def _require_both_classes(labels: np.ndarray) -> None:
    for cls in (0, 1):
        if not np.any(labels == cls):
            raise MissingClassError("class {} is absent".format(cls))


def make_folds(labels: np.ndarray, k: int, seed: int) -> FoldPlan:
    labels = np.asarray(labels)
    if k < 2 or len(labels) < k:
        raise ValueError("need 2 <= k <= dataset size (k={}, size={})".format(k, len(labels)))
    _require_both_classes(labels)
    rng = np.random.default_rng(seed)
    # Shuffled class blocks dealt round-robin keep every fold stratified
    order = np.concatenate([rng.permutation(np.flatnonzero(labels == cls)) for cls in (1, 0)])
    assignments = np.empty(len(labels), dtype=np.int64)
    assignments[order] = np.arange(len(labels)) % k
    return FoldPlan(k=k, assignments=assignments)


def split_train_val(indices: np.ndarray, labels: np.ndarray, share: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    assert 0 <= share < 1
    indices = np.asarray(indices)
    rng = np.random.default_rng(seed)
    train: List[np.ndarray] = []
    val: List[np.ndarray] = []
    for cls in (0, 1):
        members = rng.permutation(indices[labels[indices] == cls])
        take = min(int(round(share * len(members))), max(len(members) - 1, 0))
        val.append(members[:take])
        train.append(members[take:])
    train_idx = np.sort(np.concatenate(train))
    val_idx = np.sort(np.concatenate(val))
    if share > 0 and len(val_idx) == 0 and len(train_idx) > 1:
        val_idx, train_idx = train_idx[-1:], train_idx[:-1]
    return train_idx, val_idx


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class HistogramBin:
    feature: str
    bin_lo: float
    bin_hi: float
    count: int
    stable: int
    unstable: int


FEATURE_NAMES = ('P', 'Q')


def feature_histograms(samples: Sequence[GraphSample], bins: int = 20) -> List[HistogramBin]:
    """ Node-level feature distribution over all samples, split by label """
    assert samples and bins >= 1
    result = []
    for column, name in enumerate(FEATURE_NAMES):
        values = np.concatenate([sample.features[:, column] for sample in samples])
        node_labels = np.concatenate([np.full(sample.n, -1 if sample.label is None else sample.label)
                                      for sample in samples])
        edges = np.histogram_bin_edges(values, bins=bins)
        total, _ = np.histogram(values, bins=edges)
        stable, _ = np.histogram(values[node_labels == 1], bins=edges)
        unstable, _ = np.histogram(values[node_labels == 0], bins=edges)
        for index in range(bins):
            result.append(HistogramBin(
                feature=name,
                bin_lo=float(edges[index]),
                bin_hi=float(edges[index + 1]),
                count=int(total[index]),
                stable=int(stable[index]),
                unstable=int(unstable[index]),
            ))
    return result


def write_histogram_csv(histogram: Sequence[HistogramBin], path: Path) -> None:
    write_csv(
        path,
        ('feature', 'bin_lo', 'bin_hi', 'count', 'stable', 'unstable'),
        (attr.astuple(row) for row in histogram),
    )
