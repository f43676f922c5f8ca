# Copyright 2026, the gtsa authors, All Rights Reserved
"""GIN message passing, graph readout and the linear classifier head."""
from typing import Any, Dict, List, Sequence, Tuple
from enum import Enum
from pathlib import Path
import logging
import threading

import attr
import numpy as np
import yaml
from scipy import sparse

from gtsa.config import GTSAConfig
from gtsa.dal_pooling import dal_pool, mean_pool, sum_pool
from gtsa.graph_dataset import GraphSample
from gtsa.nn_core import (
    Value, add, add_row, constant, kaiming_uniform, matmul, parameter, relu, scale, slice_rows, softmax, spmm,
    vstack,
)
from gtsa.utils import LruDict, floats_to_hex, hex_to_floats

_LOG = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 'gtsa-model'
CHECKPOINT_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


class Pooling(Enum):
    MEAN = 'mean'
    SUM = 'sum'
    DAL = 'dal'


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class Normalizer:
    mean: np.ndarray = attr.ib(eq=attr.cmp_using(eq=np.array_equal))
    std: np.ndarray = attr.ib(eq=attr.cmp_using(eq=np.array_equal))

    @classmethod
    def identity(cls, dim: int = 2) -> 'Normalizer':
        return cls(mean=np.zeros(dim), std=np.ones(dim))

    @classmethod
    def fit(cls, samples: Sequence[GraphSample]) -> 'Normalizer':
        assert samples
        features = np.vstack([sample.features for sample in samples])
        std = features.std(axis=0)
        # Constant features pass through centered but unscaled
        std[std < 1e-12] = 1.0
        return cls(mean=features.mean(axis=0), std=std)

    def apply(self, features: np.ndarray) -> np.ndarray:
        result: np.ndarray = (features - self.mean) / self.std
        return result


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class GinLayer:
    w1: Value = attr.ib(eq=False)
    b1: Value = attr.ib(eq=False)
    w2: Value = attr.ib(eq=False)
    b2: Value = attr.ib(eq=False)
    epsilon: float = 0.0

    def __attrs_post_init__(self) -> None:
        assert self.b1.shape == (1, self.w1.shape[1])
        assert self.w2.shape[0] == self.w1.shape[1]
        assert self.b2.shape == (1, self.w2.shape[1])

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]

    def params(self) -> List[Value]:
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, adjacency: sparse.spmatrix, h: Value) -> Value:
        """ MLP((1 + eps) h_v + sum of neighbour rows) """
        aggregated = add(spmm(adjacency, h), scale(h, 1.0 + self.epsilon))
        hidden = relu(add_row(matmul(aggregated, self.w1), self.b1))
        return add_row(matmul(hidden, self.w2), self.b2)


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class TsaModel:
    layers: Tuple[GinLayer, ...]
    pooling: Pooling
    fc_w: Value = attr.ib(eq=False)
    fc_b: Value = attr.ib(eq=False)
    normalizer: Normalizer

    def __attrs_post_init__(self) -> None:
        assert self.layers
        for previous, layer in zip(self.layers, self.layers[1:]):
            assert previous.out_dim == layer.in_dim
        assert self.fc_w.shape == (self.layers[-1].out_dim, 2)
        assert self.fc_b.shape == (1, 2)
        assert np.all(self.normalizer.std > 0)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def hidden(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> List[Value]:
        result = [param for layer in self.layers for param in layer.params()]
        return result + [self.fc_w, self.fc_b]


def init_model(*, in_dim: int = 2,
               hidden: int = GTSAConfig.HIDDEN_WIDTH,
               layers: int = GTSAConfig.GIN_LAYERS,
               pooling: Pooling = Pooling.DAL,
               seed: int = 0,
               normalizer: Normalizer = Normalizer.identity(),
               gain: float = GTSAConfig.INIT_GAIN) -> TsaModel:
    assert layers >= 1 and hidden >= 1
    rng = np.random.default_rng(seed)
    gin_layers = []
    for index in range(layers):
        fan_in = in_dim if index == 0 else hidden
        gin_layers.append(GinLayer(
            w1=parameter(kaiming_uniform(rng, fan_in, hidden, gain)),
            b1=parameter(np.zeros((1, hidden))),
            w2=parameter(kaiming_uniform(rng, hidden, hidden, gain)),
            b2=parameter(np.zeros((1, hidden))),
        ))
    return TsaModel(
        layers=tuple(gin_layers),
        pooling=pooling,
        fc_w=parameter(kaiming_uniform(rng, hidden, 2, gain)),
        fc_b=parameter(np.zeros((1, 2))),
        normalizer=normalizer,
    )


_ADJACENCY_CACHE: 'LruDict[Tuple[int, bytes], sparse.csr_matrix]' = LruDict(4096)
# batch assessment classifies from worker threads
_ADJACENCY_LOCK = threading.Lock()


def adjacency(sample: GraphSample) -> sparse.csr_matrix:
    """ Symmetric 0/1 adjacency without self loops; topologies repeat, so they are cached """
    key = (sample.n, np.ascontiguousarray(sample.edges, dtype=np.int64).tobytes())
    with _ADJACENCY_LOCK:
        cached = _ADJACENCY_CACHE.get(key)
    if cached is not None:
        result: sparse.csr_matrix = cached
        return result
    rows = np.concatenate([sample.edges[:, 0], sample.edges[:, 1]])
    cols = np.concatenate([sample.edges[:, 1], sample.edges[:, 0]])
    matrix = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(sample.n, sample.n))
    with _ADJACENCY_LOCK:
        _ADJACENCY_CACHE[key] = matrix
    return matrix


def readout(pooling: Pooling, h: Value) -> Value:
    if pooling == Pooling.DAL:
        return dal_pool(h).z
    if pooling == Pooling.MEAN:
        return mean_pool(h)
    return sum_pool(h)


def _embed(model: TsaModel, matrix: sparse.spmatrix, features: np.ndarray) -> Value:
    h = constant(model.normalizer.apply(features))
    for layer in model.layers:
        h = relu(layer.forward(matrix, h))
    return h


def gin_forward(model: TsaModel, sample: GraphSample) -> Value:
    return _embed(model, adjacency(sample), sample.features)


def batch_logits(model: TsaModel, samples: Sequence[GraphSample]) -> Value:
    """ B x 2 logits; the batch is one block-diagonal graph, read out per block """
    assert samples
    matrix = sparse.block_diag([adjacency(sample) for sample in samples], format='csr')
    h = _embed(model, matrix, np.vstack([sample.features for sample in samples]))
    pooled = []
    start = 0
    for sample in samples:
        pooled.append(readout(model.pooling, slice_rows(h, start, start + sample.n)))
        start += sample.n
    return add_row(matmul(vstack(pooled), model.fc_w), model.fc_b)


def predict_proba(model: TsaModel, samples: Sequence[GraphSample], batch_size: int = 256) -> np.ndarray:
    """ Rows of (S0, S1) """
    chunks = [
        softmax(batch_logits(model, samples[start:start + batch_size]).data)
        for start in range(0, len(samples), batch_size)
    ]
    return np.vstack(chunks) if chunks else np.zeros((0, 2))


def classify(model: TsaModel, sample: GraphSample) -> Tuple[float, float]:
    probs = predict_proba(model, [sample])[0]
    return float(probs[0]), float(probs[1])


def _array_to_dict(value: np.ndarray) -> Dict[str, Any]:
    return {'shape': list(value.shape), 'data': list(floats_to_hex(value))}


def _array_from_dict(data: Any, where: str) -> np.ndarray:
    try:
        return hex_to_floats(data['data'], data['shape'])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointFormatError("bad array at {}: {}".format(where, e)) from e


def model_to_dict(model: TsaModel) -> Dict[str, Any]:
    return {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'pooling': model.pooling.value,
        'in_dim': model.in_dim,
        'hidden': model.hidden,
        'normalizer': {
            'mean': _array_to_dict(model.normalizer.mean),
            'std': _array_to_dict(model.normalizer.std),
        },
        'layers': [
            {
                'epsilon': float(layer.epsilon).hex(),
                'w1': _array_to_dict(layer.w1.data),
                'b1': _array_to_dict(layer.b1.data),
                'w2': _array_to_dict(layer.w2.data),
                'b2': _array_to_dict(layer.b2.data),
            }
            for layer in model.layers
        ],
        'fc': {'w': _array_to_dict(model.fc_w.data), 'b': _array_to_dict(model.fc_b.data)},
    }


def model_from_dict(data: Any) -> TsaModel:
    if not isinstance(data, dict) or data.get('format') != CHECKPOINT_FORMAT:
        raise CheckpointFormatError("not a model checkpoint")
    if data.get('version') != CHECKPOINT_VERSION:
        raise CheckpointFormatError("unsupported checkpoint version {}".format(data.get('version')))
    try:
        pooling = Pooling(data['pooling'])
        layers = tuple(
            GinLayer(
                epsilon=float.fromhex(entry['epsilon']),
                w1=parameter(_array_from_dict(entry['w1'], 'layers[{}].w1'.format(index))),
                b1=parameter(_array_from_dict(entry['b1'], 'layers[{}].b1'.format(index))),
                w2=parameter(_array_from_dict(entry['w2'], 'layers[{}].w2'.format(index))),
                b2=parameter(_array_from_dict(entry['b2'], 'layers[{}].b2'.format(index))),
            )
            for index, entry in enumerate(data['layers'])
        )
        model = TsaModel(
            layers=layers,
            pooling=pooling,
            fc_w=parameter(_array_from_dict(data['fc']['w'], 'fc.w')),
            fc_b=parameter(_array_from_dict(data['fc']['b'], 'fc.b')),
            normalizer=Normalizer(
                mean=_array_from_dict(data['normalizer']['mean'], 'normalizer.mean'),
                std=_array_from_dict(data['normalizer']['std'], 'normalizer.std'),
            ),
        )
    except (KeyError, TypeError, ValueError, AssertionError) as e:
        if isinstance(e, CheckpointFormatError):
            raise
        raise CheckpointFormatError("malformed checkpoint: {}".format(e)) from e
    return model


def save_model(model: TsaModel, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8') as f:
        yaml.safe_dump(model_to_dict(model), f, sort_keys=False)
    _LOG.info("Saved %s model to %s", model.pooling.value, path)


def load_model(path: Path) -> TsaModel:
    try:
        with path.open('r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise CheckpointFormatError("{}: {}".format(path, e)) from e
    return model_from_dict(data)
