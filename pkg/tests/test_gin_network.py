# Copyright 2026, the gtsa authors, All Rights Reserved
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pytest
import yaml

from gtsa import gin_network
from gtsa.gin_network import (
    CheckpointFormatError, GinLayer, Normalizer, Pooling, TsaModel, adjacency, batch_logits, classify,
    gin_forward, init_model, load_model, model_to_dict, predict_proba, readout, save_model,
)
from gtsa.graph_dataset import GraphSample
from gtsa.nn_core import backward, constant, parameter, softmax_cross_entropy
from gtsa.utils import LruDict

from .utils import numeric_gradient, random_sample, relative_error

# For typing only
from _pytest.monkeypatch import MonkeyPatch


def identity_layer(dim: int = 2) -> GinLayer:
    return GinLayer(
        w1=parameter(np.eye(dim)),
        b1=parameter(np.zeros((1, dim))),
        w2=parameter(np.eye(dim)),
        b2=parameter(np.zeros((1, dim))),
    )


def test_identity_layer_sums_neighbours() -> None:
    sample = GraphSample(n=2, edges=np.array([[0, 1]]), features=np.array([[1.0, 2.0], [3.0, 5.0]]))
    out = identity_layer().forward(adjacency(sample), constant(sample.features))
    np.testing.assert_array_equal(out.data, [[4.0, 7.0], [4.0, 7.0]])


def test_isolated_node_is_plain_mlp() -> None:
    sample = GraphSample(n=1, edges=np.zeros((0, 2), dtype=np.int64), features=np.array([[0.5, -1.0]]))
    layer = init_model(hidden=4, layers=1, seed=3).layers[0]
    out = layer.forward(adjacency(sample), constant(sample.features)).data
    hidden = np.maximum(sample.features @ layer.w1.data + layer.b1.data, 0)
    np.testing.assert_allclose(out, hidden @ layer.w2.data + layer.b2.data)


def test_adjacency_is_symmetric() -> None:
    sample = random_sample(np.random.default_rng(0), 12)
    matrix = adjacency(sample).toarray()
    np.testing.assert_array_equal(matrix, matrix.T)
    assert np.all(np.diag(matrix) == 0)
    assert matrix.sum() == 2 * len(sample.edges)


def test_adjacency_cache_under_threads(monkeypatch: MonkeyPatch) -> None:
    monkeypatch.setattr(gin_network, '_ADJACENCY_CACHE', LruDict(3))
    rng = np.random.default_rng(2)
    samples = [random_sample(rng, int(rng.integers(3, 12))) for _ in range(8)]
    expected = [adjacency(sample).toarray() for sample in samples]
    jobs = [index % len(samples) for index in range(400)]
    with ThreadPoolExecutor(max_workers=8) as executor:
        results = list(executor.map(lambda index: adjacency(samples[index]).toarray(), jobs))
    for index, result in zip(jobs, results):
        np.testing.assert_array_equal(result, expected[index])
    assert len(gin_network._ADJACENCY_CACHE) <= 3  # pylint: disable=protected-access


def test_embedding_equivariance() -> None:
    rng = np.random.default_rng(1)
    model = init_model(hidden=8, layers=3, seed=1)
    sample = random_sample(rng, 15)
    permutation = rng.permutation(15)
    original = gin_forward(model, sample).data
    permuted = gin_forward(model, sample.permuted(permutation)).data
    np.testing.assert_allclose(permuted[permutation], original, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize('pooling', list(Pooling))
def test_classification_permutation_invariance(pooling: Pooling) -> None:
    rng = np.random.default_rng(2)
    model = init_model(hidden=8, layers=2, seed=2, pooling=pooling)
    sample = random_sample(rng, 10)
    s0, s1 = classify(model, sample)
    assert s0 + s1 == pytest.approx(1.0)
    for _ in range(100):
        p0, p1 = classify(model, sample.permuted(rng.permutation(10)))
        assert p0 == pytest.approx(s0, rel=1e-10, abs=1e-14)
        assert p1 == pytest.approx(s1, rel=1e-10, abs=1e-14)


def test_batch_matches_single_graphs() -> None:
    rng = np.random.default_rng(3)
    model = init_model(hidden=6, layers=2, seed=3)
    samples = [random_sample(rng, int(rng.integers(1, 12))) for _ in range(9)]
    batched = batch_logits(model, samples).data
    for row, sample in zip(batched, samples):
        np.testing.assert_allclose(row, batch_logits(model, [sample]).data[0], rtol=1e-12, atol=1e-12)
    probs = predict_proba(model, samples, batch_size=4)
    assert probs.shape == (9, 2)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)


def test_identical_embeddings_readouts() -> None:
    h = constant(np.tile([[0.3, -1.2, 2.0]], (5, 1)))
    assert np.all(readout(Pooling.DAL, h).data == 0)
    np.testing.assert_allclose(readout(Pooling.MEAN, h).data, [[0.3, -1.2, 2.0]])
    np.testing.assert_allclose(readout(Pooling.SUM, h).data, [[1.5, -6.0, 10.0]])


def model_gradient_error(model: TsaModel, target: np.ndarray) -> float:
    rng = np.random.default_rng(4)
    samples = [random_sample(rng, int(rng.integers(2, 8))) for _ in range(20)]
    labels = np.arange(20) % 2
    for param in model.params():
        param.zero_grad()
    backward(softmax_cross_entropy(batch_logits(model, samples), labels))
    param = next(p for p in model.params() if p.data is target)
    numeric = numeric_gradient(
        lambda: float(softmax_cross_entropy(batch_logits(model, samples), labels).data[0, 0]),
        param.data, h=1e-7)
    return relative_error(param.grad, numeric)


@pytest.mark.parametrize('pooling', list(Pooling))
def test_model_gradients(pooling: Pooling) -> None:
    model = init_model(hidden=8, layers=2, seed=5, pooling=pooling, gain=0.5)
    assert model_gradient_error(model, model.fc_w.data) < 1e-5
    assert model_gradient_error(model, model.layers[0].w1.data) < 1e-5
    assert model_gradient_error(model, model.layers[1].b2.data) < 1e-5


def test_normalizer() -> None:
    samples = [
        GraphSample(n=2, edges=np.array([[0, 1]]), features=np.array([[1.0, 5.0], [3.0, 5.0]])),
    ]
    normalizer = Normalizer.fit(samples)
    np.testing.assert_array_equal(normalizer.mean, [2.0, 5.0])
    np.testing.assert_array_equal(normalizer.std, [1.0, 1.0])
    np.testing.assert_array_equal(normalizer.apply(samples[0].features), [[-1.0, 0.0], [1.0, 0.0]])


def test_checkpoint_roundtrip(tmp_path: Path) -> None:
    rng = np.random.default_rng(6)
    normalizer = Normalizer(mean=np.array([0.1, -0.2]), std=np.array([1.5, 0.7]))
    model = init_model(hidden=5, layers=3, seed=6, pooling=Pooling.DAL, normalizer=normalizer)
    path = tmp_path / 'model.yaml'
    save_model(model, path)
    loaded = load_model(path)
    assert loaded == model
    for original, restored in zip(model.params(), loaded.params()):
        np.testing.assert_array_equal(original.data, restored.data)
    samples = [random_sample(rng, 7) for _ in range(5)]
    np.testing.assert_array_equal(predict_proba(loaded, samples), predict_proba(model, samples))


def test_bad_checkpoints(tmp_path: Path) -> None:
    model = init_model(hidden=3, layers=1)
    path = tmp_path / 'model.yaml'

    data = model_to_dict(model)
    data['version'] = 2
    path.write_text(yaml.safe_dump(data))
    with pytest.raises(CheckpointFormatError, match='version'):
        load_model(path)

    data = model_to_dict(model)
    del data['fc']
    path.write_text(yaml.safe_dump(data))
    with pytest.raises(CheckpointFormatError):
        load_model(path)

    data = model_to_dict(model)
    data['layers'][0]['w1']['shape'] = [5, 5]
    path.write_text(yaml.safe_dump(data))
    with pytest.raises(CheckpointFormatError):
        load_model(path)

    path.write_text('just: [a, list')
    with pytest.raises(CheckpointFormatError):
        load_model(path)

    path.write_text('- 1\n- 2\n')
    with pytest.raises(CheckpointFormatError):
        load_model(path)
