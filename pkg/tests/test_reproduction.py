# Copyright 2026, the gtsa authors, All Rights Reserved
"""End-to-end runs on the 39-bus case. Slow; enabled with --run-slow."""
from pathlib import Path
from typing import Dict, List

import attr
import numpy as np
import pytest

from gtsa.dal_pooling import dal_pool, spectral_check
from gtsa.gin_network import Pooling, batch_logits, init_model
from gtsa.graph_dataset import GraphSample, labels_of, make_folds, read_dataset
from gtsa.nn_core import backward, constant, softmax_cross_entropy
from gtsa.online_assessor import batch_assess, scenarios_from_samples
from gtsa.scenario_gen import generate_dataset
from gtsa.train_eval import CvReport, TrainConfig, choose_threshold, compute_cr_curve, cross_validate, train_fold

from .utils import bundled_case, numeric_gradient, random_sample, relative_error

SAMPLES = 2000
SEED = 2024
THREADS = 8
CONFIG = TrainConfig(epochs=30, hidden=32, layers=3, lr=3e-3, seed=SEED)


@pytest.fixture(scope='module')
def dataset_path(tmp_path_factory: pytest.TempPathFactory) -> Path:
    path = tmp_path_factory.mktemp('reproduction') / 'ieee39.gtsa'
    generate_dataset(bundled_case('39bus'), SAMPLES, SEED, path, threads=THREADS)
    return path


@pytest.fixture(scope='module')
def samples(dataset_path: Path) -> List[GraphSample]:
    return read_dataset(dataset_path)


@pytest.fixture(scope='module')
def reports(samples: List[GraphSample]) -> Dict[Pooling, CvReport]:
    plan = make_folds(labels_of(samples), 10, SEED)
    return {
        pooling: cross_validate(samples, plan, attr.evolve(CONFIG, pooling=pooling), THREADS)
        for pooling in Pooling
    }


@pytest.mark.slow
def test_pooling_properties_at_scale() -> None:
    rng = np.random.default_rng(0)
    for _ in range(1000):
        h = rng.normal(size=(int(rng.integers(1, 201)), int(rng.integers(2, 65))))
        result = dal_pool(constant(h))
        z = result.z.data
        # Rounding in z is bounded by the size of its factors, not of z itself
        scale = np.linalg.norm(result.sigma.data) * np.linalg.norm(result.mu.data) + 1e-300
        assert z.shape == (1, h.shape[1])
        shuffled = dal_pool(constant(h[rng.permutation(len(h))])).z.data
        assert np.linalg.norm(shuffled - z) <= 1e-12 * scale
        scaled = dal_pool(constant(1.7 * h)).z.data
        assert np.linalg.norm(scaled - 1.7 ** 3 * z) <= 1e-10 * 1.7 ** 3 * scale
        assert spectral_check(result).residual < 1e-9 * (1 + np.linalg.norm(z))


@pytest.mark.slow
def test_full_model_gradients_on_random_graphs() -> None:
    rng = np.random.default_rng(1)
    for index in range(20):
        model = init_model(hidden=8, layers=2, seed=index, pooling=Pooling.DAL, gain=0.5)
        samples = [random_sample(rng, int(rng.integers(1, 11)))]
        labels = np.array([index % 2])
        for param in model.params():
            param.zero_grad()
        backward(softmax_cross_entropy(batch_logits(model, samples), labels))
        for param in model.params():
            numeric = numeric_gradient(  # pylint: disable=cell-var-from-loop
                lambda: float(softmax_cross_entropy(batch_logits(model, samples), labels).data[0, 0]),
                param.data, h=1e-7)
            assert relative_error(param.grad, numeric) < 1e-4


@pytest.mark.slow
def test_dataset_class_balance(samples: List[GraphSample], dataset_path: Path, tmp_path: Path) -> None:
    assert len(samples) == SAMPLES
    unstable = float(np.mean(labels_of(samples) == 0))
    assert 0.10 <= unstable <= 0.50
    for sample in samples:
        assert 1 / 60 - 1e-12 <= sample.meta.clear_time <= 1 / 6 + 1e-12
        assert all(0.8 <= f <= 1.2 for f in sample.meta.load_factors)
    again = tmp_path / 'again.gtsa'
    generate_dataset(bundled_case('39bus'), SAMPLES, SEED, again, threads=THREADS)
    assert again.read_bytes() == dataset_path.read_bytes()


@pytest.mark.slow
def test_pooling_comparison(reports: Dict[Pooling, CvReport]) -> None:
    dal = reports[Pooling.DAL].mean()['acc']
    assert dal >= 0.90
    assert dal >= reports[Pooling.MEAN].mean()['acc'] - 0.005
    assert dal >= reports[Pooling.SUM].mean()['acc'] - 0.005


@pytest.mark.slow
def test_credibility_curves(reports: Dict[Pooling, CvReport]) -> None:
    for report in reports.values():
        curve = report.mean_curve()
        assert curve.cr[0] == 1.0
        assert np.all(np.diff(curve.cr) <= 0)
    assert reports[Pooling.DAL].mean_cr_at(0.5) >= reports[Pooling.MEAN].mean_cr_at(0.5)


@pytest.mark.slow
def test_gated_assessment(samples: List[GraphSample]) -> None:
    train, validation, held_out = samples[:1400], samples[1400:1700], samples[1700:1800]
    model, _metrics = train_fold(train, validation, CONFIG)
    k = choose_threshold(compute_cr_curve(model, validation), 0.9)
    report = batch_assess(model, bundled_case('39bus'), scenarios_from_samples(held_out), k, threads=THREADS)
    assert report.accuracy >= 0.99
    assert report.mean_overall_time < report.mean_baseline_time
