# Copyright 2026, the gtsa authors, All Rights Reserved
"""Offline stage: fold-wise training, metrics, cross-validation and credibility curves.

Stable samples (label 1) are the positive class.
"""
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
import logging

import attr
import numpy as np

from gtsa.config import GTSAConfig
from gtsa.gin_network import Normalizer, Pooling, TsaModel, batch_logits, init_model, predict_proba
from gtsa.graph_dataset import FoldPlan, GraphSample, MissingClassError, labels_of, split_train_val
from gtsa.nn_core import OptimizerState, adam_step, backward, softmax_cross_entropy, zero_grad
from gtsa.utils import derive_seed, write_csv

_LOG = logging.getLogger(__name__)

METRIC_NAMES = ('acc', 'f1', 'tnr', 'tpr')


class NoCorrectPredictions(RuntimeError):
    pass


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class Metrics:
    tp: int
    tn: int
    fp: int
    fn: int
    acc: float
    f1: float
    tnr: float
    tpr: float
    # Metrics whose denominator was empty; they are reported as 0
    undefined: Tuple[str, ...] = ()

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def as_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def _rate(numerator: int, denominator: int, name: str, undefined: List[str]) -> float:
    if denominator == 0:
        undefined.append(name)
        return 0.0
    return numerator / denominator


def compute_metrics(labels: Sequence[int], predictions: Sequence[int]) -> Metrics:
    truth = np.asarray(labels, dtype=np.int64)
    predicted = np.asarray(predictions, dtype=np.int64)
    assert truth.shape == predicted.shape and truth.size >= 1
    tp = int(np.sum((truth == 1) & (predicted == 1)))
    tn = int(np.sum((truth == 0) & (predicted == 0)))
    fp = int(np.sum((truth == 0) & (predicted == 1)))
    fn = int(np.sum((truth == 1) & (predicted == 0)))
    undefined: List[str] = []
    return Metrics(
        tp=tp, tn=tn, fp=fp, fn=fn,
        acc=(tp + tn) / truth.size,
        f1=_rate(2 * tp, 2 * tp + fp + fn, 'f1', undefined),
        tnr=_rate(tn, tn + fp, 'tnr', undefined),
        tpr=_rate(tp, tp + fn, 'tpr', undefined),
        undefined=tuple(undefined),
    )


def predict_labels(probabilities: np.ndarray) -> np.ndarray:
    """ argmax of (S0, S1); a tie counts as stable """
    result: np.ndarray = (probabilities[:, 1] >= probabilities[:, 0]).astype(np.int64)
    return result


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class TrainConfig:
    pooling: Pooling = Pooling.DAL
    layers: int = GTSAConfig.GIN_LAYERS
    hidden: int = GTSAConfig.HIDDEN_WIDTH
    epochs: int = GTSAConfig.EPOCHS
    lr: float = GTSAConfig.LEARNING_RATE
    batch_size: int = GTSAConfig.BATCH_SIZE
    validation_share: float = GTSAConfig.VALIDATION_SHARE
    gain: float = GTSAConfig.INIT_GAIN
    seed: int = 0


def evaluate(model: TsaModel, samples: Sequence[GraphSample]) -> Metrics:
    return compute_metrics(labels_of(samples), predict_labels(predict_proba(model, samples)))


def train_fold(train: Sequence[GraphSample], val: Sequence[GraphSample],
               config: TrainConfig) -> Tuple[TsaModel, Metrics]:
    """ Adam on mean cross-entropy; returns the epoch with the best validation accuracy """
    assert train and val
    train_labels = labels_of(train)
    for cls in (0, 1):
        if not np.any(train_labels == cls):
            raise MissingClassError("class {} is absent from the training split".format(cls))
    model = init_model(
        in_dim=train[0].features.shape[1],
        hidden=config.hidden,
        layers=config.layers,
        pooling=config.pooling,
        seed=config.seed,
        normalizer=Normalizer.fit(train),
        gain=config.gain,
    )
    params = model.params()
    state = OptimizerState.for_params(params, config.lr)
    rng = np.random.default_rng(config.seed)

    best_metrics = evaluate(model, val)
    best_epoch = 0
    best_weights = [param.data.copy() for param in params]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        total_loss = 0.0
        for start in range(0, len(train), config.batch_size):
            batch_index = order[start:start + config.batch_size]
            zero_grad(params)
            loss = softmax_cross_entropy(batch_logits(model, [train[i] for i in batch_index]),
                                         train_labels[batch_index])
            backward(loss)
            adam_step(params, state)
            total_loss += float(loss.data[0, 0]) * len(batch_index)
        metrics = evaluate(model, val)
        _LOG.debug("Epoch %d: loss %.5f, validation acc %.4f", epoch, total_loss / len(train), metrics.acc)
        if metrics.acc > best_metrics.acc:
            best_metrics = metrics
            best_epoch = epoch
            best_weights = [param.data.copy() for param in params]
    for param, weights in zip(params, best_weights):
        param.data[...] = weights
    _LOG.info("Best epoch %d with validation acc %.4f", best_epoch, best_metrics.acc)
    return model, best_metrics


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class CrCurve:
    thresholds: np.ndarray = attr.ib(eq=attr.cmp_using(eq=np.array_equal))
    cr: np.ndarray = attr.ib(eq=attr.cmp_using(eq=np.array_equal))

    def at(self, k: float) -> float:
        index = int(np.argmin(np.abs(self.thresholds - k)))
        return float(self.cr[index])


def default_thresholds(points: int = 101) -> np.ndarray:
    result: np.ndarray = np.linspace(0.0, 1.0, points)
    return result


def cr_curve_from_margins(correct_margins: np.ndarray, thresholds: Optional[np.ndarray] = None) -> CrCurve:
    """ cr(k): share of the correctly classified samples whose |S0 - S1| >= k """
    if thresholds is None:
        thresholds = default_thresholds()
    margins = np.asarray(correct_margins, dtype=np.float64)
    if margins.size == 0:
        raise NoCorrectPredictions("credibility rating is undefined without correct predictions")
    cr = np.array([np.count_nonzero(margins >= k) / margins.size for k in thresholds])
    return CrCurve(thresholds=np.asarray(thresholds, dtype=np.float64), cr=cr)


def correct_margins(model: TsaModel, samples: Sequence[GraphSample]) -> np.ndarray:
    probabilities = predict_proba(model, samples)
    correct = predict_labels(probabilities) == labels_of(samples)
    result: np.ndarray = np.abs(probabilities[:, 0] - probabilities[:, 1])[correct]
    return result


def compute_cr_curve(model: TsaModel, samples: Sequence[GraphSample],
                     thresholds: Optional[np.ndarray] = None) -> CrCurve:
    return cr_curve_from_margins(correct_margins(model, samples), thresholds)


def mean_cr_curve(curves: Sequence[CrCurve]) -> CrCurve:
    assert curves
    return CrCurve(thresholds=curves[0].thresholds, cr=np.mean([curve.cr for curve in curves], axis=0))


def choose_threshold(curve: CrCurve, target_cr: float) -> float:
    """ The strictest gate that still keeps at least target_cr of the correct predictions """
    assert 0 <= target_cr <= 1
    passing = curve.thresholds[curve.cr >= target_cr]
    return float(passing.max()) if passing.size else 0.0


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class FoldResult:
    index: int
    metrics: Metrics
    validation: Metrics
    correct_margins: np.ndarray = attr.ib(eq=attr.cmp_using(eq=np.array_equal))
    model: TsaModel = attr.ib(eq=False)

    @property
    def curve(self) -> CrCurve:
        return cr_curve_from_margins(self.correct_margins)


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class CvReport:
    folds: Tuple[FoldResult, ...]

    def _values(self, name: str) -> np.ndarray:
        return np.array([getattr(fold.metrics, name) for fold in self.folds])

    def mean(self) -> Dict[str, float]:
        return {name: float(np.mean(self._values(name))) for name in METRIC_NAMES}

    def std(self) -> Dict[str, float]:
        return {name: float(np.std(self._values(name))) for name in METRIC_NAMES}

    def mean_cr_at(self, k: float) -> float:
        return float(np.mean([cr_curve_from_margins(fold.correct_margins, np.array([k])).cr[0]
                              for fold in self.folds]))

    def mean_curve(self) -> CrCurve:
        return mean_cr_curve([fold.curve for fold in self.folds])


def run_fold(samples: Sequence[GraphSample], plan: FoldPlan, config: TrainConfig, index: int) -> FoldResult:
    labels = labels_of(samples)
    train_pool, test_idx = plan.fold(index)
    fold_seed = derive_seed(config.seed, index)
    train_idx, val_idx = split_train_val(train_pool, labels, config.validation_share, fold_seed)
    if len(val_idx) == 0:
        val_idx = train_idx
    model, validation = train_fold(
        [samples[i] for i in train_idx],
        [samples[i] for i in val_idx],
        attr.evolve(config, seed=fold_seed),
    )
    test = [samples[i] for i in test_idx]
    metrics = evaluate(model, test)
    _LOG.info("Fold %d: acc %.4f f1 %.4f", index, metrics.acc, metrics.f1)
    return FoldResult(
        index=index,
        metrics=metrics,
        validation=validation,
        correct_margins=correct_margins(model, test),
        model=model,
    )


def cross_validate(samples: Sequence[GraphSample], plan: FoldPlan, config: TrainConfig,
                   threads: int = GTSAConfig.WORKERS) -> CvReport:
    assert len(plan.assignments) == len(samples)
    worker = partial(run_fold, list(samples), plan, config)
    if threads <= 1:
        folds = [worker(index) for index in range(plan.k)]
    else:
        with ProcessPoolExecutor(max_workers=min(threads, plan.k)) as executor:
            folds = list(executor.map(worker, range(plan.k)))
    return CvReport(folds=tuple(folds))


def write_cv_report(report: CvReport, path: Path) -> None:
    """ One row per fold plus mean and std rows; values in percent """
    rows: List[List[object]] = [
        [fold.index] + [100.0 * getattr(fold.metrics, name) for name in METRIC_NAMES]
        for fold in report.folds
    ]
    mean = report.mean()
    std = report.std()
    rows.append(['mean'] + [100.0 * mean[name] for name in METRIC_NAMES])
    rows.append(['std'] + [100.0 * std[name] for name in METRIC_NAMES])
    write_csv(path, ('fold',) + METRIC_NAMES, rows)


def write_cr_csv(curve: CrCurve, path: Path) -> None:
    write_csv(path, ('k', 'cr'), zip(curve.thresholds, curve.cr))


def write_fold_cr_csv(report: CvReport, path: Path) -> None:
    """ Per-fold credibility curves side by side with their mean """
    curves = [fold.curve for fold in report.folds]
    mean = mean_cr_curve(curves)
    header = ['k'] + ['fold_{}'.format(fold.index) for fold in report.folds] + ['mean']
    rows = (
        [k] + [curve.cr[i] for curve in curves] + [mean.cr[i]]
        for i, k in enumerate(mean.thresholds)
    )
    write_csv(path, header, rows)


@attr.s(slots=True, frozen=True, auto_attribs=True, kw_only=True)
class AblationRow:
    pooling: Pooling
    layers: int
    mean: Dict[str, float]
    std: Dict[str, float]
    cr_at_k: float


def ablate(samples: Sequence[GraphSample], plan: FoldPlan, config: TrainConfig,
           poolings: Iterable[Pooling], layer_counts: Iterable[int], *,
           k: float = 0.5, threads: int = GTSAConfig.WORKERS) -> List[AblationRow]:
    rows = []
    layer_counts = list(layer_counts)
    for pooling in poolings:
        for layers in layer_counts:
            _LOG.info("Ablation: pooling %s with %d layers", pooling.value, layers)
            report = cross_validate(samples, plan, attr.evolve(config, pooling=pooling, layers=layers), threads)
            rows.append(AblationRow(
                pooling=pooling,
                layers=layers,
                mean=report.mean(),
                std=report.std(),
                cr_at_k=report.mean_cr_at(k),
            ))
    return rows


def write_ablation_csv(rows: Sequence[AblationRow], path: Path) -> None:
    header = ['pooling', 'layers']
    for name in METRIC_NAMES:
        header += [name + '_mean', name + '_std']
    header.append('cr_at_k')
    body = []
    for row in rows:
        values: List[object] = [row.pooling.value, row.layers]
        for name in METRIC_NAMES:
            values += [100.0 * row.mean[name], 100.0 * row.std[name]]
        values.append(row.cr_at_k)
        body.append(values)
    write_csv(path, header, body)
