# Copyright 2026, the gtsa authors, All Rights Reserved
from pathlib import Path
import math

import attr
import numpy as np
import pytest

from gtsa.cli import main
from gtsa.graph_dataset import read_dataset, write_dataset
from gtsa.grid_model import save_case
from gtsa.gin_network import load_model

from .utils import bundled_case, toy_dataset

# For typing only
from _pytest.capture import CaptureFixture


def test_unknown_flag() -> None:
    with pytest.raises(SystemExit) as excinfo:
        main(['gen-dataset', '--case', '9bus', '--samples', '2', '--out', 'x', '--bogus'])
    assert excinfo.value.code == 2


def test_help_lists_flags(capsys: 'CaptureFixture[str]') -> None:
    with pytest.raises(SystemExit) as excinfo:
        main(['gen-dataset', '--help'])
    assert excinfo.value.code == 0
    out = capsys.readouterr().out
    for flag in ('--case', '--samples', '--out', '--seed', '--threads', '--horizon'):
        assert flag in out


def test_missing_dataset(tmp_path: Path, capsys: 'CaptureFixture[str]') -> None:
    assert main(['stats', '--data', str(tmp_path / 'nothing.gtsa'), '--out', str(tmp_path / 'h.csv')]) == 1
    assert capsys.readouterr().err.startswith('error:')


def test_clear_time_out_of_range(capsys: 'CaptureFixture[str]') -> None:
    assert main(['simulate', '--case', 'smib', '--line', '0', '--clear-time', '0.5']) == 1
    assert 'clear_time' in capsys.readouterr().err


def test_simulate(tmp_path: Path, capsys: 'CaptureFixture[str]') -> None:
    out = tmp_path / 'traj.csv'
    assert main(['simulate', '--case', 'smib', '--line', '0', '--clear-time', '0.1',
                 '--horizon', '2', '--out', str(out), '--cct']) == 0
    printed = capsys.readouterr().out
    assert 'stable' in printed
    assert 'critical clearing time' in printed
    assert out.read_text().splitlines()[0] == 't,delta_1,omega_1'


def test_dataset_and_stats(tmp_path: Path, capsys: 'CaptureFixture[str]') -> None:
    data = tmp_path / 'data.gtsa'
    assert main(['gen-dataset', '--case', '9bus', '--samples', '3', '--horizon', '1', '--out', str(data)]) == 0
    assert len(read_dataset(data)) == 3
    hist = tmp_path / 'hist.csv'
    assert main(['stats', '--data', str(data), '--bins', '4', '--out', str(hist)]) == 0
    assert len(hist.read_text().splitlines()) == 9
    assert '3 samples' in capsys.readouterr().out


def test_train_evaluate_assess(tmp_path: Path, capsys: 'CaptureFixture[str]') -> None:
    data = tmp_path / 'toy.gtsa'
    write_dataset(toy_dataset(np.random.default_rng(0), 40), data)
    model = tmp_path / 'model.yaml'
    assert main(['train', '--data', str(data), '--folds', '2', '--epochs', '2', '--hidden', '4', '--layers', '2',
                 '--lr', '0.01', '--out', str(model), '--report', str(tmp_path / 'cv.csv'),
                 '--cr', str(tmp_path / 'cr.csv')]) == 0
    assert load_model(model).hidden == 4
    assert (tmp_path / 'cv.csv').read_text().splitlines()[-1].startswith('std,')

    assert main(['evaluate', '--model', str(model), '--data', str(data), '--cr', str(tmp_path / 'curve.csv')]) == 0
    assert len((tmp_path / 'curve.csv').read_text().splitlines()) == 102

    assert main(['diagnose', '--data', str(data), '--model', str(model), '--count', '2']) == 0

    report = tmp_path / 'assess.csv'
    assert main(['assess', '--model', str(model), '--case', '9bus', '--count', '2', '--threshold', '1.01',
                 '--horizon', '1', '--report', str(report)]) == 0
    assert 'accuracy 100.00%' in capsys.readouterr().out
    assert len(report.read_text().splitlines()) == 3


def test_ablate(tmp_path: Path) -> None:
    data = tmp_path / 'toy.gtsa'
    write_dataset(toy_dataset(np.random.default_rng(1), 30), data)
    out = tmp_path / 'ablation.csv'
    assert main(['ablate', '--data', str(data), '--folds', '2', '--epochs', '1', '--hidden', '4',
                 '--pools', 'mean', 'dal', '--layer-counts', '1', '--out', str(out)]) == 0
    assert len(out.read_text().splitlines()) == 3


def fast_swing_9bus(path: Path) -> Path:
    # a tenth of the inertia puts the critical clearing times inside the sampling window
    case = bundled_case('9bus')
    generators = tuple(
        attr.evolve(gen, inertia_h=gen.inertia_h * 0.1, damping_d=gen.damping_d * math.sqrt(0.1))
        for gen in case.generators
    )
    save_case(attr.evolve(case, generators=generators), path)
    return path


def test_pipeline_on_9bus(tmp_path: Path, capsys: 'CaptureFixture[str]') -> None:
    case = str(fast_swing_9bus(tmp_path / 'case9.yaml'))
    data = tmp_path / 'data.gtsa'
    assert main(['gen-dataset', '--case', case, '--samples', '40', '--horizon', '2', '--seed', '3',
                 '--threads', '2', '--out', str(data)]) == 0
    labels = np.array([sample.label for sample in read_dataset(data)])
    assert np.sum(labels == 0) >= 2 and np.sum(labels == 1) >= 2

    model = tmp_path / 'model.yaml'
    assert main(['train', '--data', str(data), '--folds', '2', '--epochs', '3', '--hidden', '8', '--layers', '2',
                 '--lr', '0.01', '--out', str(model)]) == 0
    assert load_model(model).hidden == 8

    report = tmp_path / 'assess.csv'
    assert main(['assess', '--model', str(model), '--case', case, '--scenarios', str(data), '--threshold', '0.5',
                 '--horizon', '2', '--report', str(report)]) == 0
    assert '40 scenarios' in capsys.readouterr().out
    assert len(report.read_text().splitlines()) == 41
