# Copyright 2026, the gtsa authors, All Rights Reserved
from typing import Any, ClassVar, Dict, Optional, Sequence, Tuple, Type
from abc import ABC, abstractmethod
from pathlib import Path
import argparse
import logging
import math
import sys

import attr
import numpy as np

from gtsa.config import GTSAConfig
from gtsa.dal_pooling import PoolResult, dal_pool, spectral_check
from gtsa.gin_network import Pooling, gin_forward, load_model, save_model
from gtsa.graph_dataset import (
    feature_histograms, labels_of, make_folds, read_dataset, write_histogram_csv
)
from gtsa.grid_model import GridCase, load_case, resolve_case
from gtsa.nn_core import constant
from gtsa.online_assessor import (
    batch_assess, scenarios_from_samples, scenarios_from_seed, write_assessment_csv
)
from gtsa.power_flow import apply_load_factors, solve_power_flow
from gtsa.scenario_gen import FaultEnd, FaultSpec, ScenarioSpec, draw_assessable_scenario, generate_dataset
from gtsa.tds_engine import (
    DynamicsModel, assess_trajectory, critical_clearing_time, prepare_dynamics, simulate, write_trajectory_csv
)
from gtsa.train_eval import (
    TrainConfig, ablate, choose_threshold, compute_cr_curve, cross_validate, evaluate, write_ablation_csv,
    write_cr_csv, write_cv_report, write_fold_cr_csv
)


class CLIAction(ABC):
    SUBCOMMAND_NAME: ClassVar[Optional[str]] = None
    SUBCOMMAND_HELP: ClassVar[Optional[str]] = None

    @classmethod
    @abstractmethod
    def add_parameters(cls, argument_parser: argparse.ArgumentParser) -> None:
        pass

    @classmethod
    @abstractmethod
    def action(cls, params: argparse.Namespace) -> None:
        pass

    @classmethod
    def register_subcommand(cls, argument_parser: 'argparse._SubParsersAction',
                            common: argparse.ArgumentParser) -> None:
        assert cls.SUBCOMMAND_NAME is not None
        subparser = argument_parser.add_parser(cls.SUBCOMMAND_NAME, help=cls.SUBCOMMAND_HELP, parents=[common])
        subparser.set_defaults(subparser_action=cls.action)
        cls.add_parameters(subparser)


def _load_case_argument(name: str) -> GridCase:
    return load_case(resolve_case(name))


def _add_case_parameter(argument_parser: argparse.ArgumentParser, default: Optional[str] = None) -> None:
    argument_parser.add_argument(
        '--case',
        required=default is None,
        default=default,
        help="Case file, or one of the bundled cases: {}".format(', '.join(GTSAConfig.CASE_ALIASES))
    )


def _add_integration_parameters(argument_parser: argparse.ArgumentParser) -> None:
    argument_parser.add_argument('--horizon', type=float, default=GTSAConfig.TDS_HORIZON,
                                 help="Simulated time in seconds")
    argument_parser.add_argument('--dt', type=float, default=GTSAConfig.TDS_STEP,
                                 help="Integration step in seconds")


def _add_training_parameters(argument_parser: argparse.ArgumentParser) -> None:
    argument_parser.add_argument('--data', type=Path, required=True, help="Dataset file")
    argument_parser.add_argument('--layers', type=int, default=GTSAConfig.GIN_LAYERS, help="GIN layer count")
    argument_parser.add_argument('--hidden', type=int, default=GTSAConfig.HIDDEN_WIDTH, help="Embedding width")
    argument_parser.add_argument('--epochs', type=int, default=GTSAConfig.EPOCHS)
    argument_parser.add_argument('--lr', type=float, default=GTSAConfig.LEARNING_RATE, help="Adam learning rate")
    argument_parser.add_argument('--batch-size', type=int, default=GTSAConfig.BATCH_SIZE)
    argument_parser.add_argument('--folds', type=int, default=GTSAConfig.FOLDS, help="Cross-validation folds")


def _train_config(params: argparse.Namespace, pooling: Pooling) -> TrainConfig:
    return TrainConfig(
        pooling=pooling,
        layers=params.layers,
        hidden=params.hidden,
        epochs=params.epochs,
        lr=params.lr,
        batch_size=params.batch_size,
        seed=params.seed,
    )


def _print_metrics(prefix: str, metrics: Dict[str, Any]) -> None:
    print('{}: {}'.format(prefix, ' '.join('{}={:.2f}'.format(k, 100 * v) for k, v in metrics.items())))


class SimulateAction(CLIAction):
    SUBCOMMAND_NAME = 'simulate'
    SUBCOMMAND_HELP = 'Simulate one fault scenario and export its trajectory'

    @classmethod
    def add_parameters(cls, argument_parser: argparse.ArgumentParser) -> None:
        _add_case_parameter(argument_parser)
        argument_parser.add_argument('--line', type=int, help="Faulted line index (drawn from --seed if omitted)")
        argument_parser.add_argument('--end', choices=[e.value for e in FaultEnd], default=FaultEnd.FROM.value,
                                     help="Line end where the fault is applied")
        argument_parser.add_argument('--clear-time', type=float, help="Fault clearing time in seconds")
        argument_parser.add_argument('--load-factor', type=float, default=1.0,
                                     help="Uniform load factor when --line is given")
        _add_integration_parameters(argument_parser)
        argument_parser.add_argument('--out', type=Path, help="Trajectory CSV")
        argument_parser.add_argument('--cct', action='store_true',
                                     help="Also print the equal-area critical clearing time (single machine cases)")

    @classmethod
    def action(cls, params: argparse.Namespace) -> None:
        case = _load_case_argument(params.case)
        if params.line is None:
            scenario = draw_assessable_scenario(case, params.seed)
            if params.clear_time is not None:
                scenario = attr.evolve(scenario, fault=attr.evolve(scenario.fault, clear_time=params.clear_time))
        else:
            scenario = ScenarioSpec(
                load_factors=(params.load_factor,) * len(case.loads),
                fault=FaultSpec(
                    line_index=params.line,
                    faulted_end=FaultEnd(params.end),
                    clear_time=params.clear_time if params.clear_time is not None else 0.1,
                ),
            )
        scenario_case = apply_load_factors(case, np.array(scenario.load_factors))
        pf = solve_power_flow(scenario_case)
        model = prepare_dynamics(scenario_case, pf, scenario.fault)
        traj = simulate(model, scenario.fault.clear_time, params.horizon, params.dt)
        verdict = assess_trajectory(traj)
        print('Fault on line {} ({} end), cleared at {:.4f} s'.format(
            scenario.fault.line_index, scenario.fault.faulted_end.value, scenario.fault.clear_time))
        print('max separation {:.2f} deg, TSI {:.2f}, {}'.format(
            verdict.max_sep_deg, verdict.tsi, 'stable' if verdict.label == 1 else 'unstable'))
        if params.cct:
            cls._print_cct(model)
        if params.out is not None:
            write_trajectory_csv(traj, params.out)
            print('Wrote "{}"'.format(params.out))

    @classmethod
    def _print_cct(cls, model: DynamicsModel) -> None:
        if model.n_gen != 1 or not model.has_source:
            print('Critical clearing time needs a single machine against an infinite bus')
            return
        coupling = abs(model.e_mag[0] * model.prefault.y_source[0] * model.prefault.v_source)
        coupling_post = abs(model.e_mag[0] * model.postfault.y_source[0] * model.postfault.v_source)
        inertia_h = model.m[0] * 2 * math.pi * GTSAConfig.NOMINAL_FREQUENCY / 2
        _angle, cct = critical_clearing_time(float(model.p_mech[0]), coupling, coupling_post, inertia_h)
        print('critical clearing time {:.4f} s'.format(cct))


class GenDatasetAction(CLIAction):
    SUBCOMMAND_NAME = 'gen-dataset'
    SUBCOMMAND_HELP = 'Generate a labeled graph dataset by simulating random scenarios'

    @classmethod
    def add_parameters(cls, argument_parser: argparse.ArgumentParser) -> None:
        _add_case_parameter(argument_parser)
        argument_parser.add_argument('--samples', type=int, required=True, help="Number of records")
        argument_parser.add_argument('--out', type=Path, required=True, help="Dataset file")
        _add_integration_parameters(argument_parser)

    @classmethod
    def action(cls, params: argparse.Namespace) -> None:
        if params.samples < 1:
            raise ValueError("--samples must be at least 1")
        case = _load_case_argument(params.case)
        summary = generate_dataset(case, params.samples, params.seed, params.out,
                                   threads=params.threads, horizon=params.horizon, dt=params.dt)
        print('Wrote {} samples ({} stable, {} unstable) to "{}"'.format(
            summary.samples, summary.stable, summary.unstable, summary.path))


class StatsAction(CLIAction):
    SUBCOMMAND_NAME = 'stats'
    SUBCOMMAND_HELP = 'Per-feature histograms of a dataset, split by class'

    @classmethod
    def add_parameters(cls, argument_parser: argparse.ArgumentParser) -> None:
        argument_parser.add_argument('--data', type=Path, required=True, help="Dataset file")
        argument_parser.add_argument('--bins', type=int, default=20)
        argument_parser.add_argument('--out', type=Path, required=True, help="Histogram CSV")

    @classmethod
    def action(cls, params: argparse.Namespace) -> None:
        samples = read_dataset(params.data)
        labels = labels_of(samples)
        write_histogram_csv(feature_histograms(samples, params.bins), params.out)
        print('{} samples: {} stable, {} unstable'.format(
            len(samples), int(np.sum(labels == 1)), int(np.sum(labels == 0))))
        print('Wrote "{}"'.format(params.out))


class TrainAction(CLIAction):
    SUBCOMMAND_NAME = 'train'
    SUBCOMMAND_HELP = 'Cross-validate a model and save the best fold'

    @classmethod
    def add_parameters(cls, argument_parser: argparse.ArgumentParser) -> None:
        _add_training_parameters(argument_parser)
        argument_parser.add_argument('--pool', choices=[p.value for p in Pooling], default=Pooling.DAL.value,
                                     help="Graph readout")
        argument_parser.add_argument('--out', type=Path, required=True, help="Model checkpoint")
        argument_parser.add_argument('--report', type=Path, help="Per-fold metrics CSV")
        argument_parser.add_argument('--cr', type=Path, help="Per-fold credibility curves CSV")

    @classmethod
    def action(cls, params: argparse.Namespace) -> None:
        samples = read_dataset(params.data)
        plan = make_folds(labels_of(samples), params.folds, params.seed)
        report = cross_validate(samples, plan, _train_config(params, Pooling(params.pool)), params.threads)
        _print_metrics('mean', report.mean())
        _print_metrics('std', report.std())
        best = max(report.folds, key=lambda fold: (fold.metrics.acc, -fold.index))
        save_model(best.model, params.out)
        print('Saved fold {} model to "{}"'.format(best.index, params.out))
        if params.report is not None:
            write_cv_report(report, params.report)
        if params.cr is not None:
            write_fold_cr_csv(report, params.cr)


class EvaluateAction(CLIAction):
    SUBCOMMAND_NAME = 'evaluate'
    SUBCOMMAND_HELP = 'Evaluate a saved model and its credibility curve on a dataset'

    @classmethod
    def add_parameters(cls, argument_parser: argparse.ArgumentParser) -> None:
        argument_parser.add_argument('--model', type=Path, required=True, help="Model checkpoint")
        argument_parser.add_argument('--data', type=Path, required=True, help="Dataset file")
        argument_parser.add_argument('--cr', type=Path, help="Credibility curve CSV (k,cr)")
        argument_parser.add_argument('--target-cr', type=float, default=0.9,
                                     help="Credibility the suggested threshold must keep")

    @classmethod
    def action(cls, params: argparse.Namespace) -> None:
        model = load_model(params.model)
        samples = read_dataset(params.data)
        _print_metrics('metrics', evaluate(model, samples).as_dict())
        curve = compute_cr_curve(model, samples)
        print('cr(0.5)={:.4f}; threshold for cr>={}: {:.2f}'.format(
            curve.at(0.5), params.target_cr, choose_threshold(curve, params.target_cr)))
        if params.cr is not None:
            write_cr_csv(curve, params.cr)


class DiagnoseAction(CLIAction):
    SUBCOMMAND_NAME = 'diagnose'
    SUBCOMMAND_HELP = 'Print covariance spectra and Sigma-mu reconstruction residuals for dataset samples'

    @classmethod
    def add_parameters(cls, argument_parser: argparse.ArgumentParser) -> None:
        argument_parser.add_argument('--data', type=Path, required=True, help="Dataset file")
        argument_parser.add_argument('--model', type=Path, help="Use this model's node embeddings")
        argument_parser.add_argument('--count', type=int, default=5, help="Number of samples to diagnose")

    @classmethod
    def action(cls, params: argparse.Namespace) -> None:
        samples = read_dataset(params.data)
        model = load_model(params.model) if params.model is not None else None
        rng = np.random.default_rng(params.seed)
        picked = sorted(rng.choice(len(samples), size=min(params.count, len(samples)), replace=False))
        for index in picked:
            sample = samples[int(index)]
            h = gin_forward(model, sample) if model is not None else constant(sample.features)
            result: PoolResult = dal_pool(h)
            diagnostics = spectral_check(result)
            spectrum = ' '.join('{:.4g}'.format(v) for v in diagnostics.eigenvalues[:8])
            print('sample {}: rank {}, residual {:.3e}, eigenvalues {}'.format(
                index, diagnostics.rank, diagnostics.residual, spectrum))


class AssessAction(CLIAction):
    SUBCOMMAND_NAME = 'assess'
    SUBCOMMAND_HELP = 'Credibility-gated online assessment with TDS fallback and timing report'

    @classmethod
    def add_parameters(cls, argument_parser: argparse.ArgumentParser) -> None:
        argument_parser.add_argument('--model', type=Path, required=True, help="Model checkpoint")
        _add_case_parameter(argument_parser)
        argument_parser.add_argument('--scenarios', type=Path,
                                     help="Dataset whose stored scenarios are assessed (else --seed and --count)")
        argument_parser.add_argument('--count', type=int, default=20, help="Scenarios drawn from --seed")
        argument_parser.add_argument('--threshold', type=float, default=0.5, help="Credibility threshold k")
        argument_parser.add_argument('--report', type=Path, help="Per-scenario CSV")
        _add_integration_parameters(argument_parser)

    @classmethod
    def action(cls, params: argparse.Namespace) -> None:
        if params.threshold < 0:
            raise ValueError("--threshold must be non-negative")
        model = load_model(params.model)
        case = _load_case_argument(params.case)
        if params.scenarios is not None:
            scenarios = scenarios_from_samples(read_dataset(params.scenarios))
        else:
            scenarios = scenarios_from_seed(case, params.seed, params.count)
        report = batch_assess(model, case, scenarios, params.threshold,
                              threads=params.threads, horizon=params.horizon, dt=params.dt)
        print('{} scenarios, fallback {:.1f}%, accuracy {:.2f}%'.format(
            report.n, 100 * report.fallback_fraction, 100 * report.accuracy))
        print('mean time {:.4f} s vs pure TDS {:.4f} s (speedup {:.2f}x)'.format(
            report.mean_overall_time, report.mean_baseline_time, report.speedup))
        if params.report is not None:
            write_assessment_csv(report, params.report)


class AblateAction(CLIAction):
    SUBCOMMAND_NAME = 'ablate'
    SUBCOMMAND_HELP = 'Cross-validate every pooling and layer count combination'

    @classmethod
    def add_parameters(cls, argument_parser: argparse.ArgumentParser) -> None:
        _add_training_parameters(argument_parser)
        argument_parser.add_argument('--pools', nargs='+', choices=[p.value for p in Pooling],
                                     default=[p.value for p in Pooling])
        argument_parser.add_argument('--layer-counts', nargs='+', type=int, default=[2, 3, 4, 5])
        argument_parser.add_argument('--k', type=float, default=0.5, help="Threshold of the reported CR")
        argument_parser.add_argument('--out', type=Path, required=True, help="Summary CSV")

    @classmethod
    def action(cls, params: argparse.Namespace) -> None:
        samples = read_dataset(params.data)
        plan = make_folds(labels_of(samples), params.folds, params.seed)
        rows = ablate(samples, plan, _train_config(params, Pooling.DAL),
                      [Pooling(p) for p in params.pools], params.layer_counts,
                      k=params.k, threads=params.threads)
        for row in rows:
            print('{:>4} x{}: acc {:.2f}±{:.2f}, cr({}) {:.4f}'.format(
                row.pooling.value, row.layers, 100 * row.mean['acc'], 100 * row.std['acc'], params.k, row.cr_at_k))
        write_ablation_csv(rows, params.out)
        print('Wrote "{}"'.format(params.out))


ALL_ACTIONS: Tuple[Type[CLIAction], ...] = tuple(CLIAction.__subclasses__())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=0, help="Master random seed")
    common.add_argument('--threads', type=int, default=GTSAConfig.WORKERS, help="Worker pool size")
    common.add_argument('-v', '--verbose', action='store_true', help="Log progress to stderr")
    argument_parser = argparse.ArgumentParser(description="Graph-based transient stability assessment")
    subparsers = argument_parser.add_subparsers(dest='action')
    subparsers.required = True
    for action in ALL_ACTIONS:
        action.register_subcommand(subparsers, common)
    return argument_parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format='%(asctime)s %(name)s %(levelname)s %(message)s',
    )
    try:
        args.subparser_action(args)
    except (ValueError, RuntimeError, OSError) as e:
        print('error: {}'.format(e), file=sys.stderr)
        return 1
    return 0
