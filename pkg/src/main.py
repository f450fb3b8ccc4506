"""
Main entry point for the multi-fidelity calibration toolkit.

This module provides the command-line interface: ``calibrate`` estimates the
scaling parameter of every output from low and high-fidelity datasets,
``optimize`` runs the decision analysis on the calibrated model and writes the
optima with their summaries, and ``benchmark`` runs the synthetic studies.
"""
import sys
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import click
import numpy as np

from src.benchmark import (
    MultiOutputPolynomialScenario, PolynomialScenario, QuadraticScenario, ScenarioData,
    ScenarioGenerator
)
from src.calibration import CalibrationPrior, OutputCalibration, USearch, calibrate_outputs
from src.config import (
    CALIBRATION_LOG_FILE, DECISION_LOG_FILE, DEFAULT_OUT_DIR,
    DEFAULT_SEED, LOG_DIR, MAX_WORKERS, RunConfig, load_run_config, validate_config
)
from src.decision import (
    FIT_STREAM, SCENARIOS, DecisionConfig, ObjectiveSpec, ScenarioResult, mse_study, run_scenario
)
from src.design import Box, Seed
from src.storage import (
    DatasetFile, calibration_entry, calibrations_from_report, default_names, export_dataset,
    load_dataset, read_json_report, report_header, scenario_entry, write_histograms,
    write_json_report, write_optima_csv
)
from src.utils import (
    CalibrationToolError, ConfigurationError, exit_code_for, get_module_logger, safe_execute,
    setup_logging
)

# Logger for this module
logger = logging.getLogger(__name__)

BENCHMARKS = ('illustrative', 'mse-study', 'cure-surrogate', 'injection-molding')
SMOKE_LOOPS = 10


class AppContext:
    """Application context for managing logging and worker settings."""

    def __init__(self,
                 log_dir: Union[str, Path] = LOG_DIR,
                 log_level: int = logging.INFO,
                 max_workers: int = MAX_WORKERS):
        """
        Initialize application context.

        Args:
            log_dir: Directory for the application and per-stage log files
            log_level: Logging level
            max_workers: Thread count for the parallel loops
        """
        self.log_dir = Path(log_dir)
        self.log_level = log_level
        self.max_workers = max_workers

        # Initialize logging
        setup_logging(log_level, self.log_dir / 'app.log')
        get_module_logger('src.calibration', self.log_dir / CALIBRATION_LOG_FILE.name)
        get_module_logger('src.decision', self.log_dir / DECISION_LOG_FILE.name)


def load_config(config_path: str, **overrides: Any) -> RunConfig:
    """
    Read and validate a run configuration.

    Raises:
        ConfigurationError: If the file cannot be read or any setting is invalid
    """
    cfg = safe_execute(load_run_config, f"Error reading configuration {config_path}",
                       logger, ConfigurationError, path=config_path, **overrides)
    validation = validate_config(cfg)
    failed = [key for key, valid in validation.items() if not valid]
    if failed:
        raise ConfigurationError(f"Invalid configuration {config_path}: {', '.join(failed)}")
    return cfg


def load_data(cfg: RunConfig) -> ScenarioData:
    """Load both datasets named by the configuration."""
    X_L, Y_L = load_dataset(DatasetFile(cfg.low_path, 'low', cfg.inputs, cfg.outputs))
    X_H, Y_H = load_dataset(DatasetFile(cfg.high_path, 'high', cfg.inputs, cfg.outputs))
    box = Box.from_bounds([cfg.box[name] for name in cfg.inputs])
    return ScenarioData(X_L, Y_L, X_H, Y_H, box)


def prior_from_config(cfg: RunConfig) -> CalibrationPrior:
    return safe_execute(CalibrationPrior, "Invalid prior", logger, ConfigurationError,
                        kind=cfg.prior_kind, **cfg.prior_params)


def objective_from_config(cfg: RunConfig) -> ObjectiveSpec:
    return ObjectiveSpec(cfg.objective_kind, tuple(cfg.objective_weights))


def decision_config(cfg: RunConfig, box: Box, max_workers: int) -> DecisionConfig:
    return DecisionConfig(cfg.N_u, cfg.n_rep, cfg.N, box, Seed(cfg.seed),
                          collapse_variance=cfg.collapse_variance, max_workers=max_workers)


def calibrate_dataset(cfg: RunConfig, data: ScenarioData, max_workers: int) -> List[OutputCalibration]:
    """Calibrate every output on the streams the multi-fidelity scenario uses."""
    return calibrate_outputs(data.X_L, data.Y_L, data.X_H, data.Y_H,
                             prior=prior_from_config(cfg),
                             search=USearch(cfg.u_search[0], cfg.u_search[1], cfg.u_grid),
                             seed=Seed(cfg.seed).child(FIT_STREAM),
                             max_workers=max_workers)


def calibration_report(cfg: RunConfig, calibrations: List[OutputCalibration]) -> Dict[str, Any]:
    report = report_header(cfg.to_dict(), cfg.seed, 'calibrate')
    report['outputs'] = [calibration_entry(c, cfg.outputs[c.index]) for c in calibrations]
    return report


def write_scenario_files(out_dir: Path, result: ScenarioResult, input_names: Tuple[str, ...],
                         prefix: str = '') -> None:
    write_optima_csv(out_dir / f'{prefix}optima.csv', result.collection, input_names)
    write_histograms(out_dir, result.summary, input_names, prefix)


def _fail(error: CalibrationToolError) -> None:
    logger.error(f"Error: {error}")
    click.echo(f"Error: {error}", err=True)
    sys.exit(exit_code_for(error))


# Click command group
@click.group()
@click.option('--log-dir', type=click.Path(file_okay=False), default=str(LOG_DIR),
              help='Directory for log files')
@click.option('--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']),
              default='INFO', help='Logging level')
@click.option('--workers', type=click.IntRange(min=1), default=MAX_WORKERS,
              help='Threads for the leave-one-out folds and the decision loop')
@click.pass_context
def cli(ctx: click.Context, log_dir: str, log_level: str, workers: int) -> None:
    """Multi-fidelity Bayesian calibration and decision analysis."""
    ctx.obj = AppContext(log_dir=log_dir, log_level=getattr(logging, log_level),
                         max_workers=workers)


@cli.command()
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False),
              required=True, help='Run configuration file')
@click.option('--low', type=click.Path(dir_okay=False), help='Low-fidelity CSV (overrides config)')
@click.option('--high', type=click.Path(dir_okay=False), help='High-fidelity CSV (overrides config)')
@click.option('--seed', type=int, help='Root seed (overrides config)')
@click.option('--out-dir', type=click.Path(file_okay=False), help='Output directory (overrides config)')
@click.pass_obj
def calibrate(app_context: AppContext, config_path: str, low: Optional[str], high: Optional[str],
              seed: Optional[int], out_dir: Optional[str]) -> None:
    """Estimate u with its leave-one-out interval for every output."""
    try:
        cfg = load_config(config_path, low_path=low, high_path=high, seed=seed, out_dir=out_dir)
        data = load_data(cfg)
        calibrations = calibrate_dataset(cfg, data, app_context.max_workers)
        path = write_json_report(cfg.out_dir / 'calibration.json', calibration_report(cfg, calibrations))
    except CalibrationToolError as e:
        _fail(e)
        return

    for c in calibrations:
        lower, upper = c.result.interval
        click.echo(f"{cfg.outputs[c.index]}: u_hat={c.result.u_hat:.6f} "
                   f"95% interval=({lower:.6f}, {upper:.6f})")
    click.echo(f"Report written to {path}")


@cli.command()
@click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False),
              required=True, help='Run configuration file')
@click.option('--calibration', 'calibration_path', type=click.Path(exists=True, dir_okay=False),
              help='Calibration report to reuse instead of calibrating inline')
@click.option('--low', type=click.Path(dir_okay=False), help='Low-fidelity CSV (overrides config)')
@click.option('--high', type=click.Path(dir_okay=False), help='High-fidelity CSV (overrides config)')
@click.option('--seed', type=int, help='Root seed (overrides config)')
@click.option('--out-dir', type=click.Path(file_okay=False), help='Output directory (overrides config)')
@click.option('--collapse-variance', is_flag=True, default=None,
              help='Sample with zero predictive covariance (deterministic surrogate minimization)')
@click.pass_obj
def optimize(app_context: AppContext, config_path: str, calibration_path: Optional[str],
             low: Optional[str], high: Optional[str], seed: Optional[int],
             out_dir: Optional[str], collapse_variance: Optional[bool]) -> None:
    """Characterize the distribution of the optimal inputs."""
    try:
        cfg = load_config(config_path, low_path=low, high_path=high, seed=seed, out_dir=out_dir,
                          collapse_variance=collapse_variance or None)
        data = load_data(cfg)
        calibrations = None
        if calibration_path:
            calibrations = calibrations_from_report(read_json_report(calibration_path), data)
            logger.info(f"Reusing calibration from {calibration_path}")
        result = run_scenario('multi-fidelity', data, objective_from_config(cfg),
                              decision_config(cfg, data.box, app_context.max_workers),
                              prior=prior_from_config(cfg),
                              search=USearch(cfg.u_search[0], cfg.u_search[1], cfg.u_grid),
                              calibrations=calibrations)
        write_scenario_files(cfg.out_dir, result, cfg.inputs)
        report = report_header(cfg.to_dict(), cfg.seed, 'optimize')
        report.update(scenario_entry(result, cfg.inputs))
        report['calibration'] = [calibration_entry(c, cfg.outputs[c.index])
                                 for c in result.calibrations]
        path = write_json_report(cfg.out_dir / 'summary.json', report)
    except CalibrationToolError as e:
        _fail(e)
        return

    summary = result.summary
    for i, name in enumerate(cfg.inputs):
        click.echo(f"{name}: median={summary.median[i]:.4f} sd={summary.sd[i]:.4f}")
    click.echo(f"{summary.n_points} optima ({summary.n_skipped} skipped); summary written to {path}")


def benchmark_generator(scenario: str) -> ScenarioGenerator:
    if scenario == 'cure-surrogate':
        return PolynomialScenario.cure_surrogate()
    if scenario == 'injection-molding':
        return MultiOutputPolynomialScenario.injection_molding()
    return QuadraticScenario()


def benchmark_settings(scenario: str, box: Box, objective: ObjectiveSpec, prior: CalibrationPrior,
                       search: USearch, **loops: Any) -> Dict[str, Any]:
    """Fully resolved settings of a benchmark run, as embedded in its report."""
    return {
        'scenario': scenario,
        'box': [[lo, hi] for lo, hi in zip(box.lower, box.upper)],
        'objective': objective.to_dict(),
        'prior': prior.to_dict(),
        'u_search': {'lo': search.lo, 'hi': search.hi, 'n_grid': search.n_grid, 'tol': search.tol},
        **loops,
    }


@cli.command()
@click.option('--scenario', type=click.Choice(BENCHMARKS), required=True,
              help='Study to run')
@click.option('--n-datasets', type=click.IntRange(min=1), default=50,
              help='Regenerated datasets for the mse-study')
@click.option('--seed', type=int, default=DEFAULT_SEED, help='Root seed')
@click.option('--n-u', 'N_u', type=click.IntRange(min=1), default=100, help='Posterior draws of u')
@click.option('--n-rep', type=click.IntRange(min=1), default=100, help='Replications per draw')
@click.option('--n-cand', 'N', type=click.IntRange(min=1), default=200, help='Candidates per replication')
@click.option('--smoke', is_flag=True, help=f'Reduce the loops to {SMOKE_LOOPS} x {SMOKE_LOOPS}')
@click.option('--collapse-variance', is_flag=True, help='Sample with zero predictive covariance')
@click.option('--out-dir', type=click.Path(file_okay=False), default=str(DEFAULT_OUT_DIR),
              help='Output directory')
@click.pass_obj
def benchmark(app_context: AppContext, scenario: str, n_datasets: int, seed: int, N_u: int,
              n_rep: int, N: int, smoke: bool, collapse_variance: bool, out_dir: str) -> None:
    """Run a synthetic study end to end and write a comparison report."""
    if smoke:
        N_u = n_rep = SMOKE_LOOPS
    out = Path(out_dir)
    generator = benchmark_generator(scenario)
    objective = (ObjectiveSpec.sum_of_squares() if scenario == 'injection-molding'
                 else ObjectiveSpec.identity())
    prior, search = CalibrationPrior.flat(), USearch()
    settings = benchmark_settings(scenario, generator.box, objective, prior, search,
                                  n_datasets=n_datasets, N_u=N_u, n_rep=n_rep, N=N,
                                  smoke=smoke, collapse_variance=collapse_variance,
                                  max_workers=app_context.max_workers)
    report = report_header(settings, seed, 'benchmark')
    try:
        if scenario == 'mse-study':
            cfg = DecisionConfig(N_u, n_rep, N, generator.box, Seed(seed),
                                 collapse_variance=collapse_variance,
                                 max_workers=app_context.max_workers)
            study = mse_study(generator, n_datasets, cfg, prior, search)
            report['mse_study'] = study.to_dict()
            for name, values in study.mse.items():
                click.echo(f"{name}: MSE={np.round(values, 5).tolist()}")
        else:
            data = generator.generate(Seed(seed).child(0))
            input_names, _ = default_names(data)
            export_dataset(data, out, prefix=f'{scenario}_')
            cfg = DecisionConfig(N_u, n_rep, N, data.box, Seed(seed).child(1),
                                 collapse_variance=collapse_variance,
                                 max_workers=app_context.max_workers)
            names = SCENARIOS if scenario == 'illustrative' else ('multi-fidelity',)
            report['optimum'] = generator.optimum.tolist()
            report['scenarios'] = []
            for name in names:
                result = run_scenario(name, data, objective, cfg, prior, search)
                write_scenario_files(out, result, input_names, prefix=f'{scenario}_{name}_')
                entry = scenario_entry(result, input_names)
                iqr = result.summary.quantiles[2] - result.summary.quantiles[1]
                entry['iqr_fraction'] = (iqr / data.box.widths).tolist()
                report['scenarios'].append(entry)
                click.echo(f"{name}: median={np.round(result.summary.median, 4).tolist()} "
                           f"sd={np.round(result.summary.sd, 4).tolist()}")
        path = write_json_report(out / f'benchmark_{scenario}.json', report)
    except CalibrationToolError as e:
        _fail(e)
        return
    click.echo(f"Report written to {path}")


if __name__ == '__main__':
    cli()  # pylint: disable=no-value-for-parameter
