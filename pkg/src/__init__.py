"""
Multi-fidelity calibration toolkit - Bayesian calibration of a scaled low-fidelity model.

This package fits Gaussian-process emulators to cheap low-fidelity and scarce
high-fidelity data, estimates the scaling parameter linking them with a
leave-one-out posterior, predicts the high-fidelity process and characterizes
the distribution of the optimal inputs under that uncertainty.
"""

from src.benchmark import (
    QuadraticScenario, QuadraticPolynomial, PolynomialScenario, MultiOutputPolynomialScenario, ScenarioData,
    generate_scenario, polynomial_surrogate_scenario,
    cure_low_coefficients, cure_high_coefficients
)
from src.calibration import (
    CalibrationPrior, USearch, DiscrepancyFit, UEstimate, CalibrationResult,
    OutputCalibration, DiscrepancyCache, fit_discrepancy_given_u, estimate_u,
    loo_posterior, sample_u_posterior, calibrate_outputs
)
from src.config import (
    VERSION, ROOT_DIR, SRC_DIR, LOG_DIR, DEFAULT_LOG_FILE, CALIBRATION_LOG_FILE,
    DECISION_LOG_FILE, DEFAULT_OUT_DIR, RunConfig, load_run_config, validate_config
)
from src.decision import (
    ObjectiveSpec, DecisionConfig, OptimaCollection, OptimaSummary, ScenarioResult,
    MseStudyResult, evaluate_objective, run_decision_analysis, summarize_optima,
    run_scenario, mse_study
)
from src.design import Seed, Box, lhd_sample, jittered_cholesky, mvn_sample
from src.gp import (
    KernelParams, MeanFunction, NoiseModel, GpFit, kernel_eval, kernel_matrix,
    log_marginal_likelihood, gp_predict, fit_gp_mle
)
from src.main import cli, AppContext
from src.prediction import (
    MultiFidelityModel, SingleFidelityModel, PosteriorPredictive,
    assemble_joint, predict_high, predict_high_multi
)
from src.storage import (
    DatasetFile, load_dataset, export_dataset, write_json_report, read_json_report,
    write_optima_csv, write_histograms
)
from src.utils import setup_logging, get_module_logger, safe_execute

__version__ = VERSION

__all__ = [
    # benchmark
    'QuadraticScenario', 'QuadraticPolynomial', 'PolynomialScenario', 'MultiOutputPolynomialScenario',
    'ScenarioData',
    'generate_scenario', 'polynomial_surrogate_scenario',
    'cure_low_coefficients', 'cure_high_coefficients',

    # calibration
    'CalibrationPrior', 'USearch', 'DiscrepancyFit', 'UEstimate', 'CalibrationResult',
    'OutputCalibration', 'DiscrepancyCache', 'fit_discrepancy_given_u', 'estimate_u',
    'loo_posterior', 'sample_u_posterior', 'calibrate_outputs',

    # config
    'VERSION', 'ROOT_DIR', 'SRC_DIR', 'LOG_DIR', 'DEFAULT_LOG_FILE', 'CALIBRATION_LOG_FILE',
    'DECISION_LOG_FILE', 'DEFAULT_OUT_DIR', 'RunConfig', 'load_run_config', 'validate_config',

    # decision
    'ObjectiveSpec', 'DecisionConfig', 'OptimaCollection', 'OptimaSummary', 'ScenarioResult',
    'MseStudyResult', 'evaluate_objective', 'run_decision_analysis', 'summarize_optima',
    'run_scenario', 'mse_study',

    # design
    'Seed', 'Box', 'lhd_sample', 'jittered_cholesky', 'mvn_sample',

    # gp
    'KernelParams', 'MeanFunction', 'NoiseModel', 'GpFit', 'kernel_eval', 'kernel_matrix',
    'log_marginal_likelihood', 'gp_predict', 'fit_gp_mle',

    # main
    'cli', 'AppContext',

    # prediction
    'MultiFidelityModel', 'SingleFidelityModel', 'PosteriorPredictive',
    'assemble_joint', 'predict_high', 'predict_high_multi',

    # storage
    'DatasetFile', 'load_dataset', 'export_dataset', 'write_json_report', 'read_json_report',
    'write_optima_csv', 'write_histograms',

    # utils
    'setup_logging', 'get_module_logger', 'safe_execute'
]
