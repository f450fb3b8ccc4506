"""
Configuration module for the multi-fidelity calibration toolkit.

This module provides centralized configuration settings for the application:
paths, numerical defaults for fitting and calibration, and the run
configuration file read by the command-line pipeline. Every default can be
overridden from the environment (or a ``.env`` file) with an ``MFCAL_`` prefix.
"""
import os
import logging
import configparser
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, Optional, Tuple, Union, Any

from dotenv import load_dotenv

load_dotenv()

# Environment variable configuration
def get_env(key: str, default: Optional[str] = None) -> Optional[str]:
    """
    Get an environment variable value with a default fallback.

    Args:
        key: The environment variable name (without the ``MFCAL_`` prefix)
        default: Default value if the environment variable is not set

    Returns:
        The environment variable value or the default
    """
    return os.environ.get(f"MFCAL_{key}", default)

# Package version recorded in every report
VERSION: str = '0.1.0'

# Base paths
ROOT_DIR: Path = Path(__file__).parent.parent
SRC_DIR: Path = Path(__file__).parent

# Default paths
LOG_DIR: Path = Path(get_env('LOG_DIR', str(ROOT_DIR / 'logs')))
DEFAULT_LOG_FILE: Path = LOG_DIR / 'app.log'
CALIBRATION_LOG_FILE: Path = LOG_DIR / 'calibration.log'
DECISION_LOG_FILE: Path = LOG_DIR / 'decision.log'
DEFAULT_OUT_DIR: Path = Path(get_env('OUT_DIR', str(ROOT_DIR / 'results')))

# Log record layouts; stage logs add the worker thread, since folds and
# decision-loop iterations run on a pool
LOG_FORMAT: str = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'
STAGE_LOG_FORMAT: str = '%(asctime)s [%(levelname)s] %(threadName)s %(name)s: %(message)s'

# Parallelism (1 runs every loop in the calling thread)
MAX_WORKERS: int = int(get_env('MAX_WORKERS', str(min(8, os.cpu_count() or 1))))

# GP fitting
DEFAULT_N_STARTS: int = int(get_env('N_STARTS', '8'))
LOW_FIDELITY_NUGGET: float = float(get_env('LOW_FIDELITY_NUGGET', '1e-10'))

# Calibration parameter search
DEFAULT_U_SEARCH: Tuple[float, float] = (float(get_env('U_LO', '-2.0')),
                                         float(get_env('U_HI', '12.0')))
DEFAULT_U_GRID: int = int(get_env('U_GRID', '81'))
GOLDEN_TOL: float = float(get_env('GOLDEN_TOL', '1e-4'))

# Decision analysis
MAX_SKIP_FRACTION: float = float(get_env('MAX_SKIP_FRACTION', '0.10'))
DEFAULT_SEED: int = int(get_env('SEED', '20240521'))
DEFAULT_HISTOGRAM_BINS: int = int(get_env('HISTOGRAM_BINS', '30'))


@dataclass(frozen=True)
class RunConfig:
    """Resolved contents of a run configuration file."""
    low_path: Path
    high_path: Path
    inputs: Tuple[str, ...]
    outputs: Tuple[str, ...]
    box: Dict[str, Tuple[float, float]]
    objective_kind: str = 'identity'
    objective_weights: Tuple[float, ...] = ()
    prior_kind: str = 'flat'
    prior_params: Dict[str, float] = field(default_factory=dict)
    u_search: Tuple[float, float] = DEFAULT_U_SEARCH
    u_grid: int = DEFAULT_U_GRID
    N_u: int = 100
    n_rep: int = 100
    N: int = 200
    seed: int = DEFAULT_SEED
    out_dir: Path = DEFAULT_OUT_DIR
    collapse_variance: bool = False

    def to_dict(self) -> Dict[str, Any]:
        """Plain representation embedded in every report."""
        data = asdict(self)
        data['low_path'] = str(self.low_path)
        data['high_path'] = str(self.high_path)
        data['out_dir'] = str(self.out_dir)
        data['inputs'] = list(self.inputs)
        data['outputs'] = list(self.outputs)
        data['box'] = {name: list(bounds) for name, bounds in self.box.items()}
        data['objective_weights'] = list(self.objective_weights)
        data['u_search'] = list(self.u_search)
        return data


def _split_names(value: str) -> Tuple[str, ...]:
    return tuple(name.strip() for name in value.split(',') if name.strip())


def load_run_config(path: Union[str, Path], **overrides: Any) -> RunConfig:
    """
    Read a run configuration file.

    The file uses ``key = value`` sections: ``[data]``, ``[box.<input>]``,
    ``[objective]``, ``[prior]``, ``[u_search]`` and ``[run]``. Relative
    dataset paths and ``out_dir`` resolve against the file's directory.

    Args:
        path: Path to the configuration file
        **overrides: RunConfig fields replacing the file's values (None is ignored)

    Returns:
        The resolved RunConfig

    Raises:
        KeyError: If a mandatory section or key is missing
        ValueError: If a value cannot be converted
    """
    path = Path(path)
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep N_u / N distinct
    with open(path, 'r', encoding='utf-8') as f:
        parser.read_file(f)

    base = path.parent
    data = parser['data']
    inputs = _split_names(data['inputs'])
    outputs = _split_names(data['outputs'])

    box: Dict[str, Tuple[float, float]] = {}
    for name in inputs:
        section = parser[f'box.{name}']
        box[name] = (float(section['lo']), float(section['hi']))

    objective = parser['objective'] if parser.has_section('objective') else {}
    weights = tuple(float(w) for w in _split_names(objective.get('weights', '')))

    prior_kind = 'flat'
    prior_params: Dict[str, float] = {}
    if parser.has_section('prior'):
        prior_kind = parser['prior'].get('kind', 'flat').strip()
        prior_params = {key: float(value) for key, value in parser['prior'].items()
                        if key != 'kind'}

    u_search = DEFAULT_U_SEARCH
    u_grid = DEFAULT_U_GRID
    if parser.has_section('u_search'):
        section = parser['u_search']
        u_search = (float(section.get('lo', str(DEFAULT_U_SEARCH[0]))),
                    float(section.get('hi', str(DEFAULT_U_SEARCH[1]))))
        u_grid = int(section.get('n_grid', str(DEFAULT_U_GRID)))

    run = parser['run'] if parser.has_section('run') else {}
    values: Dict[str, Any] = dict(
        low_path=base / data['low'],
        high_path=base / data['high'],
        inputs=inputs,
        outputs=outputs,
        box=box,
        objective_kind=objective.get('kind', 'identity').strip(),
        objective_weights=weights,
        prior_kind=prior_kind,
        prior_params=prior_params,
        u_search=u_search,
        u_grid=u_grid,
        N_u=int(run.get('N_u', '100')),
        n_rep=int(run.get('n_rep', '100')),
        N=int(run.get('N', '200')),
        seed=int(run.get('seed', str(DEFAULT_SEED))),
        out_dir=base / run.get('out_dir', str(DEFAULT_OUT_DIR)),
        collapse_variance=str(run.get('collapse_variance', 'false')).strip().lower()
        in ('1', 'true', 'yes', 'on'),
    )
    for key, value in overrides.items():
        if value is not None:
            values[key] = Path(value) if key in ('low_path', 'high_path', 'out_dir') else value
    return RunConfig(**values)


def validate_config(cfg: RunConfig) -> Dict[str, bool]:
    """
    Validate the run configuration.

    Args:
        cfg: The configuration to check

    Returns:
        A dictionary with validation results for each setting
    """
    weights_ok = (cfg.objective_kind != 'weighted_sum_of_squares'
                  or (len(cfg.objective_weights) == len(cfg.outputs)
                      and all(w >= 0 for w in cfg.objective_weights)))
    prior = cfg.prior_params
    if cfg.prior_kind == 'flat':
        prior_ok = True
    elif cfg.prior_kind == 'gaussian':
        prior_ok = 'mean' in prior and prior.get('sd', 0.0) > 0
    elif cfg.prior_kind == 'uniform':
        prior_ok = 'lo' in prior and 'hi' in prior and prior['lo'] < prior['hi']
    else:
        prior_ok = False

    validation = {
        "low_path": cfg.low_path.exists(),
        "high_path": cfg.high_path.exists(),
        "inputs": len(cfg.inputs) >= 1,
        "outputs": len(cfg.outputs) >= 1,
        "box": all(name in cfg.box and cfg.box[name][0] < cfg.box[name][1]
                   for name in cfg.inputs),
        "objective.kind": cfg.objective_kind in ('identity', 'sum_of_squares',
                                                 'weighted_sum_of_squares')
        and (cfg.objective_kind != 'identity' or len(cfg.outputs) == 1),
        "objective.weights": weights_ok,
        "prior": prior_ok,
        "u_search": cfg.u_search[0] < cfg.u_search[1] and cfg.u_grid >= 3,
        "N_u": cfg.N_u >= 1,
        "n_rep": cfg.n_rep >= 1,
        "N": cfg.N >= 1,
        "seed": 0 <= cfg.seed < 2 ** 64,
    }

    # Log validation results
    for key, valid in validation.items():
        if not valid:
            logging.warning(f"Configuration validation failed for {key}")

    return validation
