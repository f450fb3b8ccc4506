"""
Storage module for datasets and result files.

This module reads the low/high-fidelity CSV datasets, exports generated
scenarios in the same format, and writes the machine-readable reports, optima
tables and histogram tables produced by the pipeline. Every file is written
atomically.
"""
import csv
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.benchmark import ScenarioData
from src.calibration import CalibrationResult, DiscrepancyFit, OutputCalibration
from src.config import VERSION
from src.decision import OptimaCollection, OptimaSummary, ScenarioResult
from src.gp import GpFit, KernelParams, MeanFunction, gp_predict
from src.utils import (
    ConfigurationError, DatasetParseError, SchemaError, StorageError, atomic_write_text
)

# Logger for this module
logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


@dataclass(frozen=True)
class DatasetFile:
    """A CSV dataset of one fidelity with named input and output columns."""
    path: Path
    role: str
    inputs: Tuple[str, ...]
    outputs: Tuple[str, ...]
    delimiter: str = ','

    def validate(self) -> bool:
        """
        Validate the file description.

        Returns:
            True if the description is usable, False otherwise
        """
        return (self.role in ('low', 'high') and len(self.inputs) >= 1
                and len(self.outputs) >= 1
                and len(set(self.inputs + self.outputs)) == len(self.inputs) + len(self.outputs))


def _fmt(value: float) -> str:
    return FLOAT_FORMAT % value


def load_dataset(file: DatasetFile) -> Tuple[np.ndarray, np.ndarray]:
    """
    Read the named input and output columns of a dataset CSV.

    Row order and replicated input rows are preserved.

    Args:
        file: Dataset description

    Returns:
        Tuple of (X of shape (n, d), Y of shape (n, p))

    Raises:
        ConfigurationError: If the file does not exist or the description is invalid
        SchemaError: If a column is missing or there are fewer than 2 rows
        DatasetParseError: If a cell is not a finite number (with row and column)
    """
    path = Path(file.path)
    if not file.validate():
        raise ConfigurationError(f"Invalid dataset description for {path}")
    if not path.exists():
        raise ConfigurationError(f"Dataset file not found: {path}")

    try:
        frame = pd.read_csv(path, sep=file.delimiter, dtype=str, keep_default_na=False,
                            skipinitialspace=True, encoding='utf-8')
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as e:
        error_msg = f"Error reading dataset {path}: {e}"
        logger.error(error_msg)
        raise DatasetParseError(error_msg) from e

    frame.columns = [str(c).strip() for c in frame.columns]
    for column in file.inputs + file.outputs:
        if column not in frame.columns:
            raise SchemaError(f"Column '{column}' missing from {path}", column=column)
    if len(frame) < 2:
        raise SchemaError(f"Dataset {path} needs at least 2 rows, found {len(frame)}")

    values: Dict[str, np.ndarray] = {}
    for column in file.inputs + file.outputs:
        parsed = pd.to_numeric(frame[column].str.strip(), errors='coerce').to_numpy(dtype=float)
        bad = np.flatnonzero(~np.isfinite(parsed))
        if bad.size:
            row = int(bad[0]) + 1
            raise DatasetParseError(f"Non-numeric cell {frame[column].iloc[bad[0]]!r} in {path} "
                                    f"at data row {row}, column '{column}'",
                                    row=row, column=column)
        values[column] = parsed

    X = np.column_stack([values[c] for c in file.inputs])
    Y = np.column_stack([values[c] for c in file.outputs])
    logger.info(f"Loaded {file.role}-fidelity dataset {path}: {X.shape[0]} rows, "
                f"{X.shape[1]} inputs, {Y.shape[1]} outputs")
    return X, Y


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buffer.getvalue()


def default_names(data: ScenarioData) -> Tuple[Tuple[str, ...], Tuple[str, ...]]:
    """Column names x1..xd and y1..yp."""
    return (tuple(f'x{i + 1}' for i in range(data.dim)),
            tuple(f'y{k + 1}' for k in range(data.n_outputs)))


def export_dataset(data: ScenarioData, out_dir: Union[str, Path],
                   inputs: Optional[Sequence[str]] = None,
                   outputs: Optional[Sequence[str]] = None,
                   prefix: str = '') -> Tuple[Path, Path]:
    """
    Write a scenario as low and high-fidelity CSV files readable by load_dataset.

    Values carry 17 significant digits so they load back exactly.

    Returns:
        Tuple of (low path, high path)
    """
    default_inputs, default_outputs = default_names(data)
    inputs = tuple(inputs or default_inputs)
    outputs = tuple(outputs or default_outputs)
    if len(inputs) != data.dim or len(outputs) != data.n_outputs:
        raise SchemaError(f"Need {data.dim} input and {data.n_outputs} output names")
    out_dir = Path(out_dir)
    paths = []
    for role, X, Y in (('low', data.X_L, data.Y_L), ('high', data.X_H, data.Y_H)):
        rows = [[float(v) for v in x] + [float(v) for v in y] for x, y in zip(X, Y)]
        path = atomic_write_text(out_dir / f'{prefix}{role}.csv', _csv_text(inputs + outputs, rows))
        logger.info(f"Exported {len(rows)} {role}-fidelity rows to {path}")
        paths.append(path)
    return paths[0], paths[1]


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def report_header(config: Dict[str, Any], seed: int, command: str) -> Dict[str, Any]:
    """Fields every report starts with so it can be re-run."""
    return {'command': command, 'version': VERSION, 'seed': int(seed), 'config': config}


def write_json_report(path: Union[str, Path], payload: Dict[str, Any]) -> Path:
    """
    Write a report as indented JSON.

    Raises:
        StorageError: If the payload cannot be serialized or written
    """
    try:
        text = json.dumps(payload, indent=2, default=_json_default, allow_nan=True) + '\n'
    except (TypeError, ValueError) as e:
        error_msg = f"Error serializing report {path}: {e}"
        logger.error(error_msg)
        raise StorageError(error_msg) from e
    path = atomic_write_text(path, text)
    logger.info(f"Wrote report {path}")
    return path


def read_json_report(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read a report written by write_json_report.

    Raises:
        StorageError: If the file is missing or not valid JSON
    """
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise StorageError(f"Report not found: {path}") from e
    except json.JSONDecodeError as e:
        error_msg = f"Error reading report {path}: {e}"
        logger.error(error_msg)
        raise StorageError(error_msg) from e


def calibration_entry(calibration: OutputCalibration, name: str) -> Dict[str, Any]:
    """Report block of one output: estimate, interval, fold samples and fitted hyperparameters."""
    result = calibration.result
    emulator = calibration.low_emulator
    return {
        'output': name,
        'index': calibration.index,
        'u_hat': result.u_hat,
        'interval': list(result.interval),
        'summary': result.summary(),
        'loo_samples': result.loo_samples.tolist(),
        'n_folds_ok': result.n_folds_ok,
        'failed_folds': list(result.failed_folds),
        'on_boundary': result.on_boundary,
        'discrepancy': result.discrepancy.to_dict(),
        'low_emulator': {
            'mean': {'kind': emulator.mean.kind, 'value': emulator.mean.value},
            'kernel': emulator.params.to_dict(),
            'noise_variance': emulator.noise_variance,
        },
        'profile': [list(point) for point in result.profile],
    }


def calibrations_from_report(report: Dict[str, Any], data: ScenarioData) -> List[OutputCalibration]:
    """
    Rebuild per-output calibrations from a calibration report and the training data.

    Emulators and discrepancies are re-conditioned on ``data`` with the
    hyperparameters stored in the report; no refitting takes place.

    Raises:
        SchemaError: If the report lacks a required field or does not match the data
    """
    try:
        entries = report['outputs']
        if len(entries) != data.n_outputs:
            raise SchemaError(f"Report has {len(entries)} outputs, data has {data.n_outputs}")
        calibrations = []
        for entry in entries:
            k = int(entry['index'])
            low = entry['low_emulator']
            emulator = GpFit.build(data.X_L, data.Y_L[:, k],
                                   MeanFunction(low['mean']['kind'], float(low['mean']['value'])),
                                   KernelParams(float(low['kernel']['variance']),
                                                tuple(low['kernel']['length_scales'])),
                                   float(low['noise_variance']))
            disc = entry['discrepancy']
            u_hat = float(entry['u_hat'])
            y_low_hat, _ = gp_predict(emulator, data.X_H)
            discrepancy = DiscrepancyFit(
                u_hat,
                KernelParams(float(disc['kernel']['variance']), tuple(disc['kernel']['length_scales'])),
                float(disc['noise_variance']),
                data.Y_H[:, k] - u_hat * y_low_hat,
                data.X_H,
                float(disc['log_likelihood']),
            )
            result = CalibrationResult(u_hat, np.asarray(entry['loo_samples'], dtype=float),
                                       tuple(entry['interval']), discrepancy,
                                       tuple(tuple(p) for p in entry.get('profile', ())),
                                       tuple(entry.get('failed_folds', ())),
                                       bool(entry.get('on_boundary', False)))
            calibrations.append(OutputCalibration(k, emulator, result))
    except (KeyError, TypeError, IndexError) as e:
        raise SchemaError(f"Calibration report is missing or has malformed field: {e}") from e
    return calibrations


def write_optima_csv(path: Union[str, Path], coll: OptimaCollection,
                     input_names: Sequence[str]) -> Path:
    """Write X_opt with one row per recorded optimum: inputs, s, r and the realized objective."""
    rows = [[float(v) for v in point] + [int(s), int(r), float(g)]
            for point, (s, r), g in zip(coll.points, coll.provenance, coll.per_point_objective)]
    path = atomic_write_text(path, _csv_text(list(input_names) + ['s', 'r', 'G'], rows))
    logger.info(f"Wrote {len(rows)} optima to {path}")
    return path


def write_histograms(out_dir: Union[str, Path], summary: OptimaSummary,
                     input_names: Sequence[str], prefix: str = '') -> List[Path]:
    """Write one (bin_left, bin_right, count) table per input dimension."""
    paths = []
    for name, histogram in zip(input_names, summary.histograms):
        path = atomic_write_text(Path(out_dir) / f'{prefix}histogram_{name}.csv',
                                 _csv_text(['bin_left', 'bin_right', 'count'], histogram.rows()))
        paths.append(path)
    return paths


def scenario_entry(result: ScenarioResult, input_names: Sequence[str]) -> Dict[str, Any]:
    """Report block of one scenario pipeline, with per-input names."""
    entry = result.to_dict()
    entry['inputs'] = list(input_names)
    return entry
