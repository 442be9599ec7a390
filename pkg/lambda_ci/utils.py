#!/usr/bin/env python3
"""
Utility functions for the lambda_ci toolkit
Logging setup, file helpers, CSV emission, scaling regressions and worker pools
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import psutil

from .config import ToolkitConfig
from .exceptions import RegressionError

logger = logging.getLogger(__name__)


def setup_logging(name: str, level: str = 'INFO', log_file: Optional[str] = None) -> logging.Logger:
    """Set up logging for a module"""
    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, level.upper()))

    formatter = logging.Formatter(ToolkitConfig.LOGGING['format'])

    # Repeated CLI invocations in one process must not stack handlers
    for handler in list(logger.handlers):
        logger.removeHandler(handler)

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger


def safe_json_dump(data: Any, file_path: Path, **kwargs) -> bool:
    """Safely dump JSON data to file with error handling"""
    try:
        file_path = Path(file_path)
        file_path.parent.mkdir(parents=True, exist_ok=True)

        # Write to temporary file first
        temp_path = file_path.with_suffix('.tmp')
        with open(temp_path, 'w', encoding='utf-8') as f:
            json.dump(data, f, default=_json_default, **kwargs)

        temp_path.replace(file_path)
        return True

    except Exception as e:
        logger.error(f"Error saving JSON to {file_path}: {e}")
        return False


def _json_default(value: Any) -> Any:
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def format_timestamp(timestamp: Optional[datetime] = None, format_str: str = '%Y%m%d_%H%M%S') -> str:
    """Format timestamp to string"""
    if timestamp is None:
        timestamp = datetime.now()
    return timestamp.strftime(format_str)


def calculate_processing_time(start_time: float) -> str:
    """Calculate and format processing time"""
    elapsed = time.time() - start_time

    if elapsed < 60:
        return f"{elapsed:.1f} seconds"
    elif elapsed < 3600:
        minutes = elapsed / 60
        return f"{minutes:.1f} minutes"
    else:
        hours = elapsed / 3600
        return f"{hours:.1f} hours"


def write_csv(rows: Any, file_path: Path) -> Path:
    """Write diagnostic rows as CSV with a schema_version column and fixed float format"""
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
    frame = frame.copy()
    frame.insert(0, 'schema_version', ToolkitConfig.OUTPUT['csv_schema_version'])

    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(file_path, index=False, float_format=ToolkitConfig.OUTPUT['float_format'],
                 lineterminator='\n')
    return file_path


def read_csv(file_path: Path) -> pd.DataFrame:
    """Read a diagnostic CSV written by write_csv"""
    frame = pd.read_csv(file_path)
    return frame.drop(columns=['schema_version'], errors='ignore')


def loglog_fit(x: Sequence[float], y: Sequence[float], min_points: int = 2,
               floor: float = 0.0) -> Tuple[float, float]:
    """
    Least-squares slope and intercept of log(y) against log(x).

    Points with y <= floor are dropped. Returns (-inf, -inf) when every point was
    dropped because y vanished, which callers read as "faster than any power".
    """
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise RegressionError(f"Regression inputs differ in length: {x.shape} vs {y.shape}")

    keep = (y > floor) & (x > 0) & np.isfinite(y)
    if not keep.any() and len(x) >= min_points:
        return float('-inf'), float('-inf')
    if keep.sum() < max(min_points, 2) or np.unique(x[keep]).size < 2:
        raise RegressionError(
            f"Regression underdetermined: {int(keep.sum())} usable points, need {max(min_points, 2)}"
        )

    slope, intercept = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(slope), float(intercept)


def default_thread_count() -> int:
    """Physical core count, falling back to one worker"""
    return psutil.cpu_count(logical=False) or 1


def run_parallel(func: Callable[[Any], Any], items: Iterable[Any], threads: Optional[int] = None) -> List[Any]:
    """Map func over items on a thread pool, returning results in submission order"""
    items = list(items)
    workers = threads or default_thread_count()
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))