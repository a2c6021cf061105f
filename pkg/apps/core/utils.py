"""Core utilities for the lab."""
from typing import Iterable, List, Sequence
import math

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    """Create the project-standard random generator for a seed."""
    return np.random.default_rng(int(seed))


def relative_error(analytic, numeric, floor: float = 1e-3) -> float:
    """
    Maximum elementwise relative error between two gradient arrays.

    The denominator is max(|a|, |n|, floor), so entries whose true value is
    tiny are judged on absolute error.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def parse_int_list(value: str) -> List[int]:
    """
    Parse a comma separated list of integers.
    Example: parse_int_list("128,256") returns [128, 256]
    """
    if not value:
        return []
    return [int(part) for part in value.split(',') if part.strip()]


def parse_float_list(value: str) -> List[float]:
    """Parse a comma separated list of floats."""
    if not value:
        return []
    return [float(part) for part in value.split(',') if part.strip()]


def relative_change(ablated: float, full: float) -> float:
    """(ablated - full) / full; NaN when the reference is zero."""
    if full == 0:
        return math.nan
    return (ablated - full) / full


def format_percent(value: float) -> str:
    """Format a fraction as a signed percentage string."""
    if value is None or math.isnan(value):
        return '-'
    return f"{value * 100:+.1f}%"


def fit_loglog_exponent(sizes: Sequence[float], values: Sequence[float]) -> float:
    """Slope of log(values) against log(sizes), least squares."""
    x = np.log(np.asarray(sizes, dtype=np.float64))
    y = np.log(np.asarray(values, dtype=np.float64))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def mean_or_nan(values: Iterable[float]) -> float:
    values = list(values)
    return float(np.mean(values)) if values else math.nan
