"""q-error and percentile helpers shared by the trainer and the eval kit."""

from __future__ import annotations

import math

from .errors import NumericError


def qerror(a: float, b: float) -> float:
    """Symmetric multiplicative error max(a/b, b/a); 1 means a perfect match."""
    if not (a > 0 and b > 0) or not (math.isfinite(a) and math.isfinite(b)):
        raise NumericError(f"qerror needs positive finite inputs, got ({a}, {b})")
    return max(a / b, b / a)


def nearest_rank(sorted_values, pct: float) -> float:
    """Nearest-rank percentile of an ascending list."""
    n = len(sorted_values)
    if n == 0:
        raise NumericError("percentile of an empty list is undefined")
    rank = math.ceil(pct / 100.0 * n)
    return float(sorted_values[max(0, min(n, rank) - 1)])


def summarize_qerrors(values) -> dict:
    ordered = sorted(values)
    return {
        "count": len(ordered),
        "median": nearest_rank(ordered, 50),
        "p95": nearest_rank(ordered, 95),
        "p99": nearest_rank(ordered, 99),
        "max": float(ordered[-1]),
    }
