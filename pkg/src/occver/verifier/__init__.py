"""Sound and complete robustness checking for ReLU networks over input boxes."""
from .backend import BACKEND
from .bounds import NeuronBounds, interval_bounds, propagate_bounds
from .engine import DEFAULT_TIMEOUT, DEFAULT_TOL, Query, Status, Verdict, check_query, query_margin
from .validate import validate_counterexample

__all__ = [
    "BACKEND", "DEFAULT_TIMEOUT", "DEFAULT_TOL", "NeuronBounds", "Query", "Status", "Verdict",
    "check_query", "interval_bounds", "propagate_bounds", "query_margin", "validate_counterexample",
]
