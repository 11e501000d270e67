"""Off-policy evaluation of a target policy from logs collected by several logging policies."""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("mlope")
except PackageNotFoundError:  # running from a source checkout
    __version__ = "0.1.0"

from .core import (
    Environment,
    LogRecord,
    LoggerDataset,
    MultiLoggerDataset,
    TabularPolicy,
    average_policy,
    check_dataset,
    has_support,
    mixture_policy,
)
from .estimators import (
    EstimateReport,
    balanced_ips,
    drop_loggers,
    naive_ips,
    weighted_ips,
    weighted_ips_optimal,
)
from .exact import (
    DivergenceProfile,
    WeightVector,
    balanced_variance,
    divergence,
    divergence_profile,
    exact_utility,
    naive_variance,
    optimal_importance_policy,
    optimal_weighted_variance,
    optimal_weights,
    reduction_ratio,
    weighted_variance,
)
from .sim import (
    ReplicationSummary,
    SimulationConfig,
    make_policy_family,
    replicate,
    sample_bandit_log,
    sweep,
)
from .weights import EstimatedDivergenceProfile, estimate_divergence, estimate_weights

__all__ = [name for name in dir() if not name.startswith("_")]
