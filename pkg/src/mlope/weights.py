"""Divergence and weight estimation from logged data alone.

Each logger's divergence is estimated as the sample variance of its own
importance-weighted rewards; the pooled log is never used. The estimates are
then plugged into the closed-form optimal weights.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

from .core import LoggerDataset, MultiLoggerDataset, TabularPolicy
from .errors import InsufficientSamplesError, ZeroDivergenceEstimateError
from .estimators import target_probs_at, importance_terms
from .exact import DIVERGENCE_FLOOR, DivergenceProfile, WeightVector, optimal_weights

FALLBACKS = ("naive",)


@dataclass(frozen=True, eq=False)
class EstimatedDivergenceProfile:
    per_logger_estimate: Tuple[float, ...]
    per_logger_count: Tuple[int, ...]
    floor_applied: Tuple[bool, ...]

    def as_profile(self) -> DivergenceProfile:
        return DivergenceProfile(self.per_logger_estimate, self.per_logger_count)


def sample_variance(values) -> float:
    """Two-pass unbiased variance (divisor ``n - 1``) in the given order."""
    n = len(values)
    if n < 2:
        raise InsufficientSamplesError(f"sample variance needs at least 2 values, got {n}")
    mean = math.fsum(values) / n
    return math.fsum((v - mean) ** 2 for v in values) / (n - 1)


def estimate_divergence(log: LoggerDataset, target: TabularPolicy) -> float:
    if len(log) < 2:
        raise InsufficientSamplesError(
            f"logger {log.logger_id!r} has {len(log)} records, need at least 2"
        )
    terms = importance_terms(log.rewards, target_probs_at(log, target), log.propensities)
    return sample_variance(terms.tolist())


def estimate_divergence_profile(
    dataset: MultiLoggerDataset, target: TabularPolicy
) -> EstimatedDivergenceProfile:
    estimates = tuple(estimate_divergence(log, target) for log in dataset.loggers)
    return EstimatedDivergenceProfile(
        per_logger_estimate=estimates,
        per_logger_count=dataset.sizes,
        floor_applied=tuple(e < DIVERGENCE_FLOOR for e in estimates),
    )


def estimate_weights(
    dataset: MultiLoggerDataset, target: TabularPolicy, fallback: Optional[str] = None
) -> WeightVector:
    """Optimal weights computed from estimated divergences.

    A logger whose estimate falls below the divergence floor raises
    :class:`ZeroDivergenceEstimateError`, unless ``fallback="naive"`` in which
    case uniform ``1/n`` weights are returned.
    """
    if fallback is not None and fallback not in FALLBACKS:
        raise ValueError(f"unknown fallback {fallback!r}, expected one of {FALLBACKS}")
    profile = estimate_divergence_profile(dataset, target)
    if any(profile.floor_applied):
        if fallback == "naive":
            return WeightVector.uniform(dataset.sizes)
        flagged = [lid for lid, f in zip(dataset.logger_ids, profile.floor_applied) if f]
        raise ZeroDivergenceEstimateError(
            f"estimated divergence below {DIVERGENCE_FLOOR} for loggers {flagged}"
        )
    return optimal_weights(profile.as_profile())
