"""Naive, Balanced and Weighted IPS estimators over multi-logger logs.

All three share one shape: each logger ``i`` gets a per-sample weight
``lambda_i``, its importance-weighted terms are summed in record order, and
the estimate is ``sum_i lambda_i * S_i`` accumulated in logger order.
Naive IPS is the special case ``lambda_i = 1/n``, so a weighted estimate with
uniform weights is bit-identical to the naive one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np

from .core import LoggerDataset, MultiLoggerDataset, TabularPolicy, average_policy
from .errors import (
    DimensionMismatchError,
    EmptyDatasetError,
    EmptyKeepSetError,
    InvalidWeightsError,
    LengthMismatchError,
    UnknownLoggerError,
    ZeroAveragePropensityError,
)
from .exact import DivergenceProfile, WeightVector, optimal_weights


@dataclass(frozen=True, eq=False)
class EstimateReport:
    estimator_name: str
    estimate: float
    weights_used: Optional[WeightVector]
    per_logger_contribution: Tuple[float, ...]
    total_records: int
    logger_ids: Tuple[str, ...] = ()


def importance_terms(rewards, target_probs, denominators) -> np.ndarray:
    """``reward * target / denominator``, exactly 0 wherever the target probability is 0.

    Works elementwise on arrays of any matching shape, so the simulation
    harness can apply it to a whole block of replicates at once.
    """
    rewards = np.asarray(rewards, dtype=float)
    target_probs = np.asarray(target_probs, dtype=float)
    denominators = np.asarray(denominators, dtype=float)
    active = target_probs != 0
    safe = np.where(active, denominators, 1.0)
    return np.where(active, rewards * target_probs / safe, 0.0)


def target_probs_at(log: LoggerDataset, target: TabularPolicy) -> np.ndarray:
    if len(log):
        n_x, n_y = target.shape
        if log.contexts.max() >= n_x or log.actions.max() >= n_y:
            raise DimensionMismatchError(
                f"logger {log.logger_id!r}: record indices exceed target shape {target.shape}"
            )
    return target.probs[log.contexts, log.actions]


def _combine(name, dataset, per_logger_terms, weights, report_weights) -> EstimateReport:
    contributions = tuple(
        lam * math.fsum(terms) for lam, terms in zip(weights.weights, per_logger_terms)
    )
    return EstimateReport(
        estimator_name=name,
        estimate=math.fsum(contributions),
        weights_used=weights if report_weights else None,
        per_logger_contribution=contributions,
        total_records=dataset.n,
        logger_ids=dataset.logger_ids,
    )


def _ips_terms(dataset: MultiLoggerDataset, target: TabularPolicy):
    return [
        importance_terms(log.rewards, target_probs_at(log, target), log.propensities)
        for log in dataset.loggers
    ]


def naive_ips(dataset: MultiLoggerDataset, target: TabularPolicy) -> EstimateReport:
    if dataset.n < 1:
        raise EmptyDatasetError("naive IPS needs at least one record")
    weights = WeightVector.uniform(dataset.sizes)
    return _combine("naive", dataset, _ips_terms(dataset, target), weights, report_weights=False)


def balanced_ips(dataset: MultiLoggerDataset, target: TabularPolicy) -> EstimateReport:
    if dataset.n < 1:
        raise EmptyDatasetError("balanced IPS needs at least one record")
    avg = average_policy(dataset)
    per_logger = []
    for log in dataset.loggers:
        tp = target_probs_at(log, target)
        denom = avg.probs[log.contexts, log.actions]
        bad = np.flatnonzero((denom <= 0) & (tp != 0))
        if bad.size:
            j = int(bad[0])
            raise ZeroAveragePropensityError(
                f"logger {log.logger_id!r}: record {j} at ({log.contexts[j]}, {log.actions[j]}) "
                "has zero average propensity"
            )
        per_logger.append(importance_terms(log.rewards, tp, denom))
    weights = WeightVector.uniform(dataset.sizes)
    return _combine("balanced", dataset, per_logger, weights, report_weights=False)


def _check_alignment(dataset: MultiLoggerDataset, weights: WeightVector) -> None:
    if len(weights) != dataset.m:
        raise LengthMismatchError(f"{len(weights)} weights for {dataset.m} loggers")
    if weights.sample_sizes != dataset.sizes:
        raise InvalidWeightsError(
            f"weights were normalized for sizes {weights.sample_sizes}, "
            f"dataset has sizes {dataset.sizes}"
        )


def weighted_ips(
    dataset: MultiLoggerDataset, target: TabularPolicy, weights: WeightVector, name: str = "weighted"
) -> EstimateReport:
    _check_alignment(dataset, weights)
    return _combine(name, dataset, _ips_terms(dataset, target), weights, report_weights=True)


def weighted_ips_optimal(
    dataset: MultiLoggerDataset, target: TabularPolicy, profile: DivergenceProfile
) -> EstimateReport:
    return weighted_ips(dataset, target, optimal_weights(profile), name="weighted-optimal")


def drop_loggers(dataset: MultiLoggerDataset, keep: Iterable[str]) -> MultiLoggerDataset:
    keep = set(keep)
    if not keep:
        raise EmptyKeepSetError("keep at least one logger")
    unknown = keep - set(dataset.logger_ids)
    if unknown:
        raise UnknownLoggerError(f"unknown logger ids: {sorted(unknown)}")
    return MultiLoggerDataset(tuple(log for log in dataset.loggers if log.logger_id in keep))
