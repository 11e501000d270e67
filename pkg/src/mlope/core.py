"""Domain types: environments, tabular policies and multi-logger bandit logs.

Contexts and actions are finite index sets, so every policy is a row-stochastic
``|X| x |Y|`` matrix and every expectation over ``X x Y`` is a finite sum.
All types are frozen; their arrays are stored read-only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyDatasetError,
    InvalidPolicyError,
    InvalidRecordError,
    MissingPolicyError,
    NonFiniteUtilityError,
    NonNormalizedPriorError,
    PropensityMismatchError,
    RewardMismatchError,
    ValidationError,
)

NORMALIZATION_TOL = 1e-12
PROPENSITY_TOL = 1e-9
REWARD_TOL = 1e-12


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Environment:
    """Context prior ``Pr(x)`` together with the utility table ``delta(x, y)``."""

    context_labels: Tuple[str, ...]
    action_labels: Tuple[str, ...]
    prior: np.ndarray
    utility: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "context_labels", tuple(str(c) for c in self.context_labels))
        object.__setattr__(self, "action_labels", tuple(str(a) for a in self.action_labels))
        object.__setattr__(self, "prior", _frozen(self.prior))
        object.__setattr__(self, "utility", _frozen(self.utility))
        validate_environment(self)

    @property
    def n_contexts(self) -> int:
        return len(self.context_labels)

    @property
    def n_actions(self) -> int:
        return len(self.action_labels)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_contexts, self.n_actions)

    def cell_label(self, x: int, y: int) -> str:
        return f"({self.context_labels[x]}, {self.action_labels[y]})"


def validate_environment(env: Environment) -> None:
    """Raise if any :class:`Environment` invariant is violated."""
    n_x, n_y = len(env.context_labels), len(env.action_labels)
    if n_x < 1 or n_y < 1:
        raise DimensionMismatchError(
            f"environment needs at least one context and one action, got {n_x}x{n_y}"
        )
    for name, labels in (("context_labels", env.context_labels), ("action_labels", env.action_labels)):
        if len(set(labels)) != len(labels):
            raise DimensionMismatchError(f"{name} must be unique, got {list(labels)}")
    prior = np.asarray(env.prior)
    utility = np.asarray(env.utility)
    if prior.shape != (n_x,):
        raise DimensionMismatchError(f"prior has shape {prior.shape}, expected ({n_x},)")
    if utility.shape != (n_x, n_y):
        raise DimensionMismatchError(f"utility has shape {utility.shape}, expected ({n_x}, {n_y})")
    for x, p in enumerate(prior):
        if not np.isfinite(p) or p < 0:
            raise NonNormalizedPriorError(f"prior[{x}] = {p} is not a probability")
    total = math.fsum(prior)
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise NonNormalizedPriorError(f"prior sums to {total!r}, expected 1")
    bad = np.argwhere(~np.isfinite(utility))
    if bad.size:
        x, y = (int(v) for v in bad[0])
        raise NonFiniteUtilityError(f"utility[{x}][{y}] = {utility[x, y]} is not finite")


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """A stochastic policy ``pi(y|x)`` stored as a row-stochastic matrix."""

    name: str
    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 2 or probs.shape[0] < 1 or probs.shape[1] < 1:
            raise DimensionMismatchError(
                f"policy {self.name!r}: probs must be a non-empty matrix, got shape {probs.shape}"
            )
        bad = np.argwhere(~np.isfinite(probs) | (probs < 0) | (probs > 1))
        if bad.size:
            x, y = (int(v) for v in bad[0])
            raise InvalidPolicyError(
                f"policy {self.name!r}: probs[{x}][{y}] = {probs[x, y]} is not in [0, 1]"
            )
        for x, row in enumerate(probs):
            total = math.fsum(row)
            if abs(total - 1.0) > NORMALIZATION_TOL:
                raise InvalidPolicyError(
                    f"policy {self.name!r}: row {x} sums to {total!r}, expected 1"
                )

    @property
    def shape(self) -> Tuple[int, int]:
        return self.probs.shape


def check_compatible(env: Environment, *policies: TabularPolicy) -> None:
    for policy in policies:
        if policy.shape != env.shape:
            raise DimensionMismatchError(
                f"policy {policy.name!r} has shape {policy.shape}, environment is {env.shape}"
            )


def find_support_violation(
    logger: TabularPolicy, target: TabularPolicy, env: Environment
) -> Optional[Tuple[int, int]]:
    """First ``(x, y)`` in row-major order where ``delta * target != 0`` but ``logger == 0``."""
    check_compatible(env, logger, target)
    needed = (env.utility * target.probs) != 0
    missing = needed & ~(logger.probs > 0)
    hits = np.argwhere(missing)
    if hits.size == 0:
        return None
    return int(hits[0][0]), int(hits[0][1])


def has_support(logger: TabularPolicy, target: TabularPolicy, env: Environment) -> bool:
    return find_support_violation(logger, target, env) is None


@dataclass(frozen=True)
class LogRecord:
    context_index: int
    action_index: int
    reward: float
    propensity: float

    def __post_init__(self):
        if not (0 < self.propensity <= 1):
            raise InvalidRecordError(f"propensity {self.propensity} is not in (0, 1]")


@dataclass(frozen=True, eq=False)
class LoggerDataset:
    """The log ``D^i`` of one logging policy, stored column-wise.

    ``records`` materializes :class:`LogRecord` objects on demand; estimators
    work on the columns directly.
    """

    logger_id: str
    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    propensities: np.ndarray
    policy: Optional[TabularPolicy] = None

    def __post_init__(self):
        contexts = _frozen(self.contexts, dtype=np.int64).reshape(-1)
        actions = _frozen(self.actions, dtype=np.int64).reshape(-1)
        rewards = _frozen(self.rewards).reshape(-1)
        propensities = _frozen(self.propensities).reshape(-1)
        for name, value in (("contexts", contexts), ("actions", actions), ("rewards", rewards), ("propensities", propensities)):
            object.__setattr__(self, name, value)
        n = contexts.shape[0]
        if not (actions.shape[0] == rewards.shape[0] == propensities.shape[0] == n):
            raise DimensionMismatchError(f"logger {self.logger_id!r}: record columns differ in length")
        if n and (contexts.min() < 0 or actions.min() < 0):
            raise InvalidRecordError(f"logger {self.logger_id!r}: negative context or action index")
        bad = np.flatnonzero(~((propensities > 0) & (propensities <= 1)))
        if bad.size:
            j = int(bad[0])
            raise InvalidRecordError(
                f"logger {self.logger_id!r}: record {j} has propensity {propensities[j]}, expected (0, 1]"
            )
        bad = np.flatnonzero(~np.isfinite(rewards))
        if bad.size:
            raise InvalidRecordError(f"logger {self.logger_id!r}: record {int(bad[0])} has a non-finite reward")
        if self.policy is not None and n:
            n_x, n_y = self.policy.shape
            if contexts.max() >= n_x or actions.max() >= n_y:
                raise DimensionMismatchError(
                    f"logger {self.logger_id!r}: record indices exceed policy shape {self.policy.shape}"
                )
            stored = self.policy.probs[contexts, actions]
            bad = np.flatnonzero(np.abs(stored - propensities) > PROPENSITY_TOL)
            if bad.size:
                j = int(bad[0])
                raise PropensityMismatchError(
                    f"logger {self.logger_id!r}: record {j} logs propensity {float(propensities[j])!r} "
                    f"but the stored policy gives {float(stored[j])!r} at ({contexts[j]}, {actions[j]})"
                )

    @classmethod
    def from_records(
        cls, logger_id: str, records: Iterable[LogRecord], policy: Optional[TabularPolicy] = None
    ) -> "LoggerDataset":
        records = list(records)
        return cls(
            logger_id=logger_id,
            contexts=[r.context_index for r in records],
            actions=[r.action_index for r in records],
            rewards=[r.reward for r in records],
            propensities=[r.propensity for r in records],
            policy=policy,
        )

    @property
    def records(self) -> Tuple[LogRecord, ...]:
        return tuple(
            LogRecord(int(x), int(y), float(r), float(p))
            for x, y, r, p in zip(self.contexts, self.actions, self.rewards, self.propensities)
        )

    def __len__(self) -> int:
        return int(self.contexts.shape[0])

    @property
    def n(self) -> int:
        return len(self)


@dataclass(frozen=True, eq=False)
class MultiLoggerDataset:
    """The combined log ``D``: one :class:`LoggerDataset` per logging policy, in order."""

    loggers: Tuple[LoggerDataset, ...] = field(default_factory=tuple)

    def __post_init__(self):
        loggers = tuple(self.loggers)
        object.__setattr__(self, "loggers", loggers)
        if not loggers:
            raise ValidationError("a dataset needs at least one logger")
        ids = [log.logger_id for log in loggers]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"logger ids must be unique, got {ids}")
        shapes = {log.policy.shape for log in loggers if log.policy is not None}
        if len(shapes) > 1:
            raise DimensionMismatchError(f"stored logger policies disagree on shape: {sorted(shapes)}")

    @property
    def m(self) -> int:
        return len(self.loggers)

    @property
    def sizes(self) -> Tuple[int, ...]:
        return tuple(len(log) for log in self.loggers)

    @property
    def n(self) -> int:
        return sum(self.sizes)

    @property
    def logger_ids(self) -> Tuple[str, ...]:
        return tuple(log.logger_id for log in self.loggers)

    def __getitem__(self, logger_id: str) -> LoggerDataset:
        for log in self.loggers:
            if log.logger_id == logger_id:
                return log
        raise KeyError(logger_id)


def check_dataset(dataset: MultiLoggerDataset, env: Environment, strict: bool = False) -> None:
    """Check that record indices fit ``env``; with ``strict`` also compare rewards to ``delta``."""
    for log in dataset.loggers:
        if log.policy is not None:
            check_compatible(env, log.policy)
        if not len(log):
            continue
        if log.contexts.max() >= env.n_contexts or log.actions.max() >= env.n_actions:
            raise DimensionMismatchError(
                f"logger {log.logger_id!r}: record indices exceed environment shape {env.shape}"
            )
        if strict:
            expected = env.utility[log.contexts, log.actions]
            bad = np.flatnonzero(np.abs(expected - log.rewards) > REWARD_TOL)
            if bad.size:
                j = int(bad[0])
                raise RewardMismatchError(
                    f"logger {log.logger_id!r}: record {j} reward {float(log.rewards[j])!r} differs from "
                    f"delta{env.cell_label(int(log.contexts[j]), int(log.actions[j]))} = {float(expected[j])!r}"
                )


def mixture_policy(
    policies: Sequence[TabularPolicy], sizes: Sequence[int], name: str = "pi_avg"
) -> TabularPolicy:
    """Size-weighted convex combination ``sum_i n_i pi_i / n``."""
    if len(policies) != len(sizes) or not policies:
        raise DimensionMismatchError("need one size per policy and at least one policy")
    shapes = {p.shape for p in policies}
    if len(shapes) != 1:
        raise DimensionMismatchError(f"policies disagree on shape: {sorted(shapes)}")
    if len(policies) == 1:
        return TabularPolicy(name, policies[0].probs)
    n = sum(sizes)
    n_x, n_y = policies[0].shape
    probs = np.empty((n_x, n_y))
    for x in range(n_x):
        for y in range(n_y):
            probs[x, y] = math.fsum(k * p.probs[x, y] for k, p in zip(sizes, policies)) / n
    return TabularPolicy(name, probs)


def average_policy(dataset: MultiLoggerDataset) -> TabularPolicy:
    missing = [log.logger_id for log in dataset.loggers if log.policy is None]
    if missing:
        raise MissingPolicyError(f"loggers without a stored policy: {missing}")
    if dataset.n < 1:
        raise EmptyDatasetError("average policy needs at least one record")
    kept = [log for log in dataset.loggers if len(log)]
    return mixture_policy([log.policy for log in kept], [len(log) for log in kept])
