"""Closed-form utilities, divergences, estimator variances and optimal weights.

Everything here is an exact finite sum over ``X x Y``. Sums use
:func:`math.fsum` over cells visited in row-major order, so results are
correctly rounded and reproducible bit for bit.

Cells where ``delta(x, y) * target(y|x) == 0`` are skipped in every
importance-weighted sum: support only asks for positive logging probability
where that product is nonzero, and skipping avoids ``0/0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .core import (
    Environment,
    TabularPolicy,
    check_compatible,
    find_support_violation,
    mixture_policy,
)
from .errors import (
    InternalConsistencyError,
    InvalidCountError,
    InvalidWeightsError,
    LengthMismatchError,
    NegativeRowMassError,
    SupportViolationError,
    ZeroDivergenceError,
)

NEGATIVE_CLAMP_TOL = 1e-9
DIVERGENCE_FLOOR = 1e-12
WEIGHT_SUM_TOL = 1e-10

fsum = math.fsum


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Per-sample weights ``lambda_i`` for each logger, with ``sum_i lambda_i n_i = 1``."""

    weights: Tuple[float, ...]
    sample_sizes: Tuple[int, ...]

    def __post_init__(self):
        weights = tuple(float(w) for w in self.weights)
        sizes = tuple(int(n) for n in self.sample_sizes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "sample_sizes", sizes)
        if len(weights) != len(sizes):
            raise LengthMismatchError(f"{len(weights)} weights for {len(sizes)} sample sizes")
        for i, w in enumerate(weights):
            if not math.isfinite(w) or w < 0:
                raise InvalidWeightsError(f"weight {i} is {w}, weights must be finite and >= 0")
        total = fsum(w * n for w, n in zip(weights, sizes))
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise InvalidWeightsError(f"sum of lambda_i * n_i is {total!r}, expected 1")

    @classmethod
    def uniform(cls, sample_sizes: Sequence[int]) -> "WeightVector":
        n = sum(sample_sizes)
        return cls(tuple(1.0 / n for _ in sample_sizes), tuple(sample_sizes))

    def __len__(self) -> int:
        return len(self.weights)


@dataclass(frozen=True, eq=False)
class DivergenceProfile:
    """Per-logger divergences with the sample sizes they are paired with.

    ``relative_divergences`` (``v_i``) and ``relative_sizes`` (``r_i``) are
    normalized by the last logger and are ``None`` when that denominator is zero.
    """

    per_logger_divergence: Tuple[float, ...]
    sample_sizes: Tuple[int, ...]

    def __post_init__(self):
        divs = tuple(float(d) for d in self.per_logger_divergence)
        sizes = tuple(int(n) for n in self.sample_sizes)
        object.__setattr__(self, "per_logger_divergence", divs)
        object.__setattr__(self, "sample_sizes", sizes)
        if len(divs) != len(sizes) or not divs:
            raise LengthMismatchError(f"{len(divs)} divergences for {len(sizes)} sample sizes")
        for i, d in enumerate(divs):
            if not math.isfinite(d) or d < 0:
                raise InternalConsistencyError(f"divergence {i} is {d}, expected a finite value >= 0")
        for i, n in enumerate(sizes):
            if n < 1:
                raise InvalidCountError(f"sample size {i} is {n}, expected >= 1")

    @property
    def relative_divergences(self) -> Optional[Tuple[float, ...]]:
        last = self.per_logger_divergence[-1]
        if last <= 0:
            return None
        return tuple(d / last for d in self.per_logger_divergence)

    @property
    def relative_sizes(self) -> Tuple[float, ...]:
        last = self.sample_sizes[-1]
        return tuple(n / last for n in self.sample_sizes)

    @property
    def m(self) -> int:
        return len(self.sample_sizes)


def _require_support(logger: TabularPolicy, target: TabularPolicy, env: Environment) -> None:
    cell = find_support_violation(logger, target, env)
    if cell is not None:
        x, y = cell
        raise SupportViolationError(
            f"policy {logger.name!r} has no support for {target.name!r} at "
            f"{env.cell_label(x, y)}: delta * target != 0 but probability is 0",
            x=x,
            y=y,
        )


def _check_sizes(loggers: Sequence[TabularPolicy], sizes: Sequence[int]) -> None:
    if len(loggers) != len(sizes):
        raise LengthMismatchError(f"{len(loggers)} loggers for {len(sizes)} sizes")
    if not loggers:
        raise LengthMismatchError("need at least one logger")
    for i, n in enumerate(sizes):
        if int(n) != n or n < 1:
            raise InvalidCountError(f"size {i} is {n}, expected a positive integer")


def _active_cells(target: TabularPolicy, env: Environment):
    """Yield ``(x, y, c)`` with ``c = delta * target != 0`` in row-major order."""
    c = env.utility * target.probs
    for x in range(env.n_contexts):
        for y in range(env.n_actions):
            if c[x, y] != 0:
                yield x, y, float(c[x, y])


def exact_utility(policy: TabularPolicy, env: Environment) -> float:
    check_compatible(env, policy)
    prior, delta, probs = env.prior, env.utility, policy.probs
    return fsum(
        prior[x] * probs[x, y] * delta[x, y]
        for x in range(env.n_contexts)
        for y in range(env.n_actions)
    )


def _clamp(value: float, what: str) -> float:
    if value >= 0:
        return value
    if value >= -NEGATIVE_CLAMP_TOL:
        return 0.0
    raise InternalConsistencyError(f"{what} evaluated to {value!r} < 0")


def divergence(target: TabularPolicy, logger: TabularPolicy, env: Environment) -> float:
    """Variance of ``delta * target / logger`` under ``x ~ Pr``, ``y ~ logger``."""
    _require_support(logger, target, env)
    second_moment = fsum(
        c * c / logger.probs[x, y] * env.prior[x] for x, y, c in _active_cells(target, env)
    )
    u = exact_utility(target, env)
    return _clamp(second_moment - u * u, f"divergence of {logger.name!r}")


def divergence_profile(
    target: TabularPolicy,
    loggers: Sequence[TabularPolicy],
    sizes: Sequence[int],
    env: Environment,
) -> DivergenceProfile:
    _check_sizes(loggers, sizes)
    return DivergenceProfile(tuple(divergence(target, p, env) for p in loggers), tuple(sizes))


def optimal_importance_policy(target: TabularPolicy, env: Environment) -> TabularPolicy:
    """Per-context normalization of ``delta(x, y) * target(y|x)``."""
    check_compatible(env, target)
    mass = env.utility * target.probs
    probs = np.empty_like(mass)
    for x in range(env.n_contexts):
        row = mass[x]
        if np.any(row < 0):
            raise NegativeRowMassError(
                f"context {env.context_labels[x]!r} has negative delta * target mass"
            )
        total = fsum(row)
        if total <= 0:
            raise NegativeRowMassError(
                f"context {env.context_labels[x]!r} has zero delta * target mass"
            )
        probs[x] = row / total
    return TabularPolicy(f"{target.name}_imp", probs)


def naive_variance(
    target: TabularPolicy,
    loggers: Sequence[TabularPolicy],
    sizes: Sequence[int],
    env: Environment,
) -> float:
    profile = divergence_profile(target, loggers, sizes, env)
    n = sum(sizes)
    return fsum(k * d for k, d in zip(profile.sample_sizes, profile.per_logger_divergence)) / (n * n)


def balanced_variance(
    target: TabularPolicy,
    loggers: Sequence[TabularPolicy],
    sizes: Sequence[int],
    env: Environment,
) -> float:
    _check_sizes(loggers, sizes)
    check_compatible(env, target, *loggers)
    avg = mixture_policy(loggers, sizes)
    _require_support(avg, target, env)
    cells = list(_active_cells(target, env))
    terms = []
    for k, policy in zip(sizes, loggers):
        second = fsum(
            c * c / (avg.probs[x, y] ** 2) * policy.probs[x, y] * env.prior[x] for x, y, c in cells
        )
        first = fsum(c / avg.probs[x, y] * policy.probs[x, y] * env.prior[x] for x, y, c in cells)
        terms.append(k * (second - first * first))
    n = sum(sizes)
    return _clamp(fsum(terms) / (n * n), "balanced variance")


def _check_profile_weights(profile: DivergenceProfile, weights: WeightVector) -> None:
    if len(weights) != profile.m:
        raise LengthMismatchError(f"{len(weights)} weights for {profile.m} loggers")
    if weights.sample_sizes != profile.sample_sizes:
        raise InvalidWeightsError(
            f"weights were normalized for sizes {weights.sample_sizes}, "
            f"profile has sizes {profile.sample_sizes}"
        )


def weighted_variance(profile: DivergenceProfile, weights: WeightVector) -> float:
    _check_profile_weights(profile, weights)
    return fsum(
        lam * lam * k * d
        for lam, k, d in zip(weights.weights, profile.sample_sizes, profile.per_logger_divergence)
    )


def _require_positive(profile: DivergenceProfile) -> None:
    for i, d in enumerate(profile.per_logger_divergence):
        if d < DIVERGENCE_FLOOR:
            raise ZeroDivergenceError(
                f"logger {i} has divergence {d!r} below the floor {DIVERGENCE_FLOOR}"
            )


def optimal_weights(profile: DivergenceProfile) -> WeightVector:
    _require_positive(profile)
    precision = fsum(k / d for k, d in zip(profile.sample_sizes, profile.per_logger_divergence))
    weights = tuple(1.0 / (d * precision) for d in profile.per_logger_divergence)
    return WeightVector(weights, profile.sample_sizes)


def optimal_weighted_variance(profile: DivergenceProfile) -> float:
    """The minimum of :func:`weighted_variance` over valid weights, ``1 / sum(n_i / sigma_i^2)``."""
    _require_positive(profile)
    return 1.0 / fsum(k / d for k, d in zip(profile.sample_sizes, profile.per_logger_divergence))


def reduction_ratio(profile: DivergenceProfile) -> float:
    """Optimal weighted variance over naive variance, from relative sizes and divergences."""
    _require_positive(profile)
    v = profile.relative_divergences
    r = profile.relative_sizes
    total = fsum(r)
    return total * total / (fsum(ri * vi for ri, vi in zip(r, v)) * fsum(ri / vi for ri, vi in zip(r, v)))
