"""Bandit-log simulation, policy families, replication harness and exact sweeps.

Randomness is counter-based. A log drawn with seed ``s`` on stream ``k`` uses
a Philox generator keyed by ``s`` whose counter starts at ``(0, 0, k, 0)``;
record ``j`` consumes the two uniforms at positions ``2j`` and ``2j + 1``
(context, then action). Replicate ``r`` of a simulation draws logger ``i``
from ``child_seed(master_seed, r)`` on stream ``i``. A replicate's logs are
therefore a pure function of ``(master_seed, r)`` and do not depend on how
replicates are scheduled.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    Environment,
    LoggerDataset,
    MultiLoggerDataset,
    TabularPolicy,
    check_compatible,
    mixture_policy,
)
from .errors import (
    EmptyGridError,
    InsufficientSamplesError,
    InvalidCountError,
    MixOutOfRangeError,
    ValidationError,
    ZeroDivergenceEstimateError,
)
from .estimators import importance_terms
from .exact import (
    DIVERGENCE_FLOOR,
    WeightVector,
    balanced_variance,
    divergence_profile,
    exact_utility,
    naive_variance,
    optimal_weighted_variance,
    optimal_weights,
    weighted_variance,
)

ESTIMATORS = ("naive", "balanced", "weighted", "weighted-optimal", "weighted-estimated")
SWEEP_HEADER = ("v1", "r1", "ratio_drop", "ratio_bal", "ratio_weight", "ratio_weight_vs_bal")
DEFAULT_R1_GRID = (0.1, 0.25, 0.5, 1.0, 3.0, 5.0, 7.0, 9.0)
DEFAULT_MIX_GRID = (0.2, 0.4, 0.6, 0.8, 1.0)

# per block of replicates, bounds the number of simulated records held in memory
_BLOCK_RECORDS = 1 << 21
_MAX_BLOCK = 4096
_UINT64_MASK = (1 << 64) - 1


def child_seed(master_seed: int, replicate: int) -> int:
    """Seed for one replicate, a pure function of ``(master_seed, replicate)``."""
    seq = np.random.SeedSequence(master_seed & _UINT64_MASK, spawn_key=(replicate,))
    return int(seq.generate_state(1, np.uint64)[0])


def _uniforms(seed: int, stream: int, count: int) -> np.ndarray:
    bitgen = np.random.Philox(key=seed & _UINT64_MASK, counter=[0, 0, stream, 0])
    return np.random.Generator(bitgen).random((count, 2))


def _sampling_table(probs: np.ndarray) -> np.ndarray:
    """Cumulative sums along the last axis with the last positive entry pushed to +inf.

    Inverse-CDF lookup then picks the first index whose cumulative mass
    exceeds ``u`` and can never land on a zero-probability trailing action.
    """
    probs = np.atleast_2d(probs)
    table = np.cumsum(probs, axis=-1)
    for row, p in zip(table, probs):
        last = np.flatnonzero(p > 0)[-1]
        row[last:] = np.inf
    return table


def _draw_indices(env: Environment, policy: TabularPolicy, u: np.ndarray):
    """Map uniforms of shape ``(..., 2)`` to ``(contexts, actions)`` by inverse CDF."""
    prior_table = _sampling_table(env.prior)[0]
    action_table = _sampling_table(policy.probs)
    contexts = np.searchsorted(prior_table, u[..., 0], side="right")
    rows = action_table[contexts]
    actions = (u[..., 1][..., None] < rows).argmax(axis=-1)
    return contexts, actions


def _make_log(logger_id, env, policy, contexts, actions) -> LoggerDataset:
    return LoggerDataset(
        logger_id=logger_id,
        contexts=contexts,
        actions=actions,
        rewards=env.utility[contexts, actions],
        propensities=policy.probs[contexts, actions],
        policy=policy,
    )


def sample_bandit_log(
    env: Environment,
    policy: TabularPolicy,
    count: int,
    seed: int,
    stream: int = 0,
    logger_id: Optional[str] = None,
) -> LoggerDataset:
    """Draw ``count`` records ``x ~ Pr``, ``y ~ policy(.|x)`` with rewards and propensities."""
    if int(count) != count or count < 1:
        raise InvalidCountError(f"count must be a positive integer, got {count}")
    check_compatible(env, policy)
    contexts, actions = _draw_indices(env, policy, _uniforms(seed, stream, int(count)))
    return _make_log(logger_id or policy.name, env, policy, contexts, actions)


def make_policy_family(env: Environment, base_policy: TabularPolicy, mix: float) -> TabularPolicy:
    """``(1 - mix) * uniform + mix * base``; ``mix=1`` returns the base probabilities unchanged."""
    if not (0.0 <= mix <= 1.0):
        raise MixOutOfRangeError(f"mix must lie in [0, 1], got {mix}")
    check_compatible(env, base_policy)
    name = f"{base_policy.name}@{mix:g}"
    if mix == 1.0:
        return TabularPolicy(name, base_policy.probs)
    uniform = 1.0 / env.n_actions
    return TabularPolicy(name, (1.0 - mix) * uniform + mix * base_policy.probs)


@dataclass(frozen=True, eq=False)
class SimulationConfig:
    env: Environment
    loggers: Tuple[TabularPolicy, ...]
    sizes: Tuple[int, ...]
    target: TabularPolicy
    estimator: str = "naive"
    replicates: int = 1000
    master_seed: int = 0
    weights: Optional[Tuple[float, ...]] = None
    fallback: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "loggers", tuple(self.loggers))
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if int(self.replicates) != self.replicates or self.replicates < 1:
            raise InvalidCountError(f"replicates must be a positive integer, got {self.replicates}")
        if len(self.loggers) != len(self.sizes) or not self.loggers:
            raise ValidationError(f"{len(self.loggers)} loggers for {len(self.sizes)} sizes")
        for i, n in enumerate(self.sizes):
            if n < 1:
                raise InvalidCountError(f"size of logger {i} is {n}, expected >= 1")
        if self.estimator not in ESTIMATORS:
            raise ValidationError(f"unknown estimator {self.estimator!r}, expected one of {ESTIMATORS}")
        if self.estimator == "weighted" and self.weights is None:
            raise ValidationError("estimator 'weighted' needs explicit weights")
        check_compatible(self.env, self.target, *self.loggers)

    @property
    def logger_ids(self) -> Tuple[str, ...]:
        names = [p.name for p in self.loggers]
        if len(set(names)) == len(names):
            return tuple(names)
        return tuple(f"{name}#{i}" for i, name in enumerate(names))


@dataclass(frozen=True, eq=False)
class ReplicationSummary:
    estimator: str
    replicates: int
    empirical_mean: float
    empirical_variance: Optional[float]
    exact_utility: float
    exact_variance: Optional[float]
    standard_error: Optional[float]
    per_replicate_estimates: Optional[np.ndarray] = None

    @property
    def insufficient_replicates(self) -> bool:
        return self.empirical_variance is None

    @property
    def bias_in_standard_errors(self) -> Optional[float]:
        if not self.standard_error:
            return None
        return (self.empirical_mean - self.exact_utility) / self.standard_error


def replicate_log(config: SimulationConfig, replicate: int) -> MultiLoggerDataset:
    """The logs of one replicate, materialized as a dataset."""
    seed = child_seed(config.master_seed, replicate)
    return MultiLoggerDataset(
        tuple(
            sample_bandit_log(config.env, policy, n, seed, stream=i, logger_id=lid)
            for i, (policy, n, lid) in enumerate(zip(config.loggers, config.sizes, config.logger_ids))
        )
    )


class _Plan:
    """Per-config constants shared by every block of replicates."""

    def __init__(self, config: SimulationConfig, estimators: Sequence[str]):
        self.config = config
        self.estimators = tuple(estimators)
        self.n = sum(config.sizes)
        self.uniform = 1.0 / self.n
        if "balanced" in self.estimators:
            self.avg = mixture_policy(config.loggers, config.sizes).probs
        if "weighted" in self.estimators:
            self.explicit = WeightVector(config.weights, config.sizes).weights
        if "weighted-optimal" in self.estimators:
            profile = divergence_profile(config.target, config.loggers, config.sizes, config.env)
            self.optimal = optimal_weights(profile).weights
        if "weighted-estimated" in self.estimators and min(config.sizes) < 2:
            raise InsufficientSamplesError("estimated weights need at least 2 records per logger")

    def run_block(self, start: int, stop: int) -> Dict[str, np.ndarray]:
        cfg = self.config
        count = stop - start
        seeds = [child_seed(cfg.master_seed, r) for r in range(start, stop)]
        ips_sums, bal_sums, est_divs = [], [], []
        for i, (policy, n_i) in enumerate(zip(cfg.loggers, cfg.sizes)):
            u = np.empty((count, n_i, 2))
            for b, seed in enumerate(seeds):
                u[b] = _uniforms(seed, i, n_i)
            x, y = _draw_indices(cfg.env, policy, u)
            rewards = cfg.env.utility[x, y]
            tp = cfg.target.probs[x, y]
            terms = importance_terms(rewards, tp, policy.probs[x, y])
            ips_sums.append(terms.sum(axis=1))
            if "balanced" in self.estimators:
                bal_sums.append(importance_terms(rewards, tp, self.avg[x, y]).sum(axis=1))
            if "weighted-estimated" in self.estimators:
                est_divs.append(terms.var(axis=1, ddof=1))
        out = {}
        for name in self.estimators:
            if name == "naive":
                out[name] = self._combine([self.uniform] * len(ips_sums), ips_sums)
            elif name == "balanced":
                out[name] = self._combine([self.uniform] * len(bal_sums), bal_sums)
            elif name == "weighted":
                out[name] = self._combine(self.explicit, ips_sums)
            elif name == "weighted-optimal":
                out[name] = self._combine(self.optimal, ips_sums)
            elif name == "weighted-estimated":
                out[name] = self._estimated(np.stack(est_divs), ips_sums, start)
        return out

    @staticmethod
    def _combine(weights, sums) -> np.ndarray:
        total = np.zeros_like(sums[0])
        for lam, s in zip(weights, sums):
            total = total + lam * s
        return total

    def _estimated(self, divs: np.ndarray, sums, start: int) -> np.ndarray:
        sizes = np.array(self.config.sizes, dtype=float)[:, None]
        floored = (divs < DIVERGENCE_FLOOR).any(axis=0)
        if floored.any() and self.config.fallback != "naive":
            r = start + int(np.flatnonzero(floored)[0])
            raise ZeroDivergenceEstimateError(
                f"replicate {r}: estimated divergence below {DIVERGENCE_FLOOR}"
            )
        safe = np.where(divs < DIVERGENCE_FLOOR, 1.0, divs)
        precision = (sizes / safe).sum(axis=0)
        weights = 1.0 / (safe * precision)
        weights = np.where(floored[None, :], self.uniform, weights)
        return self._combine(list(weights), sums)


def _blocks(config: SimulationConfig) -> List[Tuple[int, int]]:
    per_replicate = sum(config.sizes)
    size = max(1, min(_MAX_BLOCK, _BLOCK_RECORDS // per_replicate))
    return [(a, min(a + size, config.replicates)) for a in range(0, config.replicates, size)]


def replicate_estimates(
    config: SimulationConfig, estimators: Optional[Sequence[str]] = None, workers: int = 1
) -> Dict[str, np.ndarray]:
    """Per-replicate estimates of several estimators computed on the same simulated logs."""
    estimators = tuple(estimators or (config.estimator,))
    for name in estimators:
        if name not in ESTIMATORS:
            raise ValidationError(f"unknown estimator {name!r}")
    plan = _Plan(config, estimators)
    blocks = _blocks(config)
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda ab: plan.run_block(*ab), blocks))
    else:
        results = [plan.run_block(a, b) for a, b in blocks]
    return {name: np.concatenate([res[name] for res in results]) for name in estimators}


def exact_variance_for(config: SimulationConfig, estimator: str) -> Optional[float]:
    args = (config.target, config.loggers, config.sizes, config.env)
    if estimator == "naive":
        return naive_variance(*args)
    if estimator == "balanced":
        return balanced_variance(*args)
    if estimator == "weighted":
        return weighted_variance(divergence_profile(*args), WeightVector(config.weights, config.sizes))
    if estimator == "weighted-optimal":
        return optimal_weighted_variance(divergence_profile(*args))
    return None


def summarize(
    config: SimulationConfig, estimator: str, estimates: np.ndarray, keep_estimates: bool = False
) -> ReplicationSummary:
    values = estimates.tolist()
    count = len(values)
    mean = math.fsum(values) / count
    variance = se = None
    if count > 1:
        variance = math.fsum((v - mean) ** 2 for v in values) / (count - 1)
        se = math.sqrt(variance / count)
    return ReplicationSummary(
        estimator=estimator,
        replicates=count,
        empirical_mean=mean,
        empirical_variance=variance,
        exact_utility=exact_utility(config.target, config.env),
        exact_variance=exact_variance_for(config, estimator),
        standard_error=se,
        per_replicate_estimates=estimates if keep_estimates else None,
    )


def replicate(
    config: SimulationConfig, workers: int = 1, keep_estimates: bool = False
) -> ReplicationSummary:
    estimates = replicate_estimates(config, workers=workers)[config.estimator]
    return summarize(config, config.estimator, estimates, keep_estimates)


@dataclass(frozen=True)
class SweepRow:
    logger1: str
    n1: int
    n2: int
    v1: float
    r1: float
    ratio_drop: float
    ratio_bal: float
    ratio_weight: float
    ratio_weight_vs_bal: float

    def csv_values(self) -> Tuple[float, ...]:
        return tuple(getattr(self, k) for k in SWEEP_HEADER)


def sweep(
    env: Environment,
    target: TabularPolicy,
    logger2: TabularPolicy,
    family: Sequence[TabularPolicy],
    r1_grid: Sequence[float] = DEFAULT_R1_GRID,
    base_n2: int = 100,
) -> List[SweepRow]:
    """Exact relative variances over a grid of first loggers and size ratios.

    ``n1 = round(r1 * base_n2)`` with round-half-to-even. No sampling is done.
    """
    if not family or not r1_grid:
        raise EmptyGridError("family and r1 grid must both be non-empty")
    if base_n2 < 1:
        raise InvalidCountError(f"base_n2 must be >= 1, got {base_n2}")
    rows = []
    for logger1 in family:
        for r1 in r1_grid:
            n1 = round(r1 * base_n2)
            if n1 < 1:
                raise InvalidCountError(f"r1={r1} with base_n2={base_n2} leaves no records for logger 1")
            sizes = (n1, base_n2)
            loggers = (logger1, logger2)
            profile = divergence_profile(target, loggers, sizes, env)
            naive_both = naive_variance(target, loggers, sizes, env)
            naive_d2 = naive_variance(target, (logger2,), (base_n2,), env)
            bal = balanced_variance(target, loggers, sizes, env)
            weight = optimal_weighted_variance(profile)
            rows.append(
                SweepRow(
                    logger1=logger1.name,
                    n1=n1,
                    n2=base_n2,
                    v1=profile.relative_divergences[0],
                    r1=float(r1),
                    ratio_drop=naive_d2 / naive_both,
                    ratio_bal=bal / naive_both,
                    ratio_weight=weight / naive_both,
                    ratio_weight_vs_bal=weight / bal,
                )
            )
    return rows


def format_float(value: float) -> str:
    return format(value, ".17g")


def write_sweep_csv(rows: Sequence[SweepRow], fh, comments: Sequence[str] = ()) -> None:
    for line in comments:
        fh.write(f"# {line}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for row in rows:
        writer.writerow([format_float(v) for v in row.csv_values()])
