"""Independent reference computations used by the tests.

Nothing here imports the closed-form variance code; the variances are
obtained by enumerating every possible log and weighting each by its
probability, or by plain loops over cells.
"""
import itertools

import numpy as np

from mlope.core import LoggerDataset, MultiLoggerDataset


def cell_probabilities(prior, probs):
    """Pr(x) * pi(y|x) as a flat list of ((x, y), probability), zero cells dropped."""
    out = []
    for x, px in enumerate(prior):
        for y, pyx in enumerate(probs[x]):
            if px * pyx > 0:
                out.append(((x, y), px * pyx))
    return out


def all_logs(env, loggers, sizes):
    """Yield (probability, MultiLoggerDataset) for every possible joint log."""
    per_logger = [cell_probabilities(env.prior, p.probs) for p in loggers]
    slots = [per_logger[i] for i, n in enumerate(sizes) for _ in range(n)]
    owner = [i for i, n in enumerate(sizes) for _ in range(n)]
    for combo in itertools.product(*slots):
        weight = 1.0
        cells = [[] for _ in loggers]
        for i, (cell, p) in zip(owner, combo):
            weight *= p
            cells[i].append(cell)
        datasets = []
        for i, (policy, chosen) in enumerate(zip(loggers, cells)):
            xs = [c[0] for c in chosen]
            ys = [c[1] for c in chosen]
            datasets.append(
                LoggerDataset(
                    f"L{i}",
                    xs,
                    ys,
                    [env.utility[x, y] for x, y in chosen],
                    [policy.probs[x, y] for x, y in chosen],
                    policy,
                )
            )
        yield weight, MultiLoggerDataset(tuple(datasets))


def enumerate_moments(env, loggers, sizes, estimate):
    """Exact mean and variance of ``estimate(dataset)`` over the log distribution."""
    weights, values = [], []
    for w, ds in all_logs(env, loggers, sizes):
        weights.append(w)
        values.append(estimate(ds))
    weights = np.array(weights)
    values = np.array(values)
    mean = float(np.dot(weights, values))
    var = float(np.dot(weights, (values - mean) ** 2))
    return float(weights.sum()), mean, var


def loop_utility(env, target):
    total = 0.0
    for x in range(env.n_contexts):
        for y in range(env.n_actions):
            total += env.prior[x] * target.probs[x, y] * env.utility[x, y]
    return total




def loop_divergence(env, target, logger):
    u = loop_utility(env, target)
    second = 0.0
    for x in range(env.n_contexts):
        for y in range(env.n_actions):
            c = env.utility[x, y] * target.probs[x, y]
            if c != 0:
                second += env.prior[x] * c * c / logger.probs[x, y]
    return second - u * u


def loop_naive_variance(env, target, loggers, sizes):
    n = sum(sizes)
    return sum(k * loop_divergence(env, target, p) for p, k in zip(loggers, sizes)) / n**2


def loop_balanced_variance(env, target, loggers, sizes):
    n = sum(sizes)
    avg = sum(k * p.probs for p, k in zip(loggers, sizes)) / n
    total = 0.0
    for p, k in zip(loggers, sizes):
        mean = second = 0.0
        for x in range(env.n_contexts):
            for y in range(env.n_actions):
                c = env.utility[x, y] * target.probs[x, y]
                if c != 0:
                    t = c / avg[x, y]
                    w = env.prior[x] * p.probs[x, y]
                    mean += w * t
                    second += w * t * t
        total += k * (second - mean * mean)
    return total / n**2
