"""Command-line interface.

Exit codes: 0 on success, 2 for unreadable or invalid inputs, 3 when inputs
are well formed but violate a precondition (support, zero divergence,
invalid weights, missing logger policies).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .core import MultiLoggerDataset, TabularPolicy, check_dataset
from .errors import MissingPolicyError, OPEError, PreconditionError, ValidationError
from .estimators import balanced_ips, naive_ips, weighted_ips
from .exact import (
    WeightVector,
    balanced_variance,
    divergence_profile,
    exact_utility,
    naive_variance,
    optimal_weighted_variance,
    optimal_weights,
    reduction_ratio,
)
from .io import (
    RunManifest,
    dumps,
    load_environment,
    load_log,
    load_policies,
    load_weights,
    round_all,
    rounded,
    _read_json,
)
from .sim import (
    DEFAULT_MIX_GRID,
    DEFAULT_R1_GRID,
    SimulationConfig,
    make_policy_family,
    replicate,
    sweep,
    write_sweep_csv,
)
from .weights import estimate_divergence_profile, estimate_weights

log = logging.getLogger("mlope")

EXIT_OK, EXIT_INPUT, EXIT_DOMAIN = 0, 2, 3


def _float_list(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("expected at least one number")
    return values


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _policy_library(paths: Sequence[str], manifest: RunManifest) -> Dict[str, TabularPolicy]:
    library: Dict[str, TabularPolicy] = {}
    for path in paths or ():
        manifest.add_input("policies", path)
        for policy in load_policies(path):
            if policy.name in library:
                raise ValidationError(f"policy {policy.name!r} is defined more than once")
            library[policy.name] = policy
    return library


def _resolve(ref: str, library: Dict[str, TabularPolicy], manifest: RunManifest, role: str) -> TabularPolicy:
    """A policy given by name from ``--policies`` or by path to a single-policy file."""
    if ref in library:
        return library[ref]
    path = Path(ref)
    if path.is_file():
        manifest.add_input(role, path)
        policies = load_policies(path)
        if len(policies) != 1:
            raise ValidationError(f"{path}: expected exactly one policy for {role}, found {len(policies)}")
        return policies[0]
    raise ValidationError(f"{role} {ref!r} is neither a known policy name nor a policy file")


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _report_dict(report, dataset: MultiLoggerDataset) -> dict:
    weights = report.weights_used.weights if report.weights_used is not None else None
    loggers = []
    for i, (lid, n, contribution) in enumerate(zip(dataset.logger_ids, dataset.sizes, report.per_logger_contribution)):
        entry = {"logger": lid, "n": n, "contribution": contribution}
        if weights is not None:
            entry["weight"] = weights[i]
        loggers.append(entry)
    return {
        "estimator": report.estimator_name,
        "estimate": report.estimate,
        "total_records": report.total_records,
        "weights_used": list(weights) if weights is not None else None,
        "loggers": loggers,
    }


def _weights_for(args, dataset, target, library, manifest) -> WeightVector:
    source = args.weights
    if source is None:
        raise ValidationError("--estimator weighted requires --weights exact|estimated|file:<path>")
    if source == "estimated":
        return estimate_weights(dataset, target, fallback=args.fallback)
    if source == "exact":
        if args.env is None:
            raise ValidationError("--weights exact requires --env")
        env = load_environment(args.env)
        manifest.add_input("env", args.env)
        missing = [lid for lid in dataset.logger_ids if lid not in library]
        if missing:
            raise MissingPolicyError(f"--weights exact needs stored policies for loggers {missing}")
        loggers = [library[lid] for lid in dataset.logger_ids]
        return optimal_weights(divergence_profile(target, loggers, dataset.sizes, env))
    if source.startswith("file:"):
        path = source[len("file:"):]
        manifest.add_input("weights", path)
        return WeightVector(load_weights(path), dataset.sizes)
    raise ValidationError(f"unknown weights source {source!r}")


def cmd_evaluate(args) -> int:
    manifest = RunManifest("evaluate", version=__version__)
    library = _policy_library(args.policies, manifest)
    target = _resolve(args.target, library, manifest, "target")
    manifest.add_input("log", args.log)
    dataset = load_log(args.log, library)
    if args.env is not None and args.weights != "exact":
        env = load_environment(args.env)
        manifest.add_input("env", args.env)
        check_dataset(dataset, env, strict=args.strict)
    if args.estimator == "naive":
        report = naive_ips(dataset, target)
    elif args.estimator == "balanced":
        report = balanced_ips(dataset, target)
    else:
        report = weighted_ips(dataset, target, _weights_for(args, dataset, target, library, manifest))
    doc = {
        "manifest": manifest.to_dict(),
        "report": _report_dict(report, dataset),
        "display": {"estimate": rounded(report.estimate)},
    }
    _emit(dumps(doc), args.out)
    return EXIT_OK


def cmd_exact(args) -> int:
    manifest = RunManifest("exact", version=__version__)
    env = load_environment(args.env)
    manifest.add_input("env", args.env)
    library = _policy_library(args.policies, manifest)
    target = _resolve(args.target, library, manifest, "target")
    if args.loggers:
        loggers = [_resolve(name, library, manifest, "logger") for name in args.loggers.split(",")]
    else:
        loggers = [p for name, p in library.items() if p is not target]
    if not loggers:
        raise ValidationError("no logging policies given")
    sizes = args.sizes or [1] * len(loggers)
    if len(sizes) != len(loggers):
        raise ValidationError(f"--sizes has {len(sizes)} entries for {len(loggers)} loggers")
    if any(n < 1 for n in sizes):
        raise ValidationError(f"--sizes must be positive, got {sizes}")
    profile = divergence_profile(target, loggers, sizes, env)
    utility = exact_utility(target, env)
    naive = naive_variance(target, loggers, sizes, env)
    singles = [d / n for d, n in zip(profile.per_logger_divergence, sizes)]
    balanced = balanced_variance(target, loggers, sizes, env)
    weights = optimal_weights(profile)
    weighted = optimal_weighted_variance(profile)
    gamma = reduction_ratio(profile)
    analysis = {
        "target": target.name,
        "loggers": [p.name for p in loggers],
        "sizes": list(sizes),
        "utility": utility,
        "divergences": list(profile.per_logger_divergence),
        "relative_divergences": (
            list(profile.relative_divergences) if profile.relative_divergences is not None else None
        ),
        "relative_sizes": list(profile.relative_sizes),
        "naive_variance": naive,
        "naive_variance_single_logger": singles,
        "balanced_variance": balanced,
        "optimal_weights": list(weights.weights),
        "weighted_variance": weighted,
        "reduction_ratio": gamma,
    }
    display = {
        "utility": rounded(utility),
        "divergences": round_all(profile.per_logger_divergence),
        "naive_variance": rounded(naive),
        "naive_variance_single_logger": round_all(singles),
        "balanced_variance": rounded(balanced),
        "optimal_weights": round_all(weights.weights),
        "weighted_variance": rounded(weighted),
        "reduction_ratio": rounded(gamma),
    }
    _emit(dumps({"manifest": manifest.to_dict(), "analysis": analysis, "display": display}), args.out)
    return EXIT_OK


def cmd_estimate_weights(args) -> int:
    manifest = RunManifest("estimate-weights", version=__version__)
    library = _policy_library(args.policies, manifest)
    target = _resolve(args.target, library, manifest, "target")
    manifest.add_input("log", args.log)
    dataset = load_log(args.log, library)
    profile = estimate_divergence_profile(dataset, target)
    weights = estimate_weights(dataset, target, fallback=args.fallback)
    doc = {
        "manifest": manifest.to_dict(),
        "weights_report": {
            "loggers": list(dataset.logger_ids),
            "counts": list(profile.per_logger_count),
            "estimates": list(profile.per_logger_estimate),
            "floor_applied": list(profile.floor_applied),
            "fallback_used": any(profile.floor_applied),
            "weights": list(weights.weights),
        },
        "display": {
            "estimates": round_all(profile.per_logger_estimate),
            "weights": round_all(weights.weights),
        },
    }
    _emit(dumps(doc), args.out)
    return EXIT_OK


def load_simulation_config(path, replicates=None, seed=None):
    """Build a :class:`SimulationConfig` from a JSON file; relative paths resolve against it."""
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: expected a JSON object")
    base = Path(path).parent
    inputs = []

    def rel(key):
        if key not in doc:
            raise ValidationError(f"{path}: missing required key {key!r}")
        p = base / doc[key]
        inputs.append((key, p))
        return p

    env = load_environment(rel("env"))
    policy_files = doc.get("policies")
    if policy_files is None:
        raise ValidationError(f"{path}: missing required key 'policies'")
    if isinstance(policy_files, str):
        policy_files = [policy_files]
    library: Dict[str, TabularPolicy] = {}
    for item in policy_files:
        p = base / item
        inputs.append(("policies", p))
        for policy in load_policies(p):
            library[policy.name] = policy
    try:
        target = library[doc["target"]]
        loggers = tuple(library[name] for name in doc["loggers"])
    except KeyError as exc:
        raise ValidationError(f"{path}: unknown or missing policy {exc}") from exc
    if seed is None:
        seed = doc.get("seed")
    if seed is None:
        log.warning("no seed given, using master seed 0")
        seed = 0
    config = SimulationConfig(
        env=env,
        loggers=loggers,
        sizes=tuple(doc.get("sizes", [1] * len(loggers))),
        target=target,
        estimator=doc.get("estimator", "naive"),
        replicates=replicates if replicates is not None else doc.get("replicates", 1000),
        master_seed=int(seed),
        weights=doc.get("weights"),
        fallback=doc.get("fallback"),
    )
    return config, inputs


def cmd_simulate(args) -> int:
    manifest = RunManifest("simulate", version=__version__)
    manifest.add_input("config", args.config)
    config, inputs = load_simulation_config(args.config, args.replicates, args.seed)
    for role, path in inputs:
        manifest.add_input(role, path)
    manifest.master_seed = config.master_seed
    summary = replicate(config, workers=args.workers)
    doc = {
        "manifest": manifest.to_dict(),
        "summary": {
            "estimator": summary.estimator,
            "replicates": summary.replicates,
            "sizes": list(config.sizes),
            "empirical_mean": summary.empirical_mean,
            "empirical_variance": summary.empirical_variance,
            "standard_error": summary.standard_error,
            "insufficient_replicates": summary.insufficient_replicates,
            "exact_utility": summary.exact_utility,
            "exact_variance": summary.exact_variance,
            "bias_in_standard_errors": summary.bias_in_standard_errors,
        },
        "display": {
            "empirical_mean": rounded(summary.empirical_mean),
            "exact_utility": rounded(summary.exact_utility),
            "empirical_variance": rounded(summary.empirical_variance),
            "exact_variance": rounded(summary.exact_variance),
        },
    }
    _emit(dumps(doc), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    manifest = RunManifest("sweep", version=__version__)
    env = load_environment(args.env)
    manifest.add_input("env", args.env)
    library = _policy_library(args.policies, manifest)
    target = _resolve(args.target, library, manifest, "target")
    logger2 = _resolve(args.logger2, library, manifest, "logger2")
    if args.family_base:
        bases = [_resolve(b, library, manifest, "family base") for b in args.family_base]
    else:
        bases = [p for p in library.values() if p.name not in (target.name, logger2.name)]
    if not bases:
        raise ValidationError("no family base policies; pass --family-base or more --policies")
    family = [make_policy_family(env, base, mix) for base in bases for mix in args.mix_grid]
    rows = sweep(env, target, logger2, family, args.r1_grid, args.base_n2)
    comments = [f"manifest: {json.dumps(manifest.to_dict(), sort_keys=False)}"]
    comments.append("family: " + " ".join(p.name for p in family) + f"; logger2: {logger2.name}; n2: {args.base_n2}")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            write_sweep_csv(rows, fh, comments)
    else:
        write_sweep_csv(rows, sys.stdout, comments)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlope", description="Off-policy evaluation from logs of multiple logging policies."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="estimate a target policy's utility from a log")
    p.add_argument("--log", required=True)
    p.add_argument("--target", required=True, help="policy name from --policies or a policy file")
    p.add_argument("--policies", action="append", default=[], help="policy file with logger policies")
    p.add_argument("--estimator", choices=("naive", "balanced", "weighted"), default="naive")
    p.add_argument("--weights", help="exact | estimated | file:<path>")
    p.add_argument("--fallback", choices=("naive",))
    p.add_argument("--env")
    p.add_argument("--strict", action="store_true", help="check logged rewards against the environment")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("exact", help="closed-form utility, divergences and variances")
    p.add_argument("--env", required=True)
    p.add_argument("--policies", action="append", default=[], required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--loggers", help="comma-separated logger names (default: every non-target policy)")
    p.add_argument("--sizes", type=_int_list)
    p.add_argument("--out")
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("estimate-weights", help="estimate divergences and weights from a log")
    p.add_argument("--log", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--policies", action="append", default=[])
    p.add_argument("--fallback", choices=("naive",))
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate_weights)

    p = sub.add_parser("simulate", help="replicate logs and summarize an estimator's bias and variance")
    p.add_argument("--config", required=True)
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="exact relative variances over logger families and size ratios")
    p.add_argument("--env", required=True)
    p.add_argument("--policies", action="append", default=[])
    p.add_argument("--target", required=True)
    p.add_argument("--logger2", required=True)
    p.add_argument(
        "--family-base",
        action="append",
        help="base policy of the first-logger family (default: every policy other than target and logger2)",
    )
    p.add_argument("--mix-grid", type=_float_list, default=list(DEFAULT_MIX_GRID))
    p.add_argument("--r1-grid", type=_float_list, default=list(DEFAULT_R1_GRID))
    p.add_argument("--base-n2", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PreconditionError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OPEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
