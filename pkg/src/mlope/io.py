"""Readers and writers for environment, policy, log, weight and config files.

Environment, policy, weight and simulation-config files are JSON documents.
Logs are JSON Lines, one record per line with keys ``logger``, ``x``, ``y``,
``delta`` and ``p``. Numbers are written with 17 significant digits.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

from .core import Environment, LoggerDataset, MultiLoggerDataset, TabularPolicy
from .errors import ValidationError

LOG_KEYS = ("logger", "x", "y", "delta", "p")


def _read_json(path) -> object:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read file ({exc.strerror})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def _require(doc: Mapping, key: str, where) -> object:
    if not isinstance(doc, Mapping) or key not in doc:
        raise ValidationError(f"{where}: missing required key {key!r}")
    return doc[key]


def environment_from_dict(doc: Mapping, where="environment") -> Environment:
    try:
        return Environment(
            context_labels=_require(doc, "contexts", where),
            action_labels=_require(doc, "actions", where),
            prior=_require(doc, "prior", where),
            utility=_require(doc, "utility", where),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise type(exc)(f"{where}: {exc}") from exc
        raise ValidationError(f"{where}: malformed environment ({exc})") from exc


def load_environment(path) -> Environment:
    return environment_from_dict(_read_json(path), where=str(path))


def environment_to_dict(env: Environment) -> dict:
    return {
        "contexts": list(env.context_labels),
        "actions": list(env.action_labels),
        "prior": env.prior.tolist(),
        "utility": env.utility.tolist(),
    }


def policy_from_dict(doc: Mapping, where="policy") -> TabularPolicy:
    name = _require(doc, "name", where)
    try:
        return TabularPolicy(str(name), _require(doc, "probs", where))
    except ValidationError as exc:
        raise type(exc)(f"{where}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: malformed probs for policy {name!r} ({exc})") from exc


def policy_to_dict(policy: TabularPolicy) -> dict:
    return {"name": policy.name, "probs": policy.probs.tolist()}


def load_policies(path) -> List[TabularPolicy]:
    """A policy file holds one ``{name, probs}`` object, a list of them, or ``{"policies": [...]}``."""
    doc = _read_json(path)
    if isinstance(doc, Mapping) and "policies" in doc:
        doc = doc["policies"]
    items = doc if isinstance(doc, list) else [doc]
    policies = [policy_from_dict(item, where=f"{path}[{i}]") for i, item in enumerate(items)]
    names = [p.name for p in policies]
    if len(set(names)) != len(names):
        raise ValidationError(f"{path}: duplicate policy names {names}")
    return policies


def load_log(path, policies: Optional[Mapping[str, TabularPolicy]] = None) -> MultiLoggerDataset:
    """Read a JSON Lines log; loggers keep their order of first appearance.

    When ``policies`` has an entry for a logger id it is attached as that
    logger's stored policy and every propensity is checked against it.
    """
    policies = policies or {}
    path = Path(path)
    columns: Dict[str, Dict[str, list]] = OrderedDict()
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read file ({exc.strerror})") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc.msg}") from exc
        if not isinstance(rec, dict):
            raise ValidationError(f"{path}:{lineno}: expected a JSON object")
        for key in LOG_KEYS:
            if key not in rec:
                raise ValidationError(f"{path}:{lineno}: missing key {key!r}")
        x, y = rec["x"], rec["y"]
        if not (isinstance(x, int) and isinstance(y, int)) or isinstance(x, bool) or isinstance(y, bool):
            raise ValidationError(f"{path}:{lineno}: 'x' and 'y' must be integer indices")
        try:
            delta, p = float(rec["delta"]), float(rec["p"])
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{path}:{lineno}: 'delta' and 'p' must be numbers") from exc
        if not (0 < p <= 1) or not math.isfinite(delta):
            raise ValidationError(f"{path}:{lineno}: propensity {p} not in (0, 1] or non-finite delta")
        cols = columns.setdefault(str(rec["logger"]), {"x": [], "y": [], "delta": [], "p": []})
        cols["x"].append(x)
        cols["y"].append(y)
        cols["delta"].append(delta)
        cols["p"].append(p)
    if not columns:
        raise ValidationError(f"{path}: log contains no records")
    loggers = []
    for logger_id, cols in columns.items():
        try:
            loggers.append(
                LoggerDataset(logger_id, cols["x"], cols["y"], cols["delta"], cols["p"], policies.get(logger_id))
            )
        except ValidationError as exc:
            raise type(exc)(f"{path}: {exc}") from exc
    return MultiLoggerDataset(tuple(loggers))


def write_log(dataset: MultiLoggerDataset, fh) -> None:
    for log in dataset.loggers:
        for rec in log.records:
            fh.write(
                json.dumps(
                    {
                        "logger": log.logger_id,
                        "x": rec.context_index,
                        "y": rec.action_index,
                        "delta": rec.reward,
                        "p": rec.propensity,
                    }
                )
                + "\n"
            )


def load_weights(path) -> List[float]:
    doc = _read_json(path)
    weights = doc.get("weights") if isinstance(doc, Mapping) else doc
    if not isinstance(weights, list) or not all(
        isinstance(w, (int, float)) and not isinstance(w, bool) for w in weights
    ):
        raise ValidationError(f"{path}: expected a list of numbers under 'weights'")
    return [float(w) for w in weights]


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _started_at() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return when.isoformat(timespec="seconds")


@dataclass
class RunManifest:
    subcommand: str
    inputs: List[dict] = field(default_factory=list)
    master_seed: Optional[int] = None
    version: str = ""
    started_at: str = field(default_factory=_started_at)

    def add_input(self, role: str, path) -> None:
        self.inputs.append({"role": role, "path": str(path), "sha256": file_digest(path)})

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "inputs": self.inputs,
            "master_seed": self.master_seed,
            "tool_version": self.version,
            "started_at": self.started_at,
        }


def _encode(value, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if value is None or isinstance(value, bool):
        return json.dumps(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            return json.dumps(None)
        text = format(value, ".17g")
        if "." not in text and "e" not in text and "n" not in text:
            text += ".0"
        return text
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, Mapping):
        if not value:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        if all(v is None or isinstance(v, (int, float, str, bool)) for v in value):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in value) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in value]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if hasattr(value, "tolist"):
        return _encode(value.tolist(), indent, level)
    raise TypeError(f"cannot encode {type(value).__name__}")


def dumps(doc, indent: int = 2) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _encode(doc, indent, 0) + "\n"


def rounded(value: Optional[float], digits: int = 2) -> Optional[str]:
    return None if value is None else f"{value:.{digits}f}"


def round_all(values: Sequence[float], digits: int = 2) -> List[str]:
    return [rounded(v, digits) for v in values]
