"""Instance and report files.

Both are JSON documents. An instance holds exactly the fields in
``INSTANCE_FIELDS``; a report is an envelope shared by every CLI command
(see ``REPORT_SCHEMA``) whose ``payload`` depends on the command. Floats are
written with ``repr`` so that loading a saved file gives back the same bits.
Non-finite numbers become the strings ``"inf"``, ``"-inf"`` and ``"nan"``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Mapping, Union

import numpy as np

from .market import MarketInstance, validate_market

PathLike = Union[str, Path]

INSTANCE_FIELDS = ("n", "m", "valuations", "budgets", "capacities", "divisible", "alphas")
REQUIRED_FIELDS = ("valuations", "budgets", "capacities")
REPORT_VERSION = "fishermarket-report/1"
COMMANDS = ("solve", "verify", "sperner", "snob", "ceei", "check-instance")


class InstanceFormatError(ValueError):
    """Instance text that cannot be parsed, with location or field context."""

    def __init__(self, message: str, source: str = "<string>", line=None, field=None):
        where = source if line is None else f"{source}:{line}"
        super().__init__(f"{where}: {message}")
        self.source = source
        self.line = line
        self.field = field


def _plain(obj: Any) -> Any:
    """Convert numpy containers/scalars to JSON-ready Python objects."""
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def loads_instance(text: str, source: str = "<string>") -> MarketInstance:
    if not text.strip():
        raise InstanceFormatError("empty document", source, line=1)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(
            f"column {exc.colno}: {exc.msg}", source, line=exc.lineno
        ) from None
    if not isinstance(raw, dict):
        raise InstanceFormatError("top level must be an object", source, line=1)
    for key in raw:
        if key not in INSTANCE_FIELDS:
            raise InstanceFormatError(f"unknown field {key!r}", source, field=key)
    for key in REQUIRED_FIELDS:
        if key not in raw:
            raise InstanceFormatError(f"missing field {key!r}", source, field=key)
    for key in ("n", "m"):
        if key in raw and (isinstance(raw[key], bool) or not isinstance(raw[key], int)):
            raise InstanceFormatError(f"field {key!r} must be an integer", source, field=key)
    return validate_market(raw)


def dumps_instance(inst: MarketInstance) -> str:
    return json.dumps(_plain(inst.to_record()), indent=2) + "\n"


def load_instance(path: PathLike) -> MarketInstance:
    path = Path(path)
    return loads_instance(path.read_text(), str(path))


def save_instance(inst: MarketInstance, path: PathLike) -> None:
    Path(path).write_text(dumps_instance(inst))


def make_report(
    command: str,
    verdict: bool,
    payload: Mapping[str, Any],
    *,
    instance: MarketInstance | None = None,
    source: str | None = None,
    parameters: Mapping[str, Any] | None = None,
    figures: list[str] | None = None,
) -> dict[str, Any]:
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    return _plain(
        {
            "format": REPORT_VERSION,
            "command": command,
            "verdict": bool(verdict),
            "source": source,
            "instance": None if instance is None else instance.to_record(),
            "parameters": dict(parameters or {}),
            "payload": dict(payload),
            "figures": list(figures or []),
        }
    )


def dumps_report(report: Mapping[str, Any]) -> str:
    return json.dumps(_plain(report), indent=2, sort_keys=False) + "\n"


def save_report(report, path: PathLike) -> None:
    """Write a report envelope; an ``EquilibriumReport`` is wrapped as ``solve``."""
    if hasattr(report, "to_payload"):
        report = make_report("solve", report.kkt_ok and report.clearing_ok, report.to_payload())
    Path(path).write_text(dumps_report(report))


def load_report(path: PathLike) -> dict[str, Any]:
    return json.loads(Path(path).read_text())


_number = {"oneOf": [{"type": "number"}, {"enum": ["inf", "-inf", "nan"]}]}
_vector = {"type": "array", "items": _number}
_matrix = {"type": "array", "items": _vector}

REPORT_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": [
        "format", "command", "verdict", "source", "instance", "parameters", "payload", "figures"
    ],
    "additionalProperties": False,
    "properties": {
        "format": {"const": REPORT_VERSION},
        "command": {"enum": list(COMMANDS)},
        "verdict": {"type": "boolean"},
        "source": {"type": ["string", "null"]},
        "instance": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["n", "m", "valuations", "budgets", "capacities", "divisible"],
                    "properties": {
                        "n": {"type": "integer"},
                        "m": {"type": "integer"},
                        "valuations": _matrix,
                        "budgets": _vector,
                        "capacities": _vector,
                        "divisible": {"type": "boolean"},
                        "alphas": _vector,
                    },
                    "additionalProperties": False,
                },
            ]
        },
        "parameters": {"type": "object"},
        "payload": {"type": "object"},
        "figures": {"type": "array", "items": {"type": "string"}},
    },
    "allOf": [
        {
            "if": {"properties": {"command": {"const": "solve"}}},
            "then": {
                "properties": {
                    "payload": {
                        "type": "object",
                        "required": [
                            "allocation", "prices", "utilities", "spend", "sold",
                            "kkt_residual", "unspent", "unsold", "kkt_ok", "clearing_ok",
                            "flow_ok", "converged", "iterations",
                        ],
                        "properties": {
                            "allocation": _matrix,
                            "prices": _vector,
                            "utilities": _vector,
                            "unspent": _vector,
                            "unsold": _vector,
                            "iterations": {"type": "integer"},
                        },
                    }
                }
            },
        },
        {
            "if": {"properties": {"command": {"const": "verify"}}},
            "then": {
                "properties": {
                    "payload": {
                        "type": "object",
                        "required": ["prices", "flow_value", "budget_total", "reason", "allocation"],
                    }
                }
            },
        },
        {
            "if": {"properties": {"command": {"const": "sperner"}}},
            "then": {
                "properties": {
                    "payload": {"type": "object", "required": ["prices", "k", "diameter", "rounds"]}
                }
            },
        },
        {
            "if": {"properties": {"command": {"const": "ceei"}}},
            "then": {
                "properties": {
                    "payload": {"type": "object", "required": ["found", "resolution", "prices", "allocation"]}
                }
            },
        },
        {
            "if": {"properties": {"command": {"const": "snob"}}},
            "then": {
                "properties": {
                    "payload": {"type": "object", "required": ["candidates"]}
                }
            },
        },
    ],
}
