"""JSON and CSV output with round-trip exact floats, plus report schemas."""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Iterable, Sequence

import numpy as np

__all__ = ["format_float", "dumps", "write_json", "write_csv", "csv_text", "SCHEMAS", "schema"]


def format_float(x: float) -> str:
    """17 significant digits; non-finite values have no JSON form and become null."""
    x = float(x)
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if isinstance(obj, (tuple, set, frozenset)):
        return list(obj)
    return obj


def _encode(obj, indent: int, level: int, out: list):
    obj = _plain(obj)
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if obj is None or isinstance(obj, bool):
        out.append(json.dumps(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            out.append(("," if i else "") + pad + json.dumps(str(k), ensure_ascii=False) + ": ")
            _encode(v, indent, level + 1, out)
        out.append(end + "}")
    elif isinstance(obj, list):
        if not obj:
            out.append("[]")
            return
        out.append("[")
        for i, v in enumerate(obj):
            out.append(("," if i else "") + pad)
            _encode(v, indent, level + 1, out)
        out.append(end + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    out: list = []
    _encode(obj, indent, 0, out)
    return "".join(out) + "\n"


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))


def _cell(v) -> str:
    v = _plain(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "" if not math.isfinite(v) else format_float(v)
    return str(v)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """RFC 4180: CRLF line ends, fields quoted only when needed."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(header, rows))


# ---------------------------------------------------------------------------
# schemas (JSON Schema draft 2020-12)

_NUM = {"type": ["number", "null"]}
_BOOL_OR_NULL = {"type": ["boolean", "null"]}
_ESTIMATE = {
    "type": "object",
    "required": ["value", "error", "n_chains", "method"],
    "properties": {"value": _NUM, "error": _NUM, "n_chains": {"type": "integer"}, "method": {"type": "string"}},
}
_ERROR = {
    "type": "object",
    "required": ["status", "exit_code", "error_type", "message"],
    "properties": {
        "status": {"const": "error"},
        "exit_code": {"type": "integer"},
        "error_type": {"type": "string"},
        "message": {"type": "string"},
    },
}


def _obj(required: dict, extra: dict | None = None) -> dict:
    props = dict(required)
    props.update(extra or {})
    return {"type": "object", "required": sorted(required), "properties": props}


SCHEMAS = {
    "manifest": _obj({
        "subcommand": {"type": "string"},
        "config_sha256": {"type": ["string", "null"], "pattern": "^[0-9a-f]{64}$"},
        "seed": {"type": "integer"},
        "version": {"type": "string"},
        "overrides": {"type": "array", "items": {"type": "string"}},
        "files": {"type": "object", "additionalProperties": {"type": "string", "pattern": "^[0-9a-f]{64}$"}},
        "exit_code": {"type": "integer"},
    }),
    "error": _ERROR,
    "criteria": _obj({
        "status": {"const": "ok"},
        "validation": _obj({"passes": {"type": "boolean"}, "j_hat_zero": {"type": "number"},
                            "diagnostics": {"type": "array"}}),
        "report": _obj({
            "theta_d": _NUM, "t_star": _NUM, "beta_star": _NUM, "delta_gap": {"type": "number"},
            "gap_index": {"type": "integer"}, "j_hat_zero": {"type": "number"},
            "phase_transition_predicted": {"type": "boolean"}, "quantum_stabilization": {"type": "boolean"},
            "high_T_unique": _BOOL_OR_NULL, "residuals": {"type": "object"}, "notes": {"type": "array"},
        }),
    }),
    "spectrum": _obj({
        "status": {"const": "ok"},
        "energies": {"type": "array", "items": {"type": "number"}, "minItems": 2},
        "gap": {"type": "number", "exclusiveMinimum": 0},
        "gap_index": {"type": "integer", "minimum": 1},
        "K_upp": {"type": "number"},
        "K_upp_bound": {"type": "number"},
        "variance": {"type": "number", "minimum": 0},
        "beta": {"type": "number"},
    }),
    "simulate": _obj({
        "status": {"const": "ok"},
        "n_sites": {"type": "integer"},
        "P": {"type": "integer"},
        "beta": {"type": "number"},
        "params": {"type": "object"},
        "estimates": {"type": "object", "additionalProperties": _ESTIMATE},
        "ess": {"type": "object", "additionalProperties": _NUM},
        "acceptance": {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}},
        "widths": {"type": "array"},
    }, {"order_parameter": _ESTIMATE}),
    "verify": _obj({
        "status": {"enum": ["ok", "failed"]},
        "suite": {"type": "string"},
        "tests": {"type": "integer"},
        "failures": {"type": "integer"},
        "testcases": {"type": "array", "items": _obj({
            "name": {"type": "string"}, "classname": {"type": "string"},
            "status": {"enum": ["passed", "failed"]}, "margin": _NUM, "detail": {"type": "object"},
        })},
    }),
    "leeyang": _obj({
        "status": {"const": "ok"},
        "condition": _obj({"holds": {"type": "boolean"}, "b": _NUM}),
        "zeros": {"type": "array", "items": _obj({"order": {"type": "integer"},
                                                  "classification": {"type": "string"}})},
        "orders_agree": {"type": "boolean"},
        "pressure": {"type": "object"},
    }),
    "pressure": _obj({
        "status": {"const": "ok"},
        "n_sites": {"type": "integer"},
        "P": {"type": "integer"},
        "h": {"type": "array", "items": {"type": "number"}},
        "p": {"type": "array", "items": {"type": "number"}},
        "magnetization": {"type": "array", "items": {"type": "number"}},
        "convex": {"type": "boolean"},
        "evenness_defect": _NUM,
        "bounds": {"type": "object"},
    }),
}


def schema(name: str) -> dict:
    out = {"$schema": "https://json-schema.org/draft/2020-12/schema", "title": name}
    out.update(SCHEMAS[name])
    return out
