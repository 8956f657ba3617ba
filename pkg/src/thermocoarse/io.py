"""JSON / CSV encoding of systems, protocols and work distributions.

Floats are written with 17 significant digits; infinities as "inf" / "-inf".
"""

from __future__ import annotations

import json
import math

import numpy as np

from .core import ThermoCurve, ThermoSystem
from .ops import LT, PITR, PLT, AppendThermalQubit, DiscardLevels, Protocol, WorkDistribution


class InputError(ValueError):
    """Malformed input data; carries a field path for diagnostics."""


def fmt_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    text = format(x, ".17g")
    if not any(c in text for c in ".en"):
        text += ".0"
    return text


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """Deterministic JSON with fixed float formatting."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating, str)) and not isinstance(v, bool)
               for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [pad + json.dumps(str(k)) + ": " + dumps(v, indent, _level + 1) for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def parse_number(v, field: str, allow_inf: bool = True) -> float:
    if isinstance(v, bool):
        raise InputError(f"field '{field}': expected a number, got {v!r}")
    if isinstance(v, (int, float)):
        x = float(v)
    elif isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "infinity", "-inf", "-infinity"):
        x = -math.inf if v.strip().startswith("-") else math.inf
    else:
        raise InputError(f"field '{field}': expected a number or \"inf\", got {v!r}")
    if math.isnan(x) or (math.isinf(x) and not allow_inf):
        raise InputError(f"field '{field}': value {v!r} not allowed")
    return x


def _number_list(data: dict, key: str, where: str, allow_inf=True) -> list:
    if key not in data:
        raise InputError(f"{where}: missing field '{key}'")
    vals = data[key]
    if not isinstance(vals, list):
        raise InputError(f"{where}: field '{key}' must be a list")
    return [parse_number(v, f"{key}[{i}]", allow_inf) for i, v in enumerate(vals)]


def loads(text: str, where: str = "input"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{where}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def system_from_dict(data, beta=None, where: str = "system") -> ThermoSystem:
    if not isinstance(data, dict):
        raise InputError(f"{where}: expected a JSON object")
    energies = _number_list(data, "energies", where)
    pops = _number_list(data, "populations", where, allow_inf=False)
    if beta is None:
        beta = parse_number(data.get("beta", 1.0), "beta", allow_inf=False)
    try:
        return ThermoSystem(energies, pops, beta)
    except ValueError as exc:
        raise InputError(f"{where}: {exc}") from exc


def system_to_dict(s: ThermoSystem) -> dict:
    return {"beta": s.beta, "energies": s.energies.tolist(), "populations": s.populations.tolist()}


def curve_to_csv(c: ThermoCurve) -> str:
    lines = ["x,y"] + [f"{fmt_float(x)},{fmt_float(y)}" for x, y in c.points]
    return "\n".join(lines) + "\n"


def op_to_dict(op) -> dict:
    if isinstance(op, PLT):
        return {"type": "plt", "subset": list(op.subset), "lambda": op.lam}
    if isinstance(op, LT):
        return {"type": "lt", "shifts": list(op.shifts)}
    if isinstance(op, AppendThermalQubit):
        return {"type": "append", "gap": op.gap}
    if isinstance(op, DiscardLevels):
        return {"type": "discard", "factor": list(op.factor)}
    if isinstance(op, PITR):
        return {"type": "pitr", "j": op.j, "k": op.k, "kappa": op.kappa, "steps": op.steps}
    raise TypeError(f"unknown op {op!r}")


def _int(v, field):
    if isinstance(v, bool) or not isinstance(v, int):
        raise InputError(f"field '{field}': expected an integer, got {v!r}")
    return v


def op_from_dict(d, where: str):
    if not isinstance(d, dict) or "type" not in d:
        raise InputError(f"{where}: each op needs a 'type'")
    kind = d["type"]
    try:
        if kind == "plt":
            subset = tuple(_int(v, f"{where}.subset") for v in d["subset"])
            return PLT(subset, parse_number(d["lambda"], f"{where}.lambda", False))
        if kind == "lt":
            return LT(tuple(_number_list(d, "shifts", where)))
        if kind == "append":
            return AppendThermalQubit(parse_number(d["gap"], f"{where}.gap", False))
        if kind == "discard":
            return DiscardLevels(tuple(_int(v, f"{where}.factor") for v in d["factor"]))
        if kind == "pitr":
            return PITR(_int(d["j"], f"{where}.j"), _int(d["k"], f"{where}.k"),
                        parse_number(d["kappa"], f"{where}.kappa"),
                        _int(d.get("steps", 1000), f"{where}.steps"))
    except KeyError as exc:
        raise InputError(f"{where}: missing field {exc}") from exc
    raise InputError(f"{where}: unknown op type {kind!r}")


def protocol_to_dict(p: Protocol) -> dict:
    return {"label": p.label, "ops": [op_to_dict(op) for op in p.ops]}


def protocol_from_dict(data, where: str = "protocol") -> Protocol:
    if isinstance(data, dict) and "protocol" in data and "ops" not in data:
        data = data["protocol"]
    if not isinstance(data, dict) or not isinstance(data.get("ops"), list):
        raise InputError(f"{where}: expected an object with an 'ops' list")
    ops = [op_from_dict(d, f"{where}.ops[{i}]") for i, d in enumerate(data["ops"])]
    return Protocol(ops, str(data.get("label", "")))


def work_to_dict(d: WorkDistribution, beta: float) -> dict:
    out = {
        "units": "kT",
        "worst_case": d.worst_case * beta,
        "mean": d.mean * beta,
        "variance": d.variance * beta * beta,
        "worst_case_energy": d.worst_case,
        "truncated": d.truncated,
    }
    if not d.truncated:
        out["branches"] = [[p, v * beta] for p, v in d.branches]
    return out
