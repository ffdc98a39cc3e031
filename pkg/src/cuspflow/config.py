"""Run configuration: strict YAML schema with line-anchored diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Validation failure; ``problems`` holds (line, path, message) triples."""

    def __init__(self, problems: list):
        self.problems = problems
        super().__init__("; ".join(_fmt(p) for p in problems))


def _fmt(p) -> str:
    line, path, msg = p
    where = f"line {line}" if line else "config"
    return f"{where}: {path}: {msg}" if path else f"{where}: {msg}"


@dataclass(frozen=True)
class Field:
    kind: str                   # int, float, str, bool, list, grid
    default: Any = None
    lo: float | None = None
    hi: float | None = None
    open_lo: bool = False
    open_hi: bool = False
    choices: tuple = ()
    required: bool = False


SYSTEMS = ("gauss", "alphabet12", "gamma2", "similarity4", "coding")
GROUPS = ("gamma2", "schottky2d")

SCHEMA: dict = {
    "name": Field("str", "run"),
    "seed": Field("int", 0, lo=0),
    "system": Field("str", None, choices=SYSTEMS),
    "group": {
        "example": Field("str", None, choices=GROUPS),
        "file": Field("str", None),
    },
    "coding": {
        "eta": Field("float", 0.05, lo=0, hi=1, open_lo=True, open_hi=True),
        "max_generation": Field("int", 12, lo=1),
        "truncation_floor": Field("float", 0.0, lo=0),
        "delta_hint": Field("float", 1.0, lo=0),
        "explicit_per_family": Field("int", 4, lo=1),
        "search_depth": Field("int", 400, lo=1),
        "excursion_cap": Field("int", 20, lo=1),
    },
    "discretization": {
        "nodes": Field("int", 1000, lo=4),
        "explicit": Field("int", 200, lo=1),
        "scheme": Field("str", "auto", choices=("auto", "collocation", "ulam", "nearest")),
        "truncation_floor": Field("float", 0.0, lo=0),
    },
    "spectral": {
        "bracket": Field("list", None),
        "tol": Field("float", 1e-8, lo=0, open_lo=True),
        "sigmas": Field("list", [0.0, -0.05]),
        "b_grid": Field("grid", {"start": 1.0, "stop": 50.0, "step": 1.0}),
        "threshold": Field("float", 1e-3, lo=0, open_lo=True),
        "probe_b": Field("float", 20.0),
        "probe_steps": Field("int", 100, lo=1),
    },
    "tail": {
        "epsilon": Field("float", 0.4, lo=0),
        "delta": Field("float", None),
    },
    "uni": {
        "n0": Field("int", 1, lo=1),
        "base_points": Field("list", None),
        "radius": Field("float", 0.5, lo=0, open_lo=True),
        "directions": Field("int", 8, lo=1),
    },
    "orbit": {
        "radii": Field("list", [8.0, 9.0, 10.0, 11.0, 12.0]),
    },
    "measure": {
        "samples": Field("int", 200, lo=1),
        "min_nodes": Field("int", 20, lo=1),
        "cusp_points": Field("int", 3, lo=0),
    },
    "flow": {
        "samples": Field("int", 100_000, lo=100),
        "times": Field("grid", {"start": 0.0, "stop": 6.0, "step": 0.25}),
        "observable": Field("str", "x"),
        "burn": Field("int", 50, lo=0),
        "lambda_minus_radius": Field("float", 0.0, lo=0),
    },
    "output": {
        "dir": Field("str", "out"),
    },
}


def _lines(node, path=(), out=None) -> dict:
    """Map each key path to its 1-based source line."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            p = path + (str(k.value),)
            out[p] = k.start_mark.line + 1
            _lines(v, p, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            out[path + (i,)] = v.start_mark.line + 1
            _lines(v, path + (i,), out)
    return out


def _number(v, kind):
    if isinstance(v, bool):
        raise TypeError
    if kind == "int":
        if isinstance(v, int):
            return v
        raise TypeError
    if isinstance(v, (int, float)):
        return float(v)
    raise TypeError


def _check_field(rule: Field, v, where, problems):
    if v is None:
        return rule.default
    try:
        if rule.kind in ("int", "float"):
            v = _number(v, rule.kind)
            if rule.kind == "float" and not math.isfinite(v):
                raise ValueError("must be finite")
            if rule.lo is not None and (v < rule.lo or (rule.open_lo and v == rule.lo)):
                raise ValueError(f"value {v} out of range (must be {'>' if rule.open_lo else '>='} {rule.lo})")
            if rule.hi is not None and (v > rule.hi or (rule.open_hi and v == rule.hi)):
                raise ValueError(f"value {v} out of range (must be {'<' if rule.open_hi else '<='} {rule.hi})")
        elif rule.kind == "str":
            if not isinstance(v, str):
                raise TypeError
            if rule.choices and v not in rule.choices:
                raise ValueError(f"{v!r} is not one of {', '.join(rule.choices)}")
        elif rule.kind == "bool":
            if not isinstance(v, bool):
                raise TypeError
        elif rule.kind == "list":
            if not isinstance(v, list):
                raise TypeError
        elif rule.kind == "grid":
            if not isinstance(v, dict) or set(v) != {"start", "stop", "step"}:
                raise ValueError("grid needs exactly start, stop and step")
            vals = {k: _number(x, "float") for k, x in v.items()}
            if not vals["step"] > 0 or vals["stop"] < vals["start"]:
                raise ValueError("grid needs step > 0 and stop >= start")
            v = vals
    except TypeError:
        problems.append((where[0], where[1], f"expected {rule.kind}, got {type(v).__name__}"))
        return rule.default
    except ValueError as exc:
        problems.append((where[0], where[1], str(exc)))
        return rule.default
    return v


def _walk(schema: dict, data: dict, path: tuple, lines: dict, problems: list) -> dict:
    out = {}
    for key in data:
        if key not in schema:
            p = path + (str(key),)
            problems.append((lines.get(p, 0), ".".join(p), f"unknown key '{key}'"))
    for key, rule in schema.items():
        p = path + (key,)
        v = data.get(key)
        if isinstance(rule, dict):
            if v is None:
                v = {}
            if not isinstance(v, dict):
                problems.append((lines.get(p, 0), ".".join(p), "expected a mapping"))
                v = {}
            out[key] = _walk(rule, v, p, lines, problems)
        else:
            out[key] = _check_field(rule, v, (lines.get(p, 0), ".".join(p)), problems)
    return out


@dataclass
class RunConfig:
    data: dict
    path: Path | None = None
    raw: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def base_dir(self) -> Path:
        return self.path.parent if self.path else Path.cwd()

    def grid(self, section: str, key: str) -> list:
        g = self.data[section][key]
        n = int(math.floor((g["stop"] - g["start"]) / g["step"] + 1e-9)) + 1
        return [g["start"] + i * g["step"] for i in range(n)]


def parse_config(text: str, path: Path | None = None) -> RunConfig:
    """Parse and validate; raises ConfigError listing every problem, never a partial config."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark else 0
        raise ConfigError([(line, "", f"parse error: {getattr(exc, 'problem', exc)}")]) from None
    if node is None or data is None:
        raise ConfigError([(1, "", "parse error: empty configuration")])
    if not isinstance(data, dict):
        raise ConfigError([(1, "", "parse error: top level must be a mapping")])
    lines = _lines(node)
    problems: list = []
    out = _walk(SCHEMA, data, (), lines, problems)
    grp = out["group"]
    if grp["example"] and grp["file"]:
        problems.append((lines.get(("group",), 0), "group", "give either example or file, not both"))
    br = out["spectral"]["bracket"]
    if br is not None and (len(br) != 2 or not all(isinstance(x, (int, float)) for x in br)
                           or not br[0] < br[1]):
        problems.append((lines.get(("spectral", "bracket"), 0), "spectral.bracket",
                         "bracket must be two increasing numbers"))
    if problems:
        raise ConfigError(problems)
    return RunConfig(out, path, data)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([(0, "", f"cannot read {path}: {exc.strerror}")]) from None
    return parse_config(text, path)


def validate_config(path) -> list:
    """Empty list when the file is valid, otherwise formatted diagnostics."""
    try:
        load_config(path)
    except ConfigError as exc:
        return [_fmt(p) for p in exc.problems]
    return []


# ---------------------------------------------------------------------------
# group files

GROUP_FILE_SCHEMA = {"dim", "generators", "labels", "cusp", "t0", "free", "name", "element_cap"}


def load_group_file(path):
    """Group from YAML with the cusp at infinity.

    Generators are 2x2 matrices (complex entries as strings for d = 2) or
    Bruhat tuples such as {type: inversive, p: [..], p_inv: [..], h: .., A: [[..]]}.
    cusp: {lattice_words: [[1]], origin: [0.0], y_radius: 0.0}
    """
    import numpy as np

    from .coding import _map_from_dict
    from .geometry import INF, from_matrix, identity
    from .group import CuspChart, GroupModel

    path = Path(path)
    try:
        text = path.read_text()
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        doc = yaml.safe_load(text)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError([(0, str(path), f"cannot load group file: {exc}")]) from None
    if not isinstance(doc, dict):
        raise ConfigError([(1, str(path), "group file must be a mapping")])
    lines = _lines(node)
    bad = [k for k in doc if k not in GROUP_FILE_SCHEMA]
    if bad:
        raise ConfigError([(lines.get((k,), 0), k, f"unknown key '{k}'") for k in bad])
    try:
        d = int(doc["dim"])
        mats = []
        for m in doc["generators"]:
            if isinstance(m, dict):
                mats.append(_map_from_dict(m))
            elif d == 1:
                mats.append(from_matrix(np.array(m, dtype=float)))
            else:
                mats.append(from_matrix(np.array([[complex(str(v).replace(" ", "")) for v in row]
                                                  for row in m]), dim=2))
        cusp = doc["cusp"]
        words = tuple(tuple(w) for w in cusp["lattice_words"])
        chart = CuspChart(INF, identity(d), len(words), words, cusp["origin"],
                          float(cusp.get("y_radius", 0.0)))
        return GroupModel(d, mats, list(doc.get("labels") or [f"g{i + 1}" for i in range(len(mats))]),
                          [chart], t0=float(doc.get("t0", 1.0)), free=bool(doc.get("free", False)),
                          element_cap=int(doc.get("element_cap", 2_000_000)),
                          name=str(doc.get("name", path.stem)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError([(0, str(path), f"invalid group file: {exc}")]) from None


def save_group_file(group, path) -> None:
    """Write a group as Bruhat tuples; loading it back reproduces the model bit for bit."""
    from .coding import _map_to_dict

    chart = group.cusps[0]
    if len(group.cusps) != 1 or chart.chart.key() != identity_key(group.dim):
        raise ValueError("group files describe a single cusp at infinity with the identity chart")
    doc = {
        "name": group.name, "dim": group.dim, "t0": group.t0, "free": group.free,
        "element_cap": group.element_cap, "labels": list(group.labels),
        "generators": [_plain_map(_map_to_dict(g)) for g in group.generators],
        "cusp": {"lattice_words": [list(w) for w in chart.lattice_words],
                 "origin": [float(v) for v in chart.origin], "y_radius": float(chart.y_radius)},
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def identity_key(d: int) -> tuple:
    from .geometry import identity

    return identity(d).key()


def _plain_map(d: dict) -> dict:
    return {k: (v if isinstance(v, str) else _plain_num(v)) for k, v in d.items()}


def _plain_num(v):
    if isinstance(v, list):
        return [_plain_num(x) for x in v]
    return float(v)
