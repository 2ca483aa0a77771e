"""Experiment spec files.

Specs are TOML. Every key is checked against a fixed schema; unknown keys,
missing required keys, wrong types and constraint violations raise
:class:`SpecError` with the dotted key path. Example::

    kind = "topology_table"

    [system]
    n = 5
    topology = "chain"
    coupling = "ising"

    [pulse]
    t_gate = "pi"          # number, or "pi", "4pi", "4*pi", "0.5*pi"
    n_ts = 12

    [optimizer]
    f_targ = 0.999

Defaults are listed in ``SCHEMA``; :meth:`ExperimentSpec.effective` returns
the fully populated dictionary that is echoed into every artifact.
"""

from __future__ import annotations

import copy
import difflib
import math
import re
import sys
from dataclasses import dataclass
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from insitu.fidelity import MeasurementModel
from insitu.harness import PLACEMENTS, Scenario
from insitu.optimizer import DIRECTIONS, GRADIENT_MODES, OptimizerConfig
from insitu.system import COUPLINGS, TOPOLOGIES, SpinSystem

KINDS = ("fidelity_trace", "topology_table", "nupds_scaling", "anum_scaling", "perturbation")

REQUIRED = object()

# Fig. 4 rows: topology, coupling, t_gate, n_ts
DEFAULT_TABLE_ROWS = [
    {"topology": "chain", "coupling": "ising", "t_gate": "pi", "n_ts": 12},
    {"topology": "star", "coupling": "ising", "t_gate": "pi", "n_ts": 12},
    {"topology": "fully_connected", "coupling": "ising", "t_gate": "12pi", "n_ts": 160},
    {"topology": "chain", "coupling": "heisenberg", "t_gate": "16pi", "n_ts": 160},
    {"topology": "star", "coupling": "heisenberg", "t_gate": "12pi", "n_ts": 160},
    {"topology": "fully_connected", "coupling": "heisenberg", "t_gate": "12pi", "n_ts": 160},
]

# section -> key -> (type, default)
SCHEMA: dict[str, dict[str, tuple[Any, Any]]] = {
    "": {"kind": (str, REQUIRED), "output": (str, "out")},
    "system": {
        "n": (int, REQUIRED),
        "topology": (str, REQUIRED),
        "coupling": (str, REQUIRED),
        "strengths": (list, None),
        "strength_seed": (int, None),
    },
    "target": {
        "gate": (str, "cnot"),
        "control": (int, 0),
        "target": (int, 1),
        "placement": (str, "fixed"),
    },
    "pulse": {"t_gate": ("time", REQUIRED), "n_ts": (int, REQUIRED)},
    "optimizer": {
        "f_targ": (float, REQUIRED),
        "max_upds": (int, 1000),
        "gradient_mode": (str, "analytic"),
        "fd_step": (float, None),
        "a_num": (float, 0.0),
        "shots": (int, 0),
        "stall_window": (int, 50),
        "stall_eps": (float, 1e-6),
        "direction": (str, "lbfgs"),
        "lbfgs_memory": (int, 10),
    },
    "harness": {
        "trials": (int, 20),
        "workers": (int, 1),
        "seed": (int, 0),
        "n_values": (list, None),
        "anum_grid": (list, None),
        "target_p": (float, 0.5),
        "samples": (int, 100),
        "norm": (float, 0.1),
        "rows": (list, None),
    },
    "cost": {
        "n_meas_mode": (str, "parallel_local"),
        "t_init": (float, 1.0),
        "t_meas": (float, 1.0),
        "n_upds": (int, None),
        "p_succ": (float, None),
    },
}

ROW_SCHEMA = {
    "topology": (str, REQUIRED),
    "coupling": (str, REQUIRED),
    "t_gate": ("time", REQUIRED),
    "n_ts": (int, REQUIRED),
}


class SpecError(ValueError):
    """Invalid experiment spec; the message names the offending key path."""


_TIME = re.compile(r"^\s*(?:([0-9]*\.?[0-9]+(?:[eE][-+]?\d+)?)\s*\*?\s*)?pi\s*$")


def parse_time(value, path: str = "t_gate") -> float:
    """Numbers pass through; ``"pi"``, ``"4pi"`` and ``"4*pi"`` are multiples of pi."""
    if isinstance(value, bool):
        raise SpecError(f"{path}: expected a number or a multiple of pi, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _TIME.match(value)
        if m:
            return float(m.group(1) or 1.0) * math.pi
    raise SpecError(f"{path}: expected a number or a multiple of pi, got {value!r}")


def _suggest(key: str, valid, prefix: str = "") -> str:
    close = difflib.get_close_matches(key, list(valid), n=1, cutoff=0.6)
    return f" (did you mean '{prefix}{close[0]}'?)" if close else ""


def _coerce(value, kind, path):
    if kind == "time":
        return parse_time(value, path)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SpecError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SpecError(f"{path}: expected an integer, got {value!r}")
        return value
    if not isinstance(value, kind):
        raise SpecError(f"{path}: expected {kind.__name__}, got {value!r}")
    return value


def _fill(table: dict, schema: dict, prefix: str) -> dict:
    out = {}
    for key, value in table.items():
        path = f"{prefix}{key}"
        if key not in schema:
            raise SpecError(f"unknown key '{path}'{_suggest(key, schema, prefix)}")
        out[key] = _coerce(value, schema[key][0], path)
    for key, (_, default) in schema.items():
        if key not in out:
            if default is REQUIRED:
                raise SpecError(f"missing required key '{prefix}{key}'")
            out[key] = copy.deepcopy(default)
    return {k: out[k] for k in schema}


def _flat_paths() -> list[str]:
    return [f"{s}.{k}" if s else k for s, keys in SCHEMA.items() for k in keys]


def _normalize(raw: dict) -> dict:
    sections = tuple(s for s in SCHEMA if s)
    top = {}
    data = {}
    for key, value in raw.items():
        if key in sections:
            if not isinstance(value, dict):
                raise SpecError(f"'{key}' must be a table")
            continue
        if isinstance(value, dict):
            # a misspelled section: suggest the nearest full key path
            sub = next(iter(value), "")
            guess = difflib.get_close_matches(f"{key}.{sub}", _flat_paths(), n=1, cutoff=0.6)
            hint = f" (did you mean '{guess[0]}'?)" if guess else _suggest(key, sections)
            raise SpecError(f"unknown key '{key}.{sub}'{hint}" if sub else f"unknown section '{key}'{hint}")
        top[key] = value
    data[""] = _fill(top, SCHEMA[""], "")
    for s in sections:
        data[s] = _fill(raw.get(s, {}), SCHEMA[s], f"{s}.")
    return data


def _choice(value, options, path):
    if value not in options:
        raise SpecError(f"{path}: {value!r} is not one of {list(options)}{_suggest(str(value), options)}")


def _validate(d: dict) -> None:
    _choice(d[""]["kind"], KINDS, "kind")
    sysd = d["system"]
    if sysd["n"] < 2:
        raise SpecError("system.n: need at least 2 qubits")
    _choice(sysd["topology"], TOPOLOGIES, "system.topology")
    _choice(sysd["coupling"], COUPLINGS, "system.coupling")
    t = d["target"]
    if t["gate"] != "cnot":
        raise SpecError(f"target.gate: only 'cnot' is supported, got {t['gate']!r}")
    _choice(t["placement"], PLACEMENTS, "target.placement")
    for k in ("control", "target"):
        if not 0 <= t[k] < sysd["n"]:
            raise SpecError(f"target.{k}: qubit {t[k]} out of range for system.n = {sysd['n']}")
    if t["placement"] == "fixed" and t["control"] == t["target"]:
        raise SpecError("target.control and target.target must differ")
    if d["pulse"]["t_gate"] <= 0:
        raise SpecError("pulse.t_gate: must be positive")
    if d["pulse"]["n_ts"] < 1:
        raise SpecError("pulse.n_ts: must be >= 1")
    o = d["optimizer"]
    if not 0 < o["f_targ"] < 1:
        raise SpecError("optimizer.f_targ: must lie in (0, 1)")
    _choice(o["gradient_mode"], GRADIENT_MODES, "optimizer.gradient_mode")
    _choice(o["direction"], DIRECTIONS, "optimizer.direction")
    if o["a_num"] < 0:
        raise SpecError("optimizer.a_num: must be non-negative")
    if o["shots"] < 0:
        raise SpecError("optimizer.shots: must be non-negative")
    if o["shots"] and o["a_num"]:
        raise SpecError("optimizer.a_num and optimizer.shots are mutually exclusive")
    for k in ("max_upds", "stall_window", "lbfgs_memory"):
        if o[k] < 1:
            raise SpecError(f"optimizer.{k}: must be >= 1")
    h = d["harness"]
    for k in ("trials", "workers", "samples"):
        if h[k] < 1:
            raise SpecError(f"harness.{k}: must be >= 1")
    if not 0 < h["target_p"] < 1:
        raise SpecError("harness.target_p: must lie in (0, 1)")
    if h["norm"] <= 0:
        raise SpecError("harness.norm: must be positive")
    if h["n_values"] is not None:
        for i, v in enumerate(h["n_values"]):
            _coerce(v, int, f"harness.n_values[{i}]")
            if v < 2:
                raise SpecError(f"harness.n_values[{i}]: need at least 2 qubits")
    if h["anum_grid"] is not None:
        grid = [_coerce(v, float, f"harness.anum_grid[{i}]") for i, v in enumerate(h["anum_grid"])]
        if not grid or any(a <= 0 for a in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise SpecError("harness.anum_grid: must be positive and strictly ascending")
        h["anum_grid"] = grid
    if h["rows"] is not None:
        rows = []
        for i, row in enumerate(h["rows"]):
            if not isinstance(row, dict):
                raise SpecError(f"harness.rows[{i}]: expected a table")
            r = _fill(row, ROW_SCHEMA, f"harness.rows[{i}].")
            _choice(r["topology"], TOPOLOGIES, f"harness.rows[{i}].topology")
            _choice(r["coupling"], COUPLINGS, f"harness.rows[{i}].coupling")
            rows.append(r)
        h["rows"] = rows
    kind = d[""]["kind"]
    if kind == "anum_scaling" and h["anum_grid"] is None:
        raise SpecError("harness.anum_grid: required for kind 'anum_scaling'")
    c = d["cost"]
    from insitu.harness import N_MEAS_MODES

    _choice(c["n_meas_mode"], N_MEAS_MODES, "cost.n_meas_mode")
    if c["p_succ"] is not None and not 0 < c["p_succ"] <= 1:
        raise SpecError("cost.p_succ: must lie in (0, 1]")
    if c["n_upds"] is not None and c["n_upds"] < 1:
        raise SpecError("cost.n_upds: must be >= 1")
    try:
        SpinSystem(sysd["n"], sysd["topology"], sysd["coupling"], sysd["strengths"], sysd["strength_seed"])
    except (ValueError, TypeError) as exc:
        raise SpecError(f"system.strengths: {exc}") from None


@dataclass(frozen=True)
class ExperimentSpec:
    """Validated spec; sections are plain dictionaries with defaults applied."""

    data: dict

    @property
    def kind(self) -> str:
        return self.data[""]["kind"]

    @property
    def output(self) -> str:
        return self.data[""]["output"]

    def section(self, name: str) -> dict:
        return self.data[name]

    def effective(self) -> dict:
        """Every key with its effective value, in a JSON-friendly layout."""
        out = dict(self.data[""])
        for s in SCHEMA:
            if s:
                out[s] = copy.deepcopy(self.data[s])
        return out

    def with_overrides(self, seed=None, workers=None, output=None) -> "ExperimentSpec":
        d = copy.deepcopy(self.data)
        if seed is not None:
            d["harness"]["seed"] = int(seed)
        if workers is not None:
            d["harness"]["workers"] = int(workers)
        if output is not None:
            d[""]["output"] = str(output)
        return ExperimentSpec(d)

    # -------------------------------------------------- domain objects

    def system(self, n=None, topology=None, coupling=None) -> SpinSystem:
        s = self.data["system"]
        strengths = s["strengths"] if n is None and topology is None else None
        return SpinSystem(
            n if n is not None else s["n"],
            topology or s["topology"],
            coupling or s["coupling"],
            strengths,
            s["strength_seed"],
        )

    def measurement(self) -> MeasurementModel:
        o = self.data["optimizer"]
        if o["shots"]:
            return MeasurementModel("sampled", 0.0, o["shots"])
        return MeasurementModel.from_a_num(o["a_num"])

    def optimizer_config(self) -> OptimizerConfig:
        o = self.data["optimizer"]
        return OptimizerConfig(
            f_targ=o["f_targ"],
            max_upds=o["max_upds"],
            gradient_mode=o["gradient_mode"],
            fd_step=o["fd_step"],
            measurement=self.measurement(),
            stall_window=o["stall_window"],
            stall_eps=o["stall_eps"],
            direction=o["direction"],
            lbfgs_memory=o["lbfgs_memory"],
        )

    def scenario(self, n=None, topology=None, coupling=None, t_gate=None, n_ts=None) -> Scenario:
        t = self.data["target"]
        p = self.data["pulse"]
        return Scenario(
            self.system(n, topology, coupling),
            t_gate if t_gate is not None else p["t_gate"],
            n_ts if n_ts is not None else p["n_ts"],
            self.optimizer_config(),
            t["control"],
            t["target"],
            t["placement"],
        )


def parse_spec(text: str) -> ExperimentSpec:
    """Parse and validate TOML spec text."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise SpecError(f"not valid TOML: {exc}") from None
    d = _normalize(raw)
    _validate(d)
    return ExperimentSpec(d)


def load_spec(path) -> ExperimentSpec:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise SpecError(f"{path}: not UTF-8 ({exc})") from None
    return parse_spec(text)
