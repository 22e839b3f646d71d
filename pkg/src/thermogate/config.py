"""Run configuration: TOML document with fixed sections and validated keys."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .errors import ConfigError

OUTPUT_ENV = "THERMOGATE_OUTPUT_DIR"

MODEL_TYPES = ("qubit_ancilla", "two_qubit")
GATES = ("hadamard", "cix")

# section -> key -> (type, default); list types are lists of floats
SCHEMA: dict[str, dict[str, tuple[type, Any]]] = {
    "model": {
        "type": (str, "qubit_ancilla"),
        "n_ancillas": (int, 1),
        "omega": (float, 1.0),
        "coefficients": (dict, {}),
        "eps_uc_scale": (float, 1e-3),
        "uc_shaped": (bool, False),
        "gate": (str, ""),
    },
    "bath": {
        "gamma": (float, 0.0),
        "T": (float, 1.0),
        "spectral": (str, "ohmic"),
        "gamma_p": (float, 0.0),
    },
    "grid": {
        "dt": (float, 0.1),
        "n_t": (int, 4000),
    },
    "propagator": {
        "method": (str, "semi_global"),
        "M": (int, 7),
        "K": (int, 3),
        "inner_tol": (float, 1e-11),
        "max_inner_iters": (int, 40),
        "ref_substeps": (int, 100),
        "backend": (str, "auto"),
    },
    "oct": {
        "lam": (float, 1.0),
        "gamma_a": (float, 0.0),
        "max_iters": (int, 200),
        "target_infidelity": (float, 1e-4),
        "mode": (str, "sequential_krotov"),
        "ascent": (str, "gradient"),
        "engine": (str, "exact_zoh"),
        "precondition": (str, "shape"),
        "shape_floor": (float, 1e-4),
        "shape_sigma": (float, 0.0),
        "guess_amplitudes": (list, [0.02]),
        "guess_frequencies": (list, []),
        "guess_phases": (list, []),
        "guess_seed": (int, -1),
        "guess_file": (str, ""),
    },
    "scan": {
        "gammas": (list, [0.0, 1e-4, 1e-3]),
        "temperatures": (list, [0.1, 1.0, 5.0]),
        "mode": (str, "degrade_only"),
        "workers": (int, 0),
    },
    "output": {
        "directory": (str, "thermogate_out"),
        "prefix": (str, "run"),
    },
}

CHOICES = {
    ("model", "type"): MODEL_TYPES,
    ("model", "gate"): ("",) + GATES,
    ("bath", "spectral"): ("ohmic", "flat"),
    ("propagator", "method"): ("semi_global", "reference", "exact_zoh"),
    ("propagator", "backend"): ("auto", "python", "cython"),
    ("oct", "mode"): ("sequential_krotov", "full_sweep_gradient"),
    ("oct", "ascent"): ("gradient", "conjugate"),
    ("oct", "engine"): ("exact_zoh", "semi_global"),
    ("oct", "precondition"): ("shape", "none"),
    ("scan", "mode"): ("degrade_only", "mitigate"),
}

COEFF_KEYS = {"qubit_ancilla": set(), "two_qubit": {"a", "a_x", "a_y", "omega1"}}
for _k in "abcd":
    for _j in (1, 2, 3):
        COEFF_KEYS["qubit_ancilla"].add(f"{_k}{_j}")
    COEFF_KEYS["qubit_ancilla"].add(_k)


@dataclass(frozen=True)
class RunConfig:
    data: dict

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    def to_toml(self) -> str:
        return tomli_w.dumps(self.data)

    def canonical_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @property
    def tau(self) -> float:
        return self.data["grid"]["dt"] * self.data["grid"]["n_t"]

    @property
    def gate(self) -> str:
        g = self.data["model"]["gate"]
        if g:
            return g
        return "cix" if self.data["model"]["type"] == "two_qubit" else "hadamard"

    def output_dir(self) -> str:
        return os.environ.get(OUTPUT_ENV) or self.data["output"]["directory"]


def _coerce(path: str, typ: type, value):
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not (isinstance(value, int) or (isinstance(value, float) and value.is_integer())):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if typ is list:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list of numbers, got {value!r}")
        return [_coerce(f"{path}[{i}]", float, v) for i, v in enumerate(value)]
    if typ is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a table, got {value!r}")
        return {str(k): _coerce(f"{path}.{k}", float, v) for k, v in sorted(value.items())}
    raise ConfigError(f"{path}: unsupported type")


def _check(cond: bool, path: str, constraint: str):
    if not cond:
        raise ConfigError(f"{path}: must satisfy {constraint}")


def _validate(d: dict):
    m, b, g, p, o, s = (d[k] for k in ("model", "bath", "grid", "propagator", "oct", "scan"))
    for (sec, key), allowed in CHOICES.items():
        _check(d[sec][key] in allowed, f"{sec}.{key}", f"one of {list(allowed)}")
    _check(m["n_ancillas"] in (1, 2, 3), "model.n_ancillas", "n_ancillas in {1, 2, 3}")
    _check(m["omega"] > 0, "model.omega", "omega > 0")
    _check(m["eps_uc_scale"] >= 0, "model.eps_uc_scale", "eps_uc_scale >= 0")
    bad = set(m["coefficients"]) - COEFF_KEYS[m["type"]]
    _check(not bad, f"model.coefficients.{min(bad) if bad else ''}", f"key in {sorted(COEFF_KEYS[m['type']])}")
    gate = m["gate"] or ("cix" if m["type"] == "two_qubit" else "hadamard")
    _check(gate != "cix" or m["type"] == "two_qubit", "model.gate", "cix only on the two_qubit model")
    _check(gate != "hadamard" or m["type"] == "qubit_ancilla", "model.gate", "hadamard only on qubit_ancilla models")
    _check(b["gamma"] >= 0, "bath.gamma", "gamma >= 0")
    _check(b["T"] > 0, "bath.T", "T > 0")
    _check(b["gamma_p"] >= 0, "bath.gamma_p", "gamma_p >= 0")
    _check(g["dt"] > 0, "grid.dt", "dt > 0")
    _check(g["n_t"] >= 1, "grid.n_t", "n_t >= 1")
    _check(p["M"] >= 2, "propagator.M", "M >= 2")
    _check(p["K"] >= 1, "propagator.K", "K >= 1")
    _check(0 < p["inner_tol"] < 1, "propagator.inner_tol", "0 < inner_tol < 1")
    _check(p["max_inner_iters"] >= 1, "propagator.max_inner_iters", "max_inner_iters >= 1")
    _check(p["ref_substeps"] >= 1, "propagator.ref_substeps", "ref_substeps >= 1")
    _check(o["lam"] > 0, "oct.lam", "lam > 0")
    _check(o["gamma_a"] >= 0, "oct.gamma_a", "gamma_a >= 0")
    _check(o["max_iters"] >= 0, "oct.max_iters", "max_iters >= 0")
    _check(0 < o["target_infidelity"] < 1, "oct.target_infidelity", "0 < target_infidelity < 1")
    _check(0 < o["shape_floor"] < 1, "oct.shape_floor", "0 < shape_floor < 1")
    _check(o["shape_sigma"] >= 0, "oct.shape_sigma", "shape_sigma >= 0 (0 selects tau/6)")
    _check(len(o["guess_amplitudes"]) >= 1, "oct.guess_amplitudes", "at least one amplitude")
    _check(len(s["gammas"]) >= 1 and all(x >= 0 for x in s["gammas"]), "scan.gammas", "non-empty, all >= 0")
    _check(len(s["temperatures"]) >= 1 and all(x > 0 for x in s["temperatures"]), "scan.temperatures",
           "non-empty, all > 0")
    _check(s["workers"] >= 0, "scan.workers", "workers >= 0 (0 selects available parallelism)")
    _check(bool(d["output"]["prefix"]), "output.prefix", "non-empty")


def resolve(raw: dict) -> RunConfig:
    """Apply defaults, reject unknown keys and validate every constraint."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a table of sections")
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown section")
    out = {}
    for sec, keys in SCHEMA.items():
        given = raw.get(sec, {})
        if not isinstance(given, dict):
            raise ConfigError(f"{sec}: expected a table")
        bad = set(given) - set(keys)
        if bad:
            raise ConfigError(f"{sec}.{sorted(bad)[0]}: unknown key")
        out[sec] = {}
        for key, (typ, default) in keys.items():
            path = f"{sec}.{key}"
            out[sec][key] = _coerce(path, typ, given[key]) if key in given else copy.deepcopy(default)
    _validate(out)
    return RunConfig(out)


def parse_config(source: str | os.PathLike, overrides: list[str] | None = None) -> RunConfig:
    """Read a TOML file (or TOML text when it does not name a file) and apply --set overrides."""
    text = None
    src = os.fspath(source)
    if "\n" not in src and "=" not in src and "[" not in src:
        try:
            with open(src, "rb") as fh:
                text = fh.read().decode()
        except FileNotFoundError as exc:
            raise FileNotFoundError(f"config file not found: {src}") from exc
    else:
        text = src
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    for item in overrides or []:
        apply_override(raw, item)
    return resolve(raw)


def apply_override(raw: dict, item: str):
    """Apply ``section.key=value``; the value is read as a TOML value, bare words as strings."""
    if "=" not in item:
        raise ConfigError(f"override {item!r}: expected section.key=value")
    path, value = item.split("=", 1)
    parts = path.strip().split(".")
    if len(parts) < 2:
        raise ConfigError(f"override {item!r}: expected section.key=value")
    try:
        val = tomllib.loads(f"v = {value.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        val = value.strip()
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {item!r}: {p} is not a table")
    node[parts[-1]] = val
