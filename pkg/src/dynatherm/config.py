"""Experiment configuration: an INI file with fixed sections and typed keys.

Unknown sections or keys are rejected with the offending line number. The
effective configuration (file values, then flag overrides, then defaults) is
rendered canonically; its SHA-256 tags every output file.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

from dynatherm.errors import ConfigError


def _floats(text):
    return tuple(float(x) for x in re.split(r"[,\s]+", text.strip()) if x)


def _strings(text):
    return tuple(x for x in re.split(r"[,\s]+", text.strip()) if x)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _opt_float(text):
    return None if text.strip().lower() in ("", "none") else float(text)


def _opt_int(text):
    return None if text.strip().lower() in ("", "none", "inf") else int(text)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "system": {
        "frequencies": (_floats, (0.28, 0.38, 0.63, 0.86)),
        "coupling_scale": (float, 1.0),
    },
    "protocol": {
        "initial_states": (_strings, ("dddd", "uuuu")),
        "realizations": (int, 100),
        "t_max": (float, 20.0),
        "dt": (float, 0.05),
        "window_start": (float, 2.5),
        "window_end": (float, 20.0),
        "seed": (int, 0),
        "bootstrap": (int, 200),
        "per_realization": (_bool, False),
    },
    "recompile": {
        "layers": (int, 20),
        "time": (float, 10.0),
        "realizations": (int, 5),
        "hops": (int, 50),
        "hop_sigma": (float, 0.3),
        "temperature": (float, 0.02),
        "memory": (int, 10),
        "max_iter": (int, 5000),
        "cost_tol": (float, 1e-12),
        "stop_cost": (_opt_float, None),
    },
    "noise": {
        "preset": (str, "default"),
        "shots": (_opt_int, 1000),
        "rc_samples": (int, 100),
        "lambdas": (_floats, (1.0, 3.0)),
        "iterations": (int, 10),
        "eps0": (_opt_float, None),
        "eps1": (_opt_float, None),
        "extrapolation": (str, "auto"),
    },
    "output": {
        "directory": (str, "out"),
    },
}


def _render(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_render(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)
    source: str | None = None

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def canonical(self, include_output: bool = True) -> str:
        lines = []
        for section, keys in SCHEMA.items():
            if section == "output" and not include_output:
                continue
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {_render(self.values[section][k])}" for k in keys)
            lines.append("")
        return "\n".join(lines)

    @property
    def sha256(self) -> str:
        """Hash of everything that can change results; the output location is left out."""
        return hashlib.sha256(self.canonical(include_output=False).encode()).hexdigest()

    def override(self, section: str, key: str, value) -> None:
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {section}.{key}")
        self.values[section][key] = value
        validate(self)


def _line_index(text: str) -> dict[tuple[str, str | None], int]:
    """(section, key) -> 1-based line; (section, None) for section headers."""
    index = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[(.+)\]$", line)
        if m:
            section = m.group(1).strip()
            index.setdefault((section, None), lineno)
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", line)
        if m and section is not None:
            index.setdefault((section, m.group(1).strip().lower()), lineno)
    return index


def defaults() -> ExperimentConfig:
    return ExperimentConfig({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(exc.message if hasattr(exc, "message") else str(exc), line, source) from exc
    lines = _line_index(text)
    cfg = defaults()
    cfg.source = source
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, None)), source)
        for key, raw in parser.items(section):
            line = lines.get((section, key))
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", line, source)
            conv = SCHEMA[section][key][0]
            try:
                cfg.values[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}", line, source) from exc
    try:
        validate(cfg)
    except ConfigError as exc:
        raise ConfigError(str(exc), lines.get(exc.key) if hasattr(exc, "key") else None, source) from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {str(p)!r} not found")
    return parse_config(p.read_text(), str(p))


class _KeyedConfigError(ConfigError):
    def __init__(self, message, section, key):
        super().__init__(message)
        self.key = (section, key)


def validate(cfg: ExperimentConfig) -> None:
    """Semantic checks beyond types; raises ConfigError naming the key."""
    from dynatherm.hamiltonian import QuenchSystem, parse_state_label

    v = cfg.values

    def need(cond, section, key, msg):
        if not cond:
            raise _KeyedConfigError(f"{section}.{key}: {msg}", section, key)

    try:
        sysm = QuenchSystem(v["system"]["frequencies"], v["system"]["coupling_scale"])
    except ValueError as exc:
        raise _KeyedConfigError(f"system: {exc}", "system", "frequencies") from exc
    pr = v["protocol"]
    need(pr["initial_states"], "protocol", "initial_states", "at least one state is required")
    for s in pr["initial_states"]:
        try:
            parse_state_label(s, sysm.n_qubits)
        except ValueError as exc:
            raise _KeyedConfigError(f"protocol.initial_states: {exc}", "protocol", "initial_states") from exc
    need(pr["realizations"] >= 1, "protocol", "realizations", "must be >= 1")
    need(pr["dt"] > 0, "protocol", "dt", "must be positive")
    need(pr["t_max"] >= pr["dt"], "protocol", "t_max", "must be at least dt")
    need(0 <= pr["window_start"] < pr["window_end"] <= pr["t_max"] + 1e-9, "protocol", "window_start",
         "window must satisfy 0 <= start < end <= t_max")
    need(pr["bootstrap"] >= 1, "protocol", "bootstrap", "must be >= 1")
    need(pr["seed"] >= 0, "protocol", "seed", "must be non-negative")
    rc = v["recompile"]
    need(rc["layers"] >= 1, "recompile", "layers", "must be >= 1")
    need(rc["realizations"] >= 1, "recompile", "realizations", "must be >= 1")
    need(rc["hops"] >= 1, "recompile", "hops", "must be >= 1")
    need(rc["hop_sigma"] >= 0, "recompile", "hop_sigma", "must be non-negative")
    need(rc["temperature"] >= 0, "recompile", "temperature", "must be non-negative")
    need(rc["memory"] >= 1, "recompile", "memory", "must be >= 1")
    need(rc["max_iter"] >= 1, "recompile", "max_iter", "must be >= 1")
    nz = v["noise"]
    need(nz["shots"] is None or nz["shots"] >= 1, "noise", "shots", "must be >= 1 or none")
    need(nz["rc_samples"] >= 1, "noise", "rc_samples", "must be >= 1")
    lams = nz["lambdas"]
    need(len(lams) >= 1 and len(set(lams)) == len(lams), "noise", "lambdas", "need distinct noise factors")
    need(all(x >= 1 and float(x).is_integer() and int(x) % 2 == 1 for x in lams), "noise", "lambdas",
         "CNOT folding needs odd integer factors")
    need(len(lams) <= 2, "noise", "lambdas", "only the two-point extrapolation is supported")
    need(nz["iterations"] >= 1, "noise", "iterations", "must be >= 1")
    for k in ("eps0", "eps1"):
        need(nz[k] is None or 0 <= nz[k] < 0.5, "noise", k, "must lie in [0, 0.5)")
    need(nz["extrapolation"] in ("auto", "plain", "mirrored"), "noise", "extrapolation",
         "must be auto, plain or mirrored")
