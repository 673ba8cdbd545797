"""Noise channels and per-CNOT noise models.

A ``NoiseModel`` is a list of templates attached to every CNOT. Each template
names a channel kind and where it acts: on the CNOT's two qubits
(``active``), on every other qubit (``spectators``), or on the whole register
(``global``). Models load from INI preset files.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from dynatherm.errors import ConfigError
from dynatherm.noisy.density import apply_unitary, depolarize_qubit, pauli_basis, pauli_string

PROB_TOL = 1e-12


class Channel:
    """A completely positive trace-preserving map on the listed qubits."""

    qubits: tuple[int, ...] = ()

    def apply(self, rho: np.ndarray, n: int) -> np.ndarray:
        raise NotImplementedError

    def kraus(self, n: int) -> list[np.ndarray]:
        raise NotImplementedError


def _check_prob(p, name):
    if not (0.0 <= p <= 1.0) or not np.isfinite(p):
        raise ValueError(f"{name} must lie in [0, 1], got {p}")


@dataclass(frozen=True)
class Depolarizing(Channel):
    """rho -> (1 - p) rho + p (I/2^k (x) Tr_S rho) on the k qubits S."""

    p: float
    qubits: tuple[int, ...]

    def __post_init__(self):
        _check_prob(self.p, "depolarizing probability")
        if len(set(self.qubits)) != len(self.qubits) or not self.qubits:
            raise ValueError("depolarizing channel needs distinct qubits")

    def apply(self, rho, n):
        if self.p == 0:
            return rho
        mixed = rho
        for q in self.qubits:
            mixed = depolarize_qubit(mixed, q, n)
        return (1 - self.p) * rho + self.p * mixed

    def kraus(self, n):
        k = len(self.qubits)
        labels = pauli_basis(k)
        w = self.p / 4**k
        out = []
        for lab in labels:
            weight = 1 - self.p + w if set(lab) == {"I"} else w
            out.append(np.sqrt(weight) * pauli_string(lab, self.qubits, n))
        return out


@dataclass(frozen=True)
class GlobalDepolarizing(Channel):
    """rho -> f rho + (1 - f) I / 2^N."""

    f: float

    def __post_init__(self):
        _check_prob(self.f, "global depolarizing fidelity")

    def apply(self, rho, n):
        if self.f == 1:
            return rho
        d = rho.shape[0]
        return self.f * rho + (1 - self.f) * np.trace(rho) * np.eye(d) / d

    def kraus(self, n):
        return Depolarizing(1 - self.f, tuple(range(n))).kraus(n)


@dataclass(frozen=True)
class PauliChannel(Channel):
    """rho -> sum_P p_P P rho P over Pauli strings on ``qubits``."""

    probabilities: dict
    qubits: tuple[int, ...]

    def __post_init__(self):
        total = 0.0
        for lab, p in self.probabilities.items():
            if len(lab) != len(self.qubits) or set(lab) - set("IXYZ"):
                raise ValueError(f"bad Pauli label {lab!r} for {len(self.qubits)} qubit(s)")
            _check_prob(p, f"probability of {lab}")
            total += p
        if abs(total - 1) > PROB_TOL:
            raise ValueError(f"Pauli channel probabilities sum to {total}, expected 1")

    def apply(self, rho, n):
        out = np.zeros_like(rho)
        for lab, p in self.probabilities.items():
            if p:
                m = pauli_string(lab, self.qubits, n)
                out += p * (m @ rho @ m)
        return out

    def kraus(self, n):
        return [np.sqrt(p) * pauli_string(lab, self.qubits, n) for lab, p in self.probabilities.items()]


@dataclass(frozen=True)
class CoherentRotation(Channel):
    """Unitary error exp(-i angle/2 P) for the Pauli string ``axis`` on ``qubits``."""

    angle: float
    axis: str
    qubits: tuple[int, ...]

    def __post_init__(self):
        if len(self.axis) != len(self.qubits) or set(self.axis) - set("XYZ"):
            raise ValueError(f"rotation axis {self.axis!r} does not match qubits {self.qubits}")

    def unitary(self, n):
        p = pauli_string(self.axis, self.qubits, n)
        return np.cos(self.angle / 2) * np.eye(1 << n) - 1j * np.sin(self.angle / 2) * p

    def apply(self, rho, n):
        return apply_unitary(rho, self.unitary(n))

    def kraus(self, n):
        return [self.unitary(n)]


def kraus_completeness_error(ch: Channel, n: int) -> float:
    ks = ch.kraus(n)
    s = sum(k.conj().T @ k for k in ks)
    return float(np.max(np.abs(s - np.eye(1 << n))))


def apply_kraus(rho, kraus) -> np.ndarray:
    return sum(k @ rho @ k.conj().T for k in kraus)


def apply_channel(rho: np.ndarray, ch: Channel, n: int, check: bool = False) -> np.ndarray:
    if check:
        err = kraus_completeness_error(ch, n)
        if err > 1e-12:
            raise ValueError(f"channel {ch} is not trace preserving (Kraus error {err:.2e})")
    return ch.apply(rho, n)


# -- per-CNOT templates ---------------------------------------------------------

KINDS = ("depolarizing2", "depolarizing1", "global", "pauli", "coherent")
ROLES = ("active", "spectators")


@dataclass(frozen=True)
class Attachment:
    kind: str
    on: str = "active"
    p: float = 0.0
    f: float = 1.0
    angle: float = 0.0
    axis: str = "ZZ"
    probabilities: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}; expected one of {KINDS}")
        if self.kind != "global" and self.on not in ROLES:
            raise ValueError(f"channel placement must be one of {ROLES}, got {self.on!r}")
        if self.kind in ("depolarizing2", "pauli") and self.on != "active":
            raise ValueError(f"{self.kind} acts on the CNOT pair only")
        # validate parameters by building once on a 4-qubit dummy
        self.bind(0, 1, max(4, 2))

    def bind(self, control: int, target: int, n: int) -> list[Channel]:
        pair = (control, target)
        spectators = tuple(q for q in range(n) if q not in pair)
        where = pair if self.on == "active" else spectators
        if self.kind == "global":
            return [GlobalDepolarizing(self.f)]
        if self.kind == "depolarizing2":
            return [Depolarizing(self.p, pair)]
        if self.kind == "depolarizing1":
            return [Depolarizing(self.p, (q,)) for q in where]
        if self.kind == "pauli":
            return [PauliChannel(dict(self.probabilities), pair)]
        # coherent: a two-letter axis acts on the pair, a one-letter axis on each qubit
        if len(self.axis) == 2:
            if self.on != "active":
                raise ValueError("two-qubit coherent errors attach to the active pair")
            return [CoherentRotation(self.angle, self.axis, pair)]
        return [CoherentRotation(self.angle, self.axis, (q,)) for q in where]


@dataclass(frozen=True)
class NoiseModel:
    attachments: tuple[Attachment, ...] = ()
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "attachments", tuple(self.attachments))

    @property
    def is_noiseless(self) -> bool:
        return not self.attachments

    def channels_for(self, control: int, target: int, n: int) -> list[Channel]:
        out = []
        for a in self.attachments:
            out.extend(a.bind(control, target, n))
        return out

    @classmethod
    def ideal(cls) -> "NoiseModel":
        return cls((), "ideal")

    @classmethod
    def global_depolarizing(cls, f: float) -> "NoiseModel":
        return cls((Attachment("global", f=f),), f"global-{f}")


@dataclass(frozen=True)
class ReadoutModel:
    """Per-qubit readout flips: eps0 = p(read 1 | 0), eps1 = p(read 0 | 1)."""

    eps0: float = 0.0
    eps1: float = 0.0
    shots: int | None = 1000
    iterations: int = 10

    def __post_init__(self):
        for name in ("eps0", "eps1"):
            v = getattr(self, name)
            for x in np.atleast_1d(v):
                if not (0 <= x < 0.5):
                    raise ValueError(f"{name} must lie in [0, 0.5), got {x}")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be positive (or None for the infinite-shot limit)")
        if self.iterations < 1:
            raise ValueError("unfolding needs at least one iteration")

    def qubit_matrix(self, q: int) -> np.ndarray:
        e0 = np.atleast_1d(self.eps0)
        e1 = np.atleast_1d(self.eps1)
        a = float(e0[q] if len(e0) > 1 else e0[0])
        b = float(e1[q] if len(e1) > 1 else e1[0])
        return np.array([[1 - a, b], [a, 1 - b]])

    def response(self, n: int) -> np.ndarray:
        """Column-stochastic R[measured, true] over bitstring integers."""
        r = np.ones((1, 1))
        for q in reversed(range(n)):
            r = np.kron(r, self.qubit_matrix(q))
        return r

    @property
    def is_perfect(self) -> bool:
        return not np.any(np.atleast_1d(self.eps0)) and not np.any(np.atleast_1d(self.eps1))


# -- preset files ---------------------------------------------------------------

PRESETS = ("default", "ideal", "global995")

_ATTACH_KEYS = {"kind", "on", "p", "f", "angle", "axis"}
_READOUT_KEYS = {"eps0", "eps1"}


def _parse_preset(parser: configparser.ConfigParser, source: str) -> tuple[NoiseModel, dict]:
    attachments = []
    readout = {}
    name = Path(source).stem
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == "noise":
            unknown = set(items) - {"name"}
            if unknown:
                raise ConfigError(f"unknown key(s) {sorted(unknown)} in [noise]", path=source)
            name = items.get("name", name)
        elif section == "readout":
            unknown = set(items) - _READOUT_KEYS
            if unknown:
                raise ConfigError(f"unknown key(s) {sorted(unknown)} in [readout]", path=source)
            readout = {k: float(v) for k, v in items.items()}
        elif section.startswith("channel"):
            probs = {k[len("prob_"):].upper(): float(v) for k, v in items.items() if k.startswith("prob_")}
            plain = {k: v for k, v in items.items() if not k.startswith("prob_")}
            unknown = set(plain) - _ATTACH_KEYS
            if unknown:
                raise ConfigError(f"unknown key(s) {sorted(unknown)} in [{section}]", path=source)
            kw = {}
            for k, v in plain.items():
                kw[k] = float(v) if k in ("p", "f", "angle") else v.strip()
            if "axis" in kw:
                kw["axis"] = kw["axis"].upper()
            try:
                attachments.append(Attachment(probabilities=probs, **kw))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{section}]: {exc}", path=source) from exc
        else:
            raise ConfigError(f"unknown section [{section}]", path=source)
    return NoiseModel(tuple(attachments), name), readout


def load_preset(name_or_path) -> tuple[NoiseModel, dict]:
    """Load a preset by bundled name or file path. Returns (model, readout keyword dict)."""
    parser = configparser.ConfigParser()
    if str(name_or_path) in PRESETS:
        ref = resources.files("dynatherm.noisy").joinpath("presets", f"{name_or_path}.ini")
        text, source = ref.read_text(), f"{name_or_path}.ini"
    else:
        path = Path(name_or_path)
        if not path.is_file():
            raise ConfigError(f"noise preset {name_or_path!r} is neither a bundled preset {PRESETS} nor a file")
        text, source = path.read_text(), str(path)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc), path=source) from exc
    return _parse_preset(parser, source)
