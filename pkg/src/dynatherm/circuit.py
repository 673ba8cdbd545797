"""Gate-level circuits, dense contraction, the layered recompilation ansatz, and CNOT folding.

A circuit is an ordered gate list; the first gate acts first on the state.
U3 gates either reference three consecutive slots of a flat parameter vector
(``slot``) or carry literal ``angles``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

GATE_KINDS = ("U3", "CNOT", "PAULI", "RDRESS")
PAULI_LABELS = ("I", "X", "Y", "Z")
RDRESS_LABELS = ("I", "X+", "X-", "Z+", "Z-")

_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _half_pi_rotation(axis: str, sign: int) -> np.ndarray:
    """exp(-i sign pi/4 sigma_axis)."""
    s = _PAULI[axis]
    return (np.eye(2) - 1j * sign * s) / np.sqrt(2)


_RDRESS = {
    "I": np.eye(2, dtype=complex),
    "X+": _half_pi_rotation("X", +1),
    "X-": _half_pi_rotation("X", -1),
    "Z+": _half_pi_rotation("Z", +1),
    "Z-": _half_pi_rotation("Z", -1),
}


def u3_matrix(theta: float, phi: float, lam: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array(
        [[c, -np.exp(1j * lam) * s], [np.exp(1j * phi) * s, np.exp(1j * (phi + lam)) * c]],
        dtype=complex,
    )


def u3_stack(angles: np.ndarray) -> np.ndarray:
    """Vectorized U3 for angles of shape (..., 3); returns (..., 2, 2)."""
    th, ph, la = angles[..., 0], angles[..., 1], angles[..., 2]
    c, s = np.cos(th / 2), np.sin(th / 2)
    out = np.empty(angles.shape[:-1] + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 0, 1] = -np.exp(1j * la) * s
    out[..., 1, 0] = np.exp(1j * ph) * s
    out[..., 1, 1] = np.exp(1j * (ph + la)) * c
    return out


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple[int, ...]
    slot: int | None = None
    angles: tuple[float, float, float] | None = None
    label: str | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        arity = 2 if self.kind == "CNOT" else 1
        if len(self.qubits) != arity:
            raise ValueError(f"{self.kind} acts on {arity} qubit(s), got {self.qubits}")
        if self.kind == "CNOT" and self.qubits[0] == self.qubits[1]:
            raise ValueError("CNOT control and target must differ")
        if self.kind == "U3" and (self.slot is None) == (self.angles is None):
            raise ValueError("U3 needs exactly one of a parameter slot or literal angles")
        if self.kind == "PAULI" and self.label not in PAULI_LABELS:
            raise ValueError(f"bad Pauli label {self.label!r}")
        if self.kind == "RDRESS" and self.label not in RDRESS_LABELS:
            raise ValueError(f"bad dressing rotation {self.label!r}")

    def matrix(self, params=None) -> np.ndarray:
        """2x2 matrix of a single-qubit gate (CNOT has no 2x2 form)."""
        if self.kind == "U3":
            if self.angles is not None:
                return u3_matrix(*self.angles)
            if params is None:
                raise ValueError("parameterized U3 needs a parameter vector")
            return u3_matrix(*params[self.slot : self.slot + 3])
        if self.kind == "PAULI":
            return _PAULI[self.label]
        if self.kind == "RDRESS":
            return _RDRESS[self.label]
        raise ValueError("CNOT is a two-qubit gate")


def U3(qubit: int, slot: int | None = None, angles=None) -> Gate:
    return Gate("U3", (qubit,), slot=slot, angles=None if angles is None else tuple(float(a) for a in angles))


def CNOT(control: int, target: int) -> Gate:
    return Gate("CNOT", (control, target))


def Pauli(label: str, qubit: int) -> Gate:
    return Gate("PAULI", (qubit,), label=label)


def Rdress(label: str, qubit: int) -> Gate:
    return Gate("RDRESS", (qubit,), label=label)


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    gates: tuple[Gate, ...] = ()
    n_params: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        for g in self.gates:
            if any(q < 0 or q >= self.n_qubits for q in g.qubits):
                raise ValueError(f"gate {g} addresses a qubit outside 0..{self.n_qubits - 1}")
            if g.slot is not None and g.slot + 3 > self.n_params:
                raise ValueError(f"gate {g} references parameters beyond n_params = {self.n_params}")

    @property
    def dim(self) -> int:
        return 1 << self.n_qubits

    @property
    def cnot_count(self) -> int:
        return sum(g.kind == "CNOT" for g in self.gates)

    def __add__(self, other: "Circuit") -> "Circuit":
        if other.n_qubits != self.n_qubits:
            raise ValueError("qubit counts differ")
        if other.n_params:
            shifted = tuple(replace(g, slot=g.slot + self.n_params) if g.slot is not None else g for g in other.gates)
        else:
            shifted = other.gates
        return Circuit(self.n_qubits, self.gates + shifted, self.n_params + other.n_params)


def cnot_permutation(n: int, control: int, target: int) -> np.ndarray:
    """Index map with (CNOT @ M) == M[perm]."""
    idx = np.arange(1 << n)
    return idx ^ (((idx >> control) & 1) << target)


def apply_1q_left(m: np.ndarray, g: np.ndarray, qubit: int, n: int) -> np.ndarray:
    """(g on qubit) @ m for a matrix or vector m whose first axis has dimension 2**n."""
    lead = 1 << (n - 1 - qubit)
    t = m.reshape(lead, 2, 1 << qubit, -1)
    return np.einsum("ab,ibjk->iajk", g, t).reshape(m.shape)


def contract(c: Circuit, params=None) -> np.ndarray:
    """Dense unitary of the circuit."""
    params = np.zeros(0) if params is None else np.asarray(params, dtype=float)
    if len(params) != c.n_params:
        raise ValueError(f"circuit has {c.n_params} parameters, got {len(params)}")
    n = c.n_qubits
    u = np.eye(c.dim, dtype=complex)
    for g in c.gates:
        if g.kind == "CNOT":
            u = u[cnot_permutation(n, *g.qubits)]
        else:
            u = apply_1q_left(u, g.matrix(params), g.qubits[0], n)
    return u


def chain_pairs(n: int) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Odd and even nearest-neighbour pairs of a linear chain (0-based)."""
    odd = [(j, j + 1) for j in range(0, n - 1, 2)]
    even = [(j, j + 1) for j in range(1, n - 1, 2)]
    return odd, even


def ansatz(n_qubits: int = 4, layers: int = 20) -> Circuit:
    """Layered ansatz: each layer is U3 on every qubit, then CNOTs on the odd then even chain pairs.

    For four qubits a layer has 12 parameters and 3 CNOTs, so 20 layers give
    240 parameters and 60 CNOTs.
    """
    if layers < 1:
        raise ValueError("ansatz needs at least one layer")
    if n_qubits < 2:
        raise ValueError("ansatz is defined for linear chains of two or more qubits")
    odd, even = chain_pairs(n_qubits)
    gates = []
    slot = 0
    for _ in range(layers):
        for q in range(n_qubits):
            gates.append(U3(q, slot=slot))
            slot += 3
        gates.extend(CNOT(a, b) for a, b in odd + even)
    return Circuit(n_qubits, gates, slot, meta={"ansatz_layers": layers})


def fold_cnots(c: Circuit, factor: int) -> Circuit:
    """Replace every CNOT by ``factor`` consecutive copies (odd factor keeps the unitary)."""
    if factor < 1 or factor % 2 == 0:
        raise ValueError(f"fold factor must be an odd positive integer, got {factor}")
    if factor == 1:
        return c
    gates = []
    for g in c.gates:
        gates.extend([g] * factor if g.kind == "CNOT" else [g])
    return Circuit(c.n_qubits, gates, c.n_params, meta={**c.meta, "fold_factor": factor})


def bind(c: Circuit, params) -> Circuit:
    """Copy of ``c`` with every parameterized U3 replaced by literal angles."""
    params = np.asarray(params, dtype=float)
    if len(params) != c.n_params:
        raise ValueError(f"circuit has {c.n_params} parameters, got {len(params)}")
    gates = [
        replace(g, slot=None, angles=tuple(float(a) for a in params[g.slot : g.slot + 3]))
        if g.slot is not None else g
        for g in c.gates
    ]
    return Circuit(c.n_qubits, gates, 0, meta=dict(c.meta))


# -- text format -----------------------------------------------------------------

HEADER = "# dynatherm circuit v1"


def dumps(c: Circuit) -> str:
    lines = [HEADER, f"qubits {c.n_qubits}", f"params {c.n_params}"]
    for g in c.gates:
        if g.kind == "U3":
            if g.slot is not None:
                lines.append(f"U3 {g.qubits[0]} @{g.slot}")
            else:
                lines.append("U3 {} = {!r} {!r} {!r}".format(g.qubits[0], *g.angles))
        elif g.kind == "CNOT":
            lines.append(f"CNOT {g.qubits[0]} {g.qubits[1]}")
        else:
            lines.append(f"{g.kind} {g.label} {g.qubits[0]}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> Circuit:
    n_qubits = n_params = None
    gates = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            head = tok[0]
            if head == "qubits":
                n_qubits = int(tok[1])
            elif head == "params":
                n_params = int(tok[1])
            elif head == "U3":
                if tok[2].startswith("@"):
                    gates.append(U3(int(tok[1]), slot=int(tok[2][1:])))
                elif tok[2] == "=" and len(tok) == 6:
                    gates.append(U3(int(tok[1]), angles=[float(x) for x in tok[3:6]]))
                else:
                    raise ValueError("expected '@slot' or '= theta phi lambda'")
            elif head == "CNOT":
                gates.append(CNOT(int(tok[1]), int(tok[2])))
            elif head in ("PAULI", "RDRESS"):
                gates.append(Gate(head, (int(tok[2]),), label=tok[1]))
            else:
                raise ValueError(f"unknown directive {head!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"circuit line {lineno}: {exc}") from exc
    if n_qubits is None:
        raise ValueError("circuit text lacks a 'qubits' line")
    return Circuit(n_qubits, gates, n_params or 0)


def save(c: Circuit, path) -> None:
    Path(path).write_text(dumps(c))


def load(path) -> Circuit:
    return loads(Path(path).read_text())
