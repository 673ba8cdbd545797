"""Randomized compiling: Pauli dressing of CNOTs and rotation dressing of spectators.

Each CNOT(c, t) becomes

    [spectators: R, then P]  [pair: P_c P_t]  CNOT  <noise>  [pair: P'_c P'_t]  [spectators: P, then R^dagger]

with P' = CNOT (P_c P_t) CNOT, which is again a Pauli pair up to a sign. So
the dressed circuit equals the bare one up to a global phase of +-1. Gates
equal to the identity are not emitted.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

from dynatherm._rng import NOISE_STREAM, stream
from dynatherm.circuit import CNOT, Circuit, Pauli, Rdress
from dynatherm.noisy.density import PAULI

SPECTATOR_ROTATIONS = ("I", "X+", "Z+")
_INVERSE_ROTATION = {"I": "I", "X+": "X-", "Z+": "Z-", "X-": "X+", "Z-": "Z+"}
PAIR_PAULIS = tuple(product("IXYZ", repeat=2))


@dataclass(frozen=True)
class RCPolicy:
    samples: int = 100
    twirl_active: bool = True
    twirl_spectators: bool = True

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("need at least one dressing sample")


@lru_cache(maxsize=None)
def _conjugation_table() -> dict:
    """(a, b) -> (a', b') with CNOT (a (x) b) CNOT = +-(a' (x) b'); control is the first factor."""
    cnot = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
    # 4x4 ordering here: first Kronecker factor = control
    table = {}
    for a, b in PAIR_PAULIS:
        m = cnot @ np.kron(PAULI[a], PAULI[b]) @ cnot
        for a2, b2 in PAIR_PAULIS:
            ov = np.trace(np.kron(PAULI[a2], PAULI[b2]).conj().T @ m) / 4
            if abs(abs(ov) - 1) < 1e-12:
                table[(a, b)] = (a2, b2)
                break
    return table


def propagate_pauli(pc: str, pt: str) -> tuple[str, str]:
    """Pauli pair after the CNOT that undoes (pc on control, pt on target) before it."""
    return _conjugation_table()[(pc, pt)]


def dress_cnot(control: int, target: int, n: int, pair=("I", "I"), spectators=None) -> tuple[list, list, list]:
    """Gate lists (before, [CNOT], after) for one dressed CNOT.

    ``spectators`` maps qubit -> (pauli, rotation) for the qubits outside the pair.
    """
    before, after = [], []
    spectators = spectators or {}
    for q, (p, r) in sorted(spectators.items()):
        if r != "I":
            before.append(Rdress(r, q))
        if p != "I":
            before.append(Pauli(p, q))
    pc, pt = pair
    if pc != "I":
        before.append(Pauli(pc, control))
    if pt != "I":
        before.append(Pauli(pt, target))
    qc, qt = propagate_pauli(pc, pt)
    if qc != "I":
        after.append(Pauli(qc, control))
    if qt != "I":
        after.append(Pauli(qt, target))
    for q, (p, r) in sorted(spectators.items()):
        if p != "I":
            after.append(Pauli(p, q))
        if r != "I":
            after.append(Rdress(_INVERSE_ROTATION[r], q))
    return before, [CNOT(control, target)], after


def rc_dress(c: Circuit, policy: RCPolicy, gen: np.random.Generator) -> Circuit:
    """One randomly dressed copy of ``c``."""
    gates = []
    n = c.n_qubits
    for g in c.gates:
        if g.kind != "CNOT":
            gates.append(g)
            continue
        ctl, tgt = g.qubits
        pair = ("I", "I")
        if policy.twirl_active:
            pair = PAIR_PAULIS[gen.integers(16)]
        spect = {}
        if policy.twirl_spectators:
            for q in range(n):
                if q not in g.qubits:
                    k = gen.integers(12)
                    spect[q] = ("IXYZ"[k % 4], SPECTATOR_ROTATIONS[k // 4])
        before, mid, after = dress_cnot(ctl, tgt, n, pair, spect)
        gates.extend(before + mid + after)
    return Circuit(n, gates, c.n_params, meta={**c.meta, "dressed": True})


def sample_stream(seed: int, key: int, k: int, purpose: int) -> np.random.Generator:
    """Stream for dressing sample ``k`` of run ``key``; purpose 0 = dressing, 1 = shots."""
    return stream(seed, NOISE_STREAM + (key << 24) + 2 * k + purpose)


def dressings(c: Circuit, policy: RCPolicy, seed: int, key: int = 0) -> list[Circuit]:
    """``policy.samples`` dressed copies; copy k draws from its own keyed stream."""
    return [rc_dress(c, policy, sample_stream(seed, key, k, 0)) for k in range(policy.samples)]


def equal_up_to_phase(a: np.ndarray, b: np.ndarray, tol: float = 1e-10) -> bool:
    """True when a = e^{i phi} b entrywise to ``tol``."""
    k = np.unravel_index(np.argmax(np.abs(b)), b.shape)
    if abs(b[k]) < tol:
        return bool(np.max(np.abs(a)) < tol)
    phase = a[k] / b[k]
    if abs(abs(phase) - 1) > tol:
        return False
    return bool(np.max(np.abs(a - phase * b)) < tol)
