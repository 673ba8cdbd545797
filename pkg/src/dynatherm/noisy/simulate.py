"""Noisy execution of a circuit: density-matrix evolution, readout, unfolding."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from dynatherm.circuit import Circuit, u3_matrix
from dynatherm.errors import NumericalError
from dynatherm.hamiltonian import EnergyBasis
from dynatherm.noisy.channels import NoiseModel, ReadoutModel
from dynatherm.noisy.density import DensityMatrix, apply_cnot, apply_unitary
from dynatherm.noisy.twirl import RCPolicy, dressings, sample_stream

log = logging.getLogger(__name__)

# |0> -> sigma^y eigenstate (down: -1, up: +1), and the inverse rotation used before measuring
PREP_DOWN = u3_matrix(np.pi / 2, -np.pi / 2, 0)
PREP_UP = u3_matrix(np.pi / 2, np.pi / 2, 0)
TO_Z_BASIS = u3_matrix(np.pi / 2, 0, -np.pi / 2)


def simulate(c: Circuit, noise: NoiseModel, rho: np.ndarray, params=None) -> np.ndarray:
    """Evolve ``rho`` through ``c``; the noise model's channels follow every CNOT.

    Runs of single-qubit gates are fused into one layer unitary before each
    CNOT, which keeps a 60-CNOT circuit at a few hundred 16x16 products.
    """
    n = c.n_qubits
    if rho.shape != (c.dim, c.dim):
        raise ValueError(f"state of shape {rho.shape} does not fit a {n}-qubit circuit")
    params = None if params is None else np.asarray(params, dtype=float)
    if c.n_params and (params is None or len(params) != c.n_params):
        raise ValueError(f"circuit needs {c.n_params} parameters")
    pending: dict[int, np.ndarray] = {}
    channel_cache: dict[tuple[int, int], list] = {}

    def flush(rho):
        if not pending:
            return rho
        layer = reduce(np.kron, [pending.get(q, np.eye(2)) for q in reversed(range(n))])
        pending.clear()
        return apply_unitary(rho, layer)

    for g in c.gates:
        if g.kind != "CNOT":
            q = g.qubits[0]
            m = g.matrix(params)
            pending[q] = m @ pending[q] if q in pending else m
            continue
        rho = flush(rho)
        rho = apply_cnot(rho, *g.qubits, n)
        key = g.qubits
        if key not in channel_cache:
            channel_cache[key] = noise.channels_for(*key, n)
        for ch in channel_cache[key]:
            rho = ch.apply(rho, n)
    return flush(rho)


def prepare_product_state(bits: int, n: int) -> np.ndarray:
    """Density matrix of the sigma^y product state with bit j set = qubit j up."""
    psi = reduce(np.kron, [(PREP_UP if (bits >> q) & 1 else PREP_DOWN)[:, 0] for q in reversed(range(n))])
    return np.outer(psi, psi.conj())


def measurement_probabilities(rho: np.ndarray, n: int) -> np.ndarray:
    """Bitstring probabilities after rotating every qubit's sigma^y basis onto sigma^z."""
    w = reduce(np.kron, [TO_Z_BASIS] * n)
    p = np.real(np.diagonal(apply_unitary(rho, w)))
    p = np.clip(p, 0, None)
    return p / p.sum()


def ibu_unfold(measured, response, iterations: int = 10, prior=None) -> np.ndarray:
    """Iterative Bayesian unfolding of a measured distribution.

    t_i <- t_i * sum_j R_ji m_j / (sum_k R_jk t_k), starting from ``prior``
    (uniform by default). Raises if an observed outcome has no support under
    the current estimate.
    """
    m = np.asarray(measured, dtype=float)
    r = np.asarray(response, dtype=float)
    if r.shape != (len(m), len(m)):
        raise ValueError("response matrix and measured vector sizes differ")
    if np.any(np.abs(r.sum(axis=0) - 1) > 1e-9) or np.any(r < 0):
        raise ValueError("response matrix must be column-stochastic")
    if np.any(m < 0) or m.sum() <= 0:
        raise ValueError("measured distribution must be non-negative with positive mass")
    m = m / m.sum()
    t = np.full(len(m), 1.0 / len(m)) if prior is None else np.asarray(prior, dtype=float) / np.sum(prior)
    for _ in range(iterations):
        folded = r @ t
        seen = m > 0
        if np.any(folded[seen] <= 0):
            raise NumericalError("unfolding failed: an observed outcome has zero predicted probability")
        ratio = np.divide(m, folded, out=np.zeros_like(m), where=seen)
        t = t * (r.T @ ratio)
        t = t / t.sum()
    return t


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass
class NoisyRun:
    """Averaged and per-dressing results of one noisy circuit execution.

    occupations : (L,) H0 level occupations averaged over dressings
    unfolded    : (S, L) per-dressing unfolded occupations in level order
    counts      : (S, 2**N) raw shot counts by bitstring integer (empty in infinite-shot mode)
    """

    occupations: np.ndarray
    unfolded: np.ndarray
    counts: np.ndarray
    shots: int | None
    meta: dict = field(default_factory=dict)


def run_noisy(
    c: Circuit,
    noise: NoiseModel,
    readout: ReadoutModel,
    policy: RCPolicy | None,
    seed: int,
    initial_bits: int,
    basis: EnergyBasis,
    params=None,
    threads: int = 1,
    key: int = 0,
) -> NoisyRun:
    """Prepare the product state ``initial_bits``, run dressed copies of ``c``, read out, unfold.

    With ``policy=None`` the bare circuit runs once. ``readout.shots=None``
    selects the infinite-shot limit. Runs sharing a seed need distinct
    ``key`` values to draw independent dressings and shots.
    """
    n = c.n_qubits
    if basis.n_qubits != n:
        raise ValueError("energy basis and circuit act on different qubit counts")
    rho0 = prepare_product_state(initial_bits, n)
    circuits = [c] if policy is None else dressings(c, policy, seed, key)
    response = readout.response(n)
    level_bits = basis.states

    def one(k):
        rho = simulate(circuits[k], noise, rho0.copy(), params)
        DensityMatrix(rho)
        p = measurement_probabilities(rho, n)
        if readout.shots is None:
            measured = response @ p
            counts = None
        else:
            gen = sample_stream(seed, key, k, 1)
            counts = gen.multinomial(readout.shots, response @ p / (response @ p).sum())
            measured = counts / readout.shots
        if readout.is_perfect:
            unfolded = measured
        else:
            unfolded = ibu_unfold(measured, response, readout.iterations)
        return unfolded[level_bits], counts

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, range(len(circuits))))
    else:
        parts = [one(k) for k in range(len(circuits))]
    unfolded = np.array([p[0] for p in parts])
    counts = np.array([p[1] for p in parts]) if readout.shots is not None else np.zeros((0, c.dim), dtype=int)
    return NoisyRun(
        occupations=unfolded.mean(axis=0),
        unfolded=unfolded,
        counts=counts,
        shots=readout.shots,
        meta={"samples": len(circuits), "noise": noise.name, "seed": seed, "key": key},
    )
