"""Exact unitary propagation from a cached Hermitian eigendecomposition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dynatherm.errors import NumericalError
from dynatherm.hamiltonian import EnergyBasis, is_hermitian


@dataclass(frozen=True)
class Spectrum:
    """Eigendecomposition h = V diag(lam) V^dagger, reused for every time point."""

    eigvals: np.ndarray
    eigvecs: np.ndarray

    @classmethod
    def of(cls, h: np.ndarray) -> "Spectrum":
        if not is_hermitian(h, 1e-10):
            raise ValueError("propagation requires a Hermitian generator")
        try:
            lam, vecs = np.linalg.eigh(h)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"eigensolver did not converge: {exc}") from exc
        return cls(lam, vecs)

    def propagator(self, t: float) -> "Propagator":
        return Propagator(self, float(t))

    def evolve_series(self, psi: np.ndarray, times: np.ndarray) -> np.ndarray:
        """States psi(t) for every t; returns an array of shape (len(times), dim)."""
        coeff = self.eigvecs.conj().T @ psi
        phases = np.exp(-1j * np.outer(times, self.eigvals))
        return (phases * coeff) @ self.eigvecs.T


@dataclass(frozen=True)
class Propagator:
    spectrum: Spectrum
    t: float

    @property
    def matrix(self) -> np.ndarray:
        s = self.spectrum
        return (s.eigvecs * np.exp(-1j * self.t * s.eigvals)) @ s.eigvecs.conj().T


@dataclass(frozen=True)
class StateVector:
    amplitudes: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        norm = np.linalg.norm(self.amplitudes)
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"state is not normalized (norm = {norm:.3e})")


def spectral_propagator(h: np.ndarray, t: float) -> Propagator:
    """U(t) = exp(-i t h) via the eigendecomposition of h."""
    return Spectrum.of(h).propagator(t)


def evolve(psi: StateVector, prop: Propagator) -> StateVector:
    u = prop.matrix
    if u.shape[1] != len(psi.amplitudes):
        raise ValueError(f"dimension mismatch: propagator {u.shape}, state {len(psi.amplitudes)}")
    return StateVector(u @ psi.amplitudes, psi.t + prop.t)


def occupations(psi: StateVector | np.ndarray, basis: EnergyBasis) -> np.ndarray:
    """n_l = |<l|psi>|^2; accepts a single state or a stack of states (last axis = dim)."""
    amps = psi.amplitudes if isinstance(psi, StateVector) else np.asarray(psi)
    return np.abs(amps @ basis.vectors.conj()) ** 2


def expectation_h0(occ: np.ndarray, basis: EnergyBasis) -> np.ndarray | float:
    return occ @ basis.energies


def expectation_h0_sq(occ: np.ndarray, basis: EnergyBasis) -> np.ndarray | float:
    return occ @ basis.energies**2


def default_times(t_max: float = 20.0, dt: float = 0.05) -> np.ndarray:
    n = int(round(t_max / dt))
    return np.arange(n + 1) * dt
