"""Ensemble-averaged quench dynamics over random coupling realizations."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from dynatherm._rng import BOOTSTRAP_STREAM, stream
from dynatherm.errors import NumericalError
from dynatherm.evolution import Spectrum, default_times
from dynatherm.hamiltonian import (
    EnergyBasis,
    QuenchSystem,
    build_h0,
    build_interaction,
    energy_basis,
    parse_state_label,
    sample_couplings,
)

log = logging.getLogger(__name__)

DEFAULT_WINDOW = (2.5, 20.0)


@dataclass(frozen=True)
class ProtocolConfig:
    sys: QuenchSystem
    initial_state: str = "↓↓↓↓"
    realizations: int = 100
    times: np.ndarray = field(default_factory=default_times)
    seed: int = 0
    bootstrap: int = 200
    window: tuple[float, float] = DEFAULT_WINDOW

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", times)
        if self.realizations < 1:
            raise ValueError("need at least one realization")
        if times.ndim != 1 or len(times) == 0 or np.any(np.diff(times) <= 0):
            raise ValueError("time grid must be strictly increasing")
        # validates the label against N
        parse_state_label(self.initial_state, self.sys.n_qubits)

    @property
    def initial_bits(self) -> int:
        return parse_state_label(self.initial_state, self.sys.n_qubits)


@dataclass
class EnsembleResult:
    """Per-realization traces and their arithmetic means.

    occupations_r : (R, T, L) occupations in the H0 eigenbasis
    energy_r      : (R, T) total energy <psi(t)|H|psi(t)>
    energy_in_r   : (R,) <psi_in|H|psi_in>
    min_spacing_r : (R,) minimal level spacing of H per realization
    """

    times: np.ndarray
    basis: EnergyBasis
    initial_level: int
    occupations_r: np.ndarray
    energy_r: np.ndarray
    energy_in_r: np.ndarray
    min_spacing_r: np.ndarray
    seed: int = 0
    window: tuple[float, float] = DEFAULT_WINDOW

    def __post_init__(self):
        self.mean_occupations = self.occupations_r.mean(axis=0)
        e = self.basis.energies
        self.mean_h0 = self.mean_occupations @ e
        self.mean_h0_sq = self.mean_occupations @ e**2
        self.mean_energy = self.energy_r.mean(axis=0)

    @property
    def realizations(self) -> int:
        return self.occupations_r.shape[0]

    @property
    def epsilon_in(self) -> float:
        return float(self.basis.energies[self.initial_level])

    @property
    def h0_r(self) -> np.ndarray:
        """Per-realization <H0(t)> traces, shape (R, T)."""
        return self.occupations_r @ self.basis.energies

    @property
    def equilibrium_occupations(self) -> np.ndarray:
        return equilibrium_average(self, self.window)

    def subset(self, idx) -> "EnsembleResult":
        idx = np.asarray(idx)
        return EnsembleResult(
            times=self.times,
            basis=self.basis,
            initial_level=self.initial_level,
            occupations_r=self.occupations_r[idx],
            energy_r=self.energy_r[idx],
            energy_in_r=self.energy_in_r[idx],
            min_spacing_r=self.min_spacing_r[idx],
            seed=self.seed,
            window=self.window,
        )


def _realization(cfg: ProtocolConfig, h0: np.ndarray, basis: EnergyBasis, psi0: np.ndarray, r: int):
    sample = sample_couplings(cfg.sys, cfg.seed, r)
    h = h0 + build_interaction(cfg.sys, sample)
    spec = Spectrum.of(h)
    states = spec.evolve_series(psi0, cfg.times)
    occ = np.abs(states @ basis.vectors.conj()) ** 2
    energy = np.einsum("ta,ab,tb->t", states.conj(), h, states).real
    e_in = float(np.real(psi0.conj() @ h @ psi0))
    if not np.all(np.isfinite(occ)):
        raise NumericalError("non-finite occupations")
    gap = float(max(np.diff(spec.eigvals).min(), 0.0))
    return occ, energy, e_in, gap


def run_protocol(cfg: ProtocolConfig, threads: int = 1) -> EnsembleResult:
    """Evolve psi_in under R independent coupling draws and average."""
    basis = energy_basis(cfg.sys)
    h0 = build_h0(cfg.sys)
    level = basis.level_of(cfg.initial_bits)
    psi0 = basis.vectors[:, level]

    def work(r):
        try:
            return _realization(cfg, h0, basis, psi0, r)
        except Exception as exc:
            raise NumericalError(f"realization {r} failed: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(cfg.realizations)))
    else:
        parts = [work(r) for r in range(cfg.realizations)]

    return EnsembleResult(
        times=cfg.times,
        basis=basis,
        initial_level=level,
        occupations_r=np.array([p[0] for p in parts]),
        energy_r=np.array([p[1] for p in parts]),
        energy_in_r=np.array([p[2] for p in parts]),
        min_spacing_r=np.array([p[3] for p in parts]),
        seed=cfg.seed,
        window=cfg.window,
    )


def window_mask(times: np.ndarray, window: tuple[float, float]) -> np.ndarray:
    ta, tb = window
    tol = 1e-9 * max(1.0, abs(tb))
    return (times >= ta - tol) & (times <= tb + tol)


def equilibrium_average(res: EnsembleResult, window: tuple[float, float] = DEFAULT_WINDOW) -> np.ndarray:
    """Time average of the mean occupations over grid points inside ``window``."""
    mask = window_mask(res.times, window)
    if not mask.any():
        raise ValueError(f"window {window} contains no grid points")
    nbar = res.mean_occupations[mask].mean(axis=0)
    return nbar / nbar.sum()


def mean_min_spacing(res: EnsembleResult) -> float:
    return float(res.min_spacing_r.mean())


def bootstrap(
    res: EnsembleResult,
    statistic: Callable[[EnsembleResult], float],
    resamples: int = 200,
    seed: int | None = None,
) -> tuple[float, float]:
    """Nonparametric bootstrap over realizations: (mean, std) of ``statistic``.

    A resample on which ``statistic`` raises is skipped; at least 90% must
    succeed.
    """
    if resamples < 1:
        raise ValueError("need at least one resample")
    if resamples < 50:
        warnings.warn(f"bootstrap with only {resamples} resamples; error bars are unreliable", stacklevel=2)
    gen = stream(res.seed if seed is None else seed, BOOTSTRAP_STREAM)
    r = res.realizations
    values, failures = [], 0
    for _ in range(resamples):
        idx = gen.integers(0, r, size=r)
        try:
            values.append(float(statistic(res.subset(idx))))
        except (NumericalError, ValueError, FloatingPointError) as exc:
            failures += 1
            log.debug("bootstrap resample failed: %s", exc)
    if len(values) < 0.9 * resamples:
        raise NumericalError(f"{failures} of {resamples} bootstrap resamples failed")
    values = np.asarray(values)
    std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return float(values.mean()), std
