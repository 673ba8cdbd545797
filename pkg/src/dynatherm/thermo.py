"""Gibbs distributions, temperature estimation of either sign, KL divergence and entropies.

All inverse temperatures are in units of 1/J, entropies in nats.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from dynatherm.errors import UnfittableError

log = logging.getLogger(__name__)

BETA_BRACKET = 50.0
BETA_FLOOR = 1e-3


def _log_partition(energies: np.ndarray, beta: float) -> float:
    x = -beta * np.asarray(energies)
    m = x.max()
    return float(m + np.log(np.exp(x - m).sum()))


def gibbs_occupations(energies, beta: float) -> np.ndarray:
    """n_l = exp(-beta e_l) / Z, stable for large |beta| of either sign."""
    x = -float(beta) * np.asarray(energies, dtype=float)
    x -= x.max()
    p = np.exp(x)
    return p / p.sum()


def thermal_moments(energies, beta: float) -> tuple[float, float, float]:
    """Mean, variance and third central moment of H0 in the Gibbs state."""
    e = np.asarray(energies, dtype=float)
    p = gibbs_occupations(e, beta)
    mean = float(p @ e)
    d = e - mean
    return mean, float(p @ d**2), float(p @ d**3)


def thermal_energy(energies, beta: float) -> float:
    return float(gibbs_occupations(energies, beta) @ np.asarray(energies))


def thermal_entropy(energies, beta: float) -> float:
    """S_th = beta <H0>_th + ln Z."""
    return beta * thermal_energy(energies, beta) + _log_partition(energies, beta)


def free_energy(energies, beta: float) -> float:
    """F = -ln Z / beta.

    At beta = 0 the free energy is unbounded (-T ln L with T -> +inf); this
    returns -inf, the limit approached from beta -> 0+.
    """
    if beta == 0.0:
        return float("-inf")
    return -_log_partition(energies, beta) / beta


def diagonal_entropy(p) -> float:
    """Shannon entropy -sum p ln p with 0 ln 0 = 0."""
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def kl_divergence(p, q) -> float:
    """D(p || q) = sum p ln(p / q); requires q > 0 wherever p > 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    support = p > 0
    if np.any(q[support] <= 0):
        raise ValueError("KL divergence undefined: q vanishes on the support of p")
    return float(max((p[support] * np.log(p[support] / q[support])).sum(), 0.0))


@dataclass(frozen=True)
class ThermalFit:
    beta: float
    beta_std: float = 0.0
    kl: float = 0.0
    method: str = "energy-moment-mle"
    near_infinite_temperature: bool = False
    at_bracket_edge: bool = False

    @property
    def temperature(self) -> float:
        return float("inf") if self.beta == 0 else 1.0 / self.beta


def solve_beta(energies, target_energy: float, bracket: float = BETA_BRACKET) -> tuple[float, bool]:
    """Inverse temperature whose Gibbs mean energy equals ``target_energy``.

    The thermal mean energy decreases strictly with beta (its derivative is
    -Var), so bisection on [-bracket, bracket] brackets the root and a few
    safeguarded Newton steps polish it. Returns (beta, hit_bracket_edge).
    """
    e = np.asarray(energies, dtype=float)
    lo_e, hi_e = e.min(), e.max()
    span = hi_e - lo_e
    if not (lo_e < target_energy < hi_e):
        raise UnfittableError(
            f"target energy {target_energy:.6g} outside the open spectral interval ({lo_e:.6g}, {hi_e:.6g})"
        )

    def g(b):
        return thermal_energy(e, b) - target_energy

    lo, hi = -bracket, bracket
    g_lo, g_hi = g(lo), g(hi)
    if g_lo <= 0:
        return lo, True
    if g_hi >= 0:
        return hi, True
    # bisection until the bracket is narrow enough for Newton to be safe
    while hi - lo > 1e-3:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    b = 0.5 * (lo + hi)
    for _ in range(50):
        mean, var, _ = thermal_moments(e, b)
        res = mean - target_energy
        if var <= 0:
            break
        if res > 0:
            lo = b
        else:
            hi = b
        step = res / var
        nb = b + step
        b = nb if lo <= nb <= hi else 0.5 * (lo + hi)
        if abs(step) < 1e-15 * max(1.0, abs(b)) or abs(res) < 1e-15 * span:
            break
    return float(b), False


def fit_temperature(nbar, energies, beta_std: float = 0.0) -> ThermalFit:
    """Maximum-likelihood Gibbs fit: match the mean energy of ``nbar``."""
    nbar = np.asarray(nbar, dtype=float)
    e = np.asarray(energies, dtype=float)
    if nbar.shape != e.shape:
        raise ValueError("occupation vector and energies differ in length")
    if np.any(nbar < -1e-12) or abs(nbar.sum() - 1) > 1e-8:
        raise ValueError("occupations must form a probability vector")
    beta, edge = solve_beta(e, float(nbar @ e))
    if edge:
        log.warning("fitted beta hit the search bracket +-%g", BETA_BRACKET)
    kl = kl_divergence(np.clip(nbar, 0, None), gibbs_occupations(e, beta))
    return ThermalFit(
        beta=beta,
        beta_std=beta_std,
        kl=kl,
        near_infinite_temperature=abs(beta) < BETA_FLOOR,
        at_bracket_edge=edge,
    )


def kl_series_direct(occ_t: np.ndarray, energies, beta: float) -> np.ndarray:
    q = gibbs_occupations(energies, beta)
    return np.array([kl_divergence(p, q) for p in occ_t])


def kl_series_free_energy(occ_t: np.ndarray, energies, beta: float) -> np.ndarray:
    """D(t) = -S(t) + (<<H0(t)>> - F) / T, evaluated term by term."""
    e = np.asarray(energies, dtype=float)
    s = np.array([diagonal_entropy(p) for p in occ_t])
    h0 = occ_t @ e
    f = free_energy(e, beta)
    if not np.isfinite(f):
        # beta = 0 or subnormal: (<H0> - F)/T -> ln L
        return -s + _log_partition(e, 0.0)
    return -s + (h0 - f) * beta


def kl_thermal(res, fit: ThermalFit, tol: float = 1e-9) -> np.ndarray:
    """KL divergence between the mean occupations at each time and the fitted Gibbs state.

    Both the direct sum and the free-energy form are evaluated; they must
    agree to ``tol``.
    """
    occ = res.mean_occupations
    e = res.basis.energies
    direct = kl_series_direct(occ, e, fit.beta)
    fe = kl_series_free_energy(occ, e, fit.beta)
    gap = np.max(np.abs(direct - fe))
    if gap > tol:
        raise ArithmeticError(f"KL forms disagree by {gap:.3e}")
    return direct


@dataclass(frozen=True)
class CurvePoint:
    level: int
    label: str
    epsilon_in: float
    beta: float
    beta_std: float
    entropy: float
    entropy_std: float
    thermal_entropy: float
    near_infinite_temperature: bool
    unfittable: bool = False
    extras: dict = field(default_factory=dict, compare=False)


def temperature_curve(sys, realizations: int = 100, seed: int = 0, times=None, window=None,
                      bootstrap_resamples: int = 200, threads: int = 1) -> list[CurvePoint]:
    """Equilibrium inverse temperature and entropies for every H0 eigenstate as initial state."""
    from dynatherm.ensemble import DEFAULT_WINDOW, ProtocolConfig, bootstrap, run_protocol
    from dynatherm.evolution import default_times
    from dynatherm.hamiltonian import energy_basis, state_label

    times = default_times() if times is None else times
    window = DEFAULT_WINDOW if window is None else window
    basis = energy_basis(sys)
    e = basis.energies
    points = []
    for level, bits in enumerate(basis.states):
        label = state_label(int(bits), sys.n_qubits)
        cfg = ProtocolConfig(sys, label, realizations, times, seed, bootstrap_resamples, window)
        res = run_protocol(cfg, threads=threads)
        nbar = res.equilibrium_occupations
        s_diag = diagonal_entropy(nbar)

        def beta_stat(sub):
            return solve_beta(e, float(sub.equilibrium_occupations @ e))[0]

        def entropy_stat(sub):
            return diagonal_entropy(sub.equilibrium_occupations)

        try:
            fit = fit_temperature(nbar, e)
            beta, unfittable = fit.beta, False
        except UnfittableError:
            beta, unfittable = 0.0, True
        if realizations > 1:
            _, beta_std = bootstrap(res, beta_stat, bootstrap_resamples)
            _, s_std = bootstrap(res, entropy_stat, bootstrap_resamples)
        else:
            beta_std = s_std = 0.0
        points.append(CurvePoint(
            level=level,
            label=label,
            epsilon_in=float(e[level]),
            beta=beta,
            beta_std=beta_std,
            entropy=s_diag,
            entropy_std=s_std,
            thermal_entropy=thermal_entropy(e, beta),
            near_infinite_temperature=abs(beta) < BETA_FLOOR or unfittable,
            unfittable=unfittable,
        ))
    return points
