"""Error mitigation on the inverse temperature.

Noisy equilibrium occupations are modelled as a Gibbs distribution mixed with
the uniform one, n = g * gibbs(beta) + (1 - g) / L, where g is the circuit
fidelity. Fitting (beta, g) at two noise-amplification factors and
extrapolating beta linearly to zero noise gives the mitigated temperature;
the mirrored variant keeps the estimate inside the negative-temperature
sector.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from dynatherm._rng import BOOTSTRAP_STREAM, stream
from dynatherm.errors import NumericalError
from dynatherm.thermo import BETA_BRACKET, gibbs_occupations, thermal_moments

log = logging.getLogger(__name__)

_COARSE_GRID = np.concatenate([np.linspace(-BETA_BRACKET, -10, 41)[:-1], np.linspace(-10, 10, 801),
                               np.linspace(10, BETA_BRACKET, 41)[1:]])


@dataclass(frozen=True)
class NoisyFit:
    beta: float
    g: float
    beta_std: float = 0.0
    g_std: float = 0.0
    residual: float = 0.0
    identifiable: bool = True
    g_at_bound: bool = False

    def per_cnot_fidelity(self, n_cnot: int) -> float:
        return float(self.g ** (1.0 / n_cnot)) if n_cnot > 0 else float("nan")


def noisy_occupations(energies, beta: float, g: float) -> np.ndarray:
    """g * gibbs(beta) + (1 - g) / L."""
    p = gibbs_occupations(energies, beta)
    return g * p + (1 - g) / len(p)


def _derivs(e, beta):
    p = gibbs_occupations(e, beta)
    mean = p @ e
    d = e - mean
    var = p @ d**2
    return p, -p * d, p * (d**2 - var)


def _profile(a, e, beta):
    """Profiled objective h(beta) = max_g fit gain, with derivatives, and the optimal g.

    With b = gibbs(beta) - 1/L, u = a.b and v = b.b the unclamped optimum is
    g = u / v and the residual is |a|^2 - u^2 / v; h is the subtracted part.
    Clamping g to 1 gives h = 2u - v. Returns (h, h', h'', g).
    """
    L = len(e)
    p, dp, ddp = _derivs(e, beta)
    b = p - 1.0 / L
    u, u1, u2 = a @ b, a @ dp, a @ ddp
    v, v1, v2 = b @ b, 2 * (b @ dp), 2 * (dp @ dp + b @ ddp)
    if v <= 0 or u <= 0:
        return 0.0, 0.0, 0.0, 0.0
    if u >= v:
        return 2 * u - v, 2 * u1 - v1, 2 * u2 - v2, 1.0
    h = u * u / v
    h1 = 2 * u * u1 / v - u * u * v1 / v**2
    h2 = 2 * (u1 * u1 + u * u2) / v - 4 * u * u1 * v1 / v**2 - u * u * v2 / v**2 + 2 * u * u * v1 * v1 / v**3
    return h, h1, h2, u / v


def fit_noisy_model(nbar, energies, tol: float = 1e-15, max_iter: int = 100) -> NoisyFit:
    """Least-squares fit of (beta, g) to the depolarized-Gibbs model.

    For fixed beta the optimal g is a clamped linear-regression coefficient,
    so the fit reduces to one dimension: a coarse beta grid locates the best
    bracket, then safeguarded Newton on the profiled objective's derivative
    polishes beta.
    """
    nbar = np.asarray(nbar, dtype=float)
    e = np.asarray(energies, dtype=float)
    if nbar.shape != e.shape:
        raise ValueError("occupation vector and energies differ in length")
    if np.any(nbar < -1e-12) or abs(nbar.sum() - 1) > 1e-8:
        raise ValueError("occupations must form a probability vector")
    L = len(e)
    a = nbar - 1.0 / L
    if np.linalg.norm(a) < 1e-12:
        log.warning("uniform occupations: circuit fidelity and temperature are unidentifiable")
        return NoisyFit(beta=0.0, g=0.0, identifiable=False)

    x = -np.outer(_COARSE_GRID, e)
    x -= x.max(axis=1, keepdims=True)
    bs = np.exp(x)
    bs = bs / bs.sum(axis=1, keepdims=True) - 1.0 / L
    norms = np.einsum("ij,ij->i", bs, bs)
    gs = np.clip(np.divide(bs @ a, norms, out=np.zeros(len(norms)), where=norms > 0), 0.0, 1.0)
    res = a - gs[:, None] * bs
    k = int(np.argmin(np.einsum("ij,ij->i", res, res)))
    beta = float(_COARSE_GRID[k])

    lo = float(_COARSE_GRID[max(k - 1, 0)])
    hi = float(_COARSE_GRID[min(k + 1, len(_COARSE_GRID) - 1)])
    # the profiled gain h rises then falls across an interior maximum: h'(lo) >= 0 >= h'(hi)
    if _profile(a, e, lo)[1] >= 0 >= _profile(a, e, hi)[1] and lo < hi:
        for _ in range(max_iter):
            _, h1, h2, _ = _profile(a, e, beta)
            if h1 > 0:
                lo = beta
            else:
                hi = beta
            nb = beta - h1 / h2 if h2 < 0 else None
            if nb is None or not (lo < nb < hi):
                nb = 0.5 * (lo + hi)
            done = abs(nb - beta) <= tol * max(1.0, abs(beta)) or hi - lo <= tol * max(1.0, abs(beta))
            beta = nb
            if done:
                break
    g = _profile(a, e, beta)[3]
    resid = float(np.linalg.norm(a - g * (gibbs_occupations(e, beta) - 1.0 / L)))
    if g < 1e-10:
        return NoisyFit(beta=0.0, g=0.0, residual=resid, identifiable=False, g_at_bound=True)
    return NoisyFit(beta=beta, g=g, residual=resid, g_at_bound=g in (0.0, 1.0))


def bootstrap_noisy_fit(per_realization, energies, resamples: int = 200, seed: int = 0) -> NoisyFit:
    """Fit the realization mean and attach bootstrap stds from resampled realizations."""
    occ = np.asarray(per_realization, dtype=float)
    fit = fit_noisy_model(occ.mean(axis=0), energies)
    if len(occ) < 2 or resamples < 2:
        return fit
    gen = stream(seed, BOOTSTRAP_STREAM + 1)
    betas, gs = [], []
    for _ in range(resamples):
        f = fit_noisy_model(occ[gen.integers(0, len(occ), len(occ))].mean(axis=0), energies)
        betas.append(f.beta)
        gs.append(f.g)
    return NoisyFit(fit.beta, fit.g, float(np.std(betas, ddof=1)), float(np.std(gs, ddof=1)),
                    fit.residual, fit.identifiable, fit.g_at_bound)


# -- extrapolation ----------------------------------------------------------------


@dataclass(frozen=True)
class ZNEInput:
    lambdas: tuple[float, float]
    betas: tuple[float, float]
    stds: tuple[float, float] = (0.0, 0.0)
    mode: str = "plain"

    def __post_init__(self):
        if len(self.lambdas) != 2 or len(self.betas) != 2 or len(self.stds) != 2:
            raise ValueError("the two-point scheme needs exactly two (lambda, beta) pairs")
        if self.lambdas[0] == self.lambdas[1]:
            raise ValueError("noise factors must differ")
        if min(self.lambdas) < 1:
            raise ValueError("noise factors must be >= 1")
        if self.mode not in ("plain", "mirrored"):
            raise ValueError(f"unknown extrapolation mode {self.mode!r}")


@dataclass(frozen=True)
class Extrapolation:
    beta: float
    std: float
    mode: str
    mirrored_point: float | None = None


def _linear_to_zero(l1, b1, s1, l2, b2, s2) -> tuple[float, float]:
    beta = (l2 * b1 - l1 * b2) / (l2 - l1)
    std = np.hypot(l2 * s1, l1 * s2) / abs(l2 - l1)
    return float(beta), float(std)


def zne(inp: ZNEInput) -> Extrapolation:
    (l1, l2), (b1, b2), (s1, s2) = inp.lambdas, inp.betas, inp.stds
    beta, std = _linear_to_zero(l1, b1, s1, l2, b2, s2)
    return Extrapolation(beta, std, "plain")


def mirrored_zne(inp: ZNEInput) -> Extrapolation:
    """Reflect the amplified point about the unamplified one, then extrapolate.

    For factors (1, 3) this gives (b1 + b3) / 2. Uncertainties are propagated
    from the original two points, whose coefficients are both 1/2 there.
    """
    (l1, l2), (b1, b2), (s1, s2) = inp.lambdas, inp.betas, inp.stds
    if b1 >= 0:
        warnings.warn("mirrored extrapolation is meant for negative-temperature data (beta_1 < 0)", stacklevel=2)
    mirrored = 2 * b1 - b2
    beta, _ = _linear_to_zero(l1, b1, 0.0, l2, mirrored, 0.0)
    c1 = (l2 - 2 * l1) / (l2 - l1)
    c2 = l1 / (l2 - l1)
    std = float(np.hypot(c1 * s1, c2 * s2))
    return Extrapolation(beta, std, "mirrored", mirrored_point=float(mirrored))


def extrapolate(lambdas, fits: list[NoisyFit], mode: str = "plain") -> Extrapolation | None:
    """Zero-noise beta from fits at the given factors; None (with a warning) for a single factor."""
    if len(lambdas) != len(fits):
        raise ValueError("one fit per noise factor is required")
    if len(lambdas) < 2:
        warnings.warn("only one noise factor: reporting the fit without extrapolation", stacklevel=2)
        return None
    if len(lambdas) > 2:
        raise ValueError("only the two-point linear scheme is supported")
    inp = ZNEInput(tuple(lambdas), (fits[0].beta, fits[1].beta), (fits[0].beta_std, fits[1].beta_std), mode)
    return mirrored_zne(inp) if mode == "mirrored" else zne(inp)


# -- observables ----------------------------------------------------------------


@dataclass(frozen=True)
class MitigatedObservables:
    mean: float
    mean_std: float
    fluctuation: float
    fluctuation_std: float

    def to_dict(self) -> dict:
        return asdict(self)


def mitigated_observables(beta: float, energies, beta_std: float = 0.0) -> MitigatedObservables:
    """Thermal <H0> and sqrt(Var H0) at ``beta`` with linearly propagated errors.

    d<H0>/dbeta = -Var and dVar/dbeta = -kappa_3.
    """
    if not np.isfinite(beta):
        raise NumericalError("mitigated observables need a finite inverse temperature")
    mean, var, k3 = thermal_moments(energies, beta)
    sd = float(np.sqrt(max(var, 0.0)))
    d_sd = -k3 / (2 * sd) if sd > 0 else 0.0
    return MitigatedObservables(mean, abs(var) * beta_std, sd, abs(d_sd) * beta_std)
