"""Variational recompilation of a target unitary into a parameterized circuit.

Cost: C = 1 - |Tr(V^dagger U)| / 2**N. It is bounded in [0, 1] and blind to
the global phase of either unitary. Its gradient comes from the two-term
parameter-shift rule applied to the squared overlap |Tr(V^dagger U)|^2, which
is exact for every U3 angle. The shifted overlaps are read off cached
single-qubit environments, so one forward and one backward sweep give all
3 * (number of U3 gates) derivatives.
"""

from __future__ import annotations

import logging
import math
import string
import time
from dataclasses import dataclass, field

import numpy as np

from dynatherm._rng import RECOMPILE_STREAM, stream
from dynatherm.circuit import Circuit, apply_1q_left, cnot_permutation, contract, u3_stack

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerSettings:
    memory: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    hops: int = 50
    hop_sigma: float = 0.3
    temperature: float = 0.02
    max_iter: int = 5000
    cost_tol: float = 1e-12
    gtol: float = 1e-8
    ftol: float = 1e-15
    stop_cost: float | None = None
    seed: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class _Layered:
    """The circuit rewritten as V = F_m K_m ... F_1 K_1 F_0.

    F_i are fixed unitaries (CNOTs, Paulis, literal U3s); K_i are U3 layers on
    distinct qubits, with identity on qubits that have no U3 in that layer.
    """

    def __init__(self, c: Circuit):
        self.n = n = c.n_qubits
        self.d = d = c.dim
        fixed = [np.eye(d, dtype=complex)]
        layers: list[dict[int, int]] = []
        current: dict[int, int] = {}
        for g in c.gates:
            if g.slot is not None:
                if g.qubits[0] in current:
                    layers.append(current)
                    fixed.append(np.eye(d, dtype=complex))
                    current = {}
                current[g.qubits[0]] = g.slot
                continue
            if current:
                layers.append(current)
                fixed.append(np.eye(d, dtype=complex))
                current = {}
            if g.kind == "CNOT":
                fixed[-1] = fixed[-1][cnot_permutation(n, *g.qubits)]
            else:
                fixed[-1] = apply_1q_left(fixed[-1], g.matrix(), g.qubits[0], n)
        if current:
            layers.append(current)
            fixed.append(np.eye(d, dtype=complex))
        self.fixed = np.array(fixed)
        self.m = len(layers)
        self.n_params = c.n_params
        # slot table: (layer, qubit) -> first slot, -1 where the layer acts trivially
        self.slots = np.full((self.m, n), -1, dtype=int)
        for l, layer in enumerate(layers):
            for q, s in layer.items():
                self.slots[l, q] = s
        self.active = self.slots >= 0
        self._kron_subs = self._kron_subscripts(n)
        self._reduce_subs = [self._reduce_subscript(n, q) for q in range(n)]

    @staticmethod
    def _kron_subscripts(n):
        letters = string.ascii_letters
        rows, cols = letters[:n], letters[n : 2 * n]
        ins = ",".join(f"z{rows[k]}{cols[k]}" for k in range(n))
        # factor k acts on qubit n-1-k (most significant first)
        return f"{ins}->z{rows}{cols}"

    @staticmethod
    def _reduce_subscript(n, q):
        letters = string.ascii_letters
        axis = n - 1 - q
        rows = list(letters[:n])
        cols = list(rows)
        rows[axis], cols[axis] = "Y", "Z"
        return f"l{''.join(rows)}{''.join(cols)}->lYZ"

    def gates(self, params: np.ndarray) -> np.ndarray:
        """U3 matrices per (layer, qubit), identity where inactive: (m, n, 2, 2)."""
        angles = np.zeros((self.m, self.n, 3))
        idx = self.slots[self.active]
        angles[self.active] = params[idx[:, None] + np.arange(3)]
        u = u3_stack(angles)
        u[~self.active] = np.eye(2)
        return u

    def krons(self, u: np.ndarray) -> np.ndarray:
        factors = [u[:, self.n - 1 - k] for k in range(self.n)]
        return np.einsum(self._kron_subs, *factors).reshape(self.m, self.d, self.d)

    def forward(self, params):
        u = self.gates(params)
        k = self.krons(u)
        prefix = np.empty((self.m + 1, self.d, self.d), dtype=complex)
        prefix[0] = self.fixed[0]
        for l in range(self.m):
            prefix[l + 1] = self.fixed[l + 1] @ (k[l] @ prefix[l])
        return u, k, prefix


# +-pi/2 on one angle at a time: axes (angle, sign, angle component)
_SHIFTS = np.zeros((3, 2, 3))
for _j in range(3):
    _SHIFTS[_j, 0, _j], _SHIFTS[_j, 1, _j] = np.pi / 2, -np.pi / 2


def _check_unitary(u: np.ndarray, tol: float = 1e-10) -> None:
    err = np.max(np.abs(u.conj().T @ u - np.eye(len(u))))
    if err > tol:
        raise ValueError(f"target is not unitary (max |U^dagger U - I| = {err:.2e})")


@dataclass
class RecompileProblem:
    target: np.ndarray
    circuit: Circuit
    initial_params: np.ndarray | None = None
    settings: OptimizerSettings = field(default_factory=OptimizerSettings)
    key: int = 0  # separates the random streams of problems sharing a seed

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=complex)
        if self.target.shape != (self.circuit.dim, self.circuit.dim):
            raise ValueError(f"target shape {self.target.shape} does not match a {self.circuit.n_qubits}-qubit circuit")
        _check_unitary(self.target)
        self._layered = _Layered(self.circuit)
        self._target_dag = self.target.conj().T

    def start(self) -> np.ndarray:
        if self.initial_params is not None:
            x = np.asarray(self.initial_params, dtype=float)
            if len(x) != self.circuit.n_params:
                raise ValueError("initial parameter vector has the wrong length")
            return x.copy()
        gen = stream(self.settings.seed, RECOMPILE_STREAM + 2 * self.key)
        return gen.uniform(-np.pi, np.pi, self.circuit.n_params)

    def overlap(self, params) -> complex:
        """Tr(U^dagger V(params))."""
        lay = self._layered
        _, _, prefix = lay.forward(np.asarray(params, dtype=float))
        return complex(np.trace(self._target_dag @ prefix[-1]))

    def cost(self, params) -> float:
        return cost(params, self)

    def cost_and_gradient(self, params) -> tuple[float, np.ndarray]:
        params = np.asarray(params, dtype=float)
        lay = self._layered
        d, m = lay.d, lay.m
        u, k, prefix = lay.forward(params)
        z = np.trace(self._target_dag @ prefix[-1])
        c = 1.0 - abs(z) / d
        # suffix[l] = U^dagger F_m K_m ... K_{l+1} F_l  (l = m .. 1)
        suffix = np.empty((m, d, d), dtype=complex)
        b = self._target_dag @ lay.fixed[m]
        for l in range(m - 1, -1, -1):
            suffix[l] = b
            b = b @ k[l] @ lay.fixed[l]
        # z = Tr(K_l X_l), X_l = P_{l-1} suffix_l; Y_l = K_l X_l
        y = k @ (prefix[:m] @ suffix)
        y = y.reshape((m,) + (2,) * (2 * lay.n))
        absz = max(abs(z), 1e-300)
        red = np.stack([np.einsum(sub, y) for sub in lay._reduce_subs], axis=1)  # (m, n, 2, 2)
        act = lay.active
        env = np.swapaxes(u[act].conj(), -1, -2) @ red[act]  # z(u') = Tr(u' env)
        slots = lay.slots[act][:, None] + np.arange(3)
        shifted = u3_stack(params[slots][:, None, None, :] + _SHIFTS)  # (k, 3, 2, 2, 2)
        f2 = np.abs(np.einsum("kjsab,kba->kjs", shifted, env)) ** 2
        dF2 = 0.5 * (f2[..., 0] - f2[..., 1])
        grad = np.zeros(lay.n_params)
        np.add.at(grad, slots, -dF2 / (2 * absz * d))
        return float(c), grad


def cost(params, problem: RecompileProblem) -> float:
    return 1.0 - abs(problem.overlap(params)) / problem.circuit.dim


def gradient(params, problem: RecompileProblem) -> np.ndarray:
    return problem.cost_and_gradient(params)[1]


def hilbert_schmidt_fidelity(v: np.ndarray, u: np.ndarray) -> float:
    return float(abs(np.trace(v.conj().T @ u)) / len(u))


# -- L-BFGS -----------------------------------------------------------------------


@dataclass
class LocalResult:
    x: np.ndarray
    f: float
    grad_norm: float
    iterations: int
    evaluations: int
    status: str
    trace: list[float] = field(default_factory=list)
    line_search_failed: bool = False


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating (a, fa, da), (b, fb, db); None if ill-posed."""
    d1 = da + db - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = db - da + 2 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def _strong_wolfe(phi, f0, d0, c1, c2, alpha1=1.0, max_steps=30):
    """Step length satisfying the strong Wolfe conditions (bracketing + zoom).

    ``phi(alpha)`` returns (f, directional derivative, payload). Returns
    (alpha, f, payload) or None.
    """
    a_prev, f_prev, d_prev = 0.0, f0, d0
    a = alpha1
    for i in range(max_steps):
        fa, da, pay = phi(a)
        if fa > f0 + c1 * a * d0 or (i > 0 and fa >= f_prev):
            return _zoom(phi, a_prev, f_prev, d_prev, a, fa, da, f0, d0, c1, c2)
        if abs(da) <= -c2 * d0:
            return a, fa, pay
        if da >= 0:
            return _zoom(phi, a, fa, da, a_prev, f_prev, d_prev, f0, d0, c1, c2)
        a_prev, f_prev, d_prev = a, fa, da
        a = 2.0 * a
    return None


def _zoom(phi, lo, flo, dlo, hi, fhi, dhi, f0, d0, c1, c2, max_steps=30):
    for _ in range(max_steps):
        a = _cubic_min(lo, flo, dlo, hi, fhi, dhi)
        left, right = min(lo, hi), max(lo, hi)
        width = right - left
        if a is None or not (left + 0.1 * width <= a <= right - 0.1 * width):
            a = 0.5 * (lo + hi)
        fa, da, pay = phi(a)
        if fa > f0 + c1 * a * d0 or fa >= flo:
            hi, fhi, dhi = a, fa, da
        else:
            if abs(da) <= -c2 * d0:
                return a, fa, pay
            if da * (hi - lo) >= 0:
                hi, fhi, dhi = lo, flo, dlo
            lo, flo, dlo = a, fa, da
        if abs(hi - lo) < 1e-14:
            break
    # accept the best sufficient-decrease point found, if any
    if flo < f0 + c1 * lo * d0 and lo > 0:
        _, _, pay = phi(lo)
        return lo, flo, pay
    return None


def lbfgs(fun_grad, x0, memory=10, c1=1e-4, c2=0.9, max_iter=5000, gtol=1e-8,
          cost_tol=-np.inf, ftol=1e-15) -> LocalResult:
    """Minimize with limited-memory BFGS (two-loop recursion, strong-Wolfe line search).

    Stops when the gradient norm drops below ``gtol``, the value below
    ``cost_tol``, the relative decrease below ``ftol``, or after ``max_iter``
    iterations. Accepted values never increase.
    """
    x = np.array(x0, dtype=float)
    f, g = fun_grad(x)
    n_eval = 1
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    trace = [f]
    status = "max_iter"
    failed = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm < gtol:
            status = "gtol"
            it -= 1
            break
        if f < cost_tol:
            status = "cost_tol"
            it -= 1
            break
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if s_hist:
            gamma = (s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1])
        else:
            gamma = 1.0 / max(gnorm, 1.0)
        r = gamma * q
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * (y @ r)
            r += s * (a - b)
        direction = -r
        d0 = float(g @ direction)
        if d0 >= 0:
            s_hist.clear(), y_hist.clear(), rho_hist.clear()
            direction = -g / max(gnorm, 1.0)
            d0 = float(g @ direction)

        def phi(alpha, x=x, direction=direction):
            nonlocal n_eval
            n_eval += 1
            fa, ga = fun_grad(x + alpha * direction)
            return fa, float(ga @ direction), ga

        found = _strong_wolfe(phi, f, d0, c1, c2)
        if found is None and s_hist:
            s_hist.clear(), y_hist.clear(), rho_hist.clear()
            direction = -g / max(gnorm, 1.0)
            d0 = float(g @ direction)

            def phi(alpha, x=x, direction=direction):
                nonlocal n_eval
                n_eval += 1
                fa, ga = fun_grad(x + alpha * direction)
                return fa, float(ga @ direction), ga

            found = _strong_wolfe(phi, f, d0, c1, c2)
        if found is None:
            status, failed = "line_search_failed", True
            it -= 1
            break
        alpha, f_new, g_new = found
        step = alpha * direction
        x_new = x + step
        y = g_new - g
        sy = float(step @ y)
        if sy > 1e-12 * float(np.linalg.norm(step) * np.linalg.norm(y)):
            s_hist.append(step)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0), y_hist.pop(0), rho_hist.pop(0)
        decrease = f - f_new
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        if decrease <= ftol * max(abs(f), abs(f + decrease), 1.0):
            status = "ftol"
            break
    return LocalResult(x, float(f), float(np.linalg.norm(g)), it, n_eval, status, trace, failed)


@dataclass
class RecompileResult:
    params: np.ndarray
    cost: float
    iterations: int
    hops: list[dict] = field(default_factory=list)
    status: str = ""
    line_search_failed: bool = False
    wall_time: float = 0.0
    settings: dict = field(default_factory=dict)

    @property
    def fidelity(self) -> float:
        return 1.0 - self.cost


def _local(problem: RecompileProblem, x0) -> LocalResult:
    s = problem.settings
    return lbfgs(problem.cost_and_gradient, x0, s.memory, s.c1, s.c2, s.max_iter, s.gtol, s.cost_tol, s.ftol)


def lbfgs_minimize(problem: RecompileProblem) -> RecompileResult:
    t0 = time.perf_counter()
    res = _local(problem, problem.start())
    return RecompileResult(
        params=res.x,
        cost=res.f,
        iterations=res.iterations,
        status=res.status,
        line_search_failed=res.line_search_failed,
        wall_time=time.perf_counter() - t0,
        settings=problem.settings.to_dict(),
    )


def basin_hopping(problem: RecompileProblem) -> RecompileResult:
    """Global search: perturb the current minimum, re-minimize, Metropolis-accept.

    ``settings.hops`` counts local minimizations including the first one. The
    ``best`` entries of the hop trace never increase.
    """
    s = problem.settings
    if s.hops < 1:
        raise ValueError("basin hopping needs at least one hop")
    gen = stream(s.seed, RECOMPILE_STREAM + 2 * problem.key + 1)
    t0 = time.perf_counter()
    first = _local(problem, problem.start())
    cur_x, cur_f = first.x, first.f
    best_x, best_f = cur_x, cur_f
    iterations = first.iterations
    failed = first.line_search_failed
    hops = [{"hop": 0, "cost": cur_f, "accepted": True, "best": best_f, "status": first.status}]
    for h in range(1, s.hops):
        if s.stop_cost is not None and best_f <= s.stop_cost:
            break
        trial = cur_x + gen.normal(scale=s.hop_sigma, size=cur_x.shape)
        loc = _local(problem, trial)
        iterations += loc.iterations
        failed |= loc.line_search_failed
        delta = loc.f - cur_f
        accept = delta <= 0 or (s.temperature > 0 and gen.random() < math.exp(-delta / s.temperature))
        if accept:
            cur_x, cur_f = loc.x, loc.f
        if loc.f < best_f:
            best_x, best_f = loc.x, loc.f
        hops.append({"hop": h, "cost": loc.f, "accepted": bool(accept), "best": best_f, "status": loc.status})
    return RecompileResult(
        params=best_x,
        cost=best_f,
        iterations=iterations,
        hops=hops,
        status="stop_cost" if s.stop_cost is not None and best_f <= s.stop_cost else "hops",
        line_search_failed=failed,
        wall_time=time.perf_counter() - t0,
        settings=s.to_dict(),
    )


def recompiled_unitary(problem: RecompileProblem, result: RecompileResult) -> np.ndarray:
    return contract(problem.circuit, result.params)
