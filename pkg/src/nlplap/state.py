"""Primal state solves, optimal two-point fluxes, optimality certificates and the 1D local reference."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize_scalar

from .grid import ANTISYMMETRIC, SYMMETRIC, PairTable, TwoPointField, cell_norm, pair_norm_q
from .kernel import KernelSpec
from .operators import energy_primal, nl_divergence, nl_gradient

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """Newton iteration stopped before reaching the residual tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class SolverConfig:
    """Newton settings; ``eta`` is relative to the largest pair gradient."""

    tol: float = 1e-10
    max_iter: int = 200
    eta: float = 1e-8
    shrink: float = 0.5
    c1: float = 1e-4

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if not 0 < self.shrink < 1 or not 0 < self.c1 < 1:
            raise ValueError("line-search parameters must lie in (0, 1)")


@dataclass
class StateReport:
    u: np.ndarray
    sigma2pt: TwoPointField
    primal_energy: float
    dual_energy: float
    duality_gap: float
    kkt_stationarity: float
    kkt_feasibility: float
    iterations: int
    residual: float
    energy_history: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "primal_energy": self.primal_energy,
            "dual_energy": self.dual_energy,
            "duality_gap": self.duality_gap,
            "kkt_stationarity": self.kkt_stationarity,
            "kkt_feasibility": self.kkt_feasibility,
            "iterations": self.iterations,
            "residual": self.residual,
        }


def gradient_matrix(pairs: PairTable) -> sp.csr_matrix:
    """Sparse ``G`` with ``(G u)_k = (u_i - u_j) omega_k`` restricted to interior unknowns."""
    grid = pairs.grid
    cols = np.full(grid.size, -1)
    cols[grid.interior] = np.arange(grid.n_interior)
    rows, cc, vals = [], [], []
    k = np.arange(pairs.size)
    for ends, sign in ((pairs.i, 1.0), (pairs.j, -1.0)):
        mask = cols[ends] >= 0
        rows.append(k[mask])
        cc.append(cols[ends][mask])
        vals.append(sign * pairs.w_omega[mask])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cc))),
                         shape=(pairs.size, grid.n_interior))


def power_law(kappa2pt: TwoPointField, grad: TwoPointField, p: float) -> TwoPointField:
    """``-kappa2pt |grad|^{p-2} grad``."""
    g = grad.values
    mag = np.abs(g)
    vals = np.zeros_like(g)
    nz = mag > 0
    vals[nz] = -kappa2pt.values[nz] * mag[nz] ** (p - 2.0) * g[nz]
    return TwoPointField(vals, ANTISYMMETRIC)


def power_law_inverse(kappa2pt: TwoPointField, sigma2pt: TwoPointField, q: float) -> TwoPointField:
    """``kappa2pt^{1-q} |sigma|^{q-2} sigma``, which equals ``-G u`` for an exact flux."""
    s = sigma2pt.values
    mag = np.abs(s)
    vals = np.zeros_like(s)
    nz = mag > 0
    vals[nz] = kappa2pt.values[nz] ** (1.0 - q) * mag[nz] ** (q - 2.0) * s[nz]
    return TwoPointField(vals, ANTISYMMETRIC)


def flux_from_state(kappa2pt: TwoPointField, u: np.ndarray, spec: KernelSpec,
                    pairs: PairTable) -> TwoPointField:
    return power_law(kappa2pt, nl_gradient(u, pairs), spec.p)


def energy_dual_pairs(kappa2pt: TwoPointField, sigma2pt: TwoPointField, q: float,
                      pairs: PairTable) -> float:
    """Complementary energy written with the pair conductivity ``kappa2pt^{1-q}``."""
    return float(2.0 * pairs.w_quad * np.sum(kappa2pt.values ** (1.0 - q)
                                             * np.abs(sigma2pt.values) ** q) / q)


def kkt_residual(kappa2pt: TwoPointField, sigma2pt: TwoPointField, u: np.ndarray,
                 f: np.ndarray, spec: KernelSpec, pairs: PairTable) -> tuple[float, float]:
    """Stationarity ``|| kappa2pt^{1-q}|s|^{q-2}s + G u ||_p`` and feasibility ``|| D s - f ||_q``."""
    inv = power_law_inverse(kappa2pt, sigma2pt, spec.q)
    gu = nl_gradient(u, pairs)
    stat = pair_norm_q(TwoPointField(inv.values + gu.values, ANTISYMMETRIC), spec.p, pairs)
    feas = cell_norm(nl_divergence(sigma2pt, pairs) - np.asarray(f, dtype=float),
                     pairs.grid, spec.q)
    return stat, feas


class _Primal:
    """Energy, gradient and Hessian of the discrete primal in the interior unknowns."""

    def __init__(self, kappa2pt, f, spec, pairs):
        self.G = gradient_matrix(pairs)
        self.kap = kappa2pt.values
        self.p = spec.p
        self.hn = pairs.grid.cell_measure
        self.w = 2.0 * pairs.w_quad
        self.f = np.asarray(f, dtype=float)[pairs.grid.interior]

    def energy(self, v):
        g = self.G @ v
        return self.w * np.sum(self.kap * np.abs(g) ** self.p) / self.p - self.hn * self.f @ v

    def gradient(self, v):
        g = self.G @ v
        flux = np.zeros_like(g)
        nz = g != 0
        flux[nz] = self.kap[nz] * np.abs(g[nz]) ** (self.p - 2.0) * g[nz]
        return self.w * (self.G.T @ flux) - self.hn * self.f

    def hessian(self, v, eta):
        g = self.G @ v
        weight = (self.p - 1.0) * self.kap * (g * g + eta * eta) ** ((self.p - 2.0) / 2.0)
        return (self.w * (self.G.T @ sp.diags(weight) @ self.G)).tocsc()


def solve_linear_p2(kappa2pt: TwoPointField, f: np.ndarray, pairs: PairTable) -> np.ndarray:
    """Direct sparse solve of the ``p = 2`` normal equations."""
    G = gradient_matrix(pairs)
    K = 2.0 * pairs.w_quad * (G.T @ sp.diags(kappa2pt.values) @ G)
    rhs = pairs.grid.cell_measure * np.asarray(f, dtype=float)[pairs.grid.interior]
    u = np.zeros(pairs.grid.size)
    u[pairs.grid.interior] = spla.spsolve(K.tocsc(), rhs)
    return u


def _line_search(energy_fn, residual_fn, v, e0, res0, step, slope, config):
    """Backtracking Armijo search; ``None`` when no acceptable step exists.

    Once the predicted decrease drops below the round-off level of the
    energy, Armijo cannot be decided, so a decrease of the residual is
    required instead.
    """
    noisy = -slope <= 1e-11 * max(abs(e0), 1e-300)
    t = 1.0
    while t >= 1e-12:
        trial = v + t * step
        e_trial = energy_fn(trial)
        if e_trial <= e0 + config.c1 * t * slope:
            return trial, e_trial, t
        if noisy and e_trial <= e0 + 1e-13 * abs(e0) and residual_fn(trial) < res0:
            return trial, e_trial, t
        t *= config.shrink
    return None


def damped_newton(energy_fn, grad_fn, hess_fn, residual_fn, v, p, config, history,
                  label="Newton"):
    """Minimise a convex p-homogeneous-type energy by globalised Newton steps.

    ``hess_fn(v, newton)`` returns the Newton matrix when ``newton`` is true
    and, for ``p < 2``, the lagged-diffusivity majoriser otherwise.  Newton on
    ``|g|^p`` with ``p < 2`` overshoots far from the solution, so each
    iteration then tries both directions and keeps the lower energy.
    """
    energy = energy_fn(v)
    history.append(float(energy))
    res = residual_fn(v)
    it = 0
    while res > config.tol:
        if it >= config.max_iter:
            raise ConvergenceError(f"{label} did not converge", res)
        it += 1
        grad = grad_fn(v)
        best = None
        for newton in ((True, False) if p < 2 else (True,)):
            step = -spla.spsolve(hess_fn(v, newton), grad)
            slope = float(grad @ step)
            if not slope < 0:  # not a descent direction; fall back to steepest descent
                step, slope = -grad, -float(grad @ grad)
            found = _line_search(energy_fn, residual_fn, v, energy, res, step, slope, config)
            if found is not None and (best is None or found[1] < best[1]):
                best = found
        if best is None:
            raise ConvergenceError(f"{label} line search stalled", res)
        v, energy, t = best
        history.append(float(energy))
        res = residual_fn(v)
        log.debug("%s it=%d t=%.2e res=%.3e", label, it, t, res)
    return v, it, res


def _newton(prob: _Primal, v: np.ndarray, f_norm: float, spec: KernelSpec, pairs: PairTable,
            config: SolverConfig, history: list[float]) -> tuple[np.ndarray, int, float]:
    grid = pairs.grid

    def residual(vv):
        # relative Euler-Lagrange residual in the L^q cell norm: grad = h^n (D s - f)
        r = np.zeros(grid.size)
        r[grid.interior] = prob.gradient(vv) / prob.hn
        return cell_norm(r, grid, spec.q) / f_norm

    def hessian(vv, newton):
        if spec.p == 2.0:
            return prob.hessian(vv, 0.0)
        g = prob.G @ vv
        scale = np.max(np.abs(g)) if g.size else 0.0
        eta = config.eta * scale if scale > 0 else config.eta
        H = prob.hessian(vv, eta)
        return H if newton else H / (spec.p - 1.0)

    if spec.p < 2:
        found = _primal_dual(prob, v, spec.q, residual, config, history)
        if found is not None:
            return found
    return damped_newton(prob.energy, prob.gradient, hessian, residual, v, spec.p, config,
                         history)


def _primal_dual(prob: _Primal, v: np.ndarray, q: float, residual_fn, config: SolverConfig,
                 history: list[float], max_iter: int = 50):
    """Newton on the flux-state system, used for ``p < 2``; ``None`` if it fails.

    The unknowns are ``v`` and the pair flux ``s`` with
    ``kap^{1-q} |s|^{q-2} s + G v = 0`` and ``D s = -2 h^n G^T s = f``.  With
    ``q > 2`` the first equation is C^1 in ``s``, whereas the primal
    flux ``|g|^{p-2} g`` has unbounded slope wherever a pair gradient
    vanishes, which is what stalls primal Newton on symmetric data.
    """
    G, kap = prob.G, prob.kap
    res_kap = kap ** (1.0 - q)
    g = G @ v
    s = np.zeros_like(g)
    nz = g != 0
    s[nz] = -kap[nz] * np.abs(g[nz]) ** (prob.p - 2.0) * g[nz]
    res0 = residual_fn(v)
    res = res0
    for it in range(1, max_iter + 1):
        F1 = res_kap * np.abs(s) ** (q - 2.0) * s + G @ v
        F2 = 2.0 * prob.hn * (G.T @ s) + prob.f  # equals f - D s
        eta = config.eta * max(np.max(np.abs(s)), 1e-300)
        dg = (q - 1.0) * res_kap * (s * s + eta * eta) ** ((q - 2.0) / 2.0)
        K = (G.T @ sp.diags(1.0 / dg) @ G).tocsc()
        dv = spla.spsolve(K, 0.5 * F2 / prob.hn - G.T @ (F1 / dg))
        s = s - (F1 + G @ dv) / dg
        v = v + dv
        res = residual_fn(v)
        if not np.isfinite(res) or res > 1e6 * max(res0, 1.0):
            log.debug("primal-dual Newton diverged at it=%d", it)
            return None
        history.append(float(prob.energy(v)))
        log.debug("primal-dual it=%d res=%.3e", it, res)
        if res <= config.tol:
            return v, it, res
    return None


def solve_primal(kappa2pt: TwoPointField, f: np.ndarray, spec: KernelSpec, pairs: PairTable,
                 config: SolverConfig = SolverConfig(), u0: np.ndarray | None = None) -> StateReport:
    """Minimise the discrete primal energy over states vanishing on the halo.

    Stops when ``|| D sigma - f ||_q / || f ||_q <= tol``; this residual is
    the Euler-Lagrange residual divided by ``h^n``.  Without ``u0`` the
    iteration for ``p != 2`` is started from the ``p = 2`` solution.
    """
    if kappa2pt.parity != SYMMETRIC:
        raise ValueError("pair conductivity must be symmetric")
    if spec.p < 2 and config.eta == 0:
        warnings.warn("eta = 0 with p < 2 makes the Newton matrix singular; using eta = 1e-8")
        config = SolverConfig(config.tol, config.max_iter, 1e-8, config.shrink, config.c1)
    grid = pairs.grid
    f = np.asarray(f, dtype=float)
    f_norm = cell_norm(f, grid, spec.q)
    history: list[float] = []
    if f_norm == 0.0:
        u = np.zeros(grid.size)
        it, res = 0, 0.0
        history.append(0.0)
    else:
        prob = _Primal(kappa2pt, f, spec, pairs)
        if u0 is not None:
            v = np.asarray(u0, dtype=float)[grid.interior].copy()
        elif spec.p == 2.0:
            v = np.zeros(grid.n_interior)
        else:
            v = solve_linear_p2(kappa2pt, f, pairs)[grid.interior]
            # rescale so that the p-homogeneous energy is minimised along this ray
            e_p = prob.w * np.sum(prob.kap * np.abs(prob.G @ v) ** spec.p)
            lin = prob.hn * prob.f @ v
            if e_p > 0 and lin > 0:
                v = v * (lin / e_p) ** (1.0 / (spec.p - 1.0))
        v, it, res = _newton(prob, v, f_norm, spec, pairs, config, history)
        u = np.zeros(grid.size)
        u[grid.interior] = v
    sigma = flux_from_state(kappa2pt, u, spec, pairs)
    e_primal = energy_primal(kappa2pt, u, f, spec, pairs)
    e_dual = energy_dual_pairs(kappa2pt, sigma, spec.q, pairs)
    stat, feas = kkt_residual(kappa2pt, sigma, u, f, spec, pairs)
    return StateReport(u=u, sigma2pt=sigma, primal_energy=e_primal, dual_energy=e_dual,
                       duality_gap=abs(e_primal + e_dual), kkt_stationarity=stat,
                       kkt_feasibility=feas, iterations=it, residual=res,
                       energy_history=history)


# ---------------------------------------------------------------------------
# local 1D reference


@dataclass
class LocalSolution:
    x: np.ndarray
    u: np.ndarray
    sigma: np.ndarray
    sigma_faces: np.ndarray
    i_hat_loc: float
    iterations: int


def _face_conductivity(kappa: np.ndarray, q: float) -> np.ndarray:
    """Resistivity-averaged conductivity on the N+1 faces; boundary faces copy their cell."""
    res = kappa ** (1.0 - q)
    inner = (0.5 * (res[:-1] + res[1:])) ** (1.0 / (1.0 - q))
    return np.concatenate([[kappa[0]], inner, [kappa[-1]]])


def solve_local_1d(kappa: np.ndarray, f: np.ndarray, p: float, a: float = 0.0, b: float = 1.0,
                   config: SolverConfig = SolverConfig()) -> LocalSolution:
    """Finite-volume p-Laplacian on ``(a, b)`` with homogeneous Dirichlet data.

    ``kappa`` and ``f`` hold one value per cell.  Boundary faces sit half a
    cell from the outer centres.  Returns the centre flux (mean of the two
    face fluxes) and the complementary energy of that flux.
    """
    kappa = np.asarray(kappa, dtype=float)
    f = np.asarray(f, dtype=float)
    if np.any(kappa <= 0):
        raise ValueError("conductivity must be positive")
    m = kappa.size
    h = (b - a) / m
    q = p / (p - 1.0)
    x = a + (np.arange(m) + 0.5) * h
    kf = _face_conductivity(kappa, q)
    spacing = np.full(m + 1, h)
    spacing[0] = spacing[-1] = h / 2
    # face difference operator: g_f = (u_right - u_left) / spacing, with zero boundary values
    D = sp.diags([-np.ones(m), np.ones(m)], [-1, 0], shape=(m + 1, m)).tocsr()
    Dg = sp.diags(1.0 / spacing) @ D

    def energy(v):
        g = Dg @ v
        return np.sum(spacing * kf * np.abs(g) ** p) / p - h * f @ v

    def grad(v):
        g = Dg @ v
        flux = np.zeros_like(g)
        nz = g != 0
        flux[nz] = kf[nz] * np.abs(g[nz]) ** (p - 2.0) * g[nz]
        return Dg.T @ (spacing * flux) - h * f

    f_scale = max(np.sqrt(h) * np.linalg.norm(f), 1e-300)

    def residual(vv):
        return np.linalg.norm(grad(vv)) / (np.sqrt(h) * f_scale)

    def hessian(vv, newton):
        g = Dg @ vv
        eta = config.eta * max(np.max(np.abs(g)), 1.0) if p != 2.0 else 0.0
        w = spacing * kf * (g * g + eta * eta) ** ((p - 2.0) / 2.0)
        if newton:
            w = (p - 1.0) * w
        return (Dg.T @ sp.diags(w) @ Dg).tocsc()

    v = np.zeros(m)
    it = 0
    if np.any(f != 0):
        v, it, _ = damped_newton(energy, grad, hessian, residual, v, p, config, [],
                                 label="local Newton")
    g = Dg @ v
    sf = np.zeros_like(g)
    nz = g != 0
    sf[nz] = -kf[nz] * np.abs(g[nz]) ** (p - 2.0) * g[nz]
    sigma = 0.5 * (sf[:-1] + sf[1:])
    i_hat = float(h * np.sum(kappa ** (1.0 - q) * np.abs(sigma) ** q) / q)
    return LocalSolution(x=x, u=v, sigma=sigma, sigma_faces=sf, i_hat_loc=i_hat, iterations=it)


def local_dual_oracle(kappa_fn, f_fn, p: float, a: float = 0.0, b: float = 1.0,
                      m: int = 20000) -> float:
    """1D complementary optimum by direct minimisation over the flux constant.

    Every admissible flux on an interval is ``sigma_0 + c`` with
    ``sigma_0(x) = integral from a to x of f``; the minimum over ``c`` of
    ``(1/q) integral kappa^{1-q} |sigma_0 + c|^q`` is a scalar convex problem.
    """
    q = p / (p - 1.0)
    h = (b - a) / m
    x = a + (np.arange(m) + 0.5) * h
    fv = np.asarray(f_fn(x), dtype=float) * np.ones(m)
    # sigma_0 at centres: exact-to-second-order cumulative midpoint sum
    edges = np.concatenate([[0.0], np.cumsum(fv) * h])
    s0 = 0.5 * (edges[:-1] + edges[1:])
    res = np.asarray(kappa_fn(x), dtype=float) ** (1.0 - q) * np.ones(m)

    def obj(c):
        return h * np.sum(res * np.abs(s0 + c) ** q) / q

    span = max(np.max(np.abs(s0)), 1.0)
    out = minimize_scalar(obj, bounds=(-2 * span, 2 * span), method="bounded",
                          options={"xatol": 1e-12})
    return float(out.fun)
