"""Conductivity design: pair conductivities, optimality-criteria updates and alternating minimisation."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .grid import SYMMETRIC, PairTable, TwoPointField
from .kernel import KernelSpec
from .operators import PositivityError, energy_dual, row_density
from .state import SolverConfig, solve_primal

log = logging.getLogger(__name__)


class InfeasibleBudget(ValueError):
    """``kappa_lo * |Omega|`` exceeds the volume budget."""


@dataclass(frozen=True)
class AdmissibleSet:
    """Box bounds, volume budget and the constant used on the halo."""

    kappa_lo: float
    kappa_hi: float
    V: float
    omega_measure: float = 1.0
    halo_value: float | None = None

    def __post_init__(self):
        if not 0 < self.kappa_lo <= self.kappa_hi:
            raise ValueError("need 0 < kappa_lo <= kappa_hi")
        if self.kappa_lo * self.omega_measure > self.V * (1 + 1e-12):
            raise InfeasibleBudget(
                f"kappa_lo*|Omega| = {self.kappa_lo * self.omega_measure} exceeds V = {self.V}")
        if self.halo_value is None:
            object.__setattr__(self, "halo_value", self.kappa_hi)
        if not self.kappa_lo <= self.halo_value <= self.kappa_hi:
            raise ValueError("halo_value must lie in [kappa_lo, kappa_hi]")


@dataclass(frozen=True)
class OuterConfig:
    tol: float = 1e-6
    max_outer: int = 100
    lambda_tol: float = 1e-10


@dataclass
class DesignReport:
    kappa: np.ndarray
    objective: float
    objective_history: list[float]
    volume_used: float
    iterations: int
    inner: list[dict] = field(default_factory=list)


def make_kappa2pt(kappa: np.ndarray, q: float, pairs: PairTable) -> TwoPointField:
    """``[(kappa_i^{1-q} + kappa_j^{1-q}) / 2]^{1/(1-q)}`` on every pair."""
    kappa = np.asarray(kappa, dtype=float)
    if np.any(~(kappa > 0)):
        raise PositivityError("conductivity must be strictly positive everywhere")
    res = kappa ** (1.0 - q)
    return TwoPointField((0.5 * (res[pairs.i] + res[pairs.j])) ** (1.0 / (1.0 - q)), SYMMETRIC)


def oc_update(A: np.ndarray, adm: AdmissibleSet, q: float, cell_measure: float,
              lambda_tol: float = 1e-10) -> np.ndarray:
    """Minimiser of ``sum kappa^{1-q} A`` under the box bounds and ``h^n sum kappa <= V``.

    ``kappa = clip(((q-1) A / lam)^{1/q}, lo, hi)`` with ``lam`` found by
    bisection on ``log lam``.  The returned field always satisfies the budget;
    cells with ``A = 0`` get ``kappa_lo`` whenever the budget binds.
    """
    A = np.asarray(A, dtype=float)
    if np.any(A < 0):
        raise ValueError("density must be nonnegative")
    lo, hi, V = adm.kappa_lo, adm.kappa_hi, adm.V
    if lo * A.size * cell_measure > V * (1 + 1e-12):
        raise InfeasibleBudget("lower bound alone exceeds the budget")
    if hi * A.size * cell_measure <= V:
        return np.full(A.size, hi)
    pos = A > 0
    if not np.any(pos):
        return np.full(A.size, lo)

    def kappa_of(log_lam):
        out = np.full(A.size, lo)
        out[pos] = np.clip(((q - 1.0) * A[pos] * math.exp(-log_lam)) ** (1.0 / q), lo, hi)
        return out

    def volume(log_lam):
        return cell_measure * kappa_of(log_lam).sum()

    a = math.log((q - 1.0) * A[pos].min() / hi ** q)
    b = math.log((q - 1.0) * A[pos].max() / lo ** q)
    while volume(a) < V and a > -700:
        a -= 1.0
    while volume(b) > V:
        b += 1.0
    if volume(a) <= V:
        return kappa_of(a)
    # invariant: volume(a) > V >= volume(b)
    for _ in range(300):
        mid = 0.5 * (a + b)
        vm = volume(mid)
        if vm > V:
            a = mid
        else:
            b = mid
            if V - vm <= lambda_tol * V:
                break
        if b - a < 1e-15 * max(1.0, abs(a)):
            break
    return kappa_of(b)


def _halo_fill(kappa_omega: np.ndarray, adm: AdmissibleSet, interior: np.ndarray) -> np.ndarray:
    full = np.full(interior.size, float(adm.halo_value))
    full[interior] = kappa_omega
    return full


def _converged(history: list[float], tol: float) -> bool:
    if len(history) < 2:
        return False
    prev, cur = history[-2], history[-1]
    return (prev - cur) <= tol * max(abs(cur), 1e-300)


def design_alternate(f: np.ndarray, adm: AdmissibleSet, spec: KernelSpec, pairs: PairTable,
                     solver: SolverConfig = SolverConfig(),
                     outer: OuterConfig = OuterConfig(),
                     kappa0: np.ndarray | None = None) -> DesignReport:
    """Alternate a state solve with the closed-form conductivity update."""
    grid = pairs.grid
    q = spec.q
    h_n = grid.cell_measure
    if kappa0 is None:
        start = float(np.clip(adm.V / adm.omega_measure, adm.kappa_lo, adm.kappa_hi))
        kappa_om = np.full(grid.n_interior, start)
    else:
        kappa_om = np.asarray(kappa0, dtype=float)[grid.interior].copy()
    history: list[float] = []
    inner: list[dict] = []
    u_prev = None
    for it in range(1, outer.max_outer + 1):
        kappa = _halo_fill(kappa_om, adm, grid.interior)
        k2 = make_kappa2pt(kappa, q, pairs)
        rep = solve_primal(k2, f, spec, pairs, solver, u0=u_prev)
        u_prev = rep.u
        history.append(energy_dual(kappa, rep.sigma2pt, q, pairs))
        inner.append(rep.summary())
        if _converged(history, outer.tol) or adm.kappa_lo == adm.kappa_hi:
            break
        A = row_density(rep.sigma2pt, q, pairs)[grid.interior]
        kappa_om = oc_update(A, adm, q, h_n, outer.lambda_tol)
    binding = adm.kappa_hi * adm.omega_measure > adm.V
    if len(history) < 3 and binding and adm.kappa_lo < adm.kappa_hi and it < outer.max_outer:
        if len(history) >= 2 and history[-2] - history[-1] < outer.tol * abs(history[-1]):
            warnings.warn("design loop stalled before the third outer iteration")
    return DesignReport(kappa=kappa, objective=history[-1], objective_history=history,
                        volume_used=float(h_n * kappa_om.sum()), iterations=it, inner=inner)


# ---------------------------------------------------------------------------
# 1D local design


def local_flux_1d(kappa: np.ndarray, f: np.ndarray, p: float, a: float = 0.0,
                  b: float = 1.0) -> tuple[np.ndarray, float]:
    """Optimal cell flux ``sigma_0 + c`` of the 1D complementary problem and its energy.

    ``sigma_0`` is the cumulative integral of ``f`` at the cell centres and
    ``c`` solves the scalar optimality condition exactly (closed form for
    ``p = 2``, bracketed root otherwise).
    """
    kappa = np.asarray(kappa, dtype=float)
    f = np.asarray(f, dtype=float) * np.ones(kappa.size)
    q = p / (p - 1.0)
    h = (b - a) / kappa.size
    edges = np.concatenate([[0.0], np.cumsum(f) * h])
    s0 = 0.5 * (edges[:-1] + edges[1:])
    res = kappa ** (1.0 - q)
    if q == 2.0:
        c = -np.sum(res * s0) / np.sum(res)
    elif np.all(s0 == s0[0]):
        c = -s0[0]
    else:
        def dphi(c):
            v = s0 + c
            return np.sum(res * np.abs(v) ** (q - 1.0) * np.sign(v))
        c = brentq(dphi, -s0.max(), -s0.min(), xtol=1e-15, rtol=4 * np.finfo(float).eps)
    sigma = s0 + c
    return sigma, float(h * np.sum(res * np.abs(sigma) ** q) / q)


def design_local_1d(f: np.ndarray, adm: AdmissibleSet, p: float, a: float = 0.0, b: float = 1.0,
                    outer: OuterConfig = OuterConfig()) -> DesignReport:
    """Local counterpart of :func:`design_alternate` on an interval, ``A = |sigma|^q``."""
    f = np.asarray(f, dtype=float)
    m = f.size
    h = (b - a) / m
    q = p / (p - 1.0)
    kappa = np.full(m, float(np.clip(adm.V / (b - a), adm.kappa_lo, adm.kappa_hi)))
    history: list[float] = []
    for it in range(1, outer.max_outer + 1):
        sigma, val = local_flux_1d(kappa, f, p, a, b)
        history.append(val)
        if _converged(history, outer.tol) or adm.kappa_lo == adm.kappa_hi:
            break
        kappa = oc_update(np.abs(sigma) ** q, adm, q, h, outer.lambda_tol)
    return DesignReport(kappa=kappa, objective=history[-1], objective_history=history,
                        volume_used=float(h * kappa.sum()), iterations=it)


def brute_force_local_design(f: np.ndarray, adm: AdmissibleSet, levels: np.ndarray,
                             a: float = 0.0, b: float = 1.0) -> tuple[float, np.ndarray]:
    """Exhaustive search over reflection-symmetric ``kappa`` taking values in ``levels`` (p = 2).

    Restricting to symmetric fields is exact for even ``f``: the objective is
    jointly convex in (kappa, sigma) and invariant under reflection, so a
    symmetric minimiser exists.
    """
    f = np.asarray(f, dtype=float)
    m = f.size
    if m % 2:
        raise ValueError("brute force expects an even number of cells")
    h = (b - a) / m
    edges = np.concatenate([[0.0], np.cumsum(f) * h])
    s0 = 0.5 * (edges[:-1] + edges[1:])
    half = m // 2
    mesh = np.stack(np.meshgrid(*([levels] * half), indexing="ij"), axis=-1).reshape(-1, half)
    full = np.concatenate([mesh, mesh[:, ::-1]], axis=1)
    ok = h * full.sum(axis=1) <= adm.V * (1 + 1e-12)
    full = full[ok]
    w = 1.0 / full
    c = -(w @ s0) / w.sum(axis=1)
    vals = 0.5 * h * np.sum(w * (s0[None, :] + c[:, None]) ** 2, axis=1)
    best = int(np.argmin(vals))
    return float(vals[best]), full[best]
