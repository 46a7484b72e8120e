"""Nonlocal gradient, divergence, flux recovery and lift, and the energies built on them.

All reductions run over the stored pairs ``i < j``.  The reverse orientation
is handled through the parity of the two-point field, so each ordered-pair
sum is twice the stored sum when the summand has even parity.
"""
from __future__ import annotations

import numpy as np

from .grid import ANTISYMMETRIC, SYMMETRIC, Grid, PairTable, TwoPointField, integrate_cells
from .kernel import KernelSpec


class PositivityError(ValueError):
    """A conductivity field has a non-positive entry."""


def _check_positive(kappa: np.ndarray) -> None:
    if np.any(~(np.asarray(kappa) > 0)):
        raise PositivityError("conductivity must be strictly positive everywhere")


def nl_gradient(u: np.ndarray, pairs: PairTable) -> TwoPointField:
    """``(u_i - u_j) * omega(x_i - x_j)`` on every stored pair."""
    u = np.asarray(u, dtype=float)
    return TwoPointField((u[pairs.i] - u[pairs.j]) * pairs.w_omega, ANTISYMMETRIC)


def nl_divergence(tp: TwoPointField, pairs: PairTable) -> np.ndarray:
    """``h^n sum_j [tp(j,i) - tp(i,j)] omega_ij`` on interior cells, zero on the halo.

    Writing ``tp(j,i) = parity * tp(i,j)`` the stored pair contributes
    ``(parity - 1) v w`` to cell ``i`` and ``(1 - parity) v w`` to cell ``j``.
    """
    grid = pairs.grid
    vw = tp.values * pairs.w_omega
    out = np.zeros(grid.size)
    np.add.at(out, pairs.i, (tp.parity - 1) * vw)
    np.add.at(out, pairs.j, (1 - tp.parity) * vw)
    out *= grid.cell_measure
    out[grid.halo] = 0.0
    return out


def pair_inner(a: TwoPointField, b: TwoPointField, pairs: PairTable) -> float:
    """Ordered-pair inner product ``sum a(x,x') b(x,x') h^{2n}``."""
    weight = 1 + a.parity * b.parity  # 2 for equal parity, 0 otherwise
    return float(weight * pairs.w_quad * np.dot(a.values, b.values))


def adjoint_defect(tp: TwoPointField, u: np.ndarray, pairs: PairTable) -> tuple[float, float]:
    """``|<D tp, u> + <tp, G u>|`` together with the magnitude of the two terms."""
    u = np.asarray(u, dtype=float)
    lhs = integrate_cells(nl_divergence(tp, pairs) * u, pairs.grid, "interior")
    rhs = pair_inner(tp, nl_gradient(u, pairs), pairs)
    return abs(lhs + rhs), max(abs(lhs), abs(rhs), 1e-300)


def recover_flux(tp: TwoPointField, pairs: PairTable) -> np.ndarray:
    """First moment ``h^n sum_j (x_i - x_j) tp(i,j) omega_ij`` on every cell of Omega_delta.

    For the reversed orientation the offset flips sign, so the stored pair
    adds ``-parity * offset * v * w`` to cell ``j``.
    """
    grid = pairs.grid
    contrib = pairs.offset * (tp.values * pairs.w_omega)[:, None]
    out = np.zeros((grid.size, grid.n))
    np.add.at(out, pairs.i, contrib)
    np.add.at(out, pairs.j, -tp.parity * contrib)
    return out * grid.cell_measure


def _g(v: np.ndarray, z: np.ndarray, p: float) -> np.ndarray:
    dot = np.einsum("kd,kd->k", v, z)
    out = np.zeros(dot.shape)
    nz = dot != 0
    norm = np.linalg.norm(v[nz], axis=1)
    out[nz] = norm ** (2.0 - p) * np.abs(dot[nz]) ** (p - 2.0) * dot[nz]
    return out


def lift_flux(sigma: np.ndarray, spec: KernelSpec, pairs: PairTable) -> TwoPointField:
    """Two-point flux ``(g(sigma_i, z) + g(sigma_j, z))/2 * omega^{p-1}``, ``z = x_i - x_j``."""
    sigma = np.asarray(sigma, dtype=float).reshape(pairs.grid.size, pairs.grid.n)
    p = spec.p
    z = pairs.offset
    g = 0.5 * (_g(sigma[pairs.i], z, p) + _g(sigma[pairs.j], z, p))
    return TwoPointField(g * pairs.w_omega ** (p - 1.0), ANTISYMMETRIC)


def lift_flux_linear(sigma: np.ndarray, pairs: PairTable) -> TwoPointField:
    """The ``p = 2`` lift written directly as a midpoint dot product."""
    sigma = np.asarray(sigma, dtype=float).reshape(pairs.grid.size, pairs.grid.n)
    mid = 0.5 * (sigma[pairs.i] + sigma[pairs.j])
    return TwoPointField(np.einsum("kd,kd->k", mid, pairs.offset) * pairs.w_omega, ANTISYMMETRIC)


def load(u: np.ndarray, f: np.ndarray, grid: Grid) -> float:
    """``integral over Omega of f u``."""
    return integrate_cells(np.asarray(f, dtype=float) * np.asarray(u, dtype=float), grid, "interior")


def energy_primal(kappa2pt: TwoPointField, u: np.ndarray, f: np.ndarray,
                  spec: KernelSpec, pairs: PairTable) -> float:
    """``(1/p) sum_ordered kappa2pt |G u|^p h^{2n} - load(u, f)``."""
    if kappa2pt.parity != SYMMETRIC:
        raise ValueError("pair conductivity must be symmetric")
    gu = nl_gradient(u, pairs).values
    stored = np.sum(kappa2pt.values * np.abs(gu) ** spec.p)
    return float(2.0 * pairs.w_quad * stored / spec.p - load(u, f, pairs.grid))


def row_density(sigma2pt: TwoPointField, q: float, pairs: PairTable) -> np.ndarray:
    """``A_i = h^n sum_j |sigma2pt(i,j)|^q``; each stored pair feeds both endpoints."""
    a = np.abs(sigma2pt.values) ** q
    out = np.zeros(pairs.grid.size)
    np.add.at(out, pairs.i, a)
    np.add.at(out, pairs.j, a)
    return out * pairs.grid.cell_measure


def energy_dual(kappa: np.ndarray, sigma2pt: TwoPointField, q: float, pairs: PairTable,
                check: bool = True) -> float:
    """Complementary energy with the arithmetic resistivity average on each pair.

    Computed as a pair sum and, independently, as ``(1/q) sum kappa^{1-q} A h^n``
    with the row density ``A``; the two must agree for any field whose two
    orientations have equal modulus.
    """
    kappa = np.asarray(kappa, dtype=float)
    _check_positive(kappa)
    res = kappa ** (1.0 - q)
    avg = 0.5 * (res[pairs.i] + res[pairs.j])
    pair_form = 2.0 * pairs.w_quad * np.sum(avg * np.abs(sigma2pt.values) ** q) / q
    if check:
        cell_form = integrate_cells(res * row_density(sigma2pt, q, pairs), pairs.grid, "all") / q
        scale = max(abs(pair_form), abs(cell_form), 1e-300)
        if abs(pair_form - cell_form) > 1e-11 * scale:
            raise AssertionError(f"dual energy forms disagree: {pair_form} vs {cell_form}")
    return float(pair_form)


def energy_dual_local(kappa: np.ndarray, sigma: np.ndarray, q: float, grid: Grid) -> float:
    """``(1/q) integral over Omega of kappa^{1-q} |sigma|^q``."""
    kappa = np.asarray(kappa, dtype=float)
    _check_positive(kappa[grid.interior])
    sigma = np.asarray(sigma, dtype=float)
    mag = np.linalg.norm(sigma, axis=1) if sigma.ndim == 2 else np.abs(sigma)
    dens = np.zeros(grid.size)
    dens[grid.interior] = kappa[grid.interior] ** (1.0 - q) * mag[grid.interior] ** q
    return integrate_cells(dens, grid, "interior") / q
