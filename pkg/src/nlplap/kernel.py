"""Truncated power kernels, sphere averages and the moment identities they satisfy.

The kernel is ``omega(x) = c * |x|**alpha`` on the open ball of radius ``delta``
and zero outside.  ``c`` is chosen so that the p-th moment of ``|x| * omega``
equals ``1 / K_{p,n}``, where ``K_{p,n}`` is the sphere average of ``|e.s|**p``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gammaln, roots_jacobi

SUPPORTED_DIMS = (1, 2, 3)


class KernelError(ValueError):
    """Invalid kernel parameters (dimension, exponent, horizon or alpha)."""


def _check_dim(n: int) -> None:
    if n not in SUPPORTED_DIMS:
        raise KernelError(f"dimension n={n} not supported, expected one of {SUPPORTED_DIMS}")


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere S^{n-1} (2, 2*pi, 4*pi)."""
    _check_dim(n)
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def closed_form_Kpn(p: float, n: int) -> float:
    """Sphere average of ``|e.s|**p`` from the Gamma-ratio formula.

    ``K = Gamma(n/2) Gamma((p+1)/2) / (sqrt(pi) Gamma((n+p)/2))``.  The
    formula is cross-checked against :func:`quad_Kpn` in the test-suite.
    """
    _check_dim(n)
    if p <= 0:
        raise KernelError(f"p must be positive, got {p}")
    if n == 1:
        return 1.0
    log_k = (gammaln(n / 2) + gammaln((p + 1) / 2)
             - 0.5 * math.log(math.pi) - gammaln((n + p) / 2))
    return float(math.exp(log_k))


def _orthonormal_frame(e: np.ndarray) -> np.ndarray:
    """Rows form an orthonormal basis whose first row is ``e``."""
    n = e.size
    basis = np.eye(n)
    # Gram-Schmidt starting from e, then the coordinate axes least aligned with e
    order = np.argsort(np.abs(e))
    vectors = [e]
    for k in order:
        v = basis[k].copy()
        for w in vectors:
            v -= (v @ w) * w
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            vectors.append(v / norm)
        if len(vectors) == n:
            break
    return np.array(vectors)


def _jacobi_unit(order: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Jacobi rule on [0, 1] for the weight ``(1-t)**a * t**b``."""
    x, w = roots_jacobi(order, a, b)
    t = 0.5 * (1.0 + x)
    return t, w * 2.0 ** (-(a + b + 1.0))


def sphere_rule(n: int, order: int = 64, pole: np.ndarray | None = None,
                weight_exponent: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Product rule on S^{n-1} approximating a weighted sphere *average*.

    Returns ``(nodes, weights)`` with ``sum(weights * g(nodes))`` approximating
    ``|S|^{-1} * integral of |pole.s|**weight_exponent * g(s) ds``.

    The polar variable ``t = pole.s`` is split at 0 and integrated with
    Gauss-Jacobi rules that absorb ``|t|**weight_exponent`` exactly, so the
    integrable singularity of the weight never sits on a node.  For n=3 the
    azimuth is a uniform trapezoid rule with ``2*order`` points.
    """
    _check_dim(n)
    beta = float(weight_exponent)
    if beta <= -1.0:
        raise KernelError(f"weight exponent must exceed -1, got {beta}")
    if pole is None:
        pole = np.eye(n)[0]
    pole = np.asarray(pole, dtype=float)
    pole = pole / np.linalg.norm(pole)
    if n == 1:
        return np.array([[1.0], [-1.0]]) * pole[0], np.array([0.5, 0.5])

    frame = _orthonormal_frame(pole)
    if n == 2:
        # theta parametrisation, dtheta = dt / sqrt(1 - t^2)
        t, wt = _jacobi_unit(order, -0.5, beta)
        wt = wt / np.sqrt(1.0 + t)
        sin = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
        local = []
        weights = []
        for st in (1.0, -1.0):
            for ss in (1.0, -1.0):
                local.append(np.column_stack([st * t, ss * sin]))
                weights.append(wt)
        local = np.vstack(local)
        weights = np.concatenate(weights) / (2.0 * math.pi)
        return local @ frame, weights

    # n == 3: Archimedes, ds = dt dphi
    t, wt = _jacobi_unit(order, 0.0, beta)
    m = 2 * order
    phi = 2.0 * math.pi * np.arange(m) / m
    sin = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    local = []
    weights = []
    for st in (1.0, -1.0):
        tt = np.repeat(st * t, m)
        rr = np.repeat(sin, m)
        pp = np.tile(phi, t.size)
        local.append(np.column_stack([tt, rr * np.cos(pp), rr * np.sin(pp)]))
        weights.append(np.repeat(wt, m) * (2.0 * math.pi / m))
    local = np.vstack(local)
    weights = np.concatenate(weights) / (4.0 * math.pi)
    return local @ frame, weights


def quad_Kpn(p: float, n: int, order: int = 128, direction: np.ndarray | None = None) -> float:
    """Sphere average of ``|e.s|**p`` by numerical quadrature.

    Uses the unweighted product rule, so it shares nothing with the
    Gamma-function expression in :func:`closed_form_Kpn`.
    """
    _check_dim(n)
    e = np.eye(n)[0] if direction is None else np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    nodes, weights = sphere_rule(n, order, pole=e)
    return float(weights @ np.abs(nodes @ e) ** p)


def radial_exponent(alpha: float, p: float, n: int) -> float:
    """``n + p + alpha*p``; positive exactly when the normalisation integral converges."""
    return n + p + alpha * p


def normalize(alpha: float, delta: float, p: float, n: int) -> float:
    """Constant ``c`` with ``|S| c**p delta**g / g = 1/K_{p,n}``, ``g = n + p + alpha*p``."""
    _check_dim(n)
    if delta <= 0:
        raise KernelError(f"horizon must be positive, got {delta}")
    if not (-1.0 - n / p < alpha <= -1.0):
        raise KernelError(f"alpha={alpha} outside (-1-n/p, -1] = ({-1.0 - n / p}, -1]")
    g = radial_exponent(alpha, p, n)
    k = closed_form_Kpn(p, n)
    return float((g / (k * sphere_area(n) * delta ** g)) ** (1.0 / p))


@dataclass(frozen=True)
class KernelSpec:
    """Parameters of a normalised truncated power kernel."""

    n: int
    p: float
    delta: float
    alpha: float = -1.0
    c_norm: float | None = None
    q: float = field(init=False)

    def __post_init__(self):
        _check_dim(self.n)
        if not self.p > 1.0:
            raise KernelError(f"p must exceed 1, got {self.p}")
        if self.delta <= 0:
            raise KernelError(f"horizon must be positive, got {self.delta}")
        if not (-1.0 - self.n / self.p < self.alpha <= -1.0):
            raise KernelError(
                f"alpha={self.alpha} outside (-1-n/p, -1] for n={self.n}, p={self.p}")
        object.__setattr__(self, "q", self.p / (self.p - 1.0))
        if self.c_norm is None:
            object.__setattr__(self, "c_norm", normalize(self.alpha, self.delta, self.p, self.n))
        elif self.c_norm <= 0:
            raise KernelError("c_norm must be positive")

    @property
    def gamma(self) -> float:
        return radial_exponent(self.alpha, self.p, self.n)

    @property
    def Kpn(self) -> float:
        return closed_form_Kpn(self.p, self.n)

    def moment(self, eps: float = 0.0) -> float:
        """Exact ``integral over eps<|x|<delta of |x|**p omega**p dx``."""
        g = self.gamma
        return (sphere_area(self.n) * self.c_norm ** self.p
                * (self.delta ** g - eps ** g) / g)


def omega(r, spec: KernelSpec):
    """Kernel value at distance ``r``; zero for ``r >= delta``, error at ``r == 0``."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise KernelError("kernel is singular at r = 0 (self-pairs are never evaluated)")
    out = np.where(r_arr < spec.delta, spec.c_norm * r_arr ** spec.alpha, 0.0)
    return float(out) if out.ndim == 0 else out


def trace_weight_matrix(e: np.ndarray, p: float) -> np.ndarray:
    """``(p-1) I + (2-p) e e^T``."""
    e = np.asarray(e, dtype=float)
    return (p - 1.0) * np.eye(e.size) + (2.0 - p) * np.outer(e, e)


def verify_trace_identity(e, A, p: float, n: int, order: int = 64) -> tuple[float, float]:
    """Both sides of the sphere-average trace identity.

    ``lhs = avg_s |e.s|**(p-2) s^T M A s`` with ``M = (p-1) I + (2-p) e e^T``,
    ``rhs = K_{p,n} trace(A)``.
    """
    _check_dim(n)
    e = np.asarray(e, dtype=float).reshape(n)
    if abs(np.linalg.norm(e) - 1.0) > 1e-12:
        raise KernelError("e must be a unit vector")
    A = np.asarray(A, dtype=float).reshape(n, n)
    nodes, weights = sphere_rule(n, order, pole=e, weight_exponent=p - 2.0)
    MA = trace_weight_matrix(e, p) @ A
    vals = np.einsum("ki,ij,kj->k", nodes, MA, nodes)
    lhs = float(weights @ vals)
    return lhs, closed_form_Kpn(p, n) * float(np.trace(A))


def verify_trace_volume(e, A, spec: KernelSpec, eps: float = 0.0,
                        order: int = 64) -> tuple[float, float]:
    """Both sides of the shell-integral trace identity over ``eps < |z| < delta``.

    The radial factor of the power kernel is integrated in closed form, so
    ``lhs = trace(A) * (1 - (eps/delta)**gamma)`` up to sphere-quadrature
    error; ``eps = 0`` gives the limit value.
    """
    if not 0.0 <= eps < spec.delta:
        raise KernelError("need 0 <= eps < delta")
    n, p = spec.n, spec.p
    e = np.asarray(e, dtype=float).reshape(n)
    A = np.asarray(A, dtype=float).reshape(n, n)
    nodes, weights = sphere_rule(n, order, pole=e, weight_exponent=p - 2.0)
    MA = trace_weight_matrix(e, p) @ A
    sphere_avg = float(weights @ np.einsum("ki,ij,kj->k", nodes, MA, nodes))
    g = spec.gamma
    radial = spec.c_norm ** p * (spec.delta ** g - eps ** g) / g
    return sphere_area(n) * radial * sphere_avg, float(np.trace(A))


def j_density(sigma_val, s, p: float):
    """``|v|**(2-p) |v.s|**(p-2) (v.s)``, taken as 0 where ``v.s == 0``.

    Accepts single vectors or row-stacked ``(m, n)`` arrays.
    """
    v = np.asarray(sigma_val, dtype=float)
    s = np.asarray(s, dtype=float)
    dot = np.atleast_1d(np.sum(v * s, axis=-1))
    norm = np.atleast_1d(np.linalg.norm(v, axis=-1))
    out = np.zeros(dot.shape)
    nz = dot != 0
    out[nz] = norm[nz] ** (2.0 - p) * np.abs(dot[nz]) ** (p - 1.0) * np.sign(dot[nz])
    return float(out[0]) if np.ndim(v) == 1 else out


def J_integral(sigma: Callable[[np.ndarray], np.ndarray], x, spec: KernelSpec,
               eps: float = 0.0, radial_order: int = 48, sphere_order: int = 48) -> float:
    """Shell integral of ``j(x+z, z/|z|) |z|**(p-1) omega**p(z)`` over ``eps<|z|<delta``.

    ``sigma`` maps an ``(m, n)`` array of points to an ``(m, n)`` array of
    vectors.  With ``eps == 0`` the radial factor ``r**(gamma-1)`` is absorbed
    into a Gauss-Jacobi rule, so no node sits at the origin.
    """
    n, p = spec.n, spec.p
    x = np.asarray(x, dtype=float).reshape(n)
    if not 0.0 <= eps < spec.delta:
        raise KernelError("need 0 <= eps < delta")
    sx = np.asarray(sigma(x[None, :]), dtype=float).reshape(n)
    pole = sx / np.linalg.norm(sx) if np.linalg.norm(sx) > 0 else np.eye(n)[0]
    s_nodes, s_weights = sphere_rule(n, sphere_order, pole=pole)
    g = spec.gamma
    if eps == 0.0:
        # weight r**(g-1) on [0, delta]; remaining factor S(r)/r
        r, wr = _jacobi_unit(radial_order, 0.0, g - 1.0)
        r = r * spec.delta
        wr = wr * spec.delta ** g
        power = -1.0
    else:
        xg, wg = np.polynomial.legendre.leggauss(radial_order)
        r = eps + (spec.delta - eps) * 0.5 * (xg + 1.0)
        wr = wg * 0.5 * (spec.delta - eps)
        power = g - 2.0
    total = 0.0
    area = sphere_area(n)
    for rk, wk in zip(r, wr):
        pts = x[None, :] + rk * s_nodes
        vals = j_density(sigma(pts), s_nodes, p)
        total += wk * rk ** power * area * float(s_weights @ vals)
    return spec.c_norm ** p * total
