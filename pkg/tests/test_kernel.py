import math

import numpy as np
import pytest

from nlplap import kernel as kn


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 4.0])
@pytest.mark.parametrize("n", [1, 2, 3])
def test_closed_form_matches_quadrature(p, n):
    ref = kn.closed_form_Kpn(p, n)
    assert abs(kn.quad_Kpn(p, n, order=128) - ref) / ref < 1e-8


def test_kpn_hand_values():
    assert kn.closed_form_Kpn(2, 3) == pytest.approx(1 / 3, abs=1e-15)
    assert kn.closed_form_Kpn(1.5, 1) == 1.0
    assert kn.closed_form_Kpn(3, 2) == pytest.approx(4 / (3 * math.pi), rel=1e-13)
    # independent 1D check of the circle average of |cos|^3
    th = np.linspace(0, 2 * np.pi, 4001)[:-1]
    assert np.mean(np.abs(np.cos(th)) ** 3) == pytest.approx(4 / (3 * math.pi), rel=1e-6)
    for n in (1, 2, 3):
        assert abs(kn.closed_form_Kpn(2.0, n) - 1.0 / n) < 1e-14


def test_quad_kpn_trivial_cases():
    # the polar Gauss rule is exact to round-off from order 10 on
    for order in (10, 16, 64):
        assert abs(kn.quad_Kpn(2, 2, order) - 0.5) < 1e-12
    assert kn.quad_Kpn(4, 1) == 1.0
    assert abs(kn.quad_Kpn(3, 3, 32) - kn.closed_form_Kpn(3, 3)) < 1e-8


def test_quad_is_rotation_invariant():
    e = np.array([0.3, -0.4, 0.866])
    assert kn.quad_Kpn(1.5, 3, 128, e) == pytest.approx(kn.closed_form_Kpn(1.5, 3), rel=1e-8)


def test_unsupported_dimension():
    with pytest.raises(kn.KernelError):
        kn.closed_form_Kpn(2.0, 4)


def test_normalize_examples():
    assert kn.normalize(-1.0, 0.5, 2.0, 1) == pytest.approx(1.0, rel=1e-14)
    d = 0.3
    assert kn.normalize(-1.0, d, 2.0, 2) == pytest.approx(math.sqrt(2 / (math.pi * d * d)), rel=1e-14)
    with pytest.raises(kn.KernelError):
        kn.normalize(-1.0 - 1 / 2.0, 0.5, 2.0, 1)
    with pytest.raises(kn.KernelError):
        kn.normalize(-0.5, 0.5, 2.0, 1)


@pytest.mark.parametrize("alpha,p,n", [(-1.0, 2.0, 1), (-1.2, 3.0, 2), (-1.0, 1.5, 3)])
def test_normalize_delta_scaling(alpha, p, n):
    g = n + p + alpha * p
    ratio = kn.normalize(alpha, 0.4, p, n) / kn.normalize(alpha, 0.2, p, n)
    assert ratio == pytest.approx(2.0 ** (-g / p), rel=1e-13)


def test_normalization_integral_numerically():
    from scipy.integrate import quad
    spec = kn.KernelSpec(2, 3.0, 0.25, alpha=-1.3)
    radial, _ = quad(lambda r: r ** (1 + 3.0 - 1.3 * 3.0), 0, 0.25, epsrel=1e-13)
    assert kn.sphere_area(2) * spec.c_norm ** 3 * radial == pytest.approx(1 / spec.Kpn, rel=1e-10)


def test_kernel_spec_invariants():
    s = kn.KernelSpec(1, 3.0, 0.5)
    assert s.q == 1.5
    with pytest.raises(kn.KernelError):
        kn.KernelSpec(1, 1.0, 0.5)
    with pytest.raises(kn.KernelError):
        kn.KernelSpec(1, 2.0, -1.0)


def test_omega():
    s = kn.KernelSpec(1, 2.0, 0.5)
    assert kn.omega(0.25, s) == pytest.approx(4.0)
    assert kn.omega(0.5, s) == 0.0
    assert kn.omega(1.0, s) == 0.0
    with pytest.raises(kn.KernelError):
        kn.omega(0.0, s)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("n", [2, 3])
def test_trace_identity_random(p, n):
    rng = np.random.default_rng(7)
    for _ in range(20):
        e = rng.normal(size=n)
        e /= np.linalg.norm(e)
        A = rng.normal(size=(n, n))
        lhs, rhs = kn.verify_trace_identity(e, A, p, n, order=64)
        assert abs(lhs - rhs) < 1e-10 * (1 + abs(np.trace(A)))


def test_trace_identity_trivial_branches():
    A = np.array([[1.0, 2.0], [0.5, 3.0]])
    lhs, rhs = kn.verify_trace_identity(np.array([0.6, 0.8]), A, 2.0, 2)
    assert lhs == pytest.approx(np.trace(A) / 2, abs=1e-12) and rhs == pytest.approx(2.0)
    lhs, rhs = kn.verify_trace_identity(np.array([-1.0]), np.array([[2.5]]), 1.7, 1)
    assert lhs == pytest.approx(2.5) and rhs == pytest.approx(2.5)


def test_trace_volume():
    rng = np.random.default_rng(3)
    spec = kn.KernelSpec(2, 1.5, 0.3)
    A = rng.normal(size=(2, 2))
    e = np.array([1.0, 0.0])
    lhs, rhs = kn.verify_trace_volume(e, A, spec)
    assert abs(lhs - rhs) < 1e-8
    assert kn.verify_trace_volume(e, np.zeros((2, 2)), spec) == (0.0, 0.0)
    lhs1, _ = kn.verify_trace_volume(np.array([1.0]), np.array([[1.7]]), kn.KernelSpec(1, 2.0, 0.5))
    assert lhs1 == pytest.approx(1.7, rel=1e-13)
    # a positive cutoff removes the inner ball's share exactly
    eps = 0.1
    lhs_eps, _ = kn.verify_trace_volume(e, A, spec, eps=eps)
    assert lhs_eps == pytest.approx(rhs * (1 - (eps / 0.3) ** spec.gamma), rel=1e-9)


def test_j_density():
    s = np.array([1.0, 0.0])
    assert kn.j_density(np.array([0.0, 2.0]), s, 3.0) == 0.0
    assert kn.j_density(np.array([0.3, 2.0]), s, 2.0) == pytest.approx(0.3)
    assert kn.j_density(s, s, 1.5) == pytest.approx(1.0)
    assert kn.j_density(np.zeros(2), s, 1.5) == 0.0


def test_J_integral_constant_and_linear():
    spec = kn.KernelSpec(2, 2.0, 0.2)
    def const(x):
        return np.tile([1.0, -0.5], (x.shape[0], 1))
    assert abs(kn.J_integral(const, [0.5, 0.5], spec)) < 1e-12
    A = np.array([[1.0, 0.4], [-0.2, 2.0]])
    def lin(x):
        return x @ A.T
    assert kn.J_integral(lin, [0.3, 0.1], spec) == pytest.approx(np.trace(A), rel=1e-10)


def test_J_integral_approaches_divergence():
    # smooth 1D flux; the shell integral tends to sigma' as delta shrinks
    def sig(x):
        return np.sin(3 * x)
    errs = []
    for d in (0.2, 0.1, 0.05):
        spec = kn.KernelSpec(1, 3.0, d)
        val = kn.J_integral(sig, [0.4], spec)
        errs.append(abs(val - 3 * np.cos(1.2)))
    assert errs[0] > errs[1] > errs[2]
