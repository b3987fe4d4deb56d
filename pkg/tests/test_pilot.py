import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.linalg import eigh_tridiagonal
from scipy.special import eval_hermite

from magtf.errors import DomainError, SingularTimeError
from magtf.pilot import (
    BOUND_C,
    PilotParams,
    bound_ratios,
    calibrate_bound_constants,
    derivative_kernel_factors,
    derivative_kernels_at_origin,
    hermite_osc,
    landau_level_kernel,
    landau_projector,
    phase_phi,
    projector_1d,
    propagator_1d,
    propagator_u,
)

P = PilotParams(1.3, 0.7, 0.4, 0.3, 0.2)


def modulus(t, p):
    return (4 * math.pi * p.h) ** -1.5 * p.mu**1.5 / math.sqrt(abs(t)) / abs(math.sin(t))


# --- parameters --------------------------------------------------------------

def test_params_validation():
    with pytest.raises(DomainError):
        PilotParams(0.0, 1.0)
    with pytest.raises(DomainError):
        PilotParams(1.0, 1.0, a_slope=-0.1)
    with pytest.raises(DomainError):
        PilotParams(1.0, math.nan)


# --- propagator ---------------------------------------------------------------

@pytest.mark.parametrize("t", [0.0, math.pi, -2 * math.pi])
def test_singular_times(t):
    with pytest.raises(SingularTimeError):
        propagator_u([0, 0, 0], [0, 0, 0], t, P)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-2, 2), min_size=6, max_size=6),
    st.floats(0.05, 3.0).filter(lambda t: abs(math.sin(t)) > 1e-3),
    st.sampled_from([1.0, -1.0]),
)
def test_phase_purity(c, t, sign):
    u = propagator_u(c[:3], c[3:], sign * t, P)
    assert abs(u) == pytest.approx(modulus(t, P), rel=1e-10)


@pytest.mark.parametrize("k", [1, 2])
def test_landau_tick_blowup(k):
    p = PilotParams(1.0, 0.1, 0.2, 0.1)
    for d in (1e-7, -1e-7):
        assert abs(propagator_u([0.1, 0, 0], [0, 0.2, 0], k * math.pi + d, p)) > 1e6


def test_schrodinger_equation():
    # -i h d/dt_phys U = H_x U with t = mu t_phys
    x = np.array([0.3, -0.2, 0.5])
    y = np.array([-0.1, 0.4, 0.2])
    t, eps = 0.8, 1e-4
    mu, h, a, b = P.mu, P.h, P.a_slope, P.b_slope

    def f(xx, tt=t):
        return propagator_u(xx, y, tt, P)

    def d(i, order):
        e = np.zeros(3)
        e[i] = eps
        if order == 1:
            return (f(x + e) - f(x - e)) / (2 * eps)
        return (f(x + e) - 2 * f(x) + f(x - e)) / eps**2

    lhs = -1j * h * mu * (f(x, t + eps) - f(x, t - eps)) / (2 * eps)
    mag = -h * h * d(1, 2) + 2j * h * mu * x[0] * d(1, 1) + mu**2 * x[0] ** 2 * f(x)
    rhs = -h * h * (d(0, 2) + d(2, 2)) + mag - 2 * (a * x[0] + b * x[2]) * f(x)
    assert abs(lhs - rhs) < 1e-6 * abs(lhs)


def test_diagonal_phase_is_phi():
    p0 = PilotParams(P.mu, P.h, 0.0, 0.0)
    for t in (0.4, 1.9, -0.7):
        ratio = propagator_u([0, 0, 0], [0, 0, 0], t, P) / propagator_u([0, 0, 0], [0, 0, 0], t, p0)
        assert ratio == pytest.approx(np.exp(1j * phase_phi(t, P) / P.hbar), rel=1e-12)


def test_diagonal_value_without_slopes():
    p = PilotParams(2.0, 0.3)
    t = 0.6
    expect = 1j * np.exp(1j * math.pi / 4) * modulus(t, p)
    assert propagator_u([0, 0, 0], [0, 0, 0], t, p) == pytest.approx(expect, rel=1e-12)


def test_short_time_matches_free_propagator():
    p = PilotParams(1.0, 0.5, 0.6, 0.4)
    t = 1e-3
    tp = -t / p.mu  # exp(+i t H / h) is the forward kernel at negative time
    x = np.array([0.004, 0.0, -0.003])
    y = np.array([-0.002, 0.0, 0.001])
    h, a, b = p.h, p.a_slope, p.b_slope
    S = (np.sum((x - y) ** 2) / (4 * tp) + tp * (a * (x[0] + y[0]) + b * (x[2] + y[2]))
         - (a * a + b * b) * tp**3 / 3)
    free = np.exp(1j * S / h) / np.sqrt(4j * math.pi * h * tp + 0j) ** 3
    assert abs(propagator_u(x, y, t, p) / free - 1) < 1e-2


def test_group_property_field_direction():
    p = PilotParams(1.0, 0.5, 0.0, 0.7)
    x, y, t, s = 0.3, -0.2, 0.3, 0.4
    rot = np.exp(-0.25j * math.pi)  # steepest-descent direction for both factors
    z0 = 0.5 * (x + y)

    def g(u, part):
        z = z0 + rot * u
        return part(propagator_1d(x, z, t, p) * propagator_1d(z, y, s, p) * rot)

    def prop(xx, zz, tt):
        return propagator_1d(xx, zz, tt, p)

    # propagator_1d is entire in its arguments, so the contour may be rotated
    re = integrate.quad(g, -np.inf, np.inf, args=(np.real,), epsabs=1e-13)[0]
    im = integrate.quad(g, -np.inf, np.inf, args=(np.imag,), epsabs=1e-13)[0]
    expect = prop(x, y, t + s)
    assert abs(re + 1j * im - expect) < 1e-3 * abs(expect)


def test_propagator_1d_is_field_factor():
    p0 = PilotParams(P.mu, P.h, 0.0, P.b_slope)
    x, y, t = [0, 0, 0.3], [0, 0, -0.1], 0.7
    full = propagator_u(x, y, t, p0)
    plane = propagator_u([0, 0, 0], [0, 0, 0], t, PilotParams(P.mu, P.h))
    plane /= propagator_1d(0, 0, t, PilotParams(P.mu, P.h))
    assert full == pytest.approx(plane * propagator_1d(0.3, -0.1, t, p0), rel=1e-12)


# --- phase and derivative factors --------------------------------------------

def test_phase_phi_value():
    assert phase_phi(math.pi / 2, PilotParams(1.0, 1.0, 1.0, 0.0)) == pytest.approx(math.pi / 2)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 3.1).filter(lambda t: abs(math.sin(t)) > 1e-3))
def test_phase_phi_odd(t):
    assert phase_phi(-t, P) == pytest.approx(-phase_phi(t, P), rel=1e-12)


def test_factor_small_time():
    t = 1e-3
    f2 = derivative_kernel_factors(t, P)[1]
    assert (f2 / (1j * P.a_slope / P.mu)).real == pytest.approx(t * t / 3, rel=1e-4)


def test_factors_match_propagator_derivatives():
    t, eps = 0.9, 1e-6
    u0 = propagator_u([0, 0, 0], [0, 0, 0], t, P)
    f = derivative_kernel_factors(t, P)
    for j in range(3):
        e = np.zeros(3)
        e[j] = eps / P.mu  # step in the rescaled coordinate
        du = (propagator_u(e, [0, 0, 0], t, P) - propagator_u(-e, [0, 0, 0], t, P)) / (2 * eps)
        hbar_d = -1j * P.hbar * du
        assert hbar_d == pytest.approx(1j * f[j] * u0, rel=1e-6, abs=1e-10 * abs(u0))


# --- Hermite functions --------------------------------------------------------

def test_hermite_ground_state():
    assert hermite_osc(0, 0.0) == pytest.approx(math.pi**-0.25, rel=1e-15)


@pytest.mark.parametrize("m", [0, 1, 5, 12])
def test_hermite_closed_form(m):
    eta = np.linspace(-4, 4, 17)
    norm = 1 / math.sqrt(2.0**m * math.factorial(m) * math.sqrt(math.pi))
    expect = norm * eval_hermite(m, eta) * np.exp(-eta * eta / 2)
    assert np.allclose(hermite_osc(m, eta), expect, rtol=1e-10, atol=1e-14)


def test_hermite_orthonormal():
    eta = np.linspace(-30, 30, 24001)
    U = np.array([hermite_osc(m, eta) for m in range(0, 60, 7)])
    G = U @ U.T * (eta[1] - eta[0])
    assert np.abs(G - np.eye(len(U))).max() < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 200), st.floats(-20, 20))
def test_hermite_parity(m, eta):
    assert hermite_osc(m, -eta) == pytest.approx((-1) ** m * hermite_osc(m, eta), rel=1e-9, abs=1e-300)


def test_hermite_range():
    with pytest.raises(DomainError):
        hermite_osc(201, 0.0)
    with pytest.raises(DomainError):
        hermite_osc(-1, 0.0)


# --- one-dimensional projector -----------------------------------------------

def test_projector_1d_free():
    p = PilotParams(1.0, 1.0)
    assert projector_1d(0.0, 0.0, 1.0, p) == pytest.approx(1 / math.pi, rel=1e-14)
    assert projector_1d(0.3, 0.1, 1.0, p) == pytest.approx(math.sin(0.2) / (0.2 * math.pi), rel=1e-12)
    assert projector_1d(0.3, 0.1, -1.0, p) == 0.0


def test_projector_1d_airy_continuum_integral():
    # diagonal as an energy integral of normalised Airy eigenfunctions
    from scipy.special import airy
    p = PilotParams(1.0, 1.0, 0.0, 0.5)
    b = 0.5
    ell = (2 * b) ** (1 / 3)
    f = lambda E: ell**2 / (2 * b) * airy(-ell * (0.4 + E / (2 * b)))[0] ** 2
    val = integrate.quad(f, -200, 1.0, limit=2000)[0]
    assert projector_1d(0.4, 0.4, 1.0, p) == pytest.approx(val, rel=1e-8)


def test_projector_1d_airy_dense_diagonalisation():
    # Dirichlet box [-40, R]; the right wall reflects, so average over R
    p = PilotParams(1.0, 1.0, 0.0, 0.5)
    a, b, tau = 0.02, 0.5, 3.0
    pts = [(0.0, 0.0), (0.5, -0.3), (2.0, 2.7)]
    acc = np.zeros(len(pts))
    Rs = np.linspace(40, 46, 13)
    for R in Rs:
        X = np.arange(-40 + a, R, a)
        d = 2 / a**2 - 2 * b * X
        w, v = eigh_tridiagonal(d, -np.ones(X.size - 1) / a**2, select="v", select_range=(-1e9, tau))
        for k, (x, y) in enumerate(pts):
            i, j = np.argmin(abs(X - x)), np.argmin(abs(X - y))
            acc[k] += (v[i] * v[j]).sum() / a
            pts[k] = (X[i], X[j])
    for k, (x, y) in enumerate(pts):
        assert acc[k] / len(Rs) == pytest.approx(projector_1d(x, y, tau, p), rel=2e-2)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 4), st.floats(0.0, 1.0))
def test_projector_1d_symmetric(x, y, tau, b):
    p = PilotParams(1.0, 0.8, 0.0, b)
    assert projector_1d(x, y, tau, p) == pytest.approx(projector_1d(y, x, tau, p), rel=1e-9, abs=1e-14)


def test_projector_1d_weak_slope_limit():
    p0 = PilotParams(1.0, 1.0)
    p1 = PilotParams(1.0, 1.0, 0.0, 1e-6)
    assert projector_1d(0.2, -0.1, 2.0, p1) == pytest.approx(projector_1d(0.2, -0.1, 2.0, p0), rel=1e-4)


@pytest.mark.parametrize("b", [5e-324, 1e-200, 1e-12, 2e-8])
def test_projector_1d_tiny_slope_finite(b):
    p0 = PilotParams(1.0, 0.8)
    p1 = PilotParams(1.0, 0.8, 0.0, b)
    for x, y, tau in ((0.3, -0.2, 1.0), (0.0, 0.0, 1.0), (0.1, 0.4, -1.0)):
        assert projector_1d(x, y, tau, p1) == pytest.approx(projector_1d(x, y, tau, p0), rel=1e-6, abs=1e-12)


# --- Landau projector ---------------------------------------------------------

def test_landau_projector_free_levels():
    for tau in (1.0, 3.0, 5.5):
        p = PilotParams(1.0, 1.0, tau=tau)
        levels = sum(math.sqrt(max(tau - 2 * m, 0)) / math.pi for m in range(10))
        assert landau_projector([0, 0, 0], [0, 0, 0], p).real == pytest.approx(levels / (2 * math.pi), rel=1e-12)


def test_landau_projector_zero_below_spectrum():
    assert landau_projector([0, 0, 0], [0.3, 0.1, 0.2], PilotParams(1.0, 1.0, tau=-0.5)) == 0


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_landau_projector_hermitian(c):
    p = PilotParams(2.0, 0.5, 0.3, 0.2, 1.0)
    e1 = landau_projector(c[:3], c[3:], p)
    e2 = landau_projector(c[3:], c[:3], p)
    assert abs(e1 - np.conj(e2)) <= 1e-9 * max(abs(e1), 1e-12)


def test_landau_projector_monotone_in_tau():
    vals = [landau_projector([0, 0, 0], [0, 0, 0], PilotParams(2.0, 0.5, 0.3, 0.2, t)).real
            for t in np.linspace(-1, 3, 9)]
    assert np.all(np.diff(vals) >= 0)


@pytest.mark.parametrize("m", [0, 1])
def test_landau_level_idempotent(m):
    p = PilotParams(1.0, 1.0)
    step = 0.5
    g = np.arange(-4.5, 4.51, step)
    pts = np.array([(u, v) for u in g for v in g])
    n = len(pts)
    K = np.empty((n, n), complex)
    for i in range(n):
        for j in range(i, n):
            K[i, j] = landau_level_kernel(pts[i], pts[j], m, p)
            K[j, i] = np.conj(K[i, j])
    K2 = K @ K * step**2
    inner = np.where((np.abs(pts) <= 1.5).all(axis=1))[0]
    A, B = K[np.ix_(inner, inner)], K2[np.ix_(inner, inner)]
    assert np.linalg.norm(B - A) / np.linalg.norm(A) < 0.05


# --- derivative kernels ---------------------------------------------------------

def test_derivative_kernels_vanish_without_slopes():
    assert derivative_kernels_at_origin(PilotParams(10.0, 0.3, tau=0.5)) == (0j, 0j, 0j)


@pytest.mark.parametrize("a,b", [(0.3, 0.2), (0.0, 0.5), (0.7, 0.9)])
def test_derivative_kernels_finite_differences(a, b):
    # second route: differentiate the full off-diagonal kernel
    p = PilotParams(2.0, 0.5, a, b, 1.0)
    eps = 1e-4
    got = derivative_kernels_at_origin(p)
    diff = []
    for j in range(3):
        e = np.zeros(3)
        e[j] = eps
        diff.append(-1j * p.h * (landau_projector(e, [0, 0, 0], p) - landau_projector(-e, [0, 0, 0], p)) / (2 * eps))
    # (h D_2 - mu x_1) at the origin is h D_2
    for g, d in zip(got, (diff[1], diff[0], diff[2])):
        assert g == pytest.approx(d, rel=1e-5, abs=1e-9)


def test_bound_constants_frozen():
    cal = calibrate_bound_constants()
    for k, c in BOUND_C.items():
        assert cal[k] <= c <= 1.01 * cal[k]


@pytest.mark.parametrize("which", ["D2", "D1", "D3"])
def test_bounds_hold_on_sweep(which):
    rows = bound_ratios(which)
    assert len(rows) == 27
    assert all(r["holds"] for r in rows)
