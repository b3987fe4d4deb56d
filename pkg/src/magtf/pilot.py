"""Exact spectral kernels of the pilot operator

    H = h^2 D_1^2 + (h D_2 - mu x_1)^2 + h^2 D_3^2 - 2 a x_1 - 2 b x_3

(uniform field ``mu``, linear scalar potential with slopes ``a = a_slope``,
``b = b_slope``; ``D = -i d``).

Conventions
-----------
* Times ``t`` are rescaled, ``t = mu * t_phys``, so Landau ticks sit at
  ``t in pi Z``. ``propagator_u`` is the Schwartz kernel (density in the
  physical ``x``) of ``exp(+i h^-1 t_phys H)``; with this sign the on-diagonal
  phase is ``+phase_phi(t) / (mu h)``.
* Spectral projectors refer to ``H - mu h`` (lowest Landau level at 0) and
  the half-line ``(-inf, tau)``.
* ``projector_1d`` works in the rescaled coordinate ``X_3 = mu x_3`` for the
  operator ``(mu h)^2 D^2 - 2 (b / mu) X_3``; its density in ``x_3`` is
  ``mu`` times that.

With ``s = (mu/h)^{1/2}`` the Landau representation is

    e(x, y, tau) = mu/(2 pi h) exp(i [mu (x1+y1)/2 - a/mu] (x2-y2) / h)
        sum_m int u_m(eta + s d1/2) u_m(eta - s d1/2) exp(-i s (x2-y2) eta)
              e_3(x3, y3, tau - 2 m mu h + a (x1+y1) - 2 a eta / s - a^2/mu^2) d eta

with ``d1 = x1 - y1``, ``u_m`` the normalised Hermite functions and ``e_3``
the projector of ``h^2 D_3^2 - 2 b x_3`` (Airy kernel, or the free sine
kernel for ``b = 0``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np
from scipy.special import airy, roots_hermite

from .errors import ConvergenceError, DomainError, SingularTimeError

_SING = 1e-12
_M_STABLE = 200


@dataclass(frozen=True)
class PilotParams:
    mu: float
    h: float
    a_slope: float = 0.0
    b_slope: float = 0.0
    tau: float = 0.0

    def __post_init__(self):
        for name in ("mu", "h", "a_slope", "b_slope", "tau"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")
        if self.mu <= 0 or self.h <= 0:
            raise DomainError("mu and h must be positive")
        if self.a_slope < 0 or self.b_slope < 0:
            raise DomainError("slopes must be >= 0")

    @property
    def hbar(self) -> float:
        return self.mu * self.h


def _check_t(t: float):
    if abs(t) < _SING or abs(math.sin(t)) < _SING:
        raise SingularTimeError(f"kernel is singular at t = {t!r}")


# --- propagator -------------------------------------------------------------

def _forward_kernel(X, Y, T, p: PilotParams) -> complex:
    """exp(-i hbar^-1 T H) in rescaled coordinates, as a density in physical x."""
    a = p.a_slope / p.mu
    b = p.b_slope / p.mu
    hb = p.hbar
    cot = math.cos(T) / math.sin(T)
    d2 = X[1] - Y[1] + 2 * a * T
    S = (
        0.25 * cot * ((X[0] - Y[0]) ** 2 + d2**2)
        + 0.5 * (X[0] + Y[0]) * d2
        - a * (X[1] - Y[1])
        - a * a * T
        + (X[2] - Y[2]) ** 2 / (4 * T)
        + b * T * (X[2] + Y[2])
        - b * b * T**3 / 3
    )
    pref = 1.0 / (4j * math.pi * hb * math.sin(T)) / np.sqrt(4j * math.pi * hb * T + 0j)
    return complex(p.mu**3 * pref * np.exp(1j * S / hb))


def propagator_u(x, y, t: float, p: PilotParams) -> complex:
    """Kernel ``U(x, y, t)`` of ``exp(i h^-1 (t/mu) H)``.

    ``|U| = (4 pi h)^{-3/2} mu^{3/2} |t|^{-1/2} |csc t|`` for every ``x, y``.
    """
    _check_t(t)
    X = p.mu * np.asarray(x, dtype=float)
    Y = p.mu * np.asarray(y, dtype=float)
    return _forward_kernel(X, Y, -t, p)


def propagator_1d(x3: float, y3: float, t: float, p: PilotParams) -> complex:
    """Factor of ``U`` carrying ``x_3`` (free motion in the field direction)."""
    if abs(t) < _SING:
        raise SingularTimeError("kernel is singular at t = 0")
    b = p.b_slope / p.mu
    hb = p.hbar
    X, Y, T = p.mu * x3, p.mu * y3, -t
    S = (X - Y) ** 2 / (4 * T) + b * T * (X + Y) - b * b * T**3 / 3
    return complex(p.mu * np.exp(1j * S / hb) / np.sqrt(4j * math.pi * hb * T + 0j))


def phase_phi(t: float, p: PilotParams) -> float:
    """``a^2 mu^-2 t - a^2 mu^-2 t^2 cot t + mu^-2 b^2 t^3 / 3``."""
    _check_t(t)
    a2 = (p.a_slope / p.mu) ** 2
    b2 = (p.b_slope / p.mu) ** 2
    return a2 * t - a2 * t * t * math.cos(t) / math.sin(t) + b2 * t**3 / 3


def _one_minus_tcot(t: float) -> float:
    if abs(t) < 1e-2:
        t2 = t * t
        return t2 / 3 + t2 * t2 / 45 + 2 * t2**3 / 945
    return 1.0 - t * math.cos(t) / math.sin(t)


def derivative_kernel_factors(t: float, p: PilotParams):
    """``(i a t/mu, i a (1 - t cot t)/mu, i b t/mu)``.

    Applying ``hbar D_{X_j}`` to ``propagator_u`` at ``x = y = 0`` multiplies
    it by ``i`` times the j-th factor.
    """
    _check_t(t)
    a = p.a_slope / p.mu
    b = p.b_slope / p.mu
    return (1j * a * t, 1j * a * _one_minus_tcot(t), 1j * b * t)


# --- Hermite functions -------------------------------------------------------

def _hermite_scaled(m: int, eta: np.ndarray):
    """``u_k(eta) exp(eta^2/2)`` for k = 0..m+1 (rows)."""
    out = np.empty((m + 2,) + eta.shape)
    out[0] = math.pi**-0.25
    out[1] = math.sqrt(2.0) * eta * out[0]
    for k in range(1, m + 1):
        out[k + 1] = math.sqrt(2.0 / (k + 1)) * eta * out[k] - math.sqrt(k / (k + 1)) * out[k - 1]
    return out


def hermite_osc(m: int, eta) -> np.ndarray | float:
    """Normalised oscillator eigenfunction ``u_m`` by the three-term recurrence."""
    if m < 0 or int(m) != m:
        raise DomainError("m must be a non-negative integer")
    if m > _M_STABLE:
        raise DomainError(f"m > {_M_STABLE} is outside the stable recurrence range")
    e = np.asarray(eta, dtype=float)
    val = _hermite_scaled(int(m), e)[int(m)] * np.exp(-0.5 * e * e)
    return float(val) if val.ndim == 0 else val


def _hermite_pair(m: int, eta: np.ndarray):
    """Scaled ``u_m`` and ``u_m'``."""
    g = _hermite_scaled(m, eta)
    gm1 = g[m - 1] if m > 0 else 0.0
    d = math.sqrt(m / 2) * gm1 - math.sqrt((m + 1) / 2) * g[m + 1]
    return g[m], d


# --- one-dimensional projector ----------------------------------------------

_AIRY_FAR = -1e6
# beyond this the Airy phase loses double precision; the local plane wave is exact to ~|z|^-3/2
_AIRY_LOCAL = 1e5


def _airy(z):
    """``Ai`` and ``Ai'``; leading oscillatory asymptotics where scipy gives up."""
    z = np.asarray(z, dtype=float)
    ai, aip, _, _ = airy(np.minimum(z, 200.0))  # Ai(200) already underflows
    far = z < _AIRY_FAR
    if np.any(far):
        x = -z[far] if z.ndim else -z
        ph = 2.0 / 3.0 * x**1.5 + math.pi / 4
        a = np.sin(ph) / (math.sqrt(math.pi) * x**0.25)
        ap = -np.cos(ph) * x**0.25 / math.sqrt(math.pi)
        if z.ndim:
            ai, aip = np.array(ai), np.array(aip)
            ai[far], aip[far] = a, ap
        else:
            ai, aip = a, ap
    return ai, aip


def _airy_diag(z):
    ai, aip = _airy(z)
    return aip * aip - z * ai * ai, ai


def projector_1d(x3: float, y3: float, tau: float, p: PilotParams) -> float:
    """Projector of ``(mu h)^2 D^2 - 2 (b/mu) X`` below ``tau`` (rescaled ``X``)."""
    hb = p.hbar
    if p.b_slope == 0:
        k = math.sqrt(max(tau, 0.0)) / hb
        d = x3 - y3
        if abs(d) * max(k, 1.0) < 1e-8:
            return k / math.pi
        return math.sin(k * d) / (math.pi * d)
    b = p.b_slope / p.mu
    ell = (2 * b / hb**2) ** (1.0 / 3.0)
    u = -ell * (x3 + tau / (2 * b))
    v = -ell * (y3 + tau / (2 * b))
    if min(u, v) > _AIRY_LOCAL:
        return 0.0
    if max(u, v) < -_AIRY_LOCAL:
        # weak slope: free kernel at the local energy tau + 2 b X
        k = math.sqrt(tau + b * (x3 + y3)) / hb
        d = x3 - y3
        if abs(d) * max(k, 1.0) < 1e-8:
            return k / math.pi
        return math.sin(k * d) / (math.pi * d)
    if abs(u - v) < 1e-5:
        return float(ell * _airy_diag(0.5 * (u + v))[0])
    au, aup = _airy(u)
    av, avp = _airy(v)
    return float(ell * (au * avp - aup * av) / (u - v))


def _e3_diag(lam: np.ndarray, p: PilotParams):
    """``e_3(0, 0, lam)`` in physical ``x_3`` and ``d/dx3 e_3(x3, x3, lam)`` at 0."""
    hb = p.hbar
    if p.b_slope == 0:
        return np.sqrt(np.maximum(lam, 0.0)) / (math.pi * p.h), np.zeros_like(lam)
    b = p.b_slope / p.mu
    ell = (2 * b / hb**2) ** (1.0 / 3.0)
    z = -ell * lam / (2 * b)
    d, ai = _airy_diag(z)
    return p.mu * ell * d, p.mu**2 * ell**2 * ai * ai


def _e3_offdiag(x3, y3, lam: np.ndarray, p: PilotParams) -> np.ndarray:
    f = np.vectorize(lambda L: projector_1d(p.mu * x3, p.mu * y3, L, p))
    return p.mu * f(lam)


# --- Landau sums -------------------------------------------------------------

_ETA_TAIL = 9.0


@lru_cache(maxsize=64)
def _nodes(n: int):
    return roots_hermite(n)


def _level_window(p: PilotParams, shift: float):
    """Levels whose spectral argument reaches the support of ``e_3``."""
    a = p.a_slope
    hb = p.hbar
    slope = 2 * a * math.sqrt(p.h / p.mu)
    if p.b_slope > 0:
        b = p.b_slope / p.mu
        ell = (2 * b / hb**2) ** (1.0 / 3.0)
        floor = -30.0 * 2 * b / ell  # Airy tail below exp(-200)
    else:
        floor = 0.0
    levels = []
    for m in range(_M_STABLE + 1):
        top = p.tau + shift - 2 * m * hb + slope * (math.sqrt(2 * m + 1) + _ETA_TAIL)
        if top <= floor:
            break
        levels.append(m)
    else:
        raise ConvergenceError("Landau sum needs more than 200 levels", residual=math.nan)
    return levels


def _eta_integral(fun, m: int, kinks=(), rtol=1e-9):
    """``int u_m^2-weighted fun(eta) d eta`` by Gauss-Hermite, adaptive fallback.

    ``fun(eta)`` must include the scaled Hermite factors; the Gaussian weight
    ``exp(-eta^2)`` is supplied by the rule.
    """
    n = 4 * m + 40
    vals = []
    for k in range(4):
        x, w = _nodes(n * 2**k)
        f = fun(x)
        if not np.all(np.isfinite(f)):
            raise ConvergenceError("non-finite integrand in eta quadrature")
        vals.append(np.sum(w * f))
        scale = np.sum(w * np.abs(f))
        if k and abs(vals[-1] - vals[-2]) <= rtol * scale + 1e-300:
            return vals[-1]
    # square-root onsets of e_3 spoil Gauss-Hermite; split at the onsets and
    # substitute eta = k +- (edge - k) v^2, which makes the integrand smooth
    lim = math.sqrt(2 * m + 1) + _ETA_TAIL
    cuts = [-lim] + sorted(k for k in kinks if -lim < k < lim) + [lim]
    prev = None
    for n_gl in (64, 128, 256, 512, 1024, 2048, 4096, 8192):
        v, wv = np.polynomial.legendre.leggauss(n_gl)
        v, wv = 0.5 * (v + 1), 0.5 * wv
        total = 0j
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            # cluster nodes at both ends of each piece
            mid = 0.5 * (lo + hi)
            for k, edge in ((lo, mid), (hi, mid)):
                eta = k + (edge - k) * v * v
                jac = 2 * abs(edge - k) * v
                total += np.sum(wv * jac * fun(eta) * np.exp(-eta * eta))
        if prev is not None and abs(total - prev) <= 1e-8 * scale + 1e-300:
            return total
        prev = total
    raise ConvergenceError(
        "eta quadrature did not converge", residual=float(abs(total - prev)),
        diagnostics={"gauss_hermite": [complex(x) for x in vals], "split_rule": complex(total)},
    )


def _kinks(p: PilotParams, m: int, shift: float):
    if p.a_slope == 0:
        return ()
    base = p.tau + shift - 2 * m * p.hbar - (p.a_slope / p.mu) ** 2
    return (base / (2 * p.a_slope * math.sqrt(p.h / p.mu)),)


def landau_projector(x, y, p: PilotParams, m_max: int | None = None) -> complex:
    """Spectral projector kernel ``e(x, y, tau)`` of ``H - mu h``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    mu, h, a = p.mu, p.h, p.a_slope
    s = math.sqrt(mu / h)
    d1, d2 = x[0] - y[0], x[1] - y[1]
    shift = a * (x[0] + y[0])
    levels = _level_window(p, shift) if m_max is None else range(m_max + 1)
    diag3 = x[2] == y[2] and x[2] == 0.0
    total = 0j
    for m in levels:
        def fun(eta, m=m):
            lam = (p.tau - 2 * m * p.hbar + shift - 2 * a * eta / s - (a / mu) ** 2)
            g1 = _hermite_scaled(m, eta + 0.5 * s * d1)[m]
            g2 = _hermite_scaled(m, eta - 0.5 * s * d1)[m]
            e3 = _e3_diag(lam, p)[0] if diag3 else _e3_offdiag(x[2], y[2], lam, p)
            return g1 * g2 * np.exp(-1j * s * d2 * eta) * e3
        total += _eta_integral(fun, m, _kinks(p, m, shift)) * math.exp(-0.25 * (s * d1) ** 2)
    gauge = np.exp(1j * (mu * (x[0] + y[0]) / 2 - a / mu) * d2 / h)
    return complex(mu / (2 * math.pi * h) * gauge * total)


def landau_level_kernel(x, y, m: int, p: PilotParams) -> complex:
    """Kernel of the m-th Landau level projector in the plane (``a_slope = 0``)."""
    if p.a_slope != 0:
        raise DomainError("single-level kernels need a_slope = 0")
    mu, h = p.mu, p.h
    s = math.sqrt(mu / h)
    d1, d2 = x[0] - y[0], x[1] - y[1]

    def fun(eta):
        g1 = _hermite_scaled(m, eta + 0.5 * s * d1)[m]
        g2 = _hermite_scaled(m, eta - 0.5 * s * d1)[m]
        return g1 * g2 * np.exp(-1j * s * d2 * eta)

    val = _eta_integral(fun, m) * math.exp(-0.25 * (s * d1) ** 2)
    gauge = np.exp(1j * mu * (x[0] + y[0]) / 2 * d2 / h)
    return complex(mu / (2 * math.pi * h) * gauge * val)


def derivative_kernels_at_origin(p: PilotParams):
    """``((h D_2 - mu x_1) e, h D_1 e, h D_3 e)`` at ``x = y = 0``.

    For ``a_slope > 0`` the ``x_1``- and ``x_3``-derivatives of the spectral
    argument are traded for ``eta``-derivatives by parts, so both reduce to
    ``int u_m u_m' e_3 d eta``; in particular ``h D_3 e = (b / a) h D_1 e``.
    """
    mu, h, a, b = p.mu, p.h, p.a_slope, p.b_slope
    s = math.sqrt(mu / h)
    pref = mu / (2 * math.pi * h)
    v1 = i2 = v3 = 0j
    for m in _level_window(p, 0.0):
        if a == 0:
            # the spectral argument does not depend on eta and int u_m^2 = 1
            lam = np.array([p.tau - 2 * m * p.hbar])
            v3 += _e3_diag(lam, p)[1][0]
            continue

        def lam_of(eta, m=m):
            return p.tau - 2 * m * p.hbar - 2 * a * eta / s - (a / mu) ** 2

        def f1(eta, m=m):
            g, _ = _hermite_pair(m, eta)
            return g * g * (-a / mu - math.sqrt(mu * h) * eta) * _e3_diag(lam_of(eta), p)[0]

        def f2(eta, m=m):
            g, dg = _hermite_pair(m, eta)
            return g * dg * _e3_diag(lam_of(eta), p)[0]

        kinks = _kinks(p, m, 0.0)
        v1 += _eta_integral(f1, m, kinks)
        i2 += _eta_integral(f2, m, kinks)
    d1 = -1j * h * s * pref * i2
    if a > 0:
        d3 = -1j * h * (b * s / a) * pref * i2
    else:
        d3 = -0.5j * h * pref * v3
    return (pref * v1, d1, d3)


# --- bound sweeps ------------------------------------------------------------

def bound_value(which: str, p: PilotParams) -> float:
    """Right-hand sides (without C) of the three derivative-kernel estimates."""
    if which == "D2":
        return p.mu**1.5 / p.h * math.sqrt(p.a_slope)
    if which == "D1":
        return p.mu**1.5 / p.h * math.sqrt(p.a_slope)
    if which == "D3":
        return p.mu * p.h**-1.5 * math.sqrt(p.b_slope)
    raise DomainError(f"unknown bound {which!r}")


_INDEX = {"D2": 0, "D1": 1, "D3": 2}
# fixed one-decade sweep inside mu h >= 1, slopes <= 1, |tau| <= 1
_MUS = (10.0, 10.0**1.5, 100.0)
_HS = (0.1, 10.0**-0.5, 1.0)
_SLOPES = (0.1, 10.0**-0.5, 1.0)
_OTHER_SLOPE = 0.5
_TAU = 0.5


def bound_sweep_params(which: str) -> list[PilotParams]:
    out = []
    for mu, h, s in product(_MUS, _HS, _SLOPES):
        if which == "D3":
            out.append(PilotParams(mu, h, _OTHER_SLOPE, s, _TAU))
        else:
            out.append(PilotParams(mu, h, s, _OTHER_SLOPE, _TAU))
    return out


def bound_ratios(which: str, params=None) -> list[dict]:
    """Rows ``{mu, h, a_slope, b_slope, tau, value, bound, ratio, C, holds}``."""
    rows = []
    for p in params if params is not None else bound_sweep_params(which):
        val = abs(derivative_kernels_at_origin(p)[_INDEX[which]])
        bnd = bound_value(which, p)
        c = BOUND_C[which]
        rows.append(dict(mu=p.mu, h=p.h, a_slope=p.a_slope, b_slope=p.b_slope, tau=p.tau,
                         value=val, bound=bnd, ratio=val / bnd, C=c, holds=val <= c * bnd))
    return rows


def calibrate_bound_constants() -> dict:
    """Twice the largest value/bound ratio over the frozen sweep, per estimate."""
    return {w: 2 * max(r["ratio"] for r in bound_ratios(w)) for w in _INDEX}


# Frozen output of calibrate_bound_constants().
BOUND_C = {"D2": 0.0265, "D1": 0.0329, "D3": 0.0537}
