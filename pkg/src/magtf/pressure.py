"""Magnetic semiclassical pressure with Landau-level sums.

    P_b(v) = kappa0 * sum_j w_j (v - 2 j b)_+^{3/2} * b,   w_0 = 1/2, w_j = 1 (j >= 1)

where ``b`` is the field-times-Planck product. Writing ``x = v / (2b)`` every
quantity reduces to the half-weighted sums

    S_p(x) = 1/2 x^p + sum_{1 <= j < x} (x - j)^p

which are summed directly for a few dozen terms and by Euler-Maclaurin
acceleration beyond that (near a Coulomb centre ``x`` can reach 1e12).
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import DomainError

KAPPA0 = 2.0 / (3.0 * np.pi**2)

# Below this many Landau levels the sum is evaluated term by term.
_N_DIRECT = 48
# Leading terms kept explicitly before the Euler-Maclaurin tail starts.
_K_EM = 16
# B_2, B_4, ..., B_12 divided by (2i)!
_EM_COEF = (
    1.0 / 6.0 / 2.0,
    -1.0 / 30.0 / 24.0,
    1.0 / 42.0 / 720.0,
    -1.0 / 30.0 / 40320.0,
    5.0 / 66.0 / 3628800.0,
    -691.0 / 2730.0 / 479001600.0,
)


@dataclass(frozen=True)
class PressureParams:
    """Field-times-Planck product ``bh`` and the normalisation ``kappa0``."""

    bh: float
    kappa0: float = KAPPA0

    def __post_init__(self):
        if not np.isfinite(self.bh):
            raise DomainError(f"bh must be finite, got {self.bh}")
        if self.bh < 0:
            raise DomainError(f"bh must be >= 0, got {self.bh}")
        if self.kappa0 != KAPPA0:
            raise DomainError("kappa0 is fixed module-wide")


def _as_params(p) -> PressureParams:
    if isinstance(p, PressureParams):
        return p
    return PressureParams(float(p))


def _check_v(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("energy value must be finite")
    return arr


def _falling(p: float, m: int) -> float:
    out = 1.0
    for i in range(m):
        out *= p - i
    return out


def landau_sum(x, p: float, floor: float = 0.0) -> np.ndarray:
    """Half-weighted sum ``S_p(x)`` for ``x >= 0``.

    Terms with ``x - j <= 0`` are dropped (right-limit convention at the
    thresholds). For negative ``p`` each positive base is clipped below at
    ``floor`` to keep the threshold singularities finite.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros_like(x)
    n = np.floor(x)
    pos = x > 0

    def g(base):
        if p < 0:
            return np.maximum(base, floor) ** p
        return base**p

    direct = pos & (n <= _N_DIRECT)
    if np.any(direct):
        xd = x[direct]
        acc = np.zeros_like(xd)
        for j in range(int(n[direct].max()) + 1):
            base = xd - j
            live = base > 0
            w = 0.5 if j == 0 else 1.0
            acc[live] += w * g(base[live])
        out[direct] = acc

    tail = pos & (n > _N_DIRECT)
    if np.any(tail):
        xt, nt = x[tail], n[tail]
        f = xt - nt
        acc = np.zeros_like(xt)
        for k in range(_K_EM):
            base = f + k
            live = base > 0
            acc[live] += g(base[live])
        a, b = f + _K_EM, xt
        if p == -1.0:
            acc += np.log(b / a)
        else:
            acc += (b ** (p + 1) - a ** (p + 1)) / (p + 1)
        acc += 0.5 * a**p
        for i, c in enumerate(_EM_COEF):
            m = 2 * i + 1
            fm = _falling(p, m)
            acc += c * fm * (b ** (p - m) - a ** (p - m))
        out[tail] = acc
    return out


# Beyond this many levels the fractional part of v/2b is lost to rounding and
# the smooth large-x expansion is used instead.
_X_ASYM = 2.0**50


def _split(vp: np.ndarray, b: float):
    with np.errstate(over="ignore"):
        x = vp / (2 * b)
    big = ~(x < _X_ASYM)
    return x, big


def _shape(arr: np.ndarray, like: np.ndarray):
    arr = arr.reshape(like.shape)
    return float(arr) if arr.ndim == 0 else arr


def magnetic_pressure(v, p) -> np.ndarray | float:
    """Pressure ``P_b(v)``; the ``b = 0`` case is ``(kappa0/5) v_+^{5/2}``."""
    p = _as_params(p)
    v = _check_v(v)
    vp = np.maximum(v, 0.0)
    b = p.bh
    if b == 0.0:
        res = p.kappa0 / 5.0 * vp**2.5
    else:
        x, big = _split(vp, b)
        res = np.empty_like(vp)
        res[~big] = p.kappa0 * b * (2 * b) ** 1.5 * landau_sum(x[~big], 1.5)
        res[big] = p.kappa0 * (vp[big] ** 2.5 / 5 + b * b * np.sqrt(vp[big]) / 4)
    return _shape(np.asarray(res, dtype=float), v)


def pressure_density(v, p) -> np.ndarray | float:
    """``dP/dv = kappa0 (3/2) b sum_j w_j (v - 2jb)_+^{1/2}``."""
    p = _as_params(p)
    v = _check_v(v)
    vp = np.maximum(v, 0.0)
    b = p.bh
    if b == 0.0:
        res = p.kappa0 / 2.0 * vp**1.5
    else:
        x, big = _split(vp, b)
        res = np.empty_like(vp)
        res[~big] = p.kappa0 * 1.5 * b * np.sqrt(2 * b) * landau_sum(x[~big], 0.5)
        res[big] = p.kappa0 * (vp[big] ** 1.5 / 2 + b * b / (8 * np.sqrt(vp[big])))
    return _shape(np.asarray(res, dtype=float), v)


def pressure_second_derivative(v, p, floor: float = 1e-12) -> np.ndarray | float:
    """``d^2P/dv^2`` with each threshold singularity clipped at ``floor`` (energy units)."""
    p = _as_params(p)
    v = _check_v(v)
    vp = np.maximum(v, 0.0)
    b = p.bh
    if b == 0.0:
        res = 0.75 * p.kappa0 * np.sqrt(vp)
    else:
        x, big = _split(vp, b)
        res = np.empty_like(vp)
        s = landau_sum(x[~big], -0.5, floor=floor / (2 * b))
        res[~big] = 0.75 * p.kappa0 * b / np.sqrt(2 * b) * s
        res[big] = 0.75 * p.kappa0 * np.sqrt(vp[big])
    return _shape(np.asarray(res, dtype=float), v)


def pressure_field_derivative(v, p) -> np.ndarray | float:
    """``dP/d(bh) = kappa0 sum_j w_j [(v-2jb)^{3/2} - 3jb (v-2jb)^{1/2}]``.

    Uses ``sum_j w_j j (x-j)^{1/2} = x S_{1/2} - S_{3/2}``.
    """
    p = _as_params(p)
    v = _check_v(v)
    vp = np.maximum(v, 0.0)
    b = p.bh
    if b == 0.0:
        res = np.zeros_like(vp)
    else:
        x, big = _split(vp, b)
        res = np.empty_like(vp)
        xs = x[~big]
        s32 = landau_sum(xs, 1.5)
        s12 = landau_sum(xs, 0.5)
        res[~big] = p.kappa0 * (2 * b) ** 1.5 * (2.5 * s32 - 1.5 * xs * s12)
        # oscillating part is unresolvable here; keep the smooth term
        res[big] = p.kappa0 * b * np.sqrt(vp[big]) / 2
    return _shape(np.asarray(res, dtype=float), v)


# Calibrated once with calibrate_expansion_constant() on expansion_sweep()
# (twice the largest lhs/rhs ratio), then frozen.
EXPANSION_C = 8.74


def expansion_sweep() -> list[tuple[float, float, float]]:
    """Fixed grid of (v, bh, Bh) tuples used to calibrate ``EXPANSION_C``."""
    vs = np.round(np.linspace(0.25, 3.0, 12), 6)
    bhs = (0.05, 0.1, 0.2, 0.5, 1.0, 2.0)
    ratios = (0.8, 0.9, 0.95, 1.05, 1.1, 1.2)
    return [(float(v), b, round(b * r, 12)) for v, b, r in product(vs, bhs, ratios)]


def _expansion_sides(v, bh, Bh, C):
    if bh < 0 or Bh < 0 or not (np.isfinite(bh) and np.isfinite(Bh)):
        raise DomainError("bh and Bh must be finite and >= 0")
    d = Bh - bh
    lhs = abs(
        magnetic_pressure(v, PressureParams(Bh))
        - magnetic_pressure(v, PressureParams(bh))
        - pressure_field_derivative(v, PressureParams(bh)) * d
    )
    rhs = C * d * d + C * abs(d) ** 1.5 * bh
    return float(lhs), float(rhs)


def expansion_error_check(v, bh: float, Bh: float, p=None, C: float | None = None):
    """Both sides of the two-term expansion estimate in the field strength.

    ``lhs = |P_Bh - P_bh - dP_bh (Bh - bh)|``,
    ``rhs = C (Bh-bh)^2 + C |Bh-bh|^{3/2} bh``.
    """
    if p is not None:
        _as_params(p)
    _check_v(v)
    return _expansion_sides(float(v), float(bh), float(Bh), EXPANSION_C if C is None else C)


def calibrate_expansion_constant() -> float:
    worst = 0.0
    for v, bh, Bh in expansion_sweep():
        lhs, rhs1 = _expansion_sides(v, bh, Bh, 1.0)
        if rhs1 > 0:
            worst = max(worst, lhs / rhs1)
    return 2.0 * worst


def invert_density(rho, p, rtol: float = 1e-15, max_iter: int = 200) -> np.ndarray:
    """Smallest ``w >= 0`` with ``pressure_density(w) = rho`` (vectorised).

    Safeguarded Newton inside a shrinking bracket; bisection whenever the
    Newton point leaves the bracket. ``rho <= 0`` maps to 0.
    """
    p = _as_params(p)
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    out = np.zeros_like(rho)
    pos = rho > 0
    if not np.any(pos):
        return out
    target = rho[pos]
    b = p.bh
    lo = np.zeros_like(target)
    hi = (2 * target / p.kappa0) ** (2.0 / 3.0) + 2 * b
    for _ in range(400):
        short = pressure_density(hi, p) < target
        if not np.any(short):
            break
        lo[short] = hi[short]
        hi[short] *= 2
    # start from the field-free inverse clipped into the bracket
    w = np.clip((2 * target / p.kappa0) ** (2.0 / 3.0), lo, hi)
    w = np.where((w > lo) & (w < hi), w, 0.5 * (lo + hi))
    for _ in range(max_iter):
        f = pressure_density(w, p) - target
        lo = np.where(f < 0, w, lo)
        hi = np.where(f >= 0, w, hi)
        slope = pressure_second_derivative(w, p, floor=1e-300)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = w - f / slope
        ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
        w_new = np.where(ok, newton, 0.5 * (lo + hi))
        done = np.abs(w_new - w) <= rtol * np.abs(w_new)
        w = w_new
        if np.all(done | (hi - lo <= rtol * hi)):
            break
    out[pos] = w
    return out
