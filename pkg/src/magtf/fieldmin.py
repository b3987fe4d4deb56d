"""Semiclassical self-generated field correction on a uniform box grid.

With ``F = d_beta P_{beta h}(V) psi`` the quadratic functional in the field
perturbation ``A'`` is

    E(A') = -h^-3 int P_{beta h}(V) psi
            - h^-3 int [d_2 F A'_1 - d_1 F A'_2]
            + (kappa h^2)^-1 int |dA'|^2

(main, cross, penalty). Its minimiser solves ``Delta A'_1 = s_1``,
``Delta A'_2 = s_2``, ``A'_3 = 0`` with ``s_1 = -kappa/(2h) d_2 F``,
``s_2 = +kappa/(2h) d_1 F``. For ``beta h > 1`` only the lowest Landau level
survives, ``d_beta P = kappa0 h V_+^{3/2} / 2``, and the sources become
``-/+ kappa0 kappa/4 d_{2,1}(V_+^{3/2} psi)``.

Discretisation: centred differences for ``d``, forward differences in the
penalty, so that the 7-point Laplacian is exactly the Euler-Lagrange operator.
The Poisson problem is solved on the infinite lattice (decay at infinity) by
FFT convolution with the lattice Green function of the 7-point Laplacian.
"""
from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy import fft
from scipy.special import erf, ive

from .errors import DomainError, GridMismatchError
from .pressure import KAPPA0, PressureParams, magnetic_pressure, pressure_field_derivative

_MAGIC = b"MTF3D\x00\x00\x01"


@dataclass(frozen=True, eq=False)
class Field3D:
    """Scalar (``values.shape == dims``) or 3-vector (``dims + (3,)``) samples."""

    origin: tuple
    spacing: tuple
    values: np.ndarray

    def __post_init__(self):
        origin = tuple(float(x) for x in self.origin)
        spacing = tuple(float(x) for x in self.spacing)
        values = np.array(self.values, dtype=float)
        if len(origin) != 3 or len(spacing) != 3:
            raise DomainError("origin and spacing must be 3-vectors")
        if not all(s > 0 and math.isfinite(s) for s in spacing):
            raise DomainError("spacing components must be positive")
        if values.ndim == 4 and values.shape[3] != 3:
            raise DomainError("vector fields carry exactly 3 components")
        if values.ndim not in (3, 4) or min(values.shape[:3]) < 2:
            raise DomainError("need at least 2 points per axis")
        values.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "values", values)

    @property
    def dims(self) -> tuple:
        return tuple(self.values.shape[:3])

    @property
    def ncomp(self) -> int:
        return 1 if self.values.ndim == 3 else 3

    @property
    def cell_volume(self) -> float:
        return self.spacing[0] * self.spacing[1] * self.spacing[2]

    @classmethod
    def box(cls, n: int, length: float, values=None, ncomp: int = 1) -> "Field3D":
        """Cube ``[-length/2, length/2]^3`` with ``n`` points per axis."""
        h = length / (n - 1)
        shape = (n, n, n) if ncomp == 1 else (n, n, n, 3)
        vals = np.zeros(shape) if values is None else values
        return cls((-length / 2,) * 3, (h,) * 3, vals)

    def coords(self):
        return np.meshgrid(
            *(o + s * np.arange(n) for o, s, n in zip(self.origin, self.spacing, self.dims)),
            indexing="ij",
        )

    def like(self, values) -> "Field3D":
        return Field3D(self.origin, self.spacing, values)

    def same_grid(self, other: "Field3D") -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.origin, other.origin, rtol=0, atol=1e-12 * max(self.spacing))
            and np.allclose(self.spacing, other.spacing, rtol=1e-12)
        )

    def integral(self) -> float | np.ndarray:
        return self.values.sum(axis=(0, 1, 2)) * self.cell_volume

    # --- serialisation ---------------------------------------------------

    def to_bytes(self) -> bytes:
        head = _MAGIC + struct.pack("<6d4q", *self.origin, *self.spacing, *self.dims, self.ncomp)
        return head + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Field3D":
        if blob[:8] != _MAGIC:
            raise DomainError("not a field file")
        vals = struct.unpack("<6d4q", blob[8:88])
        origin, spacing = vals[:3], vals[3:6]
        dims, ncomp = tuple(vals[6:9]), vals[9]
        shape = dims if ncomp == 1 else dims + (3,)
        data = np.frombuffer(blob[88:], dtype="<f8")
        if data.size != int(np.prod(shape)):
            raise DomainError("payload size does not match header")
        return cls(origin, spacing, data.reshape(shape).copy())

    def write(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def read(cls, path) -> "Field3D":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_csv(self, path) -> None:
        x, y, z = (c.ravel() for c in self.coords())
        if self.ncomp == 1:
            cols, names = [self.values.ravel()], "value"
        else:
            cols, names = [self.values[..., k].ravel() for k in range(3)], "v1,v2,v3"
        np.savetxt(path, np.column_stack([x, y, z, *cols]), delimiter=",",
                   header="x,y,z," + names, comments="", fmt="%.17g")


def bump_cutoff(grid: Field3D, center, radius: float) -> Field3D:
    """``psi = chi(|x - c| / R)`` with the C^2 cutoff ``chi(t) = (1 - t^2)^3_+``."""
    if radius <= 0:
        raise DomainError("radius must be positive")
    x = grid.coords()
    t2 = sum((xi - ci) ** 2 for xi, ci in zip(x, center)) / radius**2
    return grid.like(np.clip(1.0 - t2, 0.0, None) ** 3)


@dataclass(frozen=True, eq=False)
class MinimizerProblem:
    """Potential ``V``, cutoff ``psi`` and the rescaled ``(beta, h, kappa)``.

    ``regime`` is ``"moderate"`` for ``beta h <= 1`` and ``"strong"`` above,
    unless forced. ``smooth_levels`` replaces the moderate-field pressure by its
    Landau-level average ``kappa0 (v^{5/2}/5 + (bh)^2 v^{1/2}/4)``, dropping the
    part that oscillates with the level positions.
    """

    V: Field3D
    psi: Field3D
    beta: float
    h: float
    kappa: float
    regime: str | None = None
    smooth_levels: bool = False

    def __post_init__(self):
        if self.V.ncomp != 1 or self.psi.ncomp != 1:
            raise DomainError("V and psi must be scalar fields")
        if not self.V.same_grid(self.psi):
            raise GridMismatchError("V and psi must share a grid")
        if not (self.beta >= 0 and self.h > 0 and self.kappa >= 0):
            raise DomainError("need beta >= 0, h > 0, kappa >= 0")
        p = self.psi.values
        if p.min() < 0 or p.max() > 1:
            raise DomainError("psi must take values in [0, 1]")
        inner = np.zeros(p.shape, dtype=bool)
        inner[2:-2, 2:-2, 2:-2] = True
        if np.any(p[~inner] != 0):
            raise DomainError("psi must vanish on the two outermost grid layers")
        reg = self.regime or ("moderate" if self.beta * self.h <= 1 else "strong")
        if reg not in ("moderate", "strong"):
            raise DomainError(f"unknown regime {reg!r}")
        object.__setattr__(self, "regime", reg)

    @classmethod
    def from_params(cls, V, psi, params, regime=None):
        return cls(V, psi, params.beta, params.h, params.kappa, regime)

    def with_(self, **kw) -> "MinimizerProblem":
        d = dict(V=self.V, psi=self.psi, beta=self.beta, h=self.h, kappa=self.kappa,
                 regime=kw.pop("regime", None), smooth_levels=self.smooth_levels)
        d.update(kw)
        return MinimizerProblem(**d)

    @property
    def bh(self) -> float:
        return self.beta * self.h


def _pressure(prob: MinimizerProblem) -> np.ndarray:
    v = prob.V.values
    if prob.regime == "strong":
        return 0.5 * KAPPA0 * np.maximum(v, 0.0) ** 1.5 * prob.bh
    if prob.smooth_levels:
        vp = np.maximum(v, 0.0)
        return KAPPA0 * (vp**2.5 / 5 + prob.bh**2 * np.sqrt(vp) / 4)
    return magnetic_pressure(v, PressureParams(prob.bh))


def _beta_derivative(prob: MinimizerProblem) -> np.ndarray:
    """``d_beta P_{beta h}(V) = h d_{bh} P``."""
    v = prob.V.values
    if prob.regime == "strong":
        return 0.5 * KAPPA0 * np.maximum(v, 0.0) ** 1.5 * prob.h
    if prob.smooth_levels:
        return prob.h * KAPPA0 * prob.bh * np.sqrt(np.maximum(v, 0.0)) / 2
    return prob.h * pressure_field_derivative(v, PressureParams(prob.bh))


def _dcentral(f: np.ndarray, axis: int, step: float) -> np.ndarray:
    out = np.zeros_like(f)
    sl = [slice(None)] * 3
    lo, hi, mid = list(sl), list(sl), list(sl)
    lo[axis], hi[axis], mid[axis] = slice(None, -2), slice(2, None), slice(1, -1)
    out[tuple(mid)] = (f[tuple(hi)] - f[tuple(lo)]) / (2 * step)
    return out


def _weight(prob: MinimizerProblem) -> np.ndarray:
    return _beta_derivative(prob) * prob.psi.values


def minimizer_source(prob: MinimizerProblem) -> tuple[Field3D, Field3D]:
    """Right-hand sides ``(s_1, s_2)`` of the minimiser equations."""
    F = _weight(prob)
    dx = prob.V.spacing
    c = 0.5 * prob.kappa / prob.h
    s1 = -c * _dcentral(F, 1, dx[1])
    s2 = c * _dcentral(F, 0, dx[0])
    return prob.V.like(s1), prob.V.like(s2)


# --- lattice Green function ------------------------------------------------

_T_MAX = 1e7
_LOG_STEP = 0.05


@functools.lru_cache(maxsize=8)
def lattice_green(n1: int, n2: int, n3: int) -> np.ndarray:
    """``G(m)`` for ``0 <= m_k <= n_k`` with ``sum_nbr (G(m) - G(nbr)) = delta_m0``.

    Uses ``G(m) = int_0^inf prod_k e^{-2t} I_{m_k}(2t) dt`` (trapezoid rule in
    ``log t``) plus the Gaussian tail beyond ``t = 1e7`` in closed form.
    """
    u = np.arange(math.log(1e-10), math.log(_T_MAX), _LOG_STEP)
    t = np.exp(u)
    wq = t * _LOG_STEP
    wq[-1] *= 0.5
    n = max(n1, n2, n3)
    T = ive(np.arange(n + 1)[:, None], 2 * t[None, :])
    G = np.einsum("iq,jq,kq->ijk", T[: n1 + 1] * wq, T[: n2 + 1], T[: n3 + 1], optimize=True)
    i, j, k = np.meshgrid(np.arange(n1 + 1), np.arange(n2 + 1), np.arange(n3 + 1), indexing="ij")
    r = np.sqrt(i * i + j * j + k * k)
    tm = t[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = np.where(r > 0, erf(r / (2 * math.sqrt(tm))) / (4 * math.pi * r),
                        2 * (4 * math.pi) ** -1.5 / math.sqrt(tm))
    G = G + tail
    G.setflags(write=False)
    return G


def _kernel(dims) -> np.ndarray:
    G = lattice_green(*dims)
    idx = [np.minimum(np.arange(2 * n), 2 * n - np.arange(2 * n)) for n in dims]
    return G[np.ix_(*idx)]


def solve_vector_poisson(s: Field3D) -> Field3D:
    """Decaying solution of ``Delta_h a = s`` on the infinite lattice, sampled on the box."""
    if s.ncomp != 1:
        raise DomainError("solve one scalar component at a time")
    dx = s.spacing
    if not np.allclose(dx, dx[0], rtol=1e-12):
        raise GridMismatchError("the lattice Green function needs equal spacing")
    vals = s.values
    if not np.any(vals):
        return s.like(np.zeros_like(vals))
    dims = s.dims
    pad = tuple(2 * n for n in dims)
    K = fft.rfftn(_kernel(dims), pad)
    conv = fft.irfftn(fft.rfftn(vals, pad) * K, pad)[: dims[0], : dims[1], : dims[2]]
    return s.like(-dx[0] ** 2 * conv)


def laplacian(a: Field3D) -> Field3D:
    """7-point Laplacian on interior points (zero on the outer layer)."""
    v = a.values
    h2 = a.spacing[0] ** 2
    out = np.zeros_like(v)
    c = v[1:-1, 1:-1, 1:-1]
    out[1:-1, 1:-1, 1:-1] = (
        v[2:, 1:-1, 1:-1] + v[:-2, 1:-1, 1:-1] + v[1:-1, 2:, 1:-1]
        + v[1:-1, :-2, 1:-1] + v[1:-1, 1:-1, 2:] + v[1:-1, 1:-1, :-2] - 6 * c
    ) / h2
    return a.like(out)


def solve_minimizer(prob: MinimizerProblem) -> Field3D:
    """Vector field ``A'`` minimising the quadratic functional (``A'_3 = 0``)."""
    s1, s2 = minimizer_source(prob)
    a1 = solve_vector_poisson(s1).values
    a2 = solve_vector_poisson(s2).values
    return prob.V.like(np.stack([a1, a2, np.zeros_like(a1)], axis=-1))


def corrected_energy(prob: MinimizerProblem, a_field: Field3D):
    """``(main, cross, penalty, total)`` for a trial field ``A'``."""
    if a_field.ncomp != 3:
        raise DomainError("a_field must be a vector field")
    if not a_field.same_grid(prob.V):
        raise GridMismatchError("a_field must live on the problem grid")
    h = prob.h
    dv = prob.V.cell_volume
    dx = prob.V.spacing
    main = -(h**-3) * float(np.sum(_pressure(prob) * prob.psi.values)) * dv
    F = _weight(prob)
    a = a_field.values
    cross = -(h**-3) * float(
        np.sum(_dcentral(F, 1, dx[1]) * a[..., 0] - _dcentral(F, 0, dx[0]) * a[..., 1])
    ) * dv
    grad2 = 0.0
    for axis in range(3):
        d = np.diff(a, axis=axis) / dx[axis]
        grad2 += float(np.sum(d * d))
    if prob.kappa == 0:
        penalty = 0.0 if grad2 == 0 else math.inf
    else:
        penalty = grad2 * dv / (prob.kappa * h * h)
    return main, cross, penalty, main + cross + penalty


def field_norms(a_field: Field3D):
    """``(||dA||_2, sup |dA|, sup |d^2 A|)`` by centred differences (Frobenius norms)."""
    v = a_field.values
    if v.ndim == 3:
        v = v[..., None]
    if min(v.shape[:3]) < 3:
        raise DomainError("need at least 3 points per axis")
    dx = a_field.spacing
    first = [np.gradient(v, dx[k], axis=k) for k in range(3)]
    g2 = sum(np.sum(d * d, axis=-1) for d in first)
    h2 = 0.0
    for k in range(3):
        for m in range(3):
            d2 = np.gradient(first[k], dx[m], axis=m)
            h2 = h2 + np.sum(d2 * d2, axis=-1)
    l2 = math.sqrt(float(g2.sum()) * a_field.cell_volume)
    return l2, math.sqrt(float(g2.max())), math.sqrt(float(np.max(h2)))


@dataclass(frozen=True)
class CorrectionResult:
    value: float
    grad_norm: float
    regime: str
    fitted_exponents: dict


def _correction(prob: MinimizerProblem):
    a = solve_minimizer(prob)
    _, cross, pen, _ = corrected_energy(prob, a)
    return cross + pen, field_norms(a)[0]


def _slope(x, y) -> float:
    x, y = np.log(np.asarray(x, float)), np.log(np.abs(np.asarray(y, float)))
    return float(np.polyfit(x, y, 1)[0])


def correction_term(prob: MinimizerProblem, kappas=None, betas=None) -> CorrectionResult:
    """Minimum of cross + penalty; optional log-log slopes over kappa and beta sweeps.

    ``fitted_exponents`` holds ``kappa`` (|value| vs kappa), ``beta`` (|value|
    vs beta) and ``grad_kbh`` (||dA'|| vs kappa beta h over both sweeps) for
    the sweeps supplied.
    """
    value, gnorm = _correction(prob)
    fits = {}
    kbh, gn = [], []
    if kappas is not None:
        vals = []
        for k in kappas:
            v, g = _correction(prob.with_(kappa=k, regime=prob.regime))
            vals.append(v)
            kbh.append(k * prob.beta * prob.h)
            gn.append(g)
        fits["kappa"] = _slope(kappas, vals)
    if betas is not None:
        vals = []
        for b in betas:
            v, g = _correction(prob.with_(beta=b))
            vals.append(v)
            kbh.append(prob.kappa * b * prob.h)
            gn.append(g)
        fits["beta"] = _slope(betas, vals)
    if len(set(kbh)) >= 2:
        fits["grad_kbh"] = _slope(kbh, gn)
    return CorrectionResult(value, gnorm, prob.regime, fits)


def correction_both_regimes(prob: MinimizerProblem) -> dict:
    """Correction term under both functionals (used at the crossover ``beta h = 1``)."""
    return {reg: _correction(prob.with_(regime=reg))[0] for reg in ("moderate", "strong")}
