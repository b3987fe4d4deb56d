"""Radial magnetic Thomas-Fermi atom (single nucleus).

Units: the one-body operator is ``-Delta - Z/|x|`` (kinetic energy |xi|^2) with
Landau levels ``2 j B``; the density is ``rho = P'_B(W + lam)`` and the screened
potential ``W = Z/r - |x|^{-1} * rho``.

Internally everything is rescaled to unit nuclear charge,

    r = Z^{-1/3} s,   W = Z^{4/3} w(s),   rho = Z^2 n(s),   B = Z^{4/3} b,

so the solved problem depends on Z only through N/Z, B Z^{-4/3} and the grid
end points. Energies scale back with Z^{7/3}.

Discretisation: logarithmic grid ``s_i = exp(t_i)``, trapezoid weights in ``t``,
shells interact through Newton's theorem ``1/max(r_i, r_j)``. The unknowns are
the shell charges ``m_i = q_i rho_i``; see ``_Scaled``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError, GridMismatchError, UnsupportedInputError
from .pressure import (
    KAPPA0,
    PressureParams,
    invert_density,
    magnetic_pressure,
    pressure_density,
    pressure_second_derivative,
)

# Thomas-Fermi length for -Delta - 1/r with P = kappa0/5 w^{5/2}
TF_LENGTH = (3 * math.pi / 4) ** (2.0 / 3.0)


@dataclass(frozen=True)
class RadialGrid:
    """Log grid with trapezoid weights for radial integrals."""

    r: np.ndarray
    w: np.ndarray  # dr weights

    @classmethod
    def logarithmic(cls, r_min: float, r_max: float, n: int) -> "RadialGrid":
        if not (0 < r_min < r_max) or n < 3:
            raise DomainError("need 0 < r_min < r_max and n >= 3")
        t = np.linspace(math.log(r_min), math.log(r_max), n)
        r = np.exp(t)
        w = r * (t[1] - t[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        return cls(r, w)

    @property
    def q(self) -> np.ndarray:
        """Volume weights 4 pi r^2 dr."""
        return 4 * math.pi * self.r**2 * self.w

    def integrate(self, f) -> float:
        return float(np.dot(self.q, f))

    def potential(self, rho) -> np.ndarray:
        """Newton potential of a radial density: Q(<=r)/r + int_{>r} rho/r'."""
        c = self.q * rho
        inner = np.cumsum(c)
        outer = np.cumsum((c / self.r)[::-1])[::-1]
        outer = np.append(outer[1:], 0.0)
        return inner / self.r + outer


def _grid_of(grid) -> RadialGrid:
    if isinstance(grid, RadialGrid):
        return grid
    r = np.asarray(grid, dtype=float)
    if r.ndim != 1 or r.size < 3 or np.any(np.diff(np.log(r)) <= 0):
        raise DomainError("radial grid must be increasing and positive")
    t = np.log(r)
    if not np.allclose(np.diff(t), t[1] - t[0], rtol=1e-8):
        raise DomainError("only logarithmic grids are supported")
    return RadialGrid.logarithmic(r[0], r[-1], r.size)


def coulomb_d(f, g, grid) -> float:
    """``D(f, g) = 1/2 int int f(x) g(y) / |x - y|`` for radial profiles."""
    grid = _grid_of(grid)
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != grid.r.shape or g.shape != grid.r.shape:
        raise GridMismatchError("profiles must be sampled on the grid")
    return 0.5 * grid.integrate(f * grid.potential(g))


def kinetic_density(rho, bh: float, iters: int = 200) -> np.ndarray:
    """Legendre transform ``tau(rho) = sup_w (rho w - P(w))`` by bisection on ``P'(w) = rho``."""
    rho = np.asarray(rho, dtype=float)
    p = PressureParams(bh)
    out = np.zeros_like(rho)
    pos = rho > 0
    if not np.any(pos):
        return out
    target = rho[pos]
    hi = (2 * target / KAPPA0) ** (2.0 / 3.0) + 2 * bh
    for _ in range(200):
        short = pressure_density(hi, p) < target
        if not np.any(short):
            break
        hi[short] *= 2
    lo = np.zeros_like(hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        up = pressure_density(mid, p) < target
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
        if np.all(hi - lo <= 4e-16 * hi):
            break
    wstar = 0.5 * (lo + hi)
    out[pos] = target * wstar - magnetic_pressure(wstar, p)
    return out


@dataclass(frozen=True)
class TFInputs:
    Z: float
    N: float
    B: float = 0.0
    r_max: float = 1000.0
    n_grid: int = 1200
    r_min: float = 1e-10

    def __post_init__(self):
        for name in ("Z", "N", "B", "r_max", "r_min"):
            val = getattr(self, name)
            if not math.isfinite(val):
                raise DomainError(f"{name} must be finite")
        if self.Z <= 0 or self.N <= 0:
            raise DomainError("Z and N must be positive")
        if self.B < 0:
            raise DomainError("B must be >= 0")
        if not (0 < self.r_min < self.r_max) or self.n_grid < 50:
            raise DomainError("bad grid specification")


@dataclass(frozen=True)
class TFSolution:
    r: np.ndarray
    W: np.ndarray
    rho: np.ndarray
    lam: float
    energy_primal: float
    energy_dual: float
    dual_gap: float
    Z: float
    N: float
    B: float
    residual: float = 0.0
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def grid(self) -> RadialGrid:
        return _grid_of(self.r)

    def charge(self) -> float:
        return self.grid.integrate(self.rho)


def boundary_radius(Z: float, N: float, B: float) -> float:
    """``min(B^{-1/4}, (Z-N)_+^{-1/3})``, each branch +inf when its base vanishes."""
    if not (Z >= N >= 0) or B < 0:
        raise DomainError("need Z >= N >= 0 and B >= 0")
    r_b = B ** -0.25 if B > 0 else math.inf
    ion = Z - N
    r_i = ion ** (-1.0 / 3.0) if ion > 0 else math.inf
    return min(r_b, r_i)


class _Scaled:
    """Unit-charge problem on a fixed grid, solved in shell charges ``m = q rho``.

    At fixed ``lam`` the density minimises the convex functional

        f(m) = sum_i q_i tau(m_i/q_i) - sum_i m_i (1/r_i + lam) + 1/2 m.K.m,

    ``K_ij = 1/max(r_i, r_j)``, subject to ``m >= 0``. The kinetic density
    ``tau`` has bounded curvature where the pressure has square-root onsets,
    so projected Newton converges cleanly onto the compact support.
    """

    def __init__(self, grid: RadialGrid, b: float):
        self.g = grid
        self.p = PressureParams(b)
        self.K = 1.0 / np.maximum.outer(grid.r, grid.r)

    def w_of(self, m):
        return invert_density(m / self.g.q, self.p)

    def potential_w(self, m):
        """Screened potential ``1/r - K m``."""
        return 1.0 / self.g.r - self.g.potential(m / self.g.q)

    def objective(self, m, lam, w=None):
        q = self.g.q
        w = self.w_of(m) if w is None else w
        tau = m / q * w - magnetic_pressure(w, self.p)
        phi = self.g.potential(m / q)
        return float(np.sum(q * tau) - np.sum(m * (1.0 / self.g.r + lam)) + 0.5 * np.dot(m, phi))

    def gradient(self, m, lam, w):
        return w - (self.potential_w(m) + lam)

    def residual(self, m, lam, w):
        """Self-consistency defect ``r |tau'(rho) - (W + lam)_+|`` in the bounded u-scale."""
        return float(np.max(self.g.r * np.abs(w - np.maximum(self.potential_w(m) + lam, 0.0))))

    def hess_diag(self, m, w):
        d2 = pressure_second_derivative(w, self.p, floor=1e-300)
        with np.errstate(divide="ignore"):
            return np.where(m > 0, 1.0 / (d2 * self.g.q), np.inf)

    def minimise(self, m, lam, tol=1e-11, max_iter=200):
        w = self.w_of(m)
        f = self.objective(m, lam, w)
        res = self.residual(m, lam, w)
        stall = 0
        for it in range(max_iter):
            if res < tol:
                return m, w, res, it
            g = self.gradient(m, lam, w)
            hd = self.hess_diag(m, w)
            active = (m <= 0) & (g >= 0)
            free = ~active
            d = np.zeros_like(m)
            idx = np.flatnonzero(free)
            diag = np.where(np.isfinite(hd[idx]), hd[idx], 0.0)
            H = self.K[np.ix_(idx, idx)].copy()
            H[np.diag_indices_from(H)] += diag
            s = 1.0 / np.sqrt(np.diag(H))
            d[idx] = -s * np.linalg.solve(H * s[:, None] * s[None, :], s * g[idx])
            # Near the optimum the objective is flat to rounding; there the
            # residual decides whether a step is taken.
            slack = 1e-13 * max(abs(f), 1.0)
            t = 1.0
            while True:
                trial = np.maximum(m + t * d, 0.0)
                wt = self.w_of(trial)
                ft = self.objective(trial, lam, wt)
                if ft <= f + 1e-4 * np.dot(g, trial - m):
                    break
                if ft <= f + slack and self.residual(trial, lam, wt) < res:
                    break
                if t < 1e-10:
                    break
                t *= 0.5
            rt = self.residual(trial, lam, wt)
            if ft > f + slack or (ft > f - slack and rt >= res):
                stall += 1
                if stall > 3:
                    break
            else:
                stall = 0
            m, w, f, res = trial, wt, ft, rt
        if res < tol:
            return m, w, res, max_iter
        raise ConvergenceError("Thomas-Fermi Newton iteration did not converge", residual=float(res))

    def dN_dlam(self, m, w):
        """Charge response to lam from the free-set Hessian."""
        hd = self.hess_diag(m, w)
        idx = np.flatnonzero(m > 0)
        H = self.K[np.ix_(idx, idx)].copy()
        H[np.diag_indices_from(H)] += hd[idx]
        return float(np.sum(np.linalg.solve(H, np.ones(idx.size))))


def _tietz(s):
    return 1.0 / (1.0 + 0.53625 * s / TF_LENGTH) ** 2


def solve_tf_atom(inp: TFInputs, tol: float = 1e-11, max_outer: int = 100) -> TFSolution:
    """Self-consistent radial TF solution with ``int rho = N``."""
    Z, N, B = inp.Z, inp.N, inp.B
    if N > Z * (1 + 1e-14):
        raise UnsupportedInputError(f"N = {N} exceeds Z = {Z}; only N <= Z is treated")
    rbar = boundary_radius(Z, min(N, Z), B)
    if N < Z and inp.r_max < 4 * rbar:
        raise DomainError(f"r_max = {inp.r_max} must exceed 4 * boundary radius = {4 * rbar:.6g}")
    zs = Z ** (1.0 / 3.0)
    grid = RadialGrid.logarithmic(inp.r_min * zs, inp.r_max * zs, inp.n_grid)
    prob = _Scaled(grid, B / Z ** (4.0 / 3.0))
    frac = min(N / Z, 1.0)
    w0 = _tietz(grid.r) / grid.r
    total_its = 0

    if frac == 1.0:
        lam = 0.0
        m = grid.q * pressure_density(w0, prob.p)
        m, wk, res, total_its = prob.minimise(m, lam, tol=tol)
    else:
        # safeguarded Newton on N(lam) = frac, N increasing in lam
        lo, hi = -math.inf, 0.0
        lam = -0.5 * (1 - frac) ** (4.0 / 3.0)
        m = grid.q * pressure_density(w0 + lam, prob.p)
        for outer in range(max_outer):
            m, wk, res, its = prob.minimise(m, lam, tol=tol)
            total_its += its
            dN = float(np.sum(m)) - frac
            if abs(dN) < 1e-13:
                break
            if dN > 0:
                hi = min(hi, lam)
            else:
                lo = max(lo, lam)
            slope = prob.dN_dlam(m, wk)
            new = lam - dN / slope if slope > 0 else math.nan
            if not (math.isfinite(new) and lo < new < hi):
                new = 0.5 * (lo + hi) if math.isfinite(lo) else 2 * lam - 0.1
            if hi - lo < 1e-15 * max(1.0, abs(lam)):
                break
            lam = new
        else:
            raise ConvergenceError("chemical potential search did not converge", residual=float(abs(dN)))

    w = prob.potential_w(m)
    rho = m / grid.q
    s = grid.r
    scale_w = Z ** (4.0 / 3.0)
    r_phys = s / zs
    W_phys = w * scale_w
    rho_phys = rho * Z**2
    lam_phys = lam * scale_w
    sol = TFSolution(
        r=r_phys, W=W_phys, rho=rho_phys, lam=lam_phys,
        energy_primal=math.nan, energy_dual=math.nan, dual_gap=math.nan,
        Z=Z, N=N, B=B, residual=float(res), iterations=int(total_its),
    )
    ep, ed, gap = tf_energy(sol, inp)
    return TFSolution(
        r=r_phys, W=W_phys, rho=rho_phys, lam=lam_phys,
        energy_primal=ep, energy_dual=ed, dual_gap=gap,
        Z=Z, N=N, B=B, residual=float(res), iterations=int(total_its),
    )


def tf_energy(sol: TFSolution, inp: TFInputs):
    """Density-form and pressure-form energies and their gap.

    primal = int tau_B(rho) - int Z rho / r + D(rho, rho)
    dual   = -int P_B(W + lam) - D(rho, rho) + lam N
    """
    grid = _grid_of(sol.r)
    rho = np.asarray(sol.rho, dtype=float)
    if rho.shape != grid.r.shape or np.asarray(sol.W).shape != grid.r.shape:
        raise GridMismatchError("solution arrays do not match the grid")
    d = coulomb_d(rho, rho, grid)
    tau = kinetic_density(rho, inp.B)
    primal = grid.integrate(tau) - grid.integrate(inp.Z * rho / grid.r) + d
    pw = magnetic_pressure(np.asarray(sol.W) + sol.lam, PressureParams(inp.B))
    dual = -grid.integrate(pw) - d + sol.lam * inp.N
    return float(primal), float(dual), float(abs(primal - dual))


def chemical_potential(inp: TFInputs) -> float:
    return solve_tf_atom(inp).lam


def write_solution(sol: TFSolution, path) -> None:
    """Columnar text: one JSON header line, then ``r W rho`` rows."""
    header = {
        "Z": sol.Z, "N": sol.N, "B": sol.B, "lambda": sol.lam,
        "energy_primal": sol.energy_primal, "energy_dual": sol.energy_dual,
        "dual_gap": sol.dual_gap, "residual": sol.residual,
    }
    with open(path, "w") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        fh.write("# r W rho\n")
        for row in zip(sol.r, sol.W, sol.rho):
            fh.write(" ".join(f"{x:.17e}" for x in row) + "\n")


def read_solution(path) -> TFSolution:
    with open(path) as fh:
        header = json.loads(fh.readline()[2:])
    data = np.loadtxt(path, comments="#")
    return TFSolution(
        r=data[:, 0], W=data[:, 1], rho=data[:, 2], lam=header["lambda"],
        energy_primal=header["energy_primal"], energy_dual=header["energy_dual"],
        dual_gap=header["dual_gap"], Z=header["Z"], N=header["N"], B=header["B"],
        residual=header["residual"],
    )
