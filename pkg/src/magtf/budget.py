"""Regime classification and closed-form error budgets.

Every estimate here is a sum of explicit power laws in the physical inputs
``(Z, N, B, alpha)`` or in the rescaled semiclassical parameters
``(beta, h, kappa)``.  The unspecified constants of the estimates are all
set to 1 and every record carries ``up_to_constants = True``: the budgets are
meant for dominance analysis, not as absolute error bars.

Each term is tagged with the identifier of the formula it comes from (see
``FORMULAS``), so that a record can be traced back to its source and
``python -m magtf budget --explain`` can print the formulas.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np

from .errors import DomainError, UnsupportedInputError

DEFAULT_K = 4
DEFAULT_KAPPA_STAR = 1.0

# formula id -> (source, human readable form)
FORMULAS = {
    "27-2-25*": ("admissibility", "kappa beta h^2 |log beta|^K <= 1"),
    "27-3-59": ("moderate component Q0", "h^-1 + h^-1/3 nu^4/3"),
    "27-3-61": ("moderate component Q'", "mu^3 beta^-2 h^-2"),
    "27-3-66": ("moderate component Q'''",
                "beta nu^6/5 h^2/5 + beta h^-1/2 + mu^3 beta^-2 h^-2 + nu |log h|"),
    "27-3-76": ("nu, moderate",
                "kappa |log h| + kappa min(beta^3/2 h^-1/2, beta^1/2) |log h| "
                "+ (kappa beta)^10/9 h^4/9 |log h|^K"),
    "27-3-79": ("Q, moderate, weak non-degeneracy",
                "h^-1 + kappa^40/27 beta^40/27 h^7/27 |log h|^K"),
    "27-3-80": ("Q, moderate, general", "h^-1 + beta h^-1/2"),
    "27-4-7": ("nu, strong, kappa beta h <= 1",
               "kappa beta^1/2 |log h| + (kappa beta)^10/9 h^4/9 |log h|^K"),
    "27-4-8": ("nu, strong, kappa beta h >= 1",
               "kappa beta^1/2 |log h| + (kappa beta)^4/3 h^2/3 |log h|^K"),
    "27-4-11": ("Q0, strong, kappa beta h <= 1",
                "beta + kappa^40/27 beta^67/27 h^34/27 |log h|^K"),
    "27-4-12": ("Q0, strong, kappa beta h >= 1 or super-strong non-degeneracy",
                "beta + kappa^16/9 beta^25/9 h^14/9 |log h|^K"),
    "27-4-13": ("Q, strong, general",
                "Q0 + beta h^-1/2 + kappa^8/5 beta^13/5 h^6/5 |log h|^K"),
    "27-5-29": ("global trace Q0, B <= Z^4/3",
                "Z^5/3 + alpha |log(alpha Z)|^1/3 Z^25/9 (B <= Z); "
                "B^1/3 Z^4/3 + alpha |log(alpha Z)|^1/3 B^2/9 Z^23/9 (Z <= B)"),
    "27-5-37": ("global trace Q', B^5/12 < (Z-N)+ < B^3/4",
                "B^29/32 (Z-N)+^5/8 (1 + |log((Z-N)+ B^-3/4)|)"),
    "27-5-38": ("global trace Q'', (Z-N)+ >= B^3/4", "B (Z-N)+^1/2"),
    "27-5-52": ("D-term bound", "Z^1/3 R^2"),
    "27-5-53": ("R0", "Z^2/3 + Z^5/9 nu*^2/3, nu* = (alpha B)^10/9 Z^-4/27 |log Z|^K"),
    "27-5-56": ("R'', M >= 2", "alpha^5/9 B Z^2/27 |log Z|^K"),
    "27-5-57": ("R''', M >= 2, B^5/12 < (Z-N)+ < B^3/4",
                "(Z-N)+^3/8 B^11/32 (1 + |log((Z-N)+ B^-3/4)|)"),
    "27-5-58": ("R''', M >= 2, (Z-N)+ >= B^3/4", "(Z-N)+^-1/2 B"),
    "27-6-3": ("global trace, Z^4/3 <= B, (Z-N)+ <= B^4/15 Z^1/5",
               "B^1/3 Z^4/3 + B^4/5 Z^3/5 + alpha Z^3 "
               "+ alpha^16/9 B^82/45 Z^49/45 |log Z|^K"),
    "27-6-4": ("global trace extra, M = 1",
               "alpha^40/27 B^74/45 Z^131/540 (Z-N)+^85/108 |log Z|^K"),
    "27-6-5": ("global trace extra, M >= 2",
               "B^7/10 Z^11/40 (Z-N)+^5/8 |log((Z-N)+ / Z)|"),
    "27-7-4": ("energy, B <= Z^4/3", "E_TF + 2 Z^2 S(alpha Z) [+ Schwinger + Dirac]"),
    "27-7-11": ("energy, Z^4/3 <= B", "E_TF + 2 sum Z_m^2 S(0)"),
}

_ORDINALS = ("first", "second", "third", "fourth", "fifth")

_SOURCES = {
    "27-3-59": "Claim 27-3-58", "27-3-61": "Section 27-3", "27-3-66": "Section 27-3",
    "27-3-76": "Theorem 27-3-21(ii)", "27-3-79": "Theorem 27-3-21(i)",
    "27-3-80": "Theorem 27-3-21(i)", "27-4-7": "Proposition 27-4-3",
    "27-4-8": "Proposition 27-4-3", "27-4-11": "Corollary 27-4-4(i)",
    "27-4-12": "Corollary 27-4-4(i)-(ii)", "27-4-13": "Corollary 27-4-4(iii)",
    "27-5-29": "Proposition 27-5-12(i)-(ii)", "27-5-37": "Proposition 27-5-12(iii)",
    "27-5-38": "Proposition 27-5-12(iv)", "27-5-52": "Proposition 27-5-17",
    "27-5-53": "Proposition 27-5-17(i)", "27-5-56": "Proposition 27-5-18(i)",
    "27-5-57": "Proposition 27-5-18(i)", "27-5-58": "Proposition 27-5-18(i)",
    "27-6-3": "Theorem 27-6-2(i)", "27-6-4": "Theorem 27-6-2(ii)",
    "27-6-5": "Theorem 27-6-2(iii)",
}


# --- Small helpers ---------------------------------------------------------

def _logk(x: float, k: float) -> float:
    """``|log x|^k``, with the convention ``|log 1|^0 = 1``."""
    if k == 0:
        return 1.0
    return abs(math.log(x)) ** k


def _alpha_log(alpha: float, Z: float) -> float:
    """``alpha |log(alpha Z)|^{1/3}``, continuous at ``alpha = 0``."""
    if alpha == 0:
        return 0.0
    return alpha * abs(math.log(alpha * Z)) ** (1 / 3)


def _check_h(p: "SemiclassicalParams") -> None:
    if not 0 < p.h < 1:
        raise DomainError(f"semiclassical parameter h = {p.h:.6g} is not in (0, 1)")


# --- Types -----------------------------------------------------------------

class NondegClass(str, Enum):
    """Non-degeneracy assumption on the potential near the Landau levels."""

    STRONG = "strong"
    HESSIAN = "hessian"
    WEAK = "weak"
    SUPERSTRONG = "superstrong"
    NONE = "none"

    @property
    def implies_weak(self) -> bool:
        return self is not NondegClass.NONE


@dataclass(frozen=True)
class SemiclassicalParams:
    """Physical inputs and the rescaled ``(beta, h, kappa)`` of the dominant zone."""

    Z: float
    N: float
    B: float
    alpha: float
    M: int
    d: float
    beta: float
    h: float
    kappa: float
    r_star: float
    regime: str
    sub_regime: str | None
    K: float = DEFAULT_K
    kappa_star: float = DEFAULT_KAPPA_STAR
    flags: dict = field(default_factory=dict)
    diagnostics: tuple = ()

    @property
    def excess(self) -> float:
        """``(Z - N)_+``."""
        return max(self.Z - self.N, 0.0)

    def with_(self, **kw) -> "SemiclassicalParams":
        return replace(self, **kw)

    def inputs(self) -> dict:
        d = None if math.isinf(self.d) else self.d
        return {"Z": self.Z, "N": self.N, "B": self.B, "alpha": self.alpha,
                "M": self.M, "d": d, "K": self.K}

    def record(self) -> dict:
        return {"inputs": self.inputs(), "regime": self.regime,
                "sub_regime": self.sub_regime, "beta": self.beta, "h": self.h,
                "kappa": self.kappa, "r_star": self.r_star,
                "admissibility": dict(self.flags),
                "diagnostics": list(self.diagnostics)}


@dataclass(frozen=True)
class Term:
    label: str
    eq: str
    value: float
    source: str = ""

    def record(self) -> dict:
        return {"label": self.label, "eq": self.eq, "value": self.value,
                "source": self.source}


@dataclass(frozen=True)
class Budget:
    """Itemised remainder estimate; ``total`` is the sum of ``terms``.

    ``components`` holds auxiliary quantities (alternative branches, pieces
    of intermediate formulas, derived bounds, vanishing terms) that are
    reported but not summed.
    """

    terms: tuple
    regime: str
    inputs: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    components: tuple = ()
    notes: tuple = ()

    def __post_init__(self):
        # vanishing terms are reported as components only
        zero = tuple(t for t in self.terms if t.value == 0)
        if zero:
            object.__setattr__(self, "terms", tuple(t for t in self.terms if t.value != 0))
            object.__setattr__(self, "components", tuple(self.components) + zero)
        labels = [t.label for t in self.terms]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate budget terms: {labels}")
        for t in self.terms + tuple(self.components):
            if not (math.isfinite(t.value) and t.value >= 0):
                raise DomainError(f"budget term {t.label} = {t.value} is not finite and >= 0")

    @property
    def total(self) -> float:
        return math.fsum(t.value for t in self.terms)

    @property
    def dominant(self) -> str | None:
        if not self.terms:
            return None
        return max(self.terms, key=lambda t: t.value).label

    def value(self, label: str) -> float:
        for t in self.terms + tuple(self.components):
            if t.label == label:
                return t.value
        raise KeyError(label)

    def record(self) -> dict:
        return {
            "inputs": dict(self.inputs),
            "regime": self.regime,
            "admissibility": dict(self.flags),
            "terms": [t.record() for t in self.terms],
            "components": [t.record() for t in self.components],
            "dominant": self.dominant,
            "total": self.total,
            "notes": list(self.notes),
            "up_to_constants": True,
        }

    def to_json(self) -> str:
        return json.dumps(self.record(), sort_keys=True)


def _terms(eq: str, values, start: int = 0) -> list:
    """Label the pieces of formula ``eq`` by position ("27-3-80 second term")."""
    src = _SOURCES.get(eq, "")
    return [Term(f"{eq} {_ORDINALS[start + i]} term", eq, float(v), src)
            for i, v in enumerate(values)]


def _single(eq: str, value: float, label: str | None = None) -> Term:
    return Term(label or eq, eq, float(value), _SOURCES.get(eq, ""))


# --- Regime ----------------------------------------------------------------

def classify_regime(Z: float, N: float, B: float, alpha: float, M: int = 1,
                    d: float = math.inf, K: float = DEFAULT_K,
                    kappa_star: float = DEFAULT_KAPPA_STAR) -> SemiclassicalParams:
    """Map physical inputs to the regime and the rescaled parameters.

    Moderate fields ``B <= Z^{4/3}`` (boundary included) rescale the zone
    ``|x| ~ Z^{-1/3}``; stronger fields rescale ``|x| ~ B^{-2/5} Z^{1/5}``.
    ``h >= 1`` (``B >= Z^3``) is reported as a diagnostic; the operations
    that need ``h < 1`` raise on it.
    """
    Z, N, B, alpha = float(Z), float(N), float(B), float(alpha)
    if not (Z > 0 and 0 < N <= Z and B >= 0 and alpha >= 0):
        raise UnsupportedInputError(
            f"need Z > 0, 0 < N <= Z, B >= 0, alpha >= 0; got Z={Z}, N={N}, B={B}, alpha={alpha}")
    if int(M) != M or M < 1:
        raise DomainError(f"nucleus count M must be a positive integer, got {M}")
    M = int(M)
    if M == 1:
        d = math.inf
    kappa = alpha * Z
    if B <= Z ** (4 / 3):
        regime, sub = "moderate", None
        beta, h, r_star = B / Z, Z ** (-1 / 3), Z ** (-1 / 3)
    else:
        regime = "strong"
        beta = B ** 0.4 * Z ** -0.2
        h = B ** 0.2 * Z ** -0.6
        r_star = B ** -0.4 * Z ** 0.2
        sub = "beta_h2_below_1" if B <= Z ** 1.75 else "beta_h2_above_1"
    diagnostics = []
    h_ok = h < 1 - 1e-12
    if not h_ok:
        diagnostics.append(f"h = {h:.6g} >= 1: B >= Z^3 (or Z <= 1), outside the semiclassical range")
    adm_val = kappa * beta * h * h * (_logk(beta, K) if beta > 0 else 0.0)
    flags = {
        "kappa_le_kappa_star": kappa <= kappa_star,
        "kappa_beta_h2_logK_le_1": adm_val <= 1,
        "kappa_beta_h2_logK": adm_val,
        "h_lt_1": h_ok,
    }
    if M >= 2:
        flags["d_ge_r_star"] = d >= r_star
        if d < r_star:
            diagnostics.append(f"internuclear distance d = {d:.6g} below r* = {r_star:.6g}")
    if not flags["kappa_le_kappa_star"]:
        diagnostics.append(f"kappa = {kappa:.6g} exceeds kappa* = {kappa_star:.6g}")
    if not flags["kappa_beta_h2_logK_le_1"]:
        diagnostics.append(f"kappa beta h^2 |log beta|^K = {adm_val:.6g} > 1")
    return SemiclassicalParams(Z, N, B, alpha, M, float(d), beta, h, kappa, r_star,
                               regime, sub, K, kappa_star, flags, tuple(diagnostics))


def semiclassical(beta: float, h: float, kappa: float, regime: str | None = None,
                  K: float = DEFAULT_K) -> SemiclassicalParams:
    """Parameters given directly in rescaled form (no physical inputs)."""
    if beta < 0 or kappa < 0 or h <= 0:
        raise DomainError("need beta >= 0, kappa >= 0, h > 0")
    if regime is None:
        regime = "moderate" if beta * h <= 1 else "strong"
    if regime not in ("moderate", "strong"):
        raise DomainError(f"unknown regime {regime!r}")
    nan = math.nan
    adm_val = kappa * beta * h * h * (_logk(beta, K) if beta > 0 else 0.0)
    flags = {"kappa_le_kappa_star": kappa <= DEFAULT_KAPPA_STAR,
             "kappa_beta_h2_logK_le_1": adm_val <= 1,
             "kappa_beta_h2_logK": adm_val, "h_lt_1": h < 1}
    return SemiclassicalParams(nan, nan, nan, nan, 1, math.inf, float(beta), float(h),
                               float(kappa), nan, regime, None, K, DEFAULT_KAPPA_STAR, flags)


# --- nu --------------------------------------------------------------------

def nu_bound(p: SemiclassicalParams, K: float | None = None, with_branch: bool = False):
    """Bound on ``||d^2 A'||_inf`` for the minimizer, in rescaled units.

    Returns ``nu`` (and the formula id of the branch if ``with_branch``).
    In the strong regime the branch switches at ``kappa beta h = 1``; the tie
    goes to the ``<= 1`` branch (both coincide there).
    """
    _check_h(p)
    K = p.K if K is None else K
    k, b, h = p.kappa, p.beta, p.h
    L = abs(math.log(h))
    LK = L ** K
    if p.regime == "moderate":
        eq = "27-3-76"
        nu = (k * L + k * min(b ** 1.5 * h ** -0.5, b ** 0.5) * L
              + (k * b) ** (10 / 9) * h ** (4 / 9) * LK)
    else:
        if k * b * h <= 1:
            eq = "27-4-7"
            nu = k * b ** 0.5 * L + (k * b) ** (10 / 9) * h ** (4 / 9) * LK
        else:
            eq = "27-4-8"
            nu = k * b ** 0.5 * L + (k * b) ** (4 / 3) * h ** (2 / 3) * LK
    return (nu, eq) if with_branch else nu


# --- Semiclassical remainders ----------------------------------------------

def remainder_moderate(p: SemiclassicalParams, nd: NondegClass = NondegClass.NONE,
                       K: float | None = None, mu: float | None = None,
                       nu: float | None = None) -> Budget:
    """Remainder ``Q`` of the semiclassical energy for ``beta h <= 1``.

    In the general case ``Q = h^-1 + beta h^{-1/2}``.  Under the weak
    non-degeneracy assumption (implied by the stronger ones) the second term
    may be replaced by ``kappa^{40/27} beta^{40/27} h^{7/27} |log h|^K``; since
    the general bound also holds, the smaller of the two is selected and the
    other is reported as a component.  If ``mu`` and/or ``nu`` are supplied
    the intermediate pieces are itemised in ``components``.
    """
    nd = NondegClass(nd)
    if p.regime != "moderate":
        raise DomainError(f"remainder_moderate needs the moderate regime, got {p.regime}")
    _check_h(p)
    K = p.K if K is None else K
    k, b, h = p.kappa, p.beta, p.h
    L = abs(math.log(h))
    general = _terms("27-3-80", [1 / h, b * h ** -0.5])
    notes = []
    components = []
    if nd.implies_weak:
        weak = _terms("27-3-79", [1 / h, k ** (40 / 27) * b ** (40 / 27) * h ** (7 / 27) * L ** K])
        if weak[1].value <= general[1].value:
            terms = weak
            components.append(general[1])
            notes.append("weak non-degeneracy branch selected")
        else:
            terms = [weak[0], general[1]]
            components.append(weak[1])
            notes.append("general-case term is smaller than the non-degenerate one; selected")
    else:
        terms = general
    if nu is not None:
        components += _terms("27-3-59", [1 / h, h ** (-1 / 3) * nu ** (4 / 3)])
    if mu is not None and b > 0:
        components.append(_single("27-3-61", mu ** 3 * b ** -2 * h ** -2))
    if mu is not None and nu is not None and b > 0:
        components += _terms("27-3-66", [b * nu ** 1.2 * h ** 0.4, b * h ** -0.5,
                                         mu ** 3 * b ** -2 * h ** -2, nu * L])
    return Budget(tuple(terms), "moderate", _semi_inputs(p, nd, K), dict(p.flags),
                  tuple(components), tuple(notes))


def remainder_strong(p: SemiclassicalParams, nd: NondegClass = NondegClass.NONE,
                     K: float | None = None) -> Budget:
    """Remainder ``Q`` of the semiclassical energy for ``beta h >= 1``.

    ``Q0 = beta + (kappa-term)`` with the branch chosen by ``kappa beta h`` (or
    forced by the super-strong assumption); without non-degeneracy the two
    general-case terms are added.  Both ``Q0`` branches are reported.
    """
    nd = NondegClass(nd)
    if p.regime != "strong":
        raise DomainError(f"remainder_strong needs the strong regime, got {p.regime}")
    _check_h(p)
    K = p.K if K is None else K
    k, b, h = p.kappa, p.beta, p.h
    LK = abs(math.log(h)) ** K
    low = _terms("27-4-11", [b, k ** (40 / 27) * b ** (67 / 27) * h ** (34 / 27) * LK])
    high = _terms("27-4-12", [b, k ** (16 / 9) * b ** (25 / 9) * h ** (14 / 9) * LK])
    notes = []
    if nd is NondegClass.SUPERSTRONG:
        q0, other = high, low
        notes.append("super-strong non-degeneracy forces the kappa beta h >= 1 form")
    elif k * b * h <= 1:
        q0, other = low, high
    else:
        q0, other = high, low
    terms = list(q0)
    if nd is NondegClass.NONE:
        terms += _terms("27-4-13", [b * h ** -0.5, k ** 1.6 * b ** 2.6 * h ** 1.2 * LK], start=1)
    flags = dict(p.flags)
    flags["kappa_beta_h"] = k * b * h
    if not flags.get("kappa_beta_h2_logK_le_1", True):
        notes.append("admissibility kappa beta h^2 |log beta|^K <= 1 violated")
    return Budget(tuple(terms), "strong", _semi_inputs(p, nd, K), flags,
                  tuple(other), tuple(notes))


def _semi_inputs(p, nd, K) -> dict:
    return {"beta": p.beta, "h": p.h, "kappa": p.kappa, "nondeg": NondegClass(nd).value, "K": K}


# --- Global (physical) budgets -----------------------------------------------

def _threshold_diagnostics(p: SemiclassicalParams) -> dict:
    Z, B, D = p.Z, p.B, p.excess
    return {
        "excess": D,
        "B^5/12": B ** (5 / 12), "B^3/4": B ** 0.75,
        "B^4/15 Z^1/5": B ** (4 / 15) * Z ** 0.2,
        "B/Z": B / Z, "B/Z^4/3": B / Z ** (4 / 3),
        "B/Z^7/4": B / Z ** 1.75, "B/Z^3": B / Z ** 3,
    }


def _excess_band(D: float, B: float) -> str:
    """Position of ``(Z-N)_+`` against ``B^{5/12}`` and ``B^{3/4}``.

    Ties at ``B^{5/12}`` go to the lower band (no extra term); the tie at
    ``B^{3/4}`` is resolved by the caller toward the smaller remainder.
    """
    if D <= B ** (5 / 12):
        return "low"
    if D < B ** 0.75:
        return "middle"
    if D == B ** 0.75:
        return "tie"
    return "high"


def _q0_moderate(p: SemiclassicalParams) -> list:
    Z, B = p.Z, p.B
    al = _alpha_log(p.alpha, Z)
    if B <= Z:
        return _terms("27-5-29", [Z ** (5 / 3), al * Z ** (25 / 9)])
    return _terms("27-5-29", [B ** (1 / 3) * Z ** (4 / 3), al * B ** (2 / 9) * Z ** (23 / 9)])


def global_trace_remainder(p: SemiclassicalParams, nd: NondegClass | None = None) -> Budget:
    """Global trace remainder for the Thomas-Fermi potential in physical units.

    The budget does not depend on a non-degeneracy class (the Thomas-Fermi
    potential satisfies what is needed); ``nd`` is accepted for uniformity.
    """
    Z, B, D, M = p.Z, p.B, p.excess, p.M
    diag = _threshold_diagnostics(p)
    notes, components = [], []
    K = p.K
    if p.regime == "moderate":
        terms = _q0_moderate(p)
        if M == 1 or D == 0:
            notes.append("single nucleus or neutral: Q0 only")
        else:
            q1 = _single("27-5-37", B ** (29 / 32) * D ** 0.625
                         * (1 + abs(math.log(D * B ** -0.75))) if B > 0 else 0.0)
            q2 = _single("27-5-38", B * D ** 0.5)
            band = _excess_band(D, B)
            if band == "middle":
                terms.append(q1)
            elif band == "high":
                terms.append(q2)
            elif band == "tie":
                pick, other = (q1, q2) if q1.value <= q2.value else (q2, q1)
                terms.append(pick)
                components.append(other)
                diag["tie_continuity_ratio"] = q1.value / q2.value if q2.value else math.nan
                notes.append("(Z-N)+ = B^3/4: both boundary-zone terms evaluated, smaller kept")
            diag["band"] = band
    else:
        LK = _logk(Z, K)
        a = p.alpha
        terms = _terms("27-6-3", [B ** (1 / 3) * Z ** (4 / 3), B ** 0.8 * Z ** 0.6, a * Z ** 3,
                                  a ** (16 / 9) * B ** (82 / 45) * Z ** (49 / 45) * LK])
        thr = B ** (4 / 15) * Z ** 0.2
        s = a * B ** 0.6 * Z ** 0.2
        diag["alpha B^3/5 Z^1/5"] = s
        if D <= thr or (M == 1 and s >= 1):
            notes.append("base strong-field estimate")
        elif M == 1:
            terms.append(_single("27-6-4", a ** (40 / 27) * B ** (74 / 45) * Z ** (131 / 540)
                                 * D ** (85 / 108) * LK))
        else:
            terms.append(_single("27-6-5", B ** 0.7 * Z ** (11 / 40) * D ** 0.625
                                 * abs(math.log(D / Z))))
        if p.flags.get("h_lt_1") is False:
            notes.append("B >= Z^3: outside the range of the strong-field estimate")
        adm = a * B ** 0.8 * Z ** -0.4 * LK
        diag["alpha B^4/5 Z^-2/5 |log Z|^K"] = adm
        if adm > 1:
            notes.append("strong-field admissibility alpha B^4/5 Z^-2/5 |log Z|^K <= 1 violated")
    flags = dict(p.flags)
    flags["thresholds"] = diag
    return Budget(tuple(terms), p.regime, _phys_inputs(p, nd), flags, tuple(components),
                  tuple(notes))


def _phys_inputs(p, nd) -> dict:
    out = p.inputs()
    out["nondeg"] = None if nd is None else NondegClass(nd).value
    return out


def ntrem_dterm(p: SemiclassicalParams, nd: NondegClass | None = None) -> Budget:
    """Remainder ``R`` of the density integral and the D-term bound.

    ``terms`` sum to ``R``; the D-term bound is reported as the component
    labelled ``"D-term"``.  With several nuclei the extra boundary-zone
    pieces are added per the position of ``(Z-N)_+``; the D-term then uses
    the corresponding split form.  Outside the moderate regime no separate
    estimate exists and the D-term is bounded by the global remainder.
    """
    Z, B, D, M = p.Z, p.B, p.excess, p.M
    notes, components = [], []
    if p.regime != "moderate":
        g = global_trace_remainder(p, nd)
        components.append(Term("D-term", g.terms[0].eq, g.total, "Corollary 27-7-12"))
        notes.append("strong regime: D-term bounded by the global remainder; no separate R")
        return Budget((), p.regime, _phys_inputs(p, nd), dict(p.flags), tuple(components),
                      tuple(notes))
    nu_star = (p.alpha * B) ** (10 / 9) * Z ** (-4 / 27) * _logk(Z, p.K) if p.alpha * B > 0 else 0.0
    r0 = _terms("27-5-53", [Z ** (2 / 3), Z ** (5 / 9) * nu_star ** (2 / 3)])
    components.append(Term("nu*", "27-5-53", nu_star, _SOURCES["27-5-53"]))
    R0 = math.fsum(t.value for t in r0)
    terms = list(r0)
    z13 = Z ** (1 / 3)
    if M == 1:
        dterm = z13 * R0 ** 2
    else:
        r2 = _single("27-5-56", p.alpha ** (5 / 9) * B * Z ** (2 / 27) * _logk(Z, p.K))
        r3m = _single("27-5-57", D ** 0.375 * B ** (11 / 32)
                      * (1 + abs(math.log(D * B ** -0.75))) if B > 0 and D > 0 else 0.0)
        r3h = _single("27-5-58", B / math.sqrt(D) if D > 0 else 0.0)
        band = _excess_band(D, B)
        if band == "tie":
            band = "middle" if r2.value + r3m.value <= r3h.value else "high"
            notes.append("(Z-N)+ = B^3/4: smaller R branch kept")
        if band == "low":
            terms.append(r2)
            dterm = z13 * R0 ** 2 + B ** 0.25 * r2.value ** 2
        elif band == "middle":
            terms += [r2, r3m]
            dterm = z13 * R0 ** 2 + B ** 0.25 * (r2.value + r3m.value) ** 2
        else:
            terms.append(r3h)
            dterm = z13 * R0 ** 2 + D ** (1 / 3) * r3h.value ** 2
        notes.append(f"excess band: {band}")
    components.append(Term("D-term", "27-5-52", dterm, _SOURCES["27-5-52"]))
    return Budget(tuple(terms), "moderate", _phys_inputs(p, nd), dict(p.flags),
                  tuple(components), tuple(notes))


# --- Energy ------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyEstimate:
    center: float
    half_width: float
    included: dict
    notes: tuple = ()

    def record(self) -> dict:
        return {"center": self.center, "half_width": self.half_width,
                "included": dict(self.included), "notes": list(self.notes),
                "up_to_constants": True}


def _as_function(scott) -> Callable[[float], float]:
    if callable(scott):
        return scott
    table = np.asarray(scott, dtype=float)
    if table.ndim != 2 or table.shape[1] != 2 or table.shape[0] < 2:
        raise DomainError("Scott table must be an (n, 2) array of (kappa, S) rows")
    order = np.argsort(table[:, 0])
    xs, ys = table[order, 0], table[order, 1]

    def f(k):
        if not xs[0] <= k <= xs[-1]:
            raise DomainError(f"Scott table does not cover kappa = {k}")
        return float(np.interp(k, xs, ys))
    return f


def schwinger_dirac_allowed(p: SemiclassicalParams) -> bool:
    """Whether the improved (Schwinger and Dirac) form applies.

    Requires ``B <= Z`` and ``alpha |log Z|^{1/3} <= Z^{-10/9}``; the
    ``<<`` of the estimate is read as ``<=`` (constants set to 1).
    """
    return (p.regime == "moderate" and p.B <= p.Z
            and p.alpha * _logk(p.Z, 1 / 3) <= p.Z ** (-10 / 9))


def assemble_energy(tf: float, p: SemiclassicalParams, scott=None, schwinger: float = 0.0,
                    dirac: float = 0.0, budget: Budget | None = None,
                    calibration: float = 1.0, charges=None) -> EnergyEstimate:
    """Ground-state energy estimate ``center +- half_width``.

    ``scott`` is the Scott function ``S(kappa)`` (callable or a two-column
    table).  Moderate fields use ``2 Z^2 S(alpha Z)`` and add the supplied
    Schwinger and Dirac values when allowed; strong fields use
    ``2 sum Z_m^2 S(0)``.  The half-width is ``calibration * budget.total``
    (the global trace remainder unless a budget is given).
    """
    if scott is None:
        raise DomainError("a Scott function S is required to assemble the energy")
    S = _as_function(scott)
    if budget is None:
        budget = global_trace_remainder(p)
    notes = []
    if p.regime == "moderate":
        if p.M != 1:
            raise UnsupportedInputError("moderate-field energy assembly covers one nucleus only")
        scott_term = 2 * p.Z ** 2 * S(p.kappa)
        use_sd = schwinger_dirac_allowed(p)
        if not use_sd and (schwinger or dirac):
            notes.append("Schwinger and Dirac terms dropped: need B <= Z and "
                         "alpha |log Z|^1/3 <= Z^-10/9")
        included = {"scott": "2 Z^2 S(alpha Z)", "schwinger": use_sd, "dirac": use_sd}
        center = tf + scott_term + ((schwinger + dirac) if use_sd else 0.0)
    else:
        zs = [p.Z] if charges is None else [float(z) for z in charges]
        if p.M != len(zs):
            raise DomainError(f"need {p.M} nuclear charges, got {len(zs)}")
        s0 = S(0.0)
        scott_term = 2 * s0 * math.fsum(z * z for z in zs)
        included = {"scott": "2 sum Z_m^2 S(0)", "schwinger": False, "dirac": False}
        if schwinger or dirac:
            notes.append("Schwinger and Dirac terms are not part of the strong-field form")
        center = tf + scott_term
    included["scott_value"] = scott_term
    return EnergyEstimate(center, calibration * budget.total, included, tuple(notes))


# --- Scaling functions -------------------------------------------------------

def scaling_functions(p: SemiclassicalParams, V, dV, mu: float, nu: float,
                      eps0: float = 1.0, C0: float = 1.0):
    """Return ``(ell, ell_bar, rho_bar)`` at the sample points.

    ``ell = eps0 (min_j |V - 2 j beta h| + |dV|^2)^{1/2} + ell_bar`` with
    ``j >= 0``, ``ell_bar = C0 max(nu/beta, mu/beta, h^{1/2})`` and
    ``rho_bar = C0 max(mu/beta, h^{1/2})``.  ``dV`` is either the gradient
    (trailing axis of length 3) or its magnitude.  ``beta = 0`` drops the
    ``1/beta`` entries.
    """
    V = np.asarray(V, dtype=float)
    dV = np.asarray(dV, dtype=float)
    if dV.shape == V.shape + (3,):
        g2 = np.sum(dV * dV, axis=-1)
    elif dV.shape == V.shape:
        g2 = dV * dV
    else:
        raise DomainError(f"dV shape {dV.shape} does not match V shape {V.shape}")
    b, h = p.beta, p.h
    root_h = math.sqrt(h)
    if b > 0:
        ell_bar = C0 * max(nu / b, mu / b, root_h)
        rho_bar = C0 * max(mu / b, root_h)
    else:
        ell_bar = rho_bar = C0 * root_h
    step = 2 * b * h
    if step > 0:
        j = np.maximum(np.rint(V / step), 0.0)
        dist = np.abs(V - j * step)
    else:
        dist = np.abs(V)
    ell = eps0 * np.sqrt(dist + g2) + ell_bar
    return ell, ell_bar, rho_bar


def explain() -> str:
    """Text listing of every formula used by the budgets."""
    return "\n".join(f"{eq:9s} {src}: {form}" for eq, (src, form) in FORMULAS.items())
