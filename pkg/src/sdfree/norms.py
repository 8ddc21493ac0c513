"""Domain geometry and certified upper bounds for the weighted analytic norm.

The norm of a series is ``sum_khj ||f_khj||_{r,rho,xi} e^{s|k|} delta^{|h|+|j|}``
with ``||.||_{r,rho,xi}`` the sup over the complexified box.  Sups are replaced
by majorants which are upper bounds, so inequalities checked with them on the
left-hand side are sufficient conditions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .series import PhaseSpace, QuasiPoly, TFSeries, unique_rows

__all__ = [
    "Widths",
    "DomainSpec",
    "NormParams",
    "DomainError",
    "coefficient_norm",
    "weighted_norm",
    "norm_params",
    "row_bounds",
]


class DomainError(ValueError):
    pass


WIDTH_NAMES = ("r", "rho", "xi", "s", "delta")


@dataclass(frozen=True)
class Widths:
    """Analyticity widths ``(r, rho, xi, s, delta)``."""

    r: float
    rho: float
    xi: float
    s: float
    delta: float

    def __post_init__(self):
        for name in WIDTH_NAMES:
            object.__setattr__(self, name, float(getattr(self, name)))

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, k) for k in WIDTH_NAMES)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in WIDTH_NAMES}

    @property
    def positive(self) -> bool:
        return all(v > 0 for v in self.as_tuple())

    def scaled(self, factor: float) -> "Widths":
        return Widths(*(factor * v for v in self.as_tuple()))

    def __sub__(self, other: "Widths") -> "Widths":
        return Widths(*(a - b for a, b in zip(self.as_tuple(), other.as_tuple())))

    def __ge__(self, other: "Widths") -> bool:
        return all(a >= b for a, b in zip(self.as_tuple(), other.as_tuple()))


@dataclass(frozen=True)
class DomainSpec:
    """Real boxes plus analyticity widths.

    ``R`` is an interval, ``I_box`` a tuple of intervals, ``Xi = (-x_max, x_max)``.
    """

    R: tuple
    I_box: tuple
    x_max: float
    widths: Widths
    strict: bool = field(default=True, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "R", tuple(float(v) for v in self.R))
        object.__setattr__(self, "I_box", tuple(tuple(float(v) for v in iv) for iv in self.I_box))
        object.__setattr__(self, "x_max", float(self.x_max))
        if not isinstance(self.widths, Widths):
            object.__setattr__(self, "widths", Widths(*self.widths))
        if self.R[0] > self.R[1] or any(lo > hi for lo, hi in self.I_box):
            raise DomainError("empty real box")
        if self.x_max <= 0:
            raise DomainError("Xi = (-x_max, x_max) must contain 0: x_max > 0 required")
        if self.strict and not self.widths.positive:
            raise DomainError(f"all widths must be strictly positive, got {self.widths}")

    @property
    def X(self) -> float:
        """``sup{|x| : x in Xi_xi} = x_max + xi``."""
        return self.x_max + self.widths.xi

    @property
    def dfrak(self) -> float:
        w = self.widths
        return min(w.rho * w.s, w.r * w.xi, w.delta ** 2)

    def with_widths(self, widths: Widths) -> "DomainSpec":
        return replace(self, widths=widths)

    def shrink(self, primed: Widths) -> "DomainSpec":
        return replace(self, widths=self.widths - primed)

    def check_basepoint(self, space: PhaseSpace):
        if not (self.R[0] <= space.r0 <= self.R[1]):
            raise DomainError(f"basepoint r0={space.r0} outside R={self.R}")
        if len(self.I_box) != space.n:
            raise DomainError("I_box dimension does not match the phase space")
        for v, (lo, hi) in zip(space.I0, self.I_box):
            if not lo <= v <= hi:
                raise DomainError(f"basepoint I0={space.I0} outside I_box={self.I_box}")

    def radii(self, space: PhaseSpace) -> tuple[float, np.ndarray]:
        """Max distances ``W_r``, ``W_I`` from the basepoint to the complexified boxes."""
        self.check_basepoint(space)
        w = self.widths
        Wr = max(space.r0 - self.R[0], self.R[1] - space.r0) + w.r
        WI = np.array([max(v - lo, hi - v) + w.rho for v, (lo, hi) in zip(space.I0, self.I_box)])
        return Wr, WI

    def as_dict(self) -> dict:
        return {"R": list(self.R), "I_box": [list(iv) for iv in self.I_box],
                "x_max": self.x_max, "widths": self.widths.as_dict(), "X": self.X,
                "dfrak": self.dfrak}


@dataclass(frozen=True)
class NormParams:
    dfrak: float
    d: float
    X: float
    schedule_ok: bool | None = None

    def as_dict(self) -> dict:
        return {"dfrak": self.dfrak, "d": self.d, "X": self.X, "schedule_ok": self.schedule_ok}


def norm_params(dom: DomainSpec, primed: Widths | None = None, N: int | None = None) -> NormParams:
    """``dfrak = min(rho s, r xi, delta^2)`` and ``d`` for the primed widths.

    The angle width ``s`` plays the role of ``sigma``.  With ``N`` given, also
    reports whether ``d >= dfrak / (81 N^2)``.
    """
    if primed is None:
        primed = dom.widths
    if not primed.positive:
        raise DomainError(f"non-positive primed width in {primed}")
    if not dom.widths.positive:
        raise DomainError(f"non-positive width in {dom.widths}")
    d = min(primed.rho * primed.s, primed.r * primed.xi, primed.delta ** 2)
    ok = None
    if N is not None:
        ok = bool(d >= dom.dfrak / (81 * N * N) * (1 - 1e-12))
    return NormParams(dom.dfrak, d, dom.X, ok)


# -- majorants ------------------------------------------------------------------

def _exp_tail(z: np.ndarray, K: int) -> np.ndarray:
    """Upper bound of ``sum_{k >= K} z^k / k!`` for ``0 <= z < K + 1``."""
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        logt = K * np.log(np.where(z > 0, z, 1.0)) - math.lgamma(K + 1)
        t = np.where(z > 0, np.exp(logt), 0.0 if K > 0 else 1.0)
        ratio = z / (K + 1)
        out = np.where(ratio < 1, t / (1 - ratio), np.inf)
    return out


def _group_majorants(space: PhaseSpace, exps: np.ndarray, coef: np.ndarray, group: np.ndarray,
                     ngroups: int, X: float, method: str) -> np.ndarray:
    """Majorant of ``sup_{|x| <= X} |sum c x^e e^{alpha x}|`` for each group of rows.

    ``taylor`` sums moduli of the merged Taylor coefficients of the x-function
    (so cancellations between terms are seen), plus a certified series tail
    and a rounding allowance; ``termwise`` uses ``|c| X^e e^{|alpha| X}``.
    """
    out = np.zeros(ngroups)
    if exps.shape[0] == 0:
        return out
    e = exps[:, space.E].astype(int)
    alpha = space.alpha(exps[:, space.W]).astype(complex)
    absa = np.abs(alpha)
    absc = np.abs(coef).astype(float)
    termwise = absc * X ** e * np.exp(absa * X)
    if method == "termwise":
        np.add.at(out, group, termwise)
        return out
    if method != "taylor":
        raise ValueError(f"unknown majorant method {method!r}")
    z = float(absa.max()) * X
    L = int(math.ceil(2.0 * z)) + 30
    emax = int(e.max())
    Nt = emax + L + 1
    # Taylor coefficients of e^{alpha x}: alpha^l / l!, l = 0..L
    pw = np.empty((alpha.shape[0], L + 1), dtype=complex)
    pw[:, 0] = 1.0
    for l in range(1, L + 1):
        pw[:, l] = pw[:, l - 1] * alpha / l
    c = coef.astype(complex)
    T = np.zeros((ngroups, Nt), dtype=complex)
    for ev in np.unique(e):
        rows = np.flatnonzero(e == ev)
        contrib = c[rows, None] * pw[rows]
        np.add.at(T, (group[rows][:, None], ev + np.arange(L + 1)[None, :]), contrib)
    powX = X ** np.arange(Nt, dtype=float)
    out = (np.abs(T) * powX[None, :]).sum(axis=1)
    tail = absc * X ** e * _exp_tail(absa * X, L + 1)
    rounding = 8 * (L + 2) * np.finfo(float).eps * termwise + \
        8 * (L + 2) * space.eps * termwise
    np.add.at(out, group, tail + rounding)
    # the term-wise bound is also certified; keep the smaller one
    tw = np.zeros(ngroups)
    np.add.at(tw, group, termwise)
    return np.minimum(out, tw)


def coefficient_norm(q: QuasiPoly, dom: DomainSpec, method: str = "taylor") -> float:
    """Certified upper bound of ``sup |q|`` over ``R_r x I_rho x Xi_xi``.

    The (r, I)-polynomial part is majorized on polydisks of radii ``W_r``,
    ``W_I`` around the basepoint, the x-part on the disk ``|x| <= X`` which
    contains ``Xi_xi``.
    """
    sp = q.space
    if q.nterms == 0:
        dom.check_basepoint(sp)
        return 0.0
    full = np.zeros((q.nterms, sp.width), dtype=np.int64)
    full[:, sp.A:] = q.exps
    return float(_series_norm(sp, full, q.coef, dom, method, with_key_weights=False))


def _series_norm(sp, exps, coef, dom, method, with_key_weights=True) -> float:
    Wr, WI = dom.radii(sp)
    poly_cols = np.r_[np.arange(sp.key_width), sp.A, np.arange(sp.B.start, sp.B.stop)]
    gkeys = exps[:, poly_cols]
    uniq, group = unique_rows(gkeys)
    M = _group_majorants(sp, exps, coef, group, uniq.shape[0], dom.X, method)
    a = uniq[:, sp.key_width]
    b = uniq[:, sp.key_width + 1:]
    weight = Wr ** a.astype(float)
    if sp.n:
        weight = weight * np.prod(WI[None, :] ** b.astype(float), axis=1)
    if with_key_weights:
        w = dom.widths
        if sp.n:
            weight = weight * np.exp(w.s * np.abs(uniq[:, sp.K]).sum(axis=1))
        if sp.m:
            weight = weight * w.delta ** uniq[:, sp.H.start:sp.J.stop].sum(axis=1).astype(float)
    return float((M * weight).sum())


def weighted_norm(f: TFSeries, dom: DomainSpec, method: str = "taylor") -> float:
    """Certified upper bound of ``||f||_{r,rho,xi,s,delta}``."""
    if f.nterms == 0:
        return 0.0
    return _series_norm(f.space, f.exps, f.coef, dom, method)


def row_bounds(f: TFSeries, dom: DomainSpec) -> np.ndarray:
    """Term-wise majorant of every stored row; the sum bounds the weighted norm."""
    sp = f.space
    if f.nterms == 0:
        return np.zeros(0)
    Wr, WI = dom.radii(sp)
    w = dom.widths
    ex = f.exps
    alpha = np.abs(sp.alpha(ex[:, sp.W]).astype(complex))
    out = np.abs(f.coef).astype(float) * dom.X ** ex[:, sp.E] * np.exp(alpha * dom.X)
    out *= Wr ** ex[:, sp.A].astype(float)
    if sp.n:
        out *= np.prod(WI[None, :] ** ex[:, sp.B].astype(float), axis=1)
        out *= np.exp(w.s * np.abs(ex[:, sp.K]).sum(axis=1))
    if sp.m:
        out *= w.delta ** ex[:, sp.H.start:sp.J.stop].sum(axis=1).astype(float)
    return out
