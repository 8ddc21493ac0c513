"""Lie series of a generator: powers ``L_phi^j g = {phi, L_phi^{j-1} g}``, the
queue operators ``Phi_h = sum_{j >= h} L_phi^j / j!`` and the one-step
transformed Hamiltonian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import load_constants
from .homological import apply_D_omega
from .norms import DomainSpec, Widths, norm_params, row_bounds, weighted_norm
from .series import (SeriesError, TFSeries, TruncationOrders, linear_combine, poisson_bracket,
                     project_average)

__all__ = [
    "DivergenceError",
    "ResidualError",
    "LieExpansion",
    "TransformResult",
    "lie_powers",
    "queue_apply",
    "queue_bound",
    "default_jmax",
    "transform_hamiltonian",
]


class DivergenceError(ArithmeticError):
    """The contraction ratio ``theta = cbar ||phi|| / d`` is not below 1."""


class ResidualError(ArithmeticError):
    """The generator does not solve the homological equation."""


def default_jmax(theta: float, tol: float = 1e-14, cap: int = 40) -> int:
    """Smallest ``J`` with ``theta^{J+1} / (1 - theta) <= tol``, clipped to ``[1, cap]``."""
    if theta <= 0:
        return 1
    if theta >= 1:
        raise DivergenceError(f"theta={theta} >= 1")
    J = math.ceil(math.log(tol * (1 - theta)) / math.log(theta)) - 1
    return int(min(max(J, 1), cap))


@dataclass(frozen=True)
class LieExpansion:
    """``[L^0 g, ..., L^jmax g]`` with the certified tail of the truncated sums.

    ``tail_bound`` bounds ``sum_{j > jmax} ||L^j g|| / j!`` on the output
    domain via ``||L^j g|| <= j! theta^j ||g||`` (applied to ``g`` or to the
    last computed power).  ``dropped`` holds the norms
    of the terms discarded by truncation in each bracket.
    """

    generator: TFSeries
    target: TFSeries
    powers: list
    jmax: int
    theta: float
    norm_g: float
    tail_bound: float
    dropped: list = field(default_factory=list)

    def weighted_sum(self, weights, start: int = 0) -> TFSeries:
        """``sum_{j = start}^{jmax} weights(j) L^j g``."""
        js = range(start, self.jmax + 1)
        sp = self.target.space
        if start > self.jmax:
            return TFSeries.zero(sp, self.target.trunc)
        return linear_combine([weights(j) for j in js], [self.powers[j] for j in js])

    def dropped_mass(self, weights=lambda j: 1.0 / math.factorial(j), start: int = 1) -> float:
        return float(sum(weights(j) * self.dropped[j - 1] for j in range(max(start, 1), self.jmax + 1)))


def _theta(phi, domain, primed, cbar):
    if cbar is None:
        cbar = load_constants()["cbar"]
    d = norm_params(domain, primed).d
    nphi = weighted_norm(phi, domain)
    return cbar * nphi / d, nphi, d


def lie_powers(phi: TFSeries, g: TFSeries, jmax: int | None = None, *, domain: DomainSpec,
               primed: Widths, cbar: float | None = None, trunc: TruncationOrders | None = None,
               tol: float = 1e-14, jmax_cap: int = 40, prune: float = 1e-17) -> LieExpansion:
    """Iterated brackets of ``g`` with ``phi``.

    Parameters
    ----------
    domain : DomainSpec
        Domain on which ``phi`` and ``g`` are analytic.
    primed : Widths
        Widths lost by the transformation; results live on ``domain - primed``.
    cbar : float, optional
        Constant of the geometric bound; defaults to the calibrated value.
    jmax : int, optional
        Without it the chain stops adaptively: at the first ``J`` whose tail
        bound is below ``tol ||g||``, or once the measured norms stop
        decreasing (rounding floor), and never beyond :func:`default_jmax`.
    prune : float
        Terms of ``L^j g / j!`` whose summed term-wise majorant stays below
        ``prune`` times the majorant of ``L^1 g`` are discarded and counted in
        ``dropped``.

    Notes
    -----
    The tail ``sum_{j > J} ||L^j g|| / j!`` is bounded twice and the smaller
    value is kept: from ``g`` by ``theta^{J+1}/(1-theta) ||g||``, and from the
    last power, since ``L^{J+i} g = L^i (L^J g)`` gives
    ``||L^J g||_domain / J! * theta / (1 - theta)``.

    Raises
    ------
    DivergenceError
        If ``theta = cbar ||phi|| / d >= 1``, i.e. the geometric bound on
        the Lie powers does not converge.
    """
    theta, _, d = _theta(phi, domain, primed, cbar)
    if theta >= 1:
        raise DivergenceError(
            f"contraction ratio theta = cbar*||phi||/d = {theta:.6g} >= 1 (d = {d:.6g}); "
            "the geometric bound on the Lie powers does not apply")
    adaptive = jmax is None
    if adaptive:
        jmax = default_jmax(theta, tol, jmax_cap)
    if jmax < 0:
        raise ValueError("jmax must be non-negative")
    if trunc is None:
        trunc = phi.trunc.join(g.trunc)
    out_dom = domain.shrink(primed)
    norm_g = weighted_norm(g, domain)
    powers = [g.with_trunc(trunc)]
    dropped = []
    scale1 = None
    geo = lambda J: 0.0 if (theta == 0 or norm_g == 0) else norm_g * theta ** (J + 1) / (1 - theta)
    last_tail = geo(0)
    tail = geo(jmax)
    for j in range(1, jmax + 1):
        prev = powers[-1]
        if prev.is_zero or phi.is_zero:
            powers.append(TFSeries.zero(g.space, trunc))
            dropped.append(0.0)
            tail = 0.0
            if adaptive:
                break
            continue
        nxt, drop = poisson_bracket(phi, prev, trunc, keep_dropped=True)
        lost = weighted_norm(drop, out_dom) if drop.nterms else 0.0
        if prune > 0 and nxt.nterms:
            if scale1 is None:
                scale1 = float(row_bounds(nxt, out_dom).sum())
            nxt, small = _prune(nxt, out_dom, prune * scale1 * math.factorial(j))
            lost += small
        powers.append(nxt)
        dropped.append(lost)
        from_last = weighted_norm(nxt, domain) / math.factorial(j) * theta / (1 - theta)
        tail = min(geo(j), from_last)
        if adaptive and (tail <= tol * norm_g or from_last > 0.5 * last_tail):
            break
        last_tail = from_last
    J = len(powers) - 1
    return LieExpansion(phi, g, powers, J, float(theta), float(norm_g), float(tail), dropped)


def _prune(s: TFSeries, dom: DomainSpec, budget: float):
    """Drop the smallest rows whose majorants sum to at most ``budget``."""
    b = row_bounds(s, dom)
    order = np.argsort(b, kind="stable")
    cum = np.cumsum(b[order])
    n = int(np.searchsorted(cum, budget, side="right"))
    if n == 0:
        return s, 0.0
    keep = np.ones(s.nterms, dtype=bool)
    keep[order[:n]] = False
    return s.select(keep), float(cum[n - 1])


def queue_apply(exp: LieExpansion, h: int) -> tuple[TFSeries, float]:
    """``Phi_h g`` truncated at ``jmax`` and the bound on what was left out."""
    if h < 0 or h > exp.jmax:
        raise ValueError(f"queue index h={h} outside 0..jmax={exp.jmax}")
    return exp.weighted_sum(lambda j: 1.0 / math.factorial(j), start=h), exp.tail_bound


def queue_bound(exp: LieExpansion, h: int) -> float:
    """``theta^h / (1 - theta) ||g||``, the bound of the whole ``Phi_h g``."""
    if exp.norm_g == 0:
        return 0.0
    return exp.norm_g * exp.theta ** h / (1 - exp.theta)


@dataclass
class TransformResult:
    """``H_plus = H0 + g + fbar + fplus`` with the step's certified numbers.

    Norms are upper bounds on the output domain ``domain - primed`` unless
    named ``*_in``; ``tail`` bounds the Lie series terms beyond ``jmax`` and
    ``dropped_mass`` the truncated terms (first-order accounting).
    """

    H0: TFSeries
    g: TFSeries
    fbar: TFSeries
    fplus: TFSeries
    phi: TFSeries
    theta: float
    jmax: int
    tail: float
    dropped_mass: float
    residual: float
    norms: dict
    unsolved: TFSeries | None = None

    @property
    def g_next(self) -> TFSeries:
        return self.g + self.fbar

    def hamiltonian(self) -> TFSeries:
        return self.H0 + self.g + self.fbar + self.fplus

    def as_dict(self) -> dict:
        return {"theta": self.theta, "jmax": self.jmax, "tail": self.tail,
                "dropped_mass": self.dropped_mass, "residual": self.residual,
                "norms": dict(self.norms),
                "unsolved_terms": 0 if self.unsolved is None else self.unsolved.nterms}


def transform_hamiltonian(H0: TFSeries, g: TFSeries, f: TFSeries, phi: TFSeries,
                          jmax: int | None = None, *, domain: DomainSpec, primed: Widths,
                          cbar: float | None = None, trunc: TruncationOrders | None = None,
                          unsolved: TFSeries | None = None, tol: float = 1e-14,
                          residual_tol: float = 1e-10, jmax_cap: int = 40,
                          prune: float = 1e-17) -> TransformResult:
    """``H o Phi`` for ``H = H0 + g + f`` and the time-1 flow of ``phi``.

    ``phi`` must solve ``D_omega phi = ftilde - unsolved`` where ``unsolved``
    are the off-average terms the solver left alone (x-degree overflow); they
    join the remainder.  The remainder
    ``fplus = Phi_2 H0 + Phi_1 g + Phi_1 f + unsolved`` is formed without
    bracketing ``H0``::

        Phi_2 H0 = -sum_{j >= 1} L^j(ftilde_s) / (j+1)!
        Phi_1 g  = +sum_{j >= 0} L^j(g_1) / (j+1)!,   g_1 = {phi, g}

    ``ftilde_s = ftilde - unsolved``.  Since ``L^j g_1 = L^{j+1} g`` and
    ``Phi_1 f`` carries the same weights ``1/j!``, the brackets of ``g``,
    ``fbar`` and ``unsolved`` are generated in one chain.
    """
    sp = f.space
    if trunc is None:
        trunc = f.trunc.join(phi.trunc).join(g.trunc)
    fbar, ftilde = project_average(f)
    if unsolved is None:
        unsolved = TFSeries.zero(sp, f.trunc)
    solved = ftilde - unsolved
    res = apply_D_omega(phi) - solved
    scale = float(np.abs(solved.coef).max()) if solved.nterms else 1.0
    residual = float(np.abs(res.coef).max() / scale) if res.nterms else 0.0
    if residual > residual_tol:
        raise ResidualError(f"homological residual {residual:.3g} exceeds {residual_tol:g}")
    out_dom = domain.shrink(primed)
    B = g + fbar + unsolved
    chainB = lie_powers(phi, B, jmax, domain=domain, primed=primed, cbar=cbar, trunc=trunc,
                        tol=tol, jmax_cap=jmax_cap, prune=prune)
    chainF = lie_powers(phi, solved, jmax, domain=domain, primed=primed, cbar=cbar, trunc=trunc,
                        tol=tol, jmax_cap=jmax_cap, prune=prune)
    J = max(chainB.jmax, chainF.jmax)
    wB = lambda j: 1.0 / math.factorial(j)
    # f~ chain: Phi_1 contributes 1/j!, Phi_2 H0 contributes -1/(j+1)!
    wF = lambda j: j / math.factorial(j + 1)
    fplus = (chainB.weighted_sum(wB, 1) + chainF.weighted_sum(wF, 1) + unsolved).with_trunc(trunc)
    theta = chainB.theta
    tail = chainB.tail_bound + chainF.tail_bound
    dropped = chainB.dropped_mass(wB) + chainF.dropped_mass(wF)
    g1 = poisson_bracket(phi, g, trunc) if not g.is_zero else None
    norms = {
        "f_in": weighted_norm(f, domain),
        "ftilde_in": weighted_norm(ftilde, domain),
        "phi_in": weighted_norm(phi, domain),
        "g_in": weighted_norm(g, domain),
        "fplus": weighted_norm(fplus, out_dom),
        "fbar": weighted_norm(fbar, out_dom),
        "phi_g": weighted_norm(g1, domain) if g1 is not None else 0.0,
    }
    norms["fplus_certified"] = norms["fplus"] + tail + dropped
    return TransformResult(H0, g, fbar, fplus, phi, theta, J, float(tail), float(dropped),
                           residual, norms, unsolved)
