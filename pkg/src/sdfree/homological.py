"""The operator D_omega and two solvers of its homological equation.

``D_omega phi = omega_r d_x phi + lambda_khj phi`` key-wise, with
``lambda_khj = (h - j).omega_J + i k.omega_I``.

:func:`solve_homological` integrates from ``x = 0`` with the exponential
kernel and never divides by ``lambda`` or ``mu``; resonant keys only raise
the x-degree.  :func:`solve_homological_fourier` is the classical x-periodic
solution with denominators ``mu_khjl = lambda_khj + i l omega_r`` and is kept
as an independent cross-check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .norms import DomainSpec, Widths, coefficient_norm, weighted_norm
from .series import (FrequencyData, PhaseSpace, QuasiPoly, SeriesError, TermKey,
                     TFSeries, normal_mask)

__all__ = [
    "Eigenvalue",
    "SmallDivisorError",
    "XDegreeOverflow",
    "NotZeroAverageError",
    "HomologicalSolution",
    "eigenvalue",
    "apply_D_omega",
    "integrate_kernel",
    "lattice_weights",
    "solve_homological",
    "solve_homological_fourier",
    "shrunk_domain",
]


class SmallDivisorError(ArithmeticError):
    """A Fourier denominator ``mu_khjl`` vanished."""


class XDegreeOverflow(SeriesError):
    """A resonant antiderivative exceeded the x-degree cap."""


class NotZeroAverageError(SeriesError):
    pass


@dataclass(frozen=True)
class Eigenvalue:
    key: TermKey
    lam: complex
    mu: complex
    mu_weights: tuple
    resonant: bool


def eigenvalue(key: TermKey, freq: FrequencyData | PhaseSpace) -> Eigenvalue:
    """``lambda_khj`` and ``mu = lambda / omega_r`` with the exact resonance flag."""
    space = freq if isinstance(freq, PhaseSpace) else PhaseSpace(freq)
    f = space.freq
    hj = np.array(key.h, dtype=float) - np.array(key.j, dtype=float)
    lam = complex(hj @ np.array(f.omega_J)) if f.m else 0j
    if f.n:
        lam += 1j * float(np.array(key.k, dtype=float) @ np.array(f.omega_I))
    row = np.array(key.as_tuple(), dtype=np.int64)
    w = space.mu_weights(row[None, :])
    wz = w.copy()
    if space._zero_gen.size:
        wz[:, space._zero_gen] = 0
    exact_zero = bool(space.tiny_exponent(wz)[0])
    oscillating = not key.is_normal
    return Eigenvalue(key, lam, lam / f.omega_r, tuple(int(v) for v in w[0]),
                      resonant=oscillating and exact_zero)


def _lambda_rows(space: PhaseSpace, exps: np.ndarray) -> np.ndarray:
    f = space.freq
    lam = np.zeros(exps.shape[0], dtype=space.dtype)
    if f.m:
        lam += (exps[:, space.H] - exps[:, space.J]).astype(float) @ np.array(f.omega_J)
    if f.n:
        lam += 1j * (exps[:, space.K].astype(float) @ np.array(f.omega_I))
    return lam


def apply_D_omega(s: TFSeries, freq: FrequencyData | None = None) -> TFSeries:
    """``omega_r d_x s_khj + lambda_khj s_khj`` key-wise."""
    sp = s.space
    if freq is not None and freq != sp.freq:
        raise SeriesError("frequencies differ from the series' phase space")
    wr = sp.freq.omega_r
    e = s.exps[:, sp.E]
    m1 = e > 0
    e1 = s.exps[m1].copy()
    e1[:, sp.E] -= 1
    alpha = sp.alpha(s.exps[:, sp.W])
    lam = _lambda_rows(sp, s.exps)
    # split the two diagonal contributions so cancellation is detected termwise
    exps = np.vstack([e1, s.exps, s.exps])
    coef = np.concatenate([wr * e[m1] * s.coef[m1], wr * alpha * s.coef, lam * s.coef])
    return TFSeries._raw(sp, exps, coef, s.trunc)


def _series_terms(space, exps, beta, x_scale, max_x_degree, loss_tol=1e-11):
    """Number of power-series terms for nearly resonant rows (0 = closed form).

    The closed form loses about ``(e+1)!/|beta X|^{e+1}`` ulps to cancellation
    when ``|beta| X`` is small.  Rows whose predicted loss exceeds ``loss_tol``
    are integrated through the power series of ``e^{beta t}``, with the
    fewest terms whose first omitted one is below an ulp (at most up to the
    degree cap), unless that truncation is worse than the closed form.
    """
    e = exps[:, space.E]
    n_avail = max_x_degree - e
    z = np.abs(beta).astype(float) * x_scale
    eps = space.eps
    out = np.zeros(e.shape[0], dtype=np.int64)
    for i in range(e.shape[0]):
        if n_avail[i] < 1 or z[i] == 0:
            continue
        ei = int(e[i])
        loss = eps * math.factorial(ei + 1) / z[i] ** (ei + 1)
        if loss <= loss_tol:
            continue
        term, n = 1.0, 0
        while n < n_avail[i] and term > eps:
            n += 1
            term *= z[i] / n
        if term < loss:
            out[i] = n
    return out


def _kernel_rows(space: PhaseSpace, exps: np.ndarray, coef: np.ndarray, mu_w: np.ndarray,
                 max_x_degree: int | None, x_scale: float | None = None):
    """Closed form of ``int_0^x c t^e e^{alpha t} e^{mu (t - x)} dt`` row by row.

    Returns ``(exps, coef, overflow_mask, rem_exps, rem_coef)``.  Rows flagged
    in ``overflow_mask`` are resonant rows whose antiderivative would exceed
    ``max_x_degree`` and were not integrated.  With ``x_scale`` given, nearly
    resonant rows are integrated by the truncated power series instead, and
    ``rem_*`` hold the exact part of the input those truncated integrals miss.
    """
    W = space.W
    e = exps[:, space.E]
    beta_w = exps[:, W] + mu_w
    if space._zero_gen.size:
        beta_w[:, space._zero_gen] = 0
    res = space.tiny_exponent(beta_w)
    overflow = np.zeros(exps.shape[0], dtype=bool)
    if max_x_degree is not None:
        overflow = res & (e + 1 > max_x_degree)
    out_e, out_c, rem_e, rem_c = [], [], [], []
    # resonant branch: e^{-mu x} x^{e+1} / (e+1)
    r = res & ~overflow
    if r.any():
        er = exps[r].copy()
        er[:, W] = -mu_w[r]
        er[:, space.E] += 1
        out_e.append(er)
        out_c.append(coef[r] / (e[r] + 1))
    nr = ~res
    beta_all = np.zeros(exps.shape[0], dtype=space.dtype)
    if nr.any():
        beta_all[nr] = space.alpha(beta_w[nr])
    nser = np.zeros(exps.shape[0], dtype=np.int64)
    if x_scale is not None and max_x_degree is not None and nr.any():
        nser[nr] = _series_terms(space, exps[nr], beta_all[nr], x_scale, max_x_degree)
    ser = nser > 0
    if ser.any():
        # c e^{-mu x} sum_{n < N} beta^n x^{n+e+1} / (n! (n+e+1))
        es, cs, ms, bs, ns = exps[ser], coef[ser], mu_w[ser], beta_all[ser], nser[ser]
        ev = es[:, space.E]
        rem_e.append(es.copy())
        rem_c.append(cs.copy())
        for n in range(int(ns.max())):
            sel = n < ns
            base = es[sel].copy()
            base[:, W] = -ms[sel]
            base[:, space.E] = ev[sel] + n
            t = cs[sel] * bs[sel] ** n / math.factorial(n)
            rem_e.append(base.copy())
            rem_c.append(-t)
            base[:, space.E] += 1
            out_e.append(base)
            out_c.append(t / (n + ev[sel] + 1))
    nr = nr & ~ser
    if nr.any():
        beta = beta_all[nr]
        en, cn, mn = exps[nr], coef[nr], mu_w[nr]
        ev = en[:, space.E]
        for deg in np.unique(ev):
            sel = ev == deg
            b = beta[sel]
            base, c, mw = en[sel], cn[sel], mn[sel]
            fact = math.factorial(int(deg))
            # e^{alpha x} sum_i (-1)^{e-i} e!/(i! beta^{e-i+1}) x^i
            for i in range(int(deg) + 1):
                ei = base.copy()
                ei[:, space.E] = i
                out_e.append(ei)
                out_c.append(c * ((-1) ** (deg - i) * fact / math.factorial(i)) / b ** (deg - i + 1))
            # minus the value at the lower limit, carried by e^{-mu x}
            e0 = base.copy()
            e0[:, space.E] = 0
            e0[:, W] = -mw
            out_e.append(e0)
            out_c.append(-c * ((-1) ** int(deg) * fact) / b ** (deg + 1))
    z = np.zeros((0, space.width), dtype=np.int64)
    zc = np.zeros(0, dtype=space.dtype)
    cat = lambda xs, default: np.concatenate(xs) if xs else default
    return (np.vstack(out_e) if out_e else z, cat(out_c, zc), overflow,
            np.vstack(rem_e) if rem_e else z, cat(rem_c, zc))


def lattice_weights(space: PhaseSpace, mu: complex, bound: int = 16) -> np.ndarray:
    """Integer weights ``w`` with ``w @ generators == mu``, searched in ``|w_i| <= bound``.

    Raises :class:`SeriesError` when ``mu`` is not on the exponent lattice.
    """
    gens = space.generators.astype(complex)
    bound = max(1, min(bound, int((1e6 ** (1 / space.nw) - 1) // 2)))
    rng = np.arange(-bound, bound + 1)
    grids = np.meshgrid(*([rng] * space.nw), indexing="ij")
    cand = np.stack([g.reshape(-1) for g in grids], axis=1)
    vals = cand @ gens
    scale = np.abs(cand) @ np.abs(gens) + abs(mu)
    hit = np.abs(vals - mu) <= 64 * space.eps * np.maximum(scale, 1e-300)
    if not hit.any():
        raise SeriesError(f"mu={mu} is not on the exponent lattice of {space}")
    best = cand[hit][np.argmin(np.abs(cand[hit]).sum(axis=1))]
    return best.astype(np.int64)


def integrate_kernel(q: QuasiPoly, mu, max_x_degree: int | None = None) -> QuasiPoly:
    """``int_0^x q(t) e^{mu (t - x)} dt`` in closed form.

    ``mu`` is a lattice element given by its integer weight vector, or an
    :class:`Eigenvalue`.  Resonant monomials (``alpha + mu = 0``) integrate to
    ``x^{e+1}/(e+1)`` times ``e^{-mu x}``.
    """
    sp = q.space
    if isinstance(mu, Eigenvalue):
        mw = np.asarray(mu.mu_weights, dtype=np.int64)
    elif np.isscalar(mu):
        mw = lattice_weights(sp, complex(mu))
    else:
        mw = np.asarray(mu, dtype=np.int64)
    if mw.shape != (sp.nw,):
        raise SeriesError(f"mu must be a weight vector of length {sp.nw}")
    full = np.zeros((q.nterms, sp.width), dtype=np.int64)
    full[:, sp.A:] = q.exps
    ex, c, over, _, _ = _kernel_rows(sp, full, q.coef, np.tile(mw, (q.nterms, 1)), max_x_degree)
    if over.any():
        raise XDegreeOverflow(f"resonant antiderivative exceeds x-degree {max_x_degree}")
    return QuasiPoly(sp, ex[:, sp.A:], c)


@dataclass(frozen=True)
class HomologicalSolution:
    """Generator plus the ledger of one solver call.

    ``unsolved`` holds the overflow terms of ``ftilde`` left in the remainder
    (empty unless ``overflow='keep'``).  ``bound`` is ``(lhs, rhs)`` of the
    generator estimate ``||phi||_1 <= X |1/omega_r| ||ftilde||`` when a domain
    was supplied.
    """

    phi: TFSeries
    unsolved: TFSeries
    ledger: list
    bound: tuple | None = None

    @property
    def bound_ok(self) -> bool | None:
        if self.bound is None:
            return None
        return bool(self.bound[0] <= self.bound[1])


def solve_homological(ftilde: TFSeries, freq: FrequencyData | None = None,
                      max_x_degree: int | None = None, overflow: str = "raise",
                      ledger: bool = False, domain: DomainSpec | None = None,
                      method: str = "closed"):
    """Solve ``D_omega phi = ftilde`` by the kernel integral from ``x = 0``.

    Parameters
    ----------
    ftilde : TFSeries
        Zero-average series (no ``k = 0, h = j`` keys).
    max_x_degree : int, optional
        Cap on the x-degree of the generator; defaults to ``ftilde.trunc.x``.
    overflow : {'raise', 'keep'}
        What to do with resonant terms whose antiderivative would exceed the
        cap: raise :class:`XDegreeOverflow`, or leave them unsolved.
    ledger : bool
        Return a :class:`HomologicalSolution` with per-key diagnostics instead
        of the bare generator.
    domain : DomainSpec, optional
        Domain of ``ftilde``; with ``ledger`` the per-key norms and the
        generator bound on :func:`shrunk_domain` are recorded.
    method : {'closed', 'stable'}
        ``'closed'`` applies the closed-form kernel integral to every row.
        ``'stable'`` integrates nearly resonant rows (small ``|beta| X``,
        ``X = domain.X`` or 1) whose closed form would lose more than about
        five digits by the power series in ``x``; the exact part of ``ftilde`` this misses is returned in
        ``unsolved`` alongside any overflow terms, so
        ``D_omega phi = ftilde - unsolved`` still holds to rounding.

    Returns
    -------
    TFSeries, or ``(phi, unsolved)`` with ``overflow='keep'`` or ``method='stable'``, or
    :class:`HomologicalSolution` with ``ledger=True``.
    """
    sp = ftilde.space
    if freq is not None and freq != sp.freq:
        raise SeriesError("frequencies differ from the series' phase space")
    nm = normal_mask(ftilde)
    if nm.any():
        raise NotZeroAverageError(f"key {sp.key_tuple(ftilde.exps[nm][0])} is in the normal class")
    if overflow not in ("raise", "keep"):
        raise ValueError(f"unknown overflow policy {overflow!r}")
    if max_x_degree is None:
        max_x_degree = ftilde.trunc.x
    mu_w = sp.mu_weights(ftilde.exps[:, : sp.key_width])
    x_scale = None
    if method == "stable":
        x_scale = domain.X if domain is not None else 1.0
    elif method != "closed":
        raise ValueError(f"unknown method {method!r}")
    ex, c, over, rem_e, rem_c = _kernel_rows(sp, ftilde.exps, ftilde.coef, mu_w, max_x_degree,
                                             x_scale)
    if over.any() and overflow == "raise":
        row = ftilde.exps[over][0]
        raise XDegreeOverflow(
            f"resonant antiderivative at key {sp.key_tuple(row)} exceeds x-degree {max_x_degree}")
    phi = TFSeries._raw(sp, ex, c / sp.freq.omega_r, ftilde.trunc)
    unsolved = ftilde.select(over)
    if rem_e.shape[0]:
        unsolved = unsolved + TFSeries._raw(sp, rem_e, rem_c, ftilde.trunc)
    if not ledger:
        return phi if (overflow == "raise" and method == "closed") else (phi, unsolved)
    out_dom = shrunk_domain(domain, sp.freq) if domain is not None else None
    entries = []
    for key in ftilde.keys():
        ev = eigenvalue(key, sp)
        entry = {"k": list(key.k), "h": list(key.h), "j": list(key.j),
                 "lambda": [ev.lam.real, ev.lam.imag], "mu": [ev.mu.real, ev.mu.imag],
                 "resonant": ev.resonant}
        if domain is not None:
            entry["norm_before"] = coefficient_norm(ftilde.coefficient(key), domain)
            entry["norm_after"] = coefficient_norm(phi.coefficient(key), out_dom)
        entries.append(entry)
    bound = None
    if domain is not None:
        lhs = weighted_norm(phi, out_dom)
        rhs = domain.X * abs(sp.freq.inv_omega_r) * weighted_norm(ftilde - unsolved, domain)
        bound = (lhs, rhs)
    return HomologicalSolution(phi, unsolved, entries, bound)


def shrunk_domain(dom: DomainSpec, freq: FrequencyData) -> DomainSpec:
    """Domain carrying the solver output: ``s - X||w_I/w_r||``, ``delta e^{-X||w_J/w_r||}``."""
    w = dom.widths
    return dom.with_widths(Widths(w.r, w.rho, w.xi, w.s - dom.X * freq.ratio_I,
                                  w.delta * math.exp(-dom.X * freq.ratio_J)))


def solve_homological_fourier(ftilde: TFSeries, freq: FrequencyData | None = None) -> TFSeries:
    """Classical solution ``phi_khjl = f_khjl / mu_khjl`` for x-trigonometric data.

    Raises :class:`SmallDivisorError` when a denominator vanishes.
    """
    sp = ftilde.space
    if normal_mask(ftilde).any():
        raise NotZeroAverageError("ftilde has normal-class keys")
    W = ftilde.exps[:, sp.W]
    if ftilde.nterms and (W[:, : sp.m + sp.n].any() or ftilde.exps[:, sp.E].any()):
        raise SeriesError("Fourier solver needs coefficients that are trigonometric polynomials in x")
    ell = W[:, -1] if ftilde.nterms else np.zeros(0, dtype=np.int64)
    lam = _lambda_rows(sp, ftilde.exps)
    mu = lam + 1j * ell * sp.freq.omega_r
    scale = np.abs(lam) + np.abs(ell * sp.freq.omega_r)
    tiny = np.abs(mu) <= 64 * sp.eps * np.maximum(scale, 1e-300)
    if tiny.any():
        row = ftilde.exps[tiny][0]
        raise SmallDivisorError(
            f"vanishing denominator mu_khjl at key {sp.key_tuple(row)}, l={int(ell[tiny][0])}")
    return TFSeries._raw(sp, ftilde.exps.copy(), ftilde.coef / mu, ftilde.trunc)
