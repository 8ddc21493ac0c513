"""
Sparse truncated Taylor--Fourier series on R x I x Xi x T^n x B^{2m}.

A series is a finite sum of monomials

    c * exp(i k.phi) * p^h * q^j * (r - r0)^a * (I - I0)^b * x^e * exp(alpha x)

stored as one integer exponent row per monomial plus a complex coefficient.
The exponential rate ``alpha`` lives on an integer lattice spanned by the
generators ``omega_J/omega_r``, ``i omega_I/omega_r`` and ``i`` (the last one
carries x-periodic data), so products and the homological kernel integral
only ever add integer weight vectors and term merging is exact.

Coordinates come in three conjugate pairs (momentum, position):
``(r, x)``, ``(I_i, phi_i)`` and ``(q_i, p_i)``.  With this orientation the
bracket satisfies ``{phi, H0} = -(omega_r d_x + lambda_khj) phi`` with
``lambda_khj = (h - j).omega_J + i k.omega_I`` for ``H0 = omega.(r, I, pq)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "FrequencyData",
    "TruncationOrders",
    "PhaseSpace",
    "TermKey",
    "QuasiPoly",
    "TFSeries",
    "SeriesError",
    "DimensionError",
    "TruncationError",
    "build_series",
    "linear_combine",
    "multiply",
    "partial_derivative",
    "poisson_bracket",
    "project_average",
    "evaluate",
    "max_relative_difference",
    "COORDINATES",
]


class SeriesError(ValueError):
    """Base class for malformed series operations."""


class DimensionError(SeriesError):
    pass


class TruncationError(SeriesError):
    pass


@dataclass(frozen=True)
class FrequencyData:
    """Constant frequencies of ``H0 = omega_r r + omega_I.I + omega_J.J``."""

    omega_r: float
    omega_I: tuple = ()
    omega_J: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "omega_I", tuple(float(w) for w in self.omega_I))
        object.__setattr__(self, "omega_J", tuple(float(w) for w in self.omega_J))
        object.__setattr__(self, "omega_r", float(self.omega_r))
        if self.omega_r == 0.0:
            raise SeriesError("omega_r must be non-zero")

    @property
    def n(self) -> int:
        return len(self.omega_I)

    @property
    def m(self) -> int:
        return len(self.omega_J)

    @property
    def ratio_I(self) -> float:
        """``||omega_I / omega_r||``: sum of component moduli."""
        return float(sum(abs(w) for w in self.omega_I) / abs(self.omega_r))

    @property
    def ratio_J(self) -> float:
        return float(sum(abs(w) for w in self.omega_J) / abs(self.omega_r))

    @property
    def inv_omega_r(self) -> float:
        return 1.0 / abs(self.omega_r)


@dataclass(frozen=True)
class TruncationOrders:
    """Hard caps: max |k|_1, total (p, q) degree, x-degree, (r, I)-degree."""

    k: int = 8
    pq: int = 6
    x: int = 12
    ri: int = 6

    def join(self, other: "TruncationOrders") -> "TruncationOrders":
        return TruncationOrders(
            max(self.k, other.k), max(self.pq, other.pq),
            max(self.x, other.x), max(self.ri, other.ri),
        )

    def as_dict(self) -> dict:
        return {"k": self.k, "pq": self.pq, "x": self.x, "ri": self.ri}


@dataclass(frozen=True)
class TermKey:
    """Taylor--Fourier index ``(k, h, j)`` of ``exp(i k.phi) p^h q^j``."""

    k: tuple
    h: tuple
    j: tuple

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))
        object.__setattr__(self, "h", tuple(int(v) for v in self.h))
        object.__setattr__(self, "j", tuple(int(v) for v in self.j))
        if len(self.h) != len(self.j):
            raise DimensionError("h and j must have the same length")
        if any(v < 0 for v in self.h + self.j):
            raise SeriesError(f"negative (p, q) power in {self}")

    @property
    def is_normal(self) -> bool:
        """True when ``k = 0`` and ``h = j``."""
        return not any(self.k) and self.h == self.j

    def as_tuple(self) -> tuple:
        return self.k + self.h + self.j


class PhaseSpace:
    """Shared context of a computation: dimensions, basepoint, exponent lattice.

    Parameters
    ----------
    freq : FrequencyData
        Frequencies of the unperturbed Hamiltonian (fixes the lattice).
    basepoint : tuple, optional
        ``(r0, I0)``; defaults to the origin.
    dtype : numpy complex dtype
        ``np.complex128`` or ``np.clongdouble`` for the extended mode.
    """

    def __init__(self, freq: FrequencyData, basepoint=None, dtype=np.complex128):
        self.freq = freq
        self.n = freq.n
        self.m = freq.m
        if basepoint is None:
            basepoint = (0.0, (0.0,) * self.n)
        r0, I0 = basepoint
        self.r0 = float(r0)
        self.I0 = tuple(float(v) for v in I0)
        if len(self.I0) != self.n:
            raise DimensionError("basepoint I0 has the wrong length")
        self.dtype = np.dtype(dtype)
        if self.dtype.kind != "c":
            raise SeriesError("coefficient dtype must be complex")
        real = np.finfo(self.dtype).dtype
        wr = real.type(freq.omega_r)
        gens = [real.type(w) / wr + 0j for w in freq.omega_J]
        gens += [1j * (real.type(w) / wr) for w in freq.omega_I]
        gens += [1j]
        self.generators = np.array(gens, dtype=self.dtype)
        self.nw = self.m + self.n + 1
        # column layout of exponent rows
        n, m = self.n, self.m
        self.K = slice(0, n)
        self.H = slice(n, n + m)
        self.J = slice(n + m, n + 2 * m)
        self.A = n + 2 * m
        self.B = slice(n + 2 * m + 1, 2 * n + 2 * m + 1)
        self.E = 2 * n + 2 * m + 1
        self.W = slice(2 * n + 2 * m + 2, 2 * n + 2 * m + 2 + self.nw)
        self.width = 2 * n + 2 * m + 2 + self.nw
        self.key_width = n + 2 * m
        self._zero_gen = np.flatnonzero(self.generators == 0)

    # weight columns: [J weights | I weights | x-periodic weight]
    @property
    def wJ(self) -> slice:
        return slice(0, self.m)

    @property
    def wI(self) -> slice:
        return slice(self.m, self.m + self.n)

    @property
    def eps(self) -> float:
        return float(np.finfo(self.dtype).eps)

    def __eq__(self, other):
        if not isinstance(other, PhaseSpace):
            return NotImplemented
        return (self.freq == other.freq and self.r0 == other.r0
                and self.I0 == other.I0 and self.dtype == other.dtype)

    def __hash__(self):
        return hash((self.freq, self.r0, self.I0, str(self.dtype)))

    def __repr__(self):
        return (f"PhaseSpace(n={self.n}, m={self.m}, freq={self.freq}, "
                f"basepoint=({self.r0}, {self.I0}), dtype={self.dtype})")

    def alpha(self, weights: np.ndarray) -> np.ndarray:
        """Numeric exponent values ``weights @ generators``."""
        w = np.asarray(weights)
        if w.shape[-1] == 0:
            return np.zeros(w.shape[:-1], dtype=self.dtype)
        return w.astype(np.finfo(self.dtype).dtype) @ self.generators

    def mu_weights(self, keys: np.ndarray) -> np.ndarray:
        """Lattice weights of ``mu_khj = lambda_khj / omega_r`` for key rows."""
        keys = np.asarray(keys)
        w = np.zeros(keys.shape[:-1] + (self.nw,), dtype=np.int64)
        w[..., self.wJ] = keys[..., self.H] - keys[..., self.J]
        w[..., self.wI] = keys[..., self.K]
        return w

    def canonical_weights(self, exps: np.ndarray) -> np.ndarray:
        """Zero the weight columns of vanishing generators (in place)."""
        if self._zero_gen.size:
            W = exps[:, self.W]
            W[:, self._zero_gen] = 0
            exps[:, self.W] = W
        return exps

    def tiny_exponent(self, weights: np.ndarray) -> np.ndarray:
        """Mask of lattice elements that vanish up to rounding.

        Exact zeros of the weight vector are caught directly; the floating test
        only catches cancellations among dependent generators (such as
        ``omega_I = -omega_r`` against the x-periodic generator) and uses a
        bound of a few ulps, so genuine near-resonances stay non-resonant.
        """
        w = np.asarray(weights)
        val = self.alpha(w)
        scale = np.abs(w).astype(float) @ np.abs(self.generators).astype(float) if w.shape[-1] else 0.0
        return (~w.any(axis=-1)) | (np.abs(val) <= 64 * self.eps * np.maximum(scale, 1e-300))

    def key_tuple(self, row) -> TermKey:
        row = [int(v) for v in row]
        n, m = self.n, self.m
        return TermKey(tuple(row[:n]), tuple(row[n:n + m]), tuple(row[n + m:n + 2 * m]))


def _check_space(spaces):
    first = spaces[0]
    for s in spaces[1:]:
        if s is not first and s != first:
            raise DimensionError(
                "series live on different phase spaces (dimensions, frequencies or basepoint differ)")
    return first


def unique_rows(rows: np.ndarray):
    """``np.unique(rows, axis=0, return_inverse=True)`` for integer rows.

    Rows are packed into one int64 by mixed radix (lexicographic order is
    preserved), which is much faster than the structured-dtype sort; falls
    back to ``np.unique(axis=0)`` when the ranges do not fit.
    """
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    if rows.shape[0] == 0 or rows.shape[1] == 0:
        return np.unique(rows, axis=0, return_inverse=True)
    lo = rows.min(axis=0)
    span = rows.max(axis=0) - lo + 1
    if float(np.prod(span.astype(float))) >= 2.0 ** 62:
        u, inv = np.unique(rows, axis=0, return_inverse=True)
        return u, inv.reshape(-1)
    ids = np.zeros(rows.shape[0], dtype=np.int64)
    for col in range(rows.shape[1]):
        ids = ids * span[col] + (rows[:, col] - lo[col])
    uid, first, inv = np.unique(ids, return_index=True, return_inverse=True)
    return rows[first], inv.reshape(-1)


def _merge(space: PhaseSpace, exps: np.ndarray, coef: np.ndarray, mag: np.ndarray):
    """Sum duplicate rows; returns sorted unique rows, sums and summed moduli."""
    exps = space.canonical_weights(np.ascontiguousarray(exps, dtype=np.int64))
    uniq, inv = unique_rows(exps)
    order = np.argsort(inv, kind="stable")
    if uniq.shape[0] == exps.shape[0]:
        return uniq, coef[order], mag[order]
    sinv = inv[order]
    starts = np.flatnonzero(np.r_[True, sinv[1:] != sinv[:-1]])
    return uniq, np.add.reduceat(coef[order], starts), np.add.reduceat(mag[order], starts)


def _prune_cancelled(space, exps, merged, mag):
    keep = (merged != 0) & (np.abs(merged) > 32 * space.eps * mag)
    return exps[keep], merged[keep]


def _canonicalize(space: PhaseSpace, exps: np.ndarray, coef: np.ndarray):
    """Merge duplicate rows, sort lexicographically, prune cancelled terms.

    A merged coefficient is pruned when it is exactly zero or when its modulus
    is at the rounding level of the contributions that produced it.
    """
    if exps.shape[0] == 0:
        return np.zeros((0, space.width), dtype=np.int64), np.zeros(0, dtype=space.dtype)
    coef = np.asarray(coef, dtype=space.dtype)
    return _prune_cancelled(space, *_merge(space, exps, coef, np.abs(coef)))


class _Accumulator:
    """Streaming sum of raw rows with bounded memory.

    Pending rows are merged whenever they exceed ``limit``; moduli of the
    contributions are carried along so cancellation pruning matches a
    one-shot :func:`_canonicalize`.
    """

    def __init__(self, space: PhaseSpace, limit: int = 2_000_000):
        self.space = space
        self.limit = limit
        self.e, self.c, self.m = [], [], []
        self.pending = 0

    def add(self, exps, coef, mag=None):
        if exps.shape[0] == 0:
            return
        coef = np.asarray(coef, dtype=self.space.dtype)
        self.e.append(exps)
        self.c.append(coef)
        self.m.append(np.abs(coef) if mag is None else mag)
        self.pending += exps.shape[0]
        if self.pending > self.limit:
            self._flush()

    def _flush(self):
        if len(self.e) > 1 or self.pending:
            u, c, m = _merge(self.space, np.vstack(self.e), np.concatenate(self.c),
                             np.concatenate(self.m))
            self.e, self.c, self.m = [u], [c], [m]
            self.pending = 0

    def series(self, trunc) -> "TFSeries":
        sp = self.space
        if not self.e:
            return TFSeries.zero(sp, trunc)
        self._flush()
        e, c = _prune_cancelled(sp, self.e[0], self.c[0], self.m[0])
        return TFSeries._canonical(sp, e, c, trunc)


class QuasiPoly:
    """Coefficient function of ``(r, I, x)``.

    A finite sum of ``c (r - r0)^a (I - I0)^b x^e exp(alpha x)`` with
    ``alpha`` on the exponent lattice of ``space``.  Rows of ``exps`` are
    ``[a, b_1..b_n, e, w_1..w_nw]``.
    """

    def __init__(self, space: PhaseSpace, exps=None, coef=None):
        self.space = space
        width = 1 + space.n + 1 + space.nw
        if exps is None:
            exps = np.zeros((0, width), dtype=np.int64)
            coef = np.zeros(0, dtype=space.dtype)
        exps = np.asarray(exps, dtype=np.int64).reshape(-1, width)
        if np.any(exps[:, : 2 + space.n] < 0):
            raise SeriesError("negative polynomial exponent in QuasiPoly")
        full = np.zeros((exps.shape[0], space.width), dtype=np.int64)
        full[:, space.A:] = exps
        full, coef = _canonicalize(space, full, np.asarray(coef, dtype=space.dtype).reshape(-1))
        self.exps = full[:, space.A:]
        self.coef = coef

    @classmethod
    def from_terms(cls, space: PhaseSpace, terms: Iterable) -> "QuasiPoly":
        """Build from ``(c, a, b, e, w)`` tuples; ``b``/``w`` default to zeros."""
        rows, cs = [], []
        for t in terms:
            c, a, b, e, w = (tuple(t) + (None,) * 5)[:5]
            a = 0 if a is None else a
            e = 0 if e is None else e
            b = (0,) * space.n if b is None else tuple(b)
            w = (0,) * space.nw if w is None else tuple(w)
            if len(b) != space.n or len(w) != space.nw:
                raise DimensionError("QuasiPoly term has wrong b/w length")
            rows.append((a,) + b + (e,) + w)
            cs.append(c)
        return cls(space, np.array(rows, dtype=np.int64).reshape(len(rows), -1), np.array(cs))

    @classmethod
    def constant(cls, space: PhaseSpace, c=1.0) -> "QuasiPoly":
        return cls.from_terms(space, [(c,)])

    @property
    def nterms(self) -> int:
        return self.coef.shape[0]

    @property
    def x_degree(self) -> int:
        return int(self.exps[:, 1 + self.space.n].max()) if self.nterms else 0

    @property
    def ri_degree(self) -> int:
        return int(self.exps[:, : 1 + self.space.n].sum(axis=1).max()) if self.nterms else 0

    def _as_series(self) -> "TFSeries":
        full = np.zeros((self.nterms, self.space.width), dtype=np.int64)
        full[:, self.space.A:] = self.exps
        return TFSeries._raw(self.space, full, self.coef, _loose_trunc(full, self.space))

    def __add__(self, other):
        if not isinstance(other, QuasiPoly):
            other = QuasiPoly.constant(self.space, other)
        _check_space([self.space, other.space])
        return QuasiPoly(self.space, np.vstack([self.exps, other.exps]), np.r_[self.coef, other.coef])

    __radd__ = __add__

    def __neg__(self):
        return QuasiPoly(self.space, self.exps, -self.coef)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, QuasiPoly):
            return QuasiPoly(self.space, self.exps, self.coef * other)
        _check_space([self.space, other.space])
        prod = multiply(self._as_series(), other._as_series(), trunc=_INF_TRUNC)
        return prod.coefficient(TermKey((0,) * self.space.n, (0,) * self.space.m, (0,) * self.space.m))

    __rmul__ = __mul__

    def derivative(self, coord: str) -> "QuasiPoly":
        """Derivative in ``'r'``, ``'I<i>'`` or ``'x'``."""
        s = partial_derivative(self._as_series(), coord)
        return s.coefficient(TermKey((0,) * self.space.n, (0,) * self.space.m, (0,) * self.space.m))

    def __call__(self, r, I, x):
        sp = self.space
        I = np.atleast_1d(np.asarray(I, dtype=complex))
        a = self.exps[:, 0]
        b = self.exps[:, 1:1 + sp.n]
        e = self.exps[:, 1 + sp.n]
        w = self.exps[:, 2 + sp.n:]
        alpha = sp.alpha(w)
        val = self.coef * (r - sp.r0) ** a * np.prod((I - np.array(sp.I0)) ** b, axis=1) \
            * x ** e * np.exp(alpha * x)
        return complex(val.sum())

    def terms(self):
        """Iterate ``(c, a, b, e, w)``."""
        n = self.space.n
        for row, c in zip(self.exps, self.coef):
            yield (complex(c), int(row[0]), tuple(int(v) for v in row[1:1 + n]),
                   int(row[1 + n]), tuple(int(v) for v in row[2 + n:]))

    def __eq__(self, other):
        if not isinstance(other, QuasiPoly):
            return NotImplemented
        return (self.space == other.space and self.exps.shape == other.exps.shape
                and np.array_equal(self.exps, other.exps) and np.array_equal(self.coef, other.coef))

    def __repr__(self):
        return f"QuasiPoly({list(self.terms())})"


_INF_TRUNC = TruncationOrders(10 ** 6, 10 ** 6, 10 ** 6, 10 ** 6)


def _loose_trunc(exps: np.ndarray, space: PhaseSpace) -> TruncationOrders:
    """Smallest truncation orders admitting every row of ``exps``."""
    if exps.shape[0] == 0:
        return TruncationOrders(0, 0, 0, 0)
    return TruncationOrders(
        int(np.abs(exps[:, space.K]).sum(axis=1).max()) if space.n else 0,
        int(exps[:, space.H.start:space.J.stop].sum(axis=1).max()) if space.m else 0,
        int(exps[:, space.E].max()),
        int(exps[:, space.A:space.B.stop].sum(axis=1).max()),
    )


def _admits(space: PhaseSpace, exps: np.ndarray, trunc: TruncationOrders) -> np.ndarray:
    ok = exps[:, space.E] <= trunc.x
    ok &= exps[:, space.A:space.B.stop].sum(axis=1) <= trunc.ri
    if space.n:
        ok &= np.abs(exps[:, space.K]).sum(axis=1) <= trunc.k
    if space.m:
        ok &= exps[:, space.H.start:space.J.stop].sum(axis=1) <= trunc.pq
    return ok


_TERM_FIELDS = frozenset("c k h j a b e w".split())


class TFSeries:
    """Immutable sparse Taylor--Fourier series.

    Do not call the constructor with unchecked data; use :func:`build_series`,
    :meth:`from_terms` or the arithmetic operators.
    """

    def __init__(self, space: PhaseSpace, exps, coef, trunc: TruncationOrders | None = None,
                 check: bool = True):
        exps = np.asarray(exps, dtype=np.int64).reshape(-1, space.width)
        coef = np.asarray(coef, dtype=space.dtype).reshape(-1)
        if exps.shape[0] != coef.shape[0]:
            raise SeriesError("exponent rows and coefficients differ in length")
        if trunc is None:
            trunc = TruncationOrders()
        if check:
            bad = np.any(exps[:, space.H.start:space.E + 1] < 0, axis=1)
            if bad.any():
                raise SeriesError(f"negative exponent in key {space.key_tuple(exps[bad][0])}")
            over = ~_admits(space, exps, trunc)
            if over.any():
                row = exps[over][0]
                raise TruncationError(
                    f"term with key {space.key_tuple(row)} (a={row[space.A]}, e={row[space.E]}) "
                    f"violates truncation {trunc}")
            exps, coef = _canonicalize(space, exps, coef)
        self.space = space
        self.exps = exps
        self.coef = coef
        self.trunc = trunc
        self.exps.setflags(write=False)
        self.coef.setflags(write=False)

    @classmethod
    def _canonical(cls, space, exps, coef, trunc):
        obj = cls.__new__(cls)
        obj.space = space
        obj.exps, obj.coef = exps, coef
        obj.trunc = trunc
        obj.exps.setflags(write=False)
        obj.coef.setflags(write=False)
        return obj

    @classmethod
    def _raw(cls, space, exps, coef, trunc):
        obj = cls.__new__(cls)
        obj.space = space
        obj.exps, obj.coef = _canonicalize(space, exps, coef)
        obj.trunc = trunc
        obj.exps.setflags(write=False)
        obj.coef.setflags(write=False)
        return obj

    # -- construction helpers -------------------------------------------------
    @classmethod
    def zero(cls, space: PhaseSpace, trunc: TruncationOrders | None = None) -> "TFSeries":
        return cls(space, np.zeros((0, space.width)), np.zeros(0), trunc)

    @classmethod
    def from_terms(cls, space: PhaseSpace, terms: Iterable[dict] | Iterable[tuple],
                   trunc: TruncationOrders | None = None) -> "TFSeries":
        """Build from monomial records.

        Each term is a dict with keys among ``c, k, h, j, a, b, e, w``
        (missing entries are zero; ``c`` defaults to 1).
        """
        rows, cs = [], []
        n, m, nw = space.n, space.m, space.nw
        for t in terms:
            t = dict(t)
            extra = set(t) - _TERM_FIELDS
            if extra:
                raise SeriesError(f"unknown term fields {sorted(extra)}")
            k = tuple(t.get("k", (0,) * n))
            h = tuple(t.get("h", (0,) * m))
            j = tuple(t.get("j", (0,) * m))
            b = tuple(t.get("b", (0,) * n))
            w = tuple(t.get("w", (0,) * nw))
            if len(k) != n or len(h) != m or len(j) != m or len(b) != n or len(w) != nw:
                raise DimensionError(f"term {t} does not match dimensions n={n}, m={m}")
            rows.append(k + h + j + (int(t.get("a", 0)),) + b + (int(t.get("e", 0)),) + w)
            cs.append(t.get("c", 1.0))
        return cls(space, np.array(rows, dtype=np.int64).reshape(len(rows), space.width),
                   np.array(cs, dtype=space.dtype), trunc)

    @classmethod
    def H0(cls, space: PhaseSpace, trunc: TruncationOrders | None = None) -> "TFSeries":
        """``omega_r (r - r0) + omega_I.(I - I0) + omega_J.pq`` (constants dropped)."""
        f = space.freq
        terms = [{"c": f.omega_r, "a": 1}]
        for i, w in enumerate(f.omega_I):
            b = [0] * space.n
            b[i] = 1
            terms.append({"c": w, "b": b})
        for i, w in enumerate(f.omega_J):
            h = [0] * space.m
            h[i] = 1
            terms.append({"c": w, "h": h, "j": h})
        return cls.from_terms(space, terms, trunc)

    # -- inspection -------------------------------------------------------------
    @property
    def nterms(self) -> int:
        return int(self.coef.shape[0])

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def m(self) -> int:
        return self.space.m

    @property
    def is_zero(self) -> bool:
        return self.nterms == 0

    @cached_property
    def _key_groups(self):
        sp = self.space
        keys = self.exps[:, : sp.key_width]
        if keys.shape[0] == 0:
            return keys, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        uniq, inv = unique_rows(keys)
        start = np.full(uniq.shape[0], keys.shape[0], dtype=np.int64)
        np.minimum.at(start, inv, np.arange(keys.shape[0]))
        return uniq, np.sort(start), np.r_[np.sort(start)[1:], keys.shape[0]]

    def keys(self) -> list[TermKey]:
        """Stored Taylor--Fourier keys, in canonical order."""
        uniq, starts, _ = self._key_groups
        rows = self.exps[starts, : self.space.key_width]
        return [self.space.key_tuple(r) for r in rows]

    def coefficient(self, key: TermKey) -> QuasiPoly:
        row = np.array(key.as_tuple(), dtype=np.int64)
        mask = np.all(self.exps[:, : self.space.key_width] == row, axis=1)
        return QuasiPoly(self.space, self.exps[mask, self.space.A:], self.coef[mask])

    def items(self):
        for key in self.keys():
            yield key, self.coefficient(key)

    def __len__(self):
        return len(self.keys())

    @property
    def realness(self) -> bool:
        return self.is_real()

    def conjugate(self) -> "TFSeries":
        """Complex conjugate as a function on the real phase space."""
        sp = self.space
        e = self.exps.copy()
        e[:, sp.K] *= -1
        W = e[:, sp.W]
        W[:, sp.m:] *= -1
        e[:, sp.W] = W
        return TFSeries._raw(sp, e, np.conj(self.coef), self.trunc)

    def is_real(self, rtol: float = 1e-12) -> bool:
        return max_relative_difference(self, self.conjugate()) <= rtol

    def real_part(self) -> "TFSeries":
        return (self + self.conjugate()) * 0.5

    # -- arithmetic ----------------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, TFSeries):
            return other
        return TFSeries.from_terms(self.space, [{"c": other}], self.trunc)

    def __add__(self, other):
        return linear_combine([1.0, 1.0], [self, self._coerce(other)])

    __radd__ = __add__

    def __sub__(self, other):
        return linear_combine([1.0, -1.0], [self, self._coerce(other)])

    def __rsub__(self, other):
        return linear_combine([-1.0, 1.0], [self, self._coerce(other)])

    def __neg__(self):
        return TFSeries(self.space, self.exps, -self.coef, self.trunc, check=False)

    def __mul__(self, other):
        if isinstance(other, TFSeries):
            return multiply(self, other)
        return linear_combine([other], [self])

    def __rmul__(self, other):
        return linear_combine([other], [self])

    def __truediv__(self, other):
        return linear_combine([1.0 / other], [self])

    def with_trunc(self, trunc: TruncationOrders, keep_dropped: bool = False):
        """Re-truncate; optionally return the dropped part as well."""
        ok = _admits(self.space, self.exps, trunc)
        kept = TFSeries(self.space, self.exps[ok], self.coef[ok], trunc, check=False)
        if keep_dropped:
            return kept, TFSeries(self.space, self.exps[~ok], self.coef[~ok], self.trunc, check=False)
        return kept

    def select(self, mask: np.ndarray) -> "TFSeries":
        return TFSeries(self.space, self.exps[mask], self.coef[mask], self.trunc, check=False)

    def __call__(self, point):
        return evaluate(self, point)

    def __repr__(self):
        return f"TFSeries(n={self.n}, m={self.m}, keys={len(self)}, terms={self.nterms}, trunc={self.trunc})"

    # -- serialization -----------------------------------------------------------
    def to_records(self) -> list[dict]:
        """Series literal: ``[{k, h, j, coeff: [{c_re, c_im, a, b, e, alpha_weights}]}]``."""
        out = []
        for key, q in self.items():
            coeff = [{"c_re": float(np.real(c)), "c_im": float(np.imag(c)), "a": a,
                      "b": list(b), "e": e, "alpha_weights": list(w)}
                     for c, a, b, e, w in q.terms()]
            out.append({"k": list(key.k), "h": list(key.h), "j": list(key.j), "coeff": coeff})
        return out

    @classmethod
    def from_records(cls, space: PhaseSpace, records: Sequence[dict],
                     trunc: TruncationOrders | None = None) -> "TFSeries":
        terms = []
        for rec in records:
            for t in rec["coeff"]:
                terms.append({"k": rec["k"], "h": rec["h"], "j": rec["j"],
                              "c": complex(t.get("c_re", 0.0), t.get("c_im", 0.0)),
                              "a": t.get("a", 0), "b": t.get("b", [0] * space.n),
                              "e": t.get("e", 0),
                              "w": t.get("alpha_weights", [0] * space.nw)})
        return cls.from_terms(space, terms, trunc)

    def dumps(self) -> str:
        """Canonical sorted text form, one monomial per line."""
        lines = [f"# n={self.n} m={self.m} trunc=k{self.trunc.k},pq{self.trunc.pq},"
                 f"x{self.trunc.x},ri{self.trunc.ri}"]
        sp = self.space
        for row, c in zip(self.exps, self.coef):
            k = ",".join(str(v) for v in row[sp.K])
            h = ",".join(str(v) for v in row[sp.H])
            j = ",".join(str(v) for v in row[sp.J])
            b = ",".join(str(v) for v in row[sp.B])
            w = ",".join(str(v) for v in row[sp.W])
            lines.append(f"k=({k}) h=({h}) j=({j}) a={row[sp.A]} b=({b}) e={row[sp.E]} "
                         f"w=({w}) c={float(np.real(c)) + 0.0!r}{float(np.imag(c)) + 0.0:+.17g}j")
        return "\n".join(lines) + "\n"


# -----------------------------------------------------------------------------
# operations


def build_series(spec: Iterable, dims: tuple[int, int] | PhaseSpace, trunc: TruncationOrders | None = None,
                 space: PhaseSpace | None = None) -> TFSeries:
    """Canonical series from ``(TermKey, QuasiPoly)`` pairs.

    ``dims`` is ``(n, m)`` checked against the space, or the space itself.
    Constants may stand in for a QuasiPoly.
    """
    if isinstance(dims, PhaseSpace):
        space = dims
    elif space is None:
        raise SeriesError("build_series needs a PhaseSpace")
    elif tuple(dims) != (space.n, space.m):
        raise DimensionError(f"dims {tuple(dims)} do not match space ({space.n}, {space.m})")
    rows, cs = [], []
    for key, q in spec:
        if not isinstance(key, TermKey):
            key = TermKey(*key)
        if len(key.k) != space.n or len(key.h) != space.m:
            raise DimensionError(f"key {key} does not match dimensions n={space.n}, m={space.m}")
        if not isinstance(q, QuasiPoly):
            q = QuasiPoly.constant(space, q)
        _check_space([space, q.space])
        kr = np.tile(np.array(key.as_tuple(), dtype=np.int64), (q.nterms, 1))
        rows.append(np.hstack([kr.reshape(q.nterms, space.key_width), q.exps]))
        cs.append(q.coef)
    exps = np.vstack(rows) if rows else np.zeros((0, space.width), dtype=np.int64)
    coef = np.concatenate(cs) if cs else np.zeros(0, dtype=space.dtype)
    return TFSeries(space, exps, coef, trunc)


def linear_combine(coeffs: Sequence, series: Sequence[TFSeries]) -> TFSeries:
    """Exact linear combination; truncation is the component-wise max."""
    if len(coeffs) != len(series) or not series:
        raise SeriesError("need matching, non-empty coefficient and series lists")
    space = _check_space([s.space for s in series])
    trunc = series[0].trunc
    for s in series[1:]:
        trunc = trunc.join(s.trunc)
    exps = np.vstack([s.exps for s in series])
    coef = np.concatenate([np.asarray(c, dtype=space.dtype) * s.coef for c, s in zip(coeffs, series)])
    return TFSeries._raw(space, exps, coef, trunc)


_CHUNK = 4_000_000


def _raw_product(space, ea, ca, eb, cb, trunc, keep: _Accumulator, drop: _Accumulator | None,
                 sign=1.0):
    """All pairwise products, streamed into the admitted and dropped accumulators."""
    if ea.shape[0] == 0 or eb.shape[0] == 0:
        return
    step = max(1, _CHUNK // max(1, eb.shape[0] * space.width))
    for i in range(0, ea.shape[0], step):
        e = (ea[i:i + step, None, :] + eb[None, :, :]).reshape(-1, space.width)
        c = (sign * ca[i:i + step, None] * cb[None, :]).reshape(-1)
        ok = _admits(space, e, trunc)
        if ok.all():
            keep.add(e, c)
            continue
        keep.add(e[ok], c[ok])
        if drop is not None:
            drop.add(e[~ok], c[~ok])


def multiply(a: TFSeries, b: TFSeries, trunc: TruncationOrders | None = None,
             keep_dropped: bool = False):
    """Cauchy product truncated to ``trunc``.

    With ``keep_dropped`` returns ``(product, dropped)`` where ``dropped`` is
    the exact series of discarded terms (its norm is the truncation mass).
    """
    space = _check_space([a.space, b.space])
    if trunc is None:
        trunc = a.trunc.join(b.trunc)
    keep, drop = _Accumulator(space), (_Accumulator(space) if keep_dropped else None)
    _raw_product(space, a.exps, a.coef, b.exps, b.coef, trunc, keep, drop)
    prod = keep.series(trunc)
    if keep_dropped:
        return prod, drop.series(_INF_TRUNC)
    return prod


COORDINATES = ("r", "x", "I", "phi", "p", "q")


def _parse_coord(coord: str, space: PhaseSpace):
    name = coord.rstrip("0123456789_")
    idx = coord[len(name):].lstrip("_")
    if name in ("r", "x"):
        if idx:
            raise SeriesError(f"coordinate {coord!r} takes no index")
        return name, None
    if name not in ("I", "phi", "p", "q"):
        raise SeriesError(f"unknown coordinate {coord!r}")
    i = int(idx) - 1 if idx else 0
    dim = space.n if name in ("I", "phi") else space.m
    if not 0 <= i < dim:
        raise SeriesError(f"coordinate index out of range: {coord!r}")
    return name, i


def _raw_derivative(space: PhaseSpace, exps: np.ndarray, coef: np.ndarray, coord: str):
    name, i = _parse_coord(coord, space)
    if name == "x":
        e = exps[:, space.E]
        m1 = e > 0
        e1 = exps[m1].copy()
        e1[:, space.E] -= 1
        c1 = coef[m1] * e[m1]
        alpha = space.alpha(exps[:, space.W])
        m2 = alpha != 0
        return np.vstack([e1, exps[m2]]), np.concatenate([c1, coef[m2] * alpha[m2]])
    if name == "phi":
        kk = exps[:, space.K.start + i]
        m = kk != 0
        return exps[m], coef[m] * (1j * kk[m])
    col = {"r": space.A,
           "I": space.B.start + (i or 0),
           "p": space.H.start + (i or 0),
           "q": space.J.start + (i or 0)}[name]
    d = exps[:, col]
    m = d > 0
    e1 = exps[m].copy()
    e1[:, col] -= 1
    return e1, coef[m] * d[m]


def partial_derivative(s: TFSeries, coord: str) -> TFSeries:
    """Term-wise derivative in ``r``, ``x``, ``I<i>``, ``phi<i>``, ``p<i>`` or ``q<i>``.

    Indices are 1-based (``'phi1'``); the index may be omitted when the
    dimension is 1.
    """
    e, c = _raw_derivative(s.space, s.exps, s.coef, coord)
    return TFSeries._raw(s.space, e, c, s.trunc)


def _pairs(space: PhaseSpace):
    """Conjugate (momentum, position) pairs."""
    out = [("r", "x")]
    out += [(f"I{i + 1}", f"phi{i + 1}") for i in range(space.n)]
    out += [(f"q{i + 1}", f"p{i + 1}") for i in range(space.m)]
    return out


def poisson_bracket(a: TFSeries, b: TFSeries, trunc: TruncationOrders | None = None,
                    keep_dropped: bool = False):
    """``{a, b} = sum (d_P a d_Q b - d_Q a d_P b)`` over the pairs (r,x), (I,phi), (q,p)."""
    space = _check_space([a.space, b.space])
    if trunc is None:
        trunc = a.trunc.join(b.trunc)
    keep, drop = _Accumulator(space), (_Accumulator(space) if keep_dropped else None)
    for P, Q in _pairs(space):
        aP = _raw_derivative(space, a.exps, a.coef, P)
        aQ = _raw_derivative(space, a.exps, a.coef, Q)
        bP = _raw_derivative(space, b.exps, b.coef, P)
        bQ = _raw_derivative(space, b.exps, b.coef, Q)
        for (ex, cx), (ey, cy), sign in ((aP, bQ, 1.0), (aQ, bP, -1.0)):
            _raw_product(space, ex, cx, ey, cy, trunc, keep, drop, sign)
    res = keep.series(trunc)
    if keep_dropped:
        return res, drop.series(_INF_TRUNC)
    return res


def normal_mask(s: TFSeries) -> np.ndarray:
    sp = s.space
    return (~s.exps[:, sp.K].any(axis=1)) & np.all(s.exps[:, sp.H] == s.exps[:, sp.J], axis=1)


def project_average(s: TFSeries) -> tuple[TFSeries, TFSeries]:
    """Split into ``(average, off-average)``: keys with ``k = 0, h = j`` versus the rest."""
    mask = normal_mask(s)
    return s.select(mask), s.select(~mask)


def _point_arrays(space: PhaseSpace, point):
    if isinstance(point, dict):
        r, I, x, phi, p, q = (point[k] for k in ("r", "I", "x", "phi", "p", "q"))
    elif hasattr(point, "r") and hasattr(point, "phi"):
        r, I, x, phi, p, q = point.r, point.I, point.x, point.phi, point.p, point.q
    else:
        r, I, x, phi, p, q = point
    arr = lambda v, d: np.asarray(v, dtype=complex).reshape(d)
    return (complex(r), arr(I, space.n), complex(x), arr(phi, space.n),
            arr(p, space.m), arr(q, space.m))


def evaluate(s: TFSeries, point) -> complex:
    """Value of the finite sum at ``(r, I, x, phi, p, q)`` (complex allowed)."""
    sp = s.space
    if s.nterms == 0:
        return 0j
    r, I, x, phi, p, q = _point_arrays(sp, point)
    E = s.exps
    phase = 1j * (E[:, sp.K] @ phi) if sp.n else 0
    alpha = sp.alpha(E[:, sp.W]).astype(complex)
    val = s.coef.astype(complex) * np.exp(phase + alpha * x)
    if sp.m:
        val = val * np.prod(p ** E[:, sp.H], axis=1) * np.prod(q ** E[:, sp.J], axis=1)
    if sp.n:
        val = val * np.prod((I - np.array(sp.I0)) ** E[:, sp.B], axis=1)
    val = val * (r - sp.r0) ** E[:, sp.A] * x ** E[:, sp.E]
    return complex(val.sum())


def max_relative_difference(a: TFSeries, b: TFSeries) -> float:
    """Largest coefficient difference relative to the largest coefficient.

    Monomials are matched exactly (same key, degrees and lattice exponent);
    zero if both series vanish.
    """
    diff = linear_combine([1.0, -1.0], [a, b])
    scale = max(float(np.abs(a.coef).max(initial=0.0)), float(np.abs(b.coef).max(initial=0.0)))
    if scale == 0.0:
        return 0.0
    return float(np.abs(diff.coef).max(initial=0.0)) / scale
