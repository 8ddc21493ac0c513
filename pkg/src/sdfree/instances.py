"""Ready-made problems: the reference instance and random corpora."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .norms import DomainSpec, Widths, weighted_norm
from .series import FrequencyData, PhaseSpace, TFSeries, TruncationOrders

__all__ = ["Instance", "real_series", "reference_instance", "reference_shape",
           "random_instance", "random_corpus", "REFERENCE_FREQ", "reference_domain",
           "random_zero_average", "random_frequencies"]

REFERENCE_FREQ = FrequencyData(1.0, (0.01,), (0.01,))


@dataclass
class Instance:
    f: TFSeries
    domain: DomainSpec
    label: str = ""

    @property
    def space(self) -> PhaseSpace:
        return self.f.space

    @property
    def H0(self) -> TFSeries:
        return TFSeries.H0(self.f.space, self.f.trunc)


def real_series(space: PhaseSpace, terms, trunc: TruncationOrders | None = None) -> TFSeries:
    """``s + conj(s)`` for the series ``s`` built from ``terms`` (twice its real part)."""
    s = TFSeries.from_terms(space, terms, trunc)
    return s + s.conjugate()


def reference_domain() -> DomainSpec:
    return DomainSpec((-0.5, 0.5), ((-0.5, 0.5),), 0.5, Widths(1, 1, 1, 1, 1))


def reference_shape(space: PhaseSpace, trunc: TruncationOrders | None = None) -> TFSeries:
    """Unscaled three-harmonic perturbation

    ``cos phi (1 + x/4) + cos 2phi (p + q)/2 + cos 3phi (1 + r)/3 + pq/4``.
    """
    terms = [
        dict(c=0.5, k=(1,)), dict(c=0.125, k=(1,), e=1),
        dict(c=0.25, k=(2,), h=(1,)), dict(c=0.25, k=(2,), j=(1,)),
        dict(c=1 / 6, k=(3,)), dict(c=1 / 6, k=(3,), a=1),
        dict(c=0.125, h=(1,), j=(1,)),
    ]
    return real_series(space, terms, trunc)


def reference_instance(N: int = 4, c: float | None = None, fraction: float = 0.5,
                       trunc: TruncationOrders | None = None, dtype=np.complex128) -> Instance:
    """Reference problem with ``||f||`` at ``fraction`` of the admissible size.

    ``n = m = 1``, ``omega = (1, 0.01, 0.01)``, unit widths, ``R = I = [-1/2, 1/2]``,
    ``Xi = (-1/2, 1/2)``.  The admissible size comes from
    ``c N (X/dfrak)|1/w_r| ||f|| < 1`` with ``c`` the calibrated constant.
    """
    from .constants import load_constants

    if c is None:
        c = load_constants()["c"]
    space = PhaseSpace(REFERENCE_FREQ, dtype=dtype)
    dom = reference_domain()
    shape = reference_shape(space, trunc)
    target = fraction * dom.dfrak / (c * N * dom.X * abs(REFERENCE_FREQ.inv_omega_r))
    f = shape * (target / weighted_norm(shape, dom))
    return Instance(f, dom, f"reference N={N} fraction={fraction}")


def random_instance(rng: np.random.Generator, n: int = 1, m: int = 1, nharm: int = 3,
                    resonant: str | None = None, size: float | None = None,
                    normal_only: bool = False,
                    trunc: TruncationOrders | None = None) -> Instance:
    """Random real perturbation with a few harmonics.

    ``resonant='J'`` sets ``omega_J = 0`` and ``'I'`` sets ``omega_I = 0`` so
    resonant keys appear; ``normal_only`` keeps only normal-class terms.
    The size is ``size * dfrak / (X |1/w_r|)`` (``size`` log-uniform in
    ``[1e-5, 1e-4]`` by default).
    """
    wr = float(rng.choice([-1, 1]) * rng.uniform(0.5, 2.0))
    wI = tuple(float(wr * rng.uniform(-0.05, 0.05)) for _ in range(n))
    wJ = tuple(float(abs(wr) * rng.uniform(-0.05, 0.05)) for _ in range(m))
    if resonant == "J":
        wJ = (0.0,) * m
    elif resonant == "I":
        wI = (0.0,) * n
    freq = FrequencyData(wr, wI, wJ)
    space = PhaseSpace(freq)
    terms = []
    for _ in range(nharm):
        k = tuple(int(v) for v in rng.integers(-3, 4, size=n))
        h = tuple(int(v) for v in rng.integers(0, 2, size=m))
        j = tuple(int(v) for v in rng.integers(0, 2, size=m))
        if normal_only:
            k = (0,) * n
            j = h
        c = complex(rng.normal(), rng.normal())
        t = dict(c=c, k=k, h=h, j=j, a=int(rng.integers(0, 2)), e=int(rng.integers(0, 2)))
        if rng.random() < 0.3:
            w = [0] * space.nw
            w[-1] = int(rng.choice([-1, 1]))
            t["w"] = tuple(w)
        terms.append(t)
    f = real_series(space, terms, trunc)
    dom = DomainSpec((-0.5, 0.5), tuple((-0.5, 0.5) for _ in range(n)), 0.5,
                     Widths(*rng.uniform(0.7, 1.3, size=5)))
    if size is None:
        size = float(10 ** rng.uniform(-5, -4))
    nf = weighted_norm(f, dom)
    if nf > 0:
        f = f * (size * dom.dfrak / (dom.X * abs(freq.inv_omega_r)) / nf)
    return Instance(f, dom, f"random n={n} m={m} resonant={resonant}")


def random_corpus(seed: int = 0, count: int = 60, n: int = 1, m: int = 1) -> list[Instance]:
    """Deterministic corpus: mixes generic and resonant instances."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        res = (None, None, "J", "I")[i % 4]
        out.append(random_instance(rng, n, m, nharm=int(rng.integers(1, 4)), resonant=res))
    return out


def random_frequencies(rng: np.random.Generator, n: int = 1, m: int = 1,
                       resonant: str | None = None) -> FrequencyData:
    """``omega_r`` of order one, ``omega_I, omega_J`` small; ``resonant`` zeroes one group."""
    wr = float(rng.choice([-1, 1]) * rng.uniform(0.5, 2.0))
    wI = tuple(float(rng.uniform(-0.3, 0.3)) for _ in range(n))
    wJ = tuple(float(rng.uniform(-0.3, 0.3)) for _ in range(m))
    if resonant == "J":
        wJ = (0.0,) * m
    elif resonant == "I":
        wI = (0.0,) * n
    return FrequencyData(wr, wI, wJ)


def random_zero_average(rng: np.random.Generator, space: PhaseSpace, nterms: int = 6,
                        trunc: TruncationOrders | None = None, x_periodic: bool = False,
                        resonant_keys: bool = False) -> TFSeries:
    """Random off-average series whose homological solution stays within ``trunc``.

    x-degrees are kept below ``trunc.x`` so a resonant antiderivative still
    fits.  ``x_periodic`` restricts the coefficients to trigonometric
    polynomials in ``x`` (the input class of the Fourier solver);
    ``resonant_keys`` adds keys with ``lambda = 0`` (needs a zero frequency).
    """
    trunc = trunc or TruncationOrders()
    n, m = space.n, space.m
    terms = []
    while len(terms) < nterms:
        k = tuple(int(v) for v in rng.integers(-2, 3, size=n))
        h = tuple(int(v) for v in rng.integers(0, 3, size=m))
        j = tuple(int(v) for v in rng.integers(0, 3, size=m))
        if resonant_keys and rng.random() < 0.5:
            if m and not any(space.freq.omega_J):
                k = (0,) * n
                if h == j:
                    h = tuple(v + 1 for v in h[:1]) + h[1:]
            elif n and not any(space.freq.omega_I):
                h = j
                if not any(k):
                    k = (1,) + k[1:]
        if not any(k) and h == j:
            continue
        if sum(abs(v) for v in k) > trunc.k or sum(h) + sum(j) > trunc.pq:
            continue
        w = [0] * space.nw
        if x_periodic:
            w[-1] = int(rng.integers(-2, 3))
            e = 0
        else:
            e = int(rng.integers(0, max(1, trunc.x - 1)))
            e = min(e, 3)
            if rng.random() < 0.4:
                w[int(rng.integers(0, space.nw))] = int(rng.integers(-2, 3))
        a = int(rng.integers(0, 2))
        b = tuple(int(v) for v in rng.integers(0, 2, size=n))
        if a + sum(b) > trunc.ri:
            continue
        terms.append(dict(c=complex(rng.normal(), rng.normal()), k=k, h=h, j=j, a=a, b=b,
                          e=e, w=tuple(w)))
    return TFSeries.from_terms(space, terms, trunc)
