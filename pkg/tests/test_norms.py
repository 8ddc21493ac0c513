import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sdfree.norms import (DomainError, DomainSpec, Widths, coefficient_norm, norm_params,
                          weighted_norm)
from sdfree.normalform import schedule
from sdfree.series import FrequencyData, PhaseSpace, QuasiPoly, TFSeries, multiply

from strategies import SPACE, series

SP = SPACE
UNIT = DomainSpec((-0.5, 0.5), ((-0.5, 0.5),), 0.5, Widths(1, 1, 1, 1, 1))


def quasi_values(q: QuasiPoly, r, I, x):
    """Direct vectorized sum of ``c (r-r0)^a (I-I0)^b x^e e^{alpha x}``."""
    sp = q.space
    out = np.zeros(np.shape(x), dtype=complex)
    for c, a, b, e, w in q.terms():
        alpha = complex(sp.alpha(np.array(w)))
        out += complex(c) * (r - sp.r0) ** a * (I - sp.I0[0]) ** b[0] * x ** e * np.exp(alpha * x)
    return out


def boundary_samples(rng, dom: DomainSpec, count):
    """Points on the outer boundary of the complexified box ``R_r x I_rho x Xi_xi``."""
    w = dom.widths

    def strip(lo, hi, rad):
        t = rng.uniform(lo, hi, count)
        return t + rad * np.exp(1j * rng.uniform(0, 2 * np.pi, count))

    return (strip(*dom.R, w.r), strip(*dom.I_box[0], w.rho), strip(-dom.x_max, dom.x_max, w.xi))


def test_domain_invariants():
    assert UNIT.X == 1.5
    assert UNIT.dfrak == 1.0
    with pytest.raises(DomainError):
        DomainSpec((-0.5, 0.5), ((-0.5, 0.5),), 0.5, Widths(1, 0, 1, 1, 1))
    with pytest.raises(DomainError):
        DomainSpec((-0.5, 0.5), ((-0.5, 0.5),), 0.0, Widths(1, 1, 1, 1, 1))
    far = PhaseSpace(SP.freq, (2.0, (0.0,)))
    with pytest.raises(DomainError):
        coefficient_norm(QuasiPoly.constant(far, 1.0), UNIT)


def test_coefficient_norm_examples():
    assert coefficient_norm(QuasiPoly.constant(SP, 5.0), UNIT) == 5.0
    dom = DomainSpec((-0.5, 0.5), ((-0.5, 0.5),), 1.0, Widths(1, 1, 0.5, 1, 1))
    x = QuasiPoly.from_terms(SP, [(1.0, 0, (0,), 1)])
    assert coefficient_norm(x, dom) == pytest.approx(1.5, rel=1e-15)


def test_exponential_coefficient_bound_dominates_sampling(rng):
    # alpha = omega_J / omega_r is real for the J generator
    sp = PhaseSpace(FrequencyData(1.0, (0.3,), (0.8,)))
    q = QuasiPoly.from_terms(sp, [(1.0, 0, (0,), 1, (1, 0, 0))])
    X = UNIT.X
    termwise = coefficient_norm(q, UNIT, method="termwise")
    assert termwise == pytest.approx(X * math.exp(0.8 * X), rel=1e-14)
    theta = np.linspace(0, 2 * np.pi, 4001)
    z = X * np.exp(1j * theta)
    sup = np.abs(z * np.exp(0.8 * z)).max()
    assert sup <= coefficient_norm(q, UNIT) <= termwise * (1 + 1e-12)


def test_certification_against_sampled_sup():
    """200 random quasi-polynomials, 10^4 boundary points each."""
    rng = np.random.default_rng(2024)
    sp = PhaseSpace(FrequencyData(1.0, (0.4,), (0.6,)), (0.1, (-0.2,)))
    worst = 0.0
    for _ in range(200):
        dom = DomainSpec((-0.5, 0.5), ((-0.5, 0.5),), rng.uniform(0.2, 1.0),
                         Widths(*rng.uniform(0.2, 1.2, size=5)))
        terms = []
        for _ in range(int(rng.integers(1, 5))):
            terms.append((complex(rng.normal(), rng.normal()), int(rng.integers(0, 3)),
                          (int(rng.integers(0, 3)),), int(rng.integers(0, 4)),
                          tuple(int(v) for v in rng.integers(-2, 3, size=3))))
        q = QuasiPoly.from_terms(sp, terms)
        r, I, x = boundary_samples(rng, dom, 10_000)
        sup = np.abs(quasi_values(q, r, I, x)).max()
        bound = coefficient_norm(q, dom)
        worst = max(worst, sup / bound)
        assert sup <= bound
    assert worst > 0.05     # the bound is not vacuous


def test_weighted_norm_single_term():
    dom = DomainSpec((-0.5, 0.5), ((-0.5, 0.5),), 0.5, Widths(1, 1, 1, 0.1, 0.5))
    f = TFSeries.from_terms(SP, [dict(c=2.0, k=(3,), h=(1,))])
    assert weighted_norm(f, dom) == pytest.approx(math.exp(0.3), rel=1e-15)
    assert weighted_norm(TFSeries.zero(SP), dom) == 0.0


def test_norm_grows_with_s():
    f = TFSeries.from_terms(SP, [dict(c=1.0, k=(1,)), dict(c=0.5)])
    small = weighted_norm(f, UNIT)
    big = weighted_norm(f, UNIT.with_widths(Widths(1, 1, 1, 1.5, 1)))
    assert big > small


def test_norm_params_examples():
    assert norm_params(UNIT).dfrak == 1.0
    dom = DomainSpec((-0.5, 0.5), ((-0.5, 0.5),), 0.5, Widths(2, 1, 0.5, 0.3, 0.6))
    assert dom.dfrak == pytest.approx(min(1 * 0.3, 2 * 0.5, 0.36))
    assert dom.dfrak == pytest.approx(0.3)
    with pytest.raises(DomainError):
        norm_params(UNIT, Widths(1, 1, 1, 0, 1))


def test_scheduled_d_against_floor():
    N = 3
    steps = schedule(N, UNIT)[1:]
    floor = UNIT.dfrak / (81 * N * N)
    for st in steps:
        p = norm_params(st.domain, st.primed, N=N)
        # rho s / (54 N^2), r xi / (36 N^2), delta^2 / (81 N^2)
        expect = min(1 / (54 * N * N), 1 / (36 * N * N), 1 / (81 * N * N))
        assert p.d == pytest.approx(expect, rel=1e-14)
        assert p.d >= floor * (1 - 1e-12) and p.schedule_ok


@given(series(), series())
def test_triangle_inequality(a, b):
    assert weighted_norm(a + b, UNIT) <= (weighted_norm(a, UNIT) + weighted_norm(b, UNIT)) * (1 + 1e-12)


@given(series(), st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3, allow_nan=False,
                                    allow_infinity=False))
def test_homogeneity(a, z):
    assert weighted_norm(z * a, UNIT) == pytest.approx(abs(z) * weighted_norm(a, UNIT), rel=1e-12)


@given(series(x_free=True, ri_free=True), series(x_free=True, ri_free=True))
def test_algebra_norm(a, b):
    assert weighted_norm(multiply(a, b), UNIT) <= weighted_norm(a, UNIT) * weighted_norm(b, UNIT) * (1 + 1e-12)


@given(series(), st.floats(0.3, 1.0), st.integers(0, 4))
def test_shrinking_a_width_never_increases_the_norm(a, factor, which):
    w = list(UNIT.widths.as_tuple())
    w[which] *= factor
    assert weighted_norm(a, UNIT.with_widths(Widths(*w))) <= weighted_norm(a, UNIT) * (1 + 1e-12)
