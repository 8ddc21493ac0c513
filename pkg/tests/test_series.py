import cmath
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sdfree.homological import eigenvalue
from sdfree.series import (DimensionError, FrequencyData, PhaseSpace, QuasiPoly, SeriesError,
                           TermKey, TFSeries, TruncationError, TruncationOrders, build_series,
                           evaluate, linear_combine, max_relative_difference, multiply,
                           partial_derivative, poisson_bracket, project_average)

from strategies import SPACE, WIDE, scale_of, series

SP = SPACE
K0 = TermKey((0,), (0,), (0,))


def mono(**kw):
    return TFSeries.from_terms(SP, [kw], WIDE)


def close(a, b, tol=1e-12):
    return max_relative_difference(a, b) <= tol


def random_point(rng, scale=0.4):
    u = rng.uniform(-scale, scale, size=6)
    return (u[0], (u[1],), u[2], (rng.uniform(0, 2 * math.pi),), (u[4],), (u[5],))


# -- construction -----------------------------------------------------------------

def test_build_constant():
    s = build_series([((K0.k, K0.h, K0.j), 1.0)], (1, 1), space=SP)
    assert s.nterms == 1 and s.coef[0] == 1
    assert evaluate(s, random_point(np.random.default_rng(0))) == 1


def test_build_merges_duplicates():
    s = build_series([(K0, 2.0), (K0, 3.0)], SP)
    assert s.nterms == 1 and s.coef[0] == 5


def test_build_rejects_truncation_violation_naming_key():
    key = TermKey((9,), (0,), (0,))
    with pytest.raises(TruncationError, match=r"\(9,\)"):
        build_series([(key, 1.0)], SP, TruncationOrders(k=8))


def test_build_rejects_dimension_mismatch():
    with pytest.raises(DimensionError):
        build_series([(TermKey((0, 0), (0,), (0,)), 1.0)], SP)
    with pytest.raises(DimensionError):
        build_series([(K0, 1.0)], (2, 1), space=SP)


def test_negative_pq_power_rejected():
    with pytest.raises(SeriesError):
        TermKey((0,), (-1,), (0,))


def test_linear_combine_examples():
    f = mono(c=1.3, k=(1,), e=1)
    assert linear_combine([1, -1], [f, f]).is_zero
    pq = mono(h=(1,), j=(1,))
    s = linear_combine([2, 3], [pq, pq])
    assert s.nterms == 1 and s.coef[0] == 5
    s = linear_combine([1j, 1], [mono(k=(1,)), mono(k=(1,), e=1)])
    assert s.keys() == [TermKey((1,), (0,), (0,))]
    q = s.coefficient(s.keys()[0])
    assert sorted(q.terms(), key=lambda t: t[3]) == [(1j, 0, (0,), 0, (0, 0, 0)),
                                                     (1, 0, (0,), 1, (0, 0, 0))]


def test_linear_combine_joins_truncations():
    a = TFSeries.from_terms(SP, [dict(k=(1,))], TruncationOrders(k=3, pq=6, x=2, ri=1))
    b = TFSeries.from_terms(SP, [dict(k=(2,))], TruncationOrders(k=5, pq=1, x=4, ri=6))
    assert (a + b).trunc == TruncationOrders(5, 6, 4, 6)


def test_linear_combine_rejects_mixed_basepoints():
    other = PhaseSpace(SP.freq, (0.1, (0.0,)))
    with pytest.raises(SeriesError):
        linear_combine([1, 1], [mono(k=(1,)), TFSeries.from_terms(other, [dict(k=(1,))])])


# -- products and derivatives --------------------------------------------------------

def test_multiply_examples():
    assert close(multiply(mono(k=(1,)), mono(k=(-1,))), mono())
    pq = multiply(mono(h=(1,)), mono(j=(1,)))
    assert pq.keys() == [TermKey((0,), (1,), (1,))]
    # x e^{alpha x} * x e^{beta x} = x^2 e^{(alpha + beta) x}
    a, b = mono(e=1, w=(1, 0, 0)), mono(e=1, w=(0, -1, 1))
    prod = multiply(a, b)
    assert prod.nterms == 1
    assert list(prod.exps[0, SP.W]) == [1, -1, 1] and prod.exps[0, SP.E] == 2


def test_multiply_reports_dropped_terms():
    tr = TruncationOrders(k=2, pq=6, x=12, ri=6)
    a = TFSeries.from_terms(SP, [dict(k=(1,)), dict(k=(2,), c=0.5)], tr)
    prod, drop = multiply(a, a, keep_dropped=True)
    assert all(abs(k.k[0]) <= 2 for k in prod.keys())
    # e^{3i phi}: 2 * 0.5, e^{4i phi}: 0.25
    full = multiply(a.with_trunc(WIDE), a.with_trunc(WIDE), WIDE)
    assert close(prod + drop, full)
    assert sorted(abs(c) for c in drop.coef) == [0.25, 1.0]


def test_partial_derivative_examples():
    d = partial_derivative(mono(k=(1,)), "phi1")
    assert close(d, mono(c=1j, k=(1,)))
    d = partial_derivative(mono(h=(2,), j=(1,)), "p1")
    assert close(d, mono(c=2, h=(1,), j=(1,)))
    # d/dx (x e^{alpha x}) = (1 + alpha x) e^{alpha x}
    w = (1, 0, 0)
    alpha = SP.alpha(np.array(w))
    d = partial_derivative(mono(e=1, w=w), "x")
    assert close(d, TFSeries.from_terms(SP, [dict(w=w), dict(c=alpha, e=1, w=w)], WIDE))


def test_partial_derivative_rejects_bad_coordinate():
    with pytest.raises(SeriesError):
        partial_derivative(mono(), "phi2")
    with pytest.raises(SeriesError):
        partial_derivative(mono(), "z")


@given(series())
def test_partial_derivatives_match_complex_step(s):
    """Term-wise derivatives against central differences of ``evaluate``."""
    rng = np.random.default_rng(7)
    P = random_point(rng)
    h = 1e-5
    for name, slot in (("r", 0), ("x", 2), ("I1", 1), ("phi1", 3), ("p1", 4), ("q1", 5)):
        def shifted(delta):
            pt = [list(v) if isinstance(v, tuple) else v for v in P]
            if isinstance(pt[slot], list):
                pt[slot] = [pt[slot][0] + delta]
            else:
                pt[slot] = pt[slot] + delta
            return evaluate(s, pt)
        fd = (shifted(h) - shifted(-h)) / (2 * h)
        exact = evaluate(partial_derivative(s, name), P)
        assert abs(fd - exact) <= 1e-6 * (1 + abs(exact))


# -- bracket --------------------------------------------------------------------------

def test_bracket_of_series_with_itself_vanishes():
    f = TFSeries.from_terms(SP, [dict(c=1 + 2j, k=(1,), h=(1,), e=1, a=1),
                                 dict(c=0.3, k=(-2,), j=(2,), b=(1,))], WIDE)
    assert poisson_bracket(f, f).is_zero


def test_bracket_with_H0_kills_x_free_terms():
    H0 = TFSeries.from_terms(SP, [dict(c=1.0, a=1)], WIDE)
    phi = TFSeries.from_terms(SP, [dict(c=0.7, h=(1,), j=(1,)), dict(c=0.2, k=(1,), b=(1,))], WIDE)
    assert poisson_bracket(phi, H0).is_zero


def test_bracket_with_H0_matches_eigenvalue():
    H0 = TFSeries.H0(SP, WIDE)
    key = TermKey((1,), (0,), (0,))
    lam = eigenvalue(key, SP.freq).lam
    b = poisson_bracket(mono(k=(1,)), H0)
    assert close(b, mono(c=-lam, k=(1,)))
    assert lam == pytest.approx(0.3j)


def test_bracket_truncation_is_the_restriction_of_the_full_bracket(rng):
    tr = TruncationOrders(k=3, pq=3, x=3, ri=2)
    a = TFSeries.from_terms(SP, [dict(k=(2,), h=(1,), e=1, a=1), dict(k=(1,), j=(2,), b=(1,))], tr)
    b = TFSeries.from_terms(SP, [dict(k=(1,), h=(1,), j=(1,), e=2, a=1),
                                 dict(k=(-1,), h=(2,), a=1)], tr)
    full = poisson_bracket(a.with_trunc(WIDE), b.with_trunc(WIDE), WIDE)
    cut, drop = poisson_bracket(a, b, tr, keep_dropped=True)
    assert close(cut, full.with_trunc(tr))
    assert close(cut + drop, full)


@given(series(), series())
def test_antisymmetry(a, b):
    assert max_relative_difference(poisson_bracket(a, b), -poisson_bracket(b, a)) <= 1e-10


@given(series(), series(), series(), st.complex_numbers(max_magnitude=3, allow_nan=False,
                                                         allow_infinity=False))
def test_bilinearity(a, b, c, z):
    lhs = poisson_bracket(a, b + z * c)
    rhs = poisson_bracket(a, b) + z * poisson_bracket(a, c)
    scale = scale_of(poisson_bracket(a, b), z * poisson_bracket(a, c)) or 1.0
    assert float(np.abs((lhs - rhs).coef).max(initial=0.0)) <= 1e-10 * scale


@given(series(max_terms=3), series(max_terms=3), series(max_terms=3))
def test_leibniz(a, b, c):
    lhs = poisson_bracket(a, multiply(b, c))
    t1, t2 = multiply(poisson_bracket(a, b), c), multiply(b, poisson_bracket(a, c))
    scale = scale_of(t1, t2) or 1.0
    assert float(np.abs((lhs - t1 - t2).coef).max(initial=0.0)) <= 1e-10 * scale


@given(series(max_terms=3), series(max_terms=3), series(max_terms=3))
def test_jacobi(a, b, c):
    t1 = poisson_bracket(a, poisson_bracket(b, c))
    t2 = poisson_bracket(b, poisson_bracket(c, a))
    t3 = poisson_bracket(c, poisson_bracket(a, b))
    scale = scale_of(t1, t2, t3) or 1.0
    assert float(np.abs((t1 + t2 + t3).coef).max(initial=0.0)) <= 1e-10 * scale


@given(series(x_free=True))
def test_classes_invariant_under_bracket_with_H0(s):
    H0 = TFSeries.H0(SP, WIDE)
    avg, osc = project_average(s)
    b_avg = poisson_bracket(avg, H0)
    b_osc = poisson_bracket(osc, H0)
    assert project_average(b_avg)[1].is_zero
    assert project_average(b_osc)[0].is_zero
    # diagonal action: the key set of an x-free osc part is preserved (nothing cancels)
    assert set(b_osc.keys()) <= set(osc.keys())


@given(series(max_terms=3), series(max_terms=3))
def test_multiply_evaluate_compatibility(a, b):
    rng = np.random.default_rng(3)
    P = random_point(rng)
    va, vb = evaluate(a, P), evaluate(b, P)
    assert abs(evaluate(multiply(a, b), P) - va * vb) <= 1e-12 * (1 + abs(va * vb)) * 10


# -- projections -------------------------------------------------------------------------

def test_project_average_example():
    s = TFSeries.from_terms(SP, [dict(c=5), dict(k=(1,)), dict(h=(1,), j=(1,)), dict(h=(1,))], WIDE)
    avg, osc = project_average(s)
    assert close(avg, TFSeries.from_terms(SP, [dict(c=5), dict(h=(1,), j=(1,))], WIDE))
    assert close(osc, TFSeries.from_terms(SP, [dict(k=(1,)), dict(h=(1,))], WIDE))


def test_project_average_on_normal_and_unbalanced_keys():
    s = TFSeries.from_terms(SP, [dict(c=2, h=(1,), j=(1,), e=1)], WIDE)
    avg, osc = project_average(s)
    assert close(avg, s) and osc.is_zero
    s = mono(h=(2,), j=(1,))
    avg, osc = project_average(s)
    assert avg.is_zero and close(osc, s)


@given(series())
def test_project_average_properties(s):
    avg, osc = project_average(s)
    assert project_average(avg)[1].is_zero
    assert close(project_average(avg)[0], avg, 0.0)
    both = linear_combine([1, 1], [avg, osc])
    assert np.array_equal(both.exps, s.exps) and np.array_equal(both.coef, s.coef)
    assert all(k.is_normal for k in avg.keys())
    assert not any(k.is_normal for k in osc.keys())


# -- evaluation, realness, serialization -----------------------------------------------

def test_evaluate_examples():
    P = (0.2, (0.1,), 1.0, (0.0,), (0.3,), (0.4,))
    assert evaluate(mono(), P) == 1
    assert evaluate(mono(k=(1,)), P) == pytest.approx(1)
    assert evaluate(mono(e=1), P) == pytest.approx(1)
    w = (0, 0, 1)
    assert evaluate(mono(e=1, w=w), P) == pytest.approx(cmath.exp(1j))


def test_conjugate_makes_real_series(rng):
    s = TFSeries.from_terms(SP, [dict(c=1 + 2j, k=(2,), h=(1,), e=1, w=(0, 1, 0))], WIDE)
    real = s + s.conjugate()
    assert real.is_real()
    P = random_point(rng)
    assert abs(evaluate(real, P).imag) <= 1e-14


def test_records_roundtrip_and_dumps_are_canonical():
    s = TFSeries.from_terms(SP, [dict(c=0.25 - 1j, k=(-1,), h=(1,), j=(2,), a=1, e=2, w=(1, 0, -1)),
                                 dict(c=3, h=(1,), j=(1,))], WIDE)
    back = TFSeries.from_records(SP, s.to_records(), WIDE)
    assert back.dumps() == s.dumps()
    shuffled = TFSeries.from_terms(SP, [dict(c=3, h=(1,), j=(1,)),
                                        dict(c=0.25 - 1j, k=(-1,), h=(1,), j=(2,), a=1, e=2,
                                             w=(1, 0, -1))], WIDE)
    assert shuffled.dumps() == s.dumps()


def test_quasipoly_derivative_closure():
    q = QuasiPoly.from_terms(SP, [(2.0, 1, (1,), 2, (1, 0, 0))])
    dq = q.derivative("x")
    assert dq.nterms == 2


def test_zero_frequency_generators_are_canonical():
    sp = PhaseSpace(FrequencyData(1.0, (0.0,), (0.2,)))
    a = TFSeries.from_terms(sp, [dict(w=(0, 3, 0))])
    b = TFSeries.from_terms(sp, [dict(w=(0, 0, 0))])
    # omega_I = 0 makes the I-generator vanish, so both rows are the constant 1
    assert (a - b).is_zero


def test_from_terms_rejects_unknown_fields():
    with pytest.raises(SeriesError, match="unknown term fields"):
        TFSeries.from_terms(SP, [dict(k=(1,), q=1)])
