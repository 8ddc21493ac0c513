import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from sdfree.homological import (NotZeroAverageError, SmallDivisorError, XDegreeOverflow,
                                apply_D_omega, eigenvalue, integrate_kernel, shrunk_domain,
                                solve_homological, solve_homological_fourier)
from sdfree.instances import random_frequencies, random_zero_average
from sdfree.norms import DomainSpec, Widths, weighted_norm
from sdfree.series import (FrequencyData, PhaseSpace, QuasiPoly, TermKey, TFSeries,
                           TruncationOrders, evaluate, max_relative_difference, poisson_bracket,
                           project_average)

from strategies import SPACE, WIDE, series

SP = SPACE        # omega = (1, 0.3, 0.2)
UNIT = DomainSpec((-0.5, 0.5), ((-0.5, 0.5),), 0.5, Widths(1, 1, 1, 1, 1))


def at_x(s: TFSeries, x, phi=0.7, p=0.3, q=-0.2, r=0.1, I=0.05):
    return evaluate(s, (r, (I,), x, (phi,), (p,), (q,)))


# -- eigenvalues -----------------------------------------------------------------------

def test_eigenvalue_examples():
    ev = eigenvalue(TermKey((1,), (0,), (0,)), FrequencyData(1.0, (0.3,), (0.2,)))
    assert ev.lam == pytest.approx(0.3j) and not ev.resonant
    ev = eigenvalue(TermKey((0,), (1,), (0,)), FrequencyData(1.0, (0.3,), (0.2,)))
    assert ev.lam == pytest.approx(0.2) and not ev.resonant
    ev = eigenvalue(TermKey((1,), (1,), (0,)), FrequencyData(1.0, (0.0,), (0.0,)))
    assert ev.lam == 0 and ev.resonant


def test_eigenvalue_of_normal_keys_is_zero_and_not_resonant():
    ev = eigenvalue(TermKey((0,), (2,), (2,)), SP.freq)
    assert ev.lam == 0 and not ev.resonant


def test_resonance_is_detected_on_the_lattice_not_by_size():
    # tiny but non-zero frequency: lambda is small, yet not resonant
    ev = eigenvalue(TermKey((1,), (0,), (0,)), FrequencyData(1.0, (1e-13,), (0.2,)))
    assert abs(ev.lam) == pytest.approx(1e-13) and not ev.resonant


# -- D_omega -----------------------------------------------------------------------------

def test_D_omega_examples():
    s = TFSeries.from_terms(SP, [dict(c=2.0, h=(1,), j=(1,), a=1)], WIDE)
    assert apply_D_omega(s).is_zero
    x = TFSeries.from_terms(SP, [dict(e=1)], WIDE)
    d = apply_D_omega(x)
    assert d.nterms == 1 and d.coef[0] == SP.freq.omega_r


@settings(max_examples=50)
@given(series())
def test_D_omega_equals_minus_bracket_with_H0(s):
    H0 = TFSeries.H0(SP, WIDE)
    assert max_relative_difference(apply_D_omega(s), -poisson_bracket(s, H0)) <= 1e-12


@given(series())
def test_D_omega_preserves_classes(s):
    avg, osc = project_average(s)
    assert project_average(apply_D_omega(avg))[1].is_zero
    assert project_average(apply_D_omega(osc))[0].is_zero


# -- kernel integral -----------------------------------------------------------------------

def test_kernel_of_constant():
    one = QuasiPoly.constant(SP, 1.0)
    res = integrate_kernel(one, (1, 0, 0))          # mu = omega_J / omega_r = 0.2
    s = TFSeries(SP, np.hstack([np.zeros((res.nterms, SP.key_width), dtype=np.int64), res.exps]),
                 res.coef, WIDE)
    for x in (-0.4, 0.3, 1.1):
        assert at_x(s, x) == pytest.approx((1 - math.exp(-0.2 * x)) / 0.2, rel=1e-14)
    # d/dx result + mu result = 1
    dres = res.derivative("x")
    combo = TFSeries(SP, np.vstack([np.hstack([np.zeros((q.nterms, SP.key_width), dtype=np.int64),
                                               q.exps]) for q in (dres, res)]),
                     np.concatenate([dres.coef, 0.2 * res.coef]), WIDE)
    assert max_relative_difference(combo, TFSeries.from_terms(SP, [dict()], WIDE)) <= 1e-15


def test_kernel_resonant_branch():
    one = QuasiPoly.constant(SP, 1.0)
    assert list(integrate_kernel(one, (0, 0, 0)).terms()) == [(1.0, 0, (0,), 1, (0, 0, 0))]
    x = QuasiPoly.from_terms(SP, [(1.0, 0, (0,), 1)])
    assert list(integrate_kernel(x, (0, 0, 0)).terms()) == [(0.5, 0, (0,), 2, (0, 0, 0))]
    with pytest.raises(XDegreeOverflow):
        integrate_kernel(x, (0, 0, 0), max_x_degree=1)


def test_kernel_accepts_eigenvalue_and_scalar():
    one = QuasiPoly.constant(SP, 1.0)
    ev = eigenvalue(TermKey((1,), (0,), (0,)), SP)
    a = integrate_kernel(one, ev)
    b = integrate_kernel(one, 0.3j)
    assert list(a.terms()) == list(b.terms())


# -- integral solver ---------------------------------------------------------------------------

def test_single_harmonic_closed_form():
    omega = 0.37
    sp = PhaseSpace(FrequencyData(1.0, (omega,), (0.2,)))
    f = TFSeries.from_terms(sp, [dict(k=(1,))])
    phi = solve_homological(f)
    for x in (-0.5, 0.2, 0.9):
        ref = cmath.exp(0.7j) * (1 - cmath.exp(-1j * omega * x)) / (1j * omega)
        assert evaluate(phi, (0.0, (0.0,), x, (0.7,), (0.0,), (0.0,))) == pytest.approx(ref, rel=1e-13)
    assert max_relative_difference(apply_D_omega(phi), f) <= 1e-14


def test_resonant_rectangular_key():
    sp = PhaseSpace(FrequencyData(2.0, (0.3,), (0.0,)))
    f = TFSeries.from_terms(sp, [dict(h=(1,))])
    phi = solve_homological(f)
    assert max_relative_difference(phi, TFSeries.from_terms(sp, [dict(c=0.5, h=(1,), e=1)])) == 0
    assert solve_homological(TFSeries.zero(sp)).is_zero


def test_rejects_normal_keys():
    with pytest.raises(NotZeroAverageError):
        solve_homological(TFSeries.from_terms(SP, [dict(h=(1,), j=(1,))]))


def test_matches_quadrature_of_the_integral_formula(rng):
    """Independent oracle: numeric quadrature of the kernel integral from 0."""
    sp = PhaseSpace(FrequencyData(-1.3, (0.21,), (0.17,)))
    f = random_zero_average(rng, sp, 5)
    phi = solve_homological(f)
    wr = sp.freq.omega_r
    for key in f.keys():
        fk = TFSeries(sp, *(lambda m: (f.exps[m], f.coef[m]))(
            np.all(f.exps[:, :sp.key_width] == np.array(key.as_tuple()), axis=1)), f.trunc)
        pk_mask = np.all(phi.exps[:, :sp.key_width] == np.array(key.as_tuple()), axis=1)
        pk = TFSeries(sp, phi.exps[pk_mask], phi.coef[pk_mask], phi.trunc)
        mu = eigenvalue(key, sp).mu
        for x in (-0.45, 0.3):
            g = lambda t: at_x(fk, t, phi=0.0, p=1.0, q=1.0) * cmath.exp(mu * (t - x))
            re = quad(lambda t: g(t).real, 0, x, epsabs=1e-14, epsrel=1e-13)[0]
            im = quad(lambda t: g(t).imag, 0, x, epsabs=1e-14, epsrel=1e-13)[0]
            ref = complex(re, im) / wr
            assert at_x(pk, x, phi=0.0, p=1.0, q=1.0) == pytest.approx(ref, rel=1e-9, abs=1e-12)


@settings(max_examples=60)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([None, "J", "I"]))
def test_residual_on_random_zero_average_series(seed, resonant):
    rng = np.random.default_rng(seed)
    sp = PhaseSpace(random_frequencies(rng, 1, 1, resonant))
    f = random_zero_average(rng, sp, 6, resonant_keys=resonant is not None)
    phi = solve_homological(f)
    assert max_relative_difference(apply_D_omega(phi), f) <= 1e-10


@given(st.integers(0, 2 ** 32 - 1))
def test_stable_method_residual(seed):
    rng = np.random.default_rng(seed)
    sp = PhaseSpace(random_frequencies(rng, 1, 1))
    f = random_zero_average(rng, sp, 6)
    phi, unsolved = solve_homological(f, method="stable", domain=UNIT, overflow="keep")
    assert max_relative_difference(apply_D_omega(phi), f - unsolved) <= 1e-10


@given(st.integers(0, 2 ** 32 - 1), st.complex_numbers(max_magnitude=5, allow_nan=False,
                                                        allow_infinity=False))
def test_linearity(seed, z):
    rng = np.random.default_rng(seed)
    sp = PhaseSpace(random_frequencies(rng))
    a, b = random_zero_average(rng, sp, 4), random_zero_average(rng, sp, 4)
    lhs = solve_homological(a + z * b)
    rhs = solve_homological(a) + z * solve_homological(b)
    scale = max(float(np.abs(solve_homological(a).coef).max()),
                abs(z) * float(np.abs(solve_homological(b).coef).max()))
    assert float(np.abs((lhs - rhs).coef).max(initial=0.0)) <= 1e-12 * scale


@given(st.integers(0, 2 ** 32 - 1))
def test_generator_vanishes_at_x_zero(seed):
    rng = np.random.default_rng(seed)
    sp = PhaseSpace(random_frequencies(rng))
    phi = solve_homological(random_zero_average(rng, sp, 5))
    for key in phi.keys():
        m = np.all(phi.exps[:, :sp.key_width] == np.array(key.as_tuple()), axis=1)
        pk = TFSeries(sp, phi.exps[m], phi.coef[m], phi.trunc)
        scale = float(np.abs(pk.coef).sum())
        assert abs(at_x(pk, 0.0)) <= 1e-13 * scale


def test_generator_bound_on_shrunk_domain(rng):
    for _ in range(30):
        sp = PhaseSpace(random_frequencies(rng))
        f = random_zero_average(rng, sp, 5)
        sol = solve_homological(f, domain=UNIT, ledger=True)
        lhs, rhs = sol.bound
        assert lhs <= rhs and sol.bound_ok
        w = shrunk_domain(UNIT, sp.freq).widths
        assert w.s == pytest.approx(1 - UNIT.X * sp.freq.ratio_I)
        assert w.delta == pytest.approx(math.exp(-UNIT.X * sp.freq.ratio_J))


def test_no_small_divisor_blow_up():
    """A tiny frequency leaves the integral solution bounded; the Fourier one explodes."""
    sp = PhaseSpace(FrequencyData(1.0, (1e-13,), (0.2,)))
    f = TFSeries.from_terms(sp, [dict(k=(1,))])
    phi, _ = solve_homological(f, method="stable", domain=UNIT)
    # the estimate is sharp here (phi ~ x e^{i phi}), so only rounding separates the sides
    assert weighted_norm(phi, shrunk_domain(UNIT, sp.freq)) <= UNIT.X * weighted_norm(f, UNIT) * (1 + 1e-9)
    # D phi and f sit on different lattice representations; compare values
    for x in (-1.2, -0.3, 0.4, 1.5):
        assert at_x(apply_D_omega(phi), x) == pytest.approx(at_x(f, x), rel=1e-12)
    four = solve_homological_fourier(f)
    assert float(np.abs(four.coef).max()) > 1e12


# -- Fourier solver ----------------------------------------------------------------------------

def test_fourier_example():
    omega = 0.37
    sp = PhaseSpace(FrequencyData(1.0, (omega,), (0.2,)))
    f = TFSeries.from_terms(sp, [dict(k=(1,), w=(0, 0, 1))])
    phi = solve_homological_fourier(f)
    assert phi.nterms == 1 and phi.coef[0] == pytest.approx(1 / (1j * omega + 1j))
    diff = solve_homological(f) - phi
    assert max_relative_difference(apply_D_omega(diff), TFSeries.zero(sp)) == 0


def test_fourier_small_divisor_error():
    sp = PhaseSpace(FrequencyData(1.0, (-1.0,), (0.2,)))
    f = TFSeries.from_terms(sp, [dict(k=(1,), w=(0, 0, 1))])
    with pytest.raises(SmallDivisorError):
        solve_homological_fourier(f)
    phi = solve_homological(f)
    P = (0.1, (0.2,), 0.3, (0.4,), (0.1,), (0.2,))
    assert evaluate(apply_D_omega(phi), P) == pytest.approx(evaluate(f, P), rel=1e-13)


@given(st.integers(0, 2 ** 32 - 1))
def test_fourier_difference_is_in_the_kernel(seed):
    rng = np.random.default_rng(seed)
    sp = PhaseSpace(random_frequencies(rng))
    f = random_zero_average(rng, sp, 6, x_periodic=True)
    diff = apply_D_omega(solve_homological(f) - solve_homological_fourier(f))
    assert float(np.abs(diff.coef).max(initial=0.0)) <= 1e-10 * float(np.abs(f.coef).max())


def test_fourier_rejects_non_trigonometric_coefficients():
    f = TFSeries.from_terms(SP, [dict(k=(1,), e=1)])
    with pytest.raises(Exception):
        solve_homological_fourier(f)


def test_ledger_records_resonance():
    sp = PhaseSpace(FrequencyData(1.0, (0.3,), (0.0,)))
    f = TFSeries.from_terms(sp, [dict(h=(1,)), dict(k=(1,))])
    sol = solve_homological(f, ledger=True, domain=UNIT)
    flags = {tuple(e["k"] + e["h"]): e["resonant"] for e in sol.ledger}
    assert flags == {(0, 1): True, (1, 0): False}
