import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from _oracles import levy_density, quad_psi, quad_truncated_mass
from hawkes_ccrm.random_measures import (CcrmHyper, GgpHyper, ggp_levy_density, ggp_total_mass,
                                         laplace_exponent, laplace_exponent_fast, levy_integral, mean_measure,
                                         sample_ccrm, sample_ggp, sample_levy_atoms_rejection,
                                         truncated_first_moment, truncated_mass)


def test_hyper_validation():
    with pytest.raises(ValueError):
        GgpHyper(0.0, 0.2, 1.0)
    with pytest.raises(ValueError):
        GgpHyper(1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        GgpHyper(1.0, 0.2, 0.0)
    with pytest.raises(ValueError):
        CcrmHyper((1.0, 2.0), (1.0,))
    with pytest.raises(ValueError):
        CcrmHyper((0.0,), (1.0,))
    assert CcrmHyper.uniform(3, 0.5, 2.0).p == 3


def test_levy_density_matches_formula():
    h = GgpHyper(1.0, 0.3, 2.0)
    assert ggp_levy_density(0.7, h) == pytest.approx(levy_density(0.7, 1.0, 0.3, 2.0))
    with pytest.raises(ValueError):
        ggp_levy_density(0.0, h)


def test_total_mass_finite_activity():
    assert ggp_total_mass(GgpHyper(3.0, -0.5, 1.0)) == pytest.approx(6.0)
    assert math.isinf(ggp_total_mass(GgpHyper(3.0, 0.2, 1.0)))


@pytest.mark.parametrize("sigma", [-0.5, 0.0, 0.3, 0.7])
@pytest.mark.parametrize("eps", [1e-4, 1e-2, 0.5, 2.0])
def test_truncated_mass_against_quadrature(sigma, eps):
    assert truncated_mass(sigma, 1.3, eps) == pytest.approx(quad_truncated_mass(sigma, 1.3, eps), rel=1e-7)


@pytest.mark.parametrize("sigma", [-0.5, 0.0, 0.5])
def test_truncated_first_moment_against_quadrature(sigma):
    eps = 0.05
    want = integrate.quad(lambda w: w * levy_density(w, 1.0, sigma, 1.0), 0, eps)[0]
    assert truncated_first_moment(sigma, 1.0, eps) == pytest.approx(want, rel=1e-7)


@pytest.mark.parametrize("sigma", [-0.5, 0.0, 0.5])
def test_levy_integral_of_first_moment(sigma):
    # E sum w over unit alpha is tau^(sigma - 1)
    assert levy_integral(lambda w: w, sigma, 2.0) == pytest.approx(2.0 ** (sigma - 1), rel=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(0.2, 3.0), st.floats(1e-3, 50.0))
def test_univariate_psi_closed_form(sigma, tau, t):
    # with p=1, a=1, b=1 the integrand is 1 - 1/(1 + t w); compare to an independent quadrature
    got = laplace_exponent((t,), GgpHyper(1.0, sigma, tau), CcrmHyper((1.0,), (1.0,)))
    assert got == pytest.approx(quad_psi(t, sigma, tau, 1.0, 1.0), rel=1e-6)


@pytest.mark.parametrize("t,a,b", [((0.5, 2.0), (0.3, 1.2), (1.0, 0.5)), ((10.0,), (0.08,), (4.0,)),
                                   ((1e3, 1e-2, 5.0), (1.0, 2.0, 0.5), (1.0, 1.0, 3.0))])
@pytest.mark.parametrize("sigma", [-0.5, 0.0, 0.3, 0.999])
def test_fast_psi_agrees_with_adaptive(t, a, b, sigma):
    slow = laplace_exponent(t, GgpHyper(1.0, sigma, 1.0), CcrmHyper(a, b))
    fast = laplace_exponent_fast(np.asarray(t), sigma, 1.0, np.asarray(a), np.asarray(b))
    assert fast == pytest.approx(slow, rel=1e-8)


@pytest.mark.parametrize("lower", [0.0, 1e-3])
def test_fast_psi_near_unit_sigma_is_finite_and_bounded(lower):
    # for sigma -> 1 the mass sits at tiny w where the integrand is linear, so psi -> sum(a t / b)
    with np.errstate(all="raise"):
        got = laplace_exponent_fast(np.array([0.5, 2.0]), 0.9999, 1.0, np.array([0.1, 0.2]), np.array([1.0, 4.0]),
                                    lower=lower)
    assert 0 < got <= 0.1 * 0.5 + 0.2 * 2.0 / 4.0


def test_psi_large_t_growth_for_positive_sigma():
    # for sigma > 0 and a=b=1, psi(t) ~ tau-free constant times t^sigma at large t
    h, c = GgpHyper(1.0, 0.5, 1.0), CcrmHyper((1.0,), (1.0,))
    r = laplace_exponent((1e8,), h, c) / laplace_exponent((1e6,), h, c)
    assert r == pytest.approx(10.0, rel=0.02)


def test_psi_bounded_for_negative_sigma():
    h, c = GgpHyper(1.0, -0.5, 1.0), CcrmHyper((1.0,), (1.0,))
    assert laplace_exponent((1e9,), h, c) == pytest.approx(ggp_total_mass(h), rel=1e-3)


def test_mean_measure_values():
    m = mean_measure(GgpHyper(2.0, 0.2, 1.5), CcrmHyper((0.5, 2.0), (1.0, 4.0)))
    assert m.psi((0.0, 0.0)) == 0.0
    assert m.psi((0.3, 0.1)) > 0


@pytest.mark.parametrize("sigma", [-0.5, 0.0, 0.4])
def test_sample_ggp_count_and_sum(sigma):
    rng = np.random.default_rng(3)
    h, eps = GgpHyper(20.0, sigma, 1.0), 1e-3
    counts, sums = [], []
    for _ in range(400):
        theta, w0 = sample_ggp(h, eps, rng)
        assert np.all((theta >= 0) & (theta <= h.alpha))
        counts.append(w0.size)
        sums.append(w0.sum())
    n_want = ggp_total_mass(h) if sigma < 0 else h.alpha * truncated_mass(sigma, 1.0, eps)
    s_want = h.alpha * levy_integral(lambda w: w, sigma, 1.0, lower=0.0 if sigma < 0 else eps)
    for got, want in ((counts, n_want), (sums, s_want)):
        se = np.std(got) / math.sqrt(len(got))
        assert abs(np.mean(got) - want) < 4 * se


@pytest.mark.parametrize("sigma", [-0.5, 0.0, 0.4, 0.8])
def test_rejection_sampler_matches_measure(sigma):
    rng = np.random.default_rng(11)
    h, eps = GgpHyper(15.0, sigma, 2.0), 1e-3
    draws = [sample_levy_atoms_rejection(h, eps, rng) for _ in range(400)]
    lower = 0.0 if sigma < 0 else eps
    for f in (lambda w: np.ones_like(w), lambda w: w):
        got = [f(d).sum() for d in draws]
        want = h.alpha * levy_integral(lambda w: float(f(np.array(w))), sigma, 2.0, lower=lower)
        se = np.std(got) / math.sqrt(len(got))
        assert abs(np.mean(got) - want) < 4 * se


def test_rejection_sampler_keep_thins():
    rng = np.random.default_rng(5)
    h = GgpHyper(50.0, 0.2, 1.0)
    n_all = np.mean([sample_levy_atoms_rejection(h, 1e-2, rng).size for _ in range(200)])
    n_half = np.mean([sample_levy_atoms_rejection(h, 1e-2, rng, keep=lambda w: 0.5).size for _ in range(200)])
    assert n_half == pytest.approx(0.5 * n_all, rel=0.08)


def test_sample_ccrm_gamma_scores(rng):
    w0 = np.ones(20000)
    atoms = sample_ccrm(np.zeros(20000), w0, CcrmHyper((0.5, 3.0), (2.0, 1.0)), rng)
    assert atoms.beta.shape == (20000, 2)
    np.testing.assert_allclose(atoms.beta.mean(axis=0), [0.25, 3.0], rtol=0.05)
    np.testing.assert_allclose(atoms.w, atoms.beta)


def test_truncated_mass_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        truncated_mass(0.2, 1.0, 0.0)


def test_upper_gamma_recursion_via_known_case():
    # sigma = 0: mass on (eps, inf) is E1(tau eps)
    assert truncated_mass(0.0, 1.0, 0.1) == pytest.approx(float(special.exp1(0.1)))
