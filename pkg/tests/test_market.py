import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import pooled_annuity as pa


def test_pdf_at_mean_matches_formula(model):
    # density at the mode, evaluated from the Normal formula directly
    expected = 1.0 / (0.1753 * math.sqrt(2.0 * math.pi))
    assert model.pdf(1.083) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(2.2758, abs=5e-5)


def test_pdf_standard_normal_mode():
    m = pa.ReturnModel(mu=0.0, sigma=1.0)
    assert m.pdf(0.0) == pytest.approx(0.39894, abs=1e-5)


def test_pdf_tails_vanish(model):
    assert model.pdf(1e9) == 0.0
    assert model.pdf(-1e9) == 0.0


def test_pdf_integrates_to_one(model):
    # quadrature over +-8 sigma must capture all but <1e-6 of the mass
    lo, hi = model.mu - 8 * model.sigma, model.mu + 8 * model.sigma
    z = np.linspace(lo, hi, 20001)
    total = np.trapz(model.pdf(z), z)
    assert 1.0 - 1e-6 <= total <= 1.0 + 1e-9


def test_cdf_reference_points(model):
    assert model.cdf(1.083) == pytest.approx(0.5, abs=1e-12)
    assert model.cdf(np.inf) == 1.0
    # one sigma above the mean: frozen standard Normal value
    assert model.cdf(1.083 + 0.1753) == pytest.approx(0.8413447460685429, abs=1e-12)


def test_cdf_monotone(model):
    z = np.sort(np.random.default_rng(0).uniform(0.0, 2.2, size=500))
    c = model.cdf(z)
    assert np.all(np.diff(c) >= 0.0)


def test_quantile_inverts_cdf(model):
    p = np.array([0.01, 0.25, 0.5, 0.75, 0.99])
    assert model.cdf(model.quantile(p)) == pytest.approx(p, abs=1e-12)


def test_sampler_deterministic_and_distinct(model):
    a = model.sample_return(np.random.default_rng(123)), \
        model.sample_return(np.random.default_rng(123))
    assert a[0] == a[1]
    rng = np.random.default_rng(123)
    x, y = model.sample_return(rng), model.sample_return(rng)
    assert x != y


def test_sampler_mean_and_ks(model):
    rng = np.random.default_rng(2024)
    draws = model.sample_return(rng, size=1_000_000)
    assert abs(draws.mean() - model.mu) <= 5e-3 * model.sigma
    # Kolmogorov-Smirnov distance between empirical and model cdf
    sorted_draws = np.sort(draws)
    grid = np.arange(1, draws.size + 1) / draws.size
    cdf_vals = model.cdf(sorted_draws)
    ks = max(np.max(np.abs(grid - cdf_vals)),
             np.max(np.abs(grid - 1.0 / draws.size - cdf_vals)))
    assert ks <= 0.002


def test_degenerate_sigma_rejected():
    with pytest.raises(ValueError):
        pa.ReturnModel(sigma=0.0)
    with pytest.raises(ValueError):
        pa.ReturnModel(r=-0.01)


def test_portfolio_return_examples():
    m = pa.ReturnModel(r=0.0)
    assert m.portfolio_return(0.0, 123.0) == pytest.approx(1.0)
    assert m.portfolio_return(1.0, 1.05) == pytest.approx(1.05)
    m2 = pa.ReturnModel(r=0.02)
    assert m2.portfolio_return(0.5, 1.10) == pytest.approx(1.06)


def test_portfolio_return_rejects_leverage(model):
    with pytest.raises(ValueError):
        model.portfolio_return(1.5, 1.0)
    with pytest.raises(ValueError):
        model.portfolio_return(-0.1, 1.0)


@given(q=st.floats(0.0, 1.0), x1=st.floats(-2.0, 4.0), lam=st.floats(0.0, 1.0))
def test_portfolio_return_affine(q, x1, lam):
    m = pa.ReturnModel(r=0.03)
    bond = m.bond_return
    # affine in x1 and fixed point at the bond return
    left = m.portfolio_return(q, lam * x1 + (1 - lam) * bond)
    right = lam * m.portfolio_return(q, x1) + (1 - lam) * bond
    assert left == pytest.approx(right, abs=1e-12)
    assert m.portfolio_return(q, bond) == pytest.approx(bond, abs=1e-12)
