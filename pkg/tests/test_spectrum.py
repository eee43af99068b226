import math

import numpy as np
import pytest
from scipy.special import erf

from rfensemble import (
    ConfigError,
    ResourceError,
    activation_coeffs,
    empirical_spectral_model,
    gauss_hermite_rule,
    mp_spectral_model,
    spectral_integral,
)

RULE = gauss_hermite_rule(201)
ERF_COEFFS = activation_coeffs(erf, RULE)

# closed-form moments of the erf activation under a standard normal
KAPPA1_EXACT = 2.0 / math.sqrt(3.0 * math.pi)
SECOND_MOMENT_EXACT = (2.0 / math.pi) * math.asin(2.0 / 3.0)
KSTAR_SQ_EXACT = SECOND_MOMENT_EXACT - KAPPA1_EXACT**2


@pytest.fixture(autouse=True)
def _tmp_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("RFENSEMBLE_CACHE", str(tmp_path / "cache"))


class TestActivationCoeffs:
    def test_identity_activation(self):
        c = activation_coeffs(lambda x: x, RULE)
        assert c.kappa0 == pytest.approx(0.0, abs=1e-14)
        assert c.kappa1 == pytest.approx(1.0, abs=1e-12)
        assert c.kappa_star == pytest.approx(0.0, abs=1e-7)

    def test_erf_is_odd(self):
        assert abs(ERF_COEFFS.kappa0) < 1e-12

    def test_erf_coefficients_match_closed_forms(self):
        assert ERF_COEFFS.kappa1 == pytest.approx(KAPPA1_EXACT, abs=1e-12)
        assert ERF_COEFFS.kappa_star_sq == pytest.approx(KSTAR_SQ_EXACT, abs=1e-10)

    def test_scaling_property(self):
        base = activation_coeffs(np.tanh, RULE)
        scaled = activation_coeffs(lambda x: 2.5 * np.tanh(x), RULE)
        assert scaled.kappa0 == pytest.approx(2.5 * base.kappa0, abs=1e-12)
        assert scaled.kappa1 == pytest.approx(2.5 * base.kappa1, rel=1e-12)
        assert scaled.kappa_star == pytest.approx(2.5 * base.kappa_star, rel=1e-9)


class TestMpSpectralModel:
    def test_square_case_support_and_no_atom(self):
        model = mp_spectral_model(1.0, 1.0, ERF_COEFFS)
        assert model.atom_mass == 0.0
        assert model.support_min == pytest.approx(ERF_COEFFS.kappa_star_sq, abs=1e-12)
        assert model.support_max == pytest.approx(ERF_COEFFS.kappa_star_sq + 4 * ERF_COEFFS.kappa1**2, abs=1e-12)

    def test_large_gamma_concentrates(self):
        model = mp_spectral_model(1.0, 1e3, ERF_COEFFS)
        center = ERF_COEFFS.kappa_star_sq + ERF_COEFFS.kappa1**2
        spread = model.support_max - model.support_min
        assert spread < 0.2 * center
        assert spectral_integral(model, lambda s: s) == pytest.approx(center, rel=1e-8)

    def test_rank_deficient_atom(self):
        model = mp_spectral_model(1.0, 0.5, ERF_COEFFS)
        assert model.atom_mass == pytest.approx(0.5, abs=1e-12)
        assert model.atom_location == pytest.approx(ERF_COEFFS.kappa_star_sq, abs=1e-14)

    @pytest.mark.parametrize("gamma", [0.1, 0.5, 1.0, 2.0, 10.0])
    def test_mass_conservation(self, gamma):
        model = mp_spectral_model(1.0, gamma, ERF_COEFFS)
        assert model.total_mass() == pytest.approx(1.0, abs=1e-8)

    def test_rejects_noncentered_activation(self):
        shifted = activation_coeffs(lambda x: erf(x) + 0.3, RULE)
        with pytest.raises(ConfigError, match="empirical"):
            mp_spectral_model(1.0, 1.0, shifted)

    def test_rejects_nonpositive_ratios(self):
        with pytest.raises(ConfigError):
            mp_spectral_model(0.0, 1.0, ERF_COEFFS)
        with pytest.raises(ConfigError):
            mp_spectral_model(1.0, -2.0, ERF_COEFFS)


class TestEmpiricalSpectralModel:
    def test_scalar_case(self):
        model = empirical_spectral_model(5, 1, 1, ERF_COEFFS)
        F11 = np.random.default_rng(5).standard_normal((1, 1))[0, 0]
        want = ERF_COEFFS.kappa1**2 * F11**2 + ERF_COEFFS.kappa_star_sq
        np.testing.assert_allclose(model.eigenvalues, [want], atol=1e-12)

    def test_rank_deficiency_pins_half_the_spectrum(self):
        model = empirical_spectral_model(0, 2000, 1000, ERF_COEFFS)
        pinned = np.sum(np.abs(model.eigenvalues - ERF_COEFFS.kappa_star_sq) < 1e-8)
        assert pinned == 1000

    def test_mean_eigenvalue_is_trace(self):
        p = 1500
        model = empirical_spectral_model(1, p, 750, ERF_COEFFS)
        want = ERF_COEFFS.kappa1**2 + ERF_COEFFS.kappa_star_sq
        got = spectral_integral(model, lambda s: s)
        assert got == pytest.approx(want, abs=5.0 / math.sqrt(p))

    def test_resource_cap(self):
        with pytest.raises(ResourceError):
            empirical_spectral_model(0, 100_000, 100_000, ERF_COEFFS)

    def test_cache_roundtrip(self):
        a = empirical_spectral_model(7, 200, 100, ERF_COEFFS)
        b = empirical_spectral_model(7, 200, 100, ERF_COEFFS)
        np.testing.assert_array_equal(a.eigenvalues, b.eigenvalues)


class TestSpectralIntegral:
    def test_unit_mass(self):
        model = mp_spectral_model(1.0, 0.7, ERF_COEFFS)
        assert spectral_integral(model, lambda s: np.ones_like(s)) == pytest.approx(1.0, abs=1e-8)

    def test_first_moment_square_case(self):
        # trace identity E tr(Omega)/p = kappa1^2 + kappa_star^2, cross-checked empirically
        model = mp_spectral_model(1.0, 1.0, ERF_COEFFS)
        want = ERF_COEFFS.kappa1**2 + ERF_COEFFS.kappa_star_sq
        assert spectral_integral(model, lambda s: s) == pytest.approx(want, abs=1e-6)
        emp = empirical_spectral_model(3, 2000, 2000, ERF_COEFFS)
        assert spectral_integral(emp, lambda s: s) == pytest.approx(want, rel=0.02)

    def test_empirical_first_moment_is_exact_trace(self):
        model = empirical_spectral_model(9, 300, 200, ERF_COEFFS)
        F = np.random.default_rng(9).standard_normal((300, 200))
        omega = ERF_COEFFS.kappa1**2 * F @ F.T / 200 + ERF_COEFFS.kappa_star_sq * np.eye(300)
        assert spectral_integral(model, lambda s: s) == pytest.approx(np.trace(omega) / 300, rel=1e-12)

    @pytest.mark.parametrize("g", [lambda s: s / (1 + s), lambda s: 1.0 / (0.1 + s), lambda s: np.exp(-s)])
    def test_closed_form_matches_empirical_within_two_percent(self, g):
        gamma = 0.5
        closed = mp_spectral_model(1.0, gamma, ERF_COEFFS)
        emp = empirical_spectral_model(2, 2000, 1000, ERF_COEFFS)
        a = spectral_integral(closed, g)
        b = spectral_integral(emp, g)
        assert a == pytest.approx(b, rel=0.02)
