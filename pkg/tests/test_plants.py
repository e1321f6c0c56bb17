import math

import numpy as np
import pytest

from adaptive_stab.errors import CertificationError, ContractViolation
from adaptive_stab.noise import NoiseModel
from adaptive_stab.plants import (LinearExampleParams, PwaExampleParams,
                                  build_linear, build_pwa, compute_h)
from adaptive_stab.rng import substream


class TestPwaParams:
    def test_paper_configuration_valid(self):
        p = PwaExampleParams(3000.0, 0.9, 0.1, 0.07, 1e-4, 0.5)
        p.validate()
        # the noise-domination margin: 0.09 > 0.01 + 0.07
        assert 0.1 * p.u_bar1 > 0.1 * p.u_bar2 + p.w_bar

    def test_noise_domination_violated(self):
        p = PwaExampleParams(3000.0, 0.9, 0.1, 0.1, 1e-4, 0.5)
        with pytest.raises(ContractViolation, match="dominate"):
            p.validate()

    def test_small_radius_rejected(self):
        p = PwaExampleParams(0.1, 0.9, 0.1, 0.07)
        with pytest.raises(ContractViolation, match="radius"):
            p.validate()


class TestBuildPwa:
    def test_analytic_excitation_constants(self, pwa_bundle):
        p = PwaExampleParams()
        c1 = min(p.w_bar / 4, p.w_bar * p.u_bar2 / (8 * p.u_bar1 + 4 * p.w_bar))
        c2 = 3 * max(p.w_bar ** 2 / 3, p.u_bar2 ** 2 / 3 + 4 * p.u_bar1 ** 2)
        assert pwa_bundle.excitation.c_pe1 == pytest.approx(c1)
        assert pwa_bundle.excitation.c_pe2 == pytest.approx(c2)
        assert pwa_bundle.excitation.c_pe == pytest.approx(0.25 * c1 ** 2)

    def test_regions(self, pwa_bundle):
        assert pwa_bundle.pe_region.max_norm() == pytest.approx(3000.0 - 0.07)
        assert pwa_bundle.rpi.region.max_norm() == pytest.approx(
            3000.0 - 0.07 - 0.1 * 1.0)

    def test_lyapunov_certificate_shapes(self, pwa_bundle):
        lyap = pwa_bundle.lyapunov
        # V(x) = e^|x| - 1 with matching sandwich envelopes
        assert float(lyap.V(np.array([[1.0]]))[0]) == pytest.approx(math.e - 1)
        assert float(lyap.alpha1(1.0)) == pytest.approx(math.e - 1)
        assert lyap.d_tilde == pytest.approx(math.expm1(pwa_bundle.extras["h"]))
        # alpha_v is a valid convex lower bound of alpha3 o alpha2^-1
        grid = np.geomspace(1e-3, 10.0, 30)
        comp = np.array([float(lyap.alpha3(lyap.alpha2.inv(float(y)))) for y in grid])
        assert np.all(np.asarray(lyap.alpha_v(grid)) <= comp + 1e-12)

    def test_vartheta_bar_respects_both_caps(self, pwa_bundle):
        p, c = PwaExampleParams(), pwa_bundle.extras["C"]
        vb, h = pwa_bundle.rpi.vartheta_bar, pwa_bundle.extras["h"]
        assert 0.1 * p.u_bar1 >= 0.1 * (c * vb + p.u_bar2) + p.w_bar - 1e-12
        assert 0.1 * p.u_bar1 > h + c * vb

    def test_moment_scan_confirms_floor(self, pwa_bundle):
        from adaptive_stab.certify import moment_scan
        c1, _, diag = moment_scan(pwa_bundle.system, pwa_bundle.policy,
                                  pwa_bundle.pe_region, x_grid=7,
                                  theta_samples=10, zeta_samples=24,
                                  mc_samples=10_000, seed=9)
        assert c1 >= pwa_bundle.excitation.c_pe1 - 3 * diag["worst_mean_se"]


class TestBuildLinear:
    def test_double_integrator_reconstruction(self, linear_bundle):
        a2 = np.array([[1.0, 2.0], [0.0, 1.0]])
        r2 = np.array([[0.0, 1.0], [1.0, 1.0]])
        assert np.allclose(linear_bundle.system.theta_star.T, np.hstack([a2, r2]))
        assert linear_bundle.extras["sigma_min_R"] == pytest.approx(
            np.linalg.svd(r2, compute_uv=False)[-1])

    def test_kappa_one_square_b_identity(self):
        a = np.array([[0.9, 0.0], [0.0, 0.8]])
        b = np.eye(2)
        params = LinearExampleParams(a=a, b=b, sigma_w=0.01 * np.eye(2),
                                     kappa=1, u_max=1.0, u_bar1=0.7)
        bundle = build_linear(params)
        assert np.allclose(bundle.system.theta_star.T, np.hstack([a, b]))

    def test_unstable_a_rejected(self):
        params = LinearExampleParams(a=1.5 * np.eye(2))
        with pytest.raises(ContractViolation):
            build_linear(params)

    def test_h_constraint_failure_reports_both_sides(self):
        params = LinearExampleParams(sigma_w=4.0 * np.eye(2))
        with pytest.raises(CertificationError) as err:
            build_linear(params)
        assert "h =" in str(err.value) and "sigma_min" in str(err.value)

    def test_global_routing(self, linear_bundle):
        assert linear_bundle.rpi.region.is_all
        assert linear_bundle.pe_region.is_all

    def test_analytic_excitation_formula(self, linear_bundle):
        p = linear_bundle.extras["params"]
        lam_min = linear_bundle.extras["lam_min"]
        lam_max = linear_bundle.extras["lam_max"]
        n, m, kappa = 2, 1, p.kappa
        u1, u2 = p.u_bar1, p.u_bar2
        c1 = min(math.sqrt(lam_min * n * m * kappa) * u2
                 / (2 * math.sqrt(2 * math.pi) * u1 + 4 * math.sqrt(lam_min) * n),
                 math.sqrt(lam_min * n / (2 * math.pi)))
        c2 = 3 * (max(lam_max, u2 ** 2 / 3) + 4 * u1 ** 2)
        assert linear_bundle.excitation.c_pe1 == pytest.approx(c1)
        assert linear_bundle.excitation.c_pe2 == pytest.approx(c2)


class TestComputeH:
    def test_point_masses_give_zero(self):
        h, se = compute_h(np.eye(1), NoiseModel.point_mass([0.0]),
                          NoiseModel.point_mass([0.0]), mc_samples=100)
        assert h == 0.0 and se == 0.0

    def test_uniform_closed_form(self):
        """E[e^|S|] = (e^a - 1)/a for scalar S ~ U(-a, a)."""
        a = 0.8
        h, se = compute_h(np.eye(1), NoiseModel.uniform_box([a]),
                          NoiseModel.point_mass([0.0]), mc_samples=400_000,
                          seed=3)
        want = math.log((math.exp(a) - 1.0) / a)
        assert h == pytest.approx(want, abs=5 * se + 1e-4)

    def test_monotone_in_noise_scale(self):
        vals = []
        for scale in (0.1, 0.3, 0.9):
            h, _ = compute_h(np.eye(1), NoiseModel.uniform_box([scale]),
                             NoiseModel.point_mass([0.0]), mc_samples=50_000,
                             seed=4)
            vals.append(h)
        assert vals[0] < vals[1] < vals[2]

    def test_pwa_scaled_dither_variant(self, pwa_bundle):
        """h for the PWA example uses the 0.1-scaled dither term."""
        p = PwaExampleParams()
        s_term = math.log((math.exp(0.1 * p.u_bar2) - 1.0) / (0.1 * p.u_bar2))
        w_term = math.log((math.exp(p.w_bar) - 1.0) / p.w_bar)
        assert pwa_bundle.extras["h"] == pytest.approx(s_term + w_term, abs=1e-3)
