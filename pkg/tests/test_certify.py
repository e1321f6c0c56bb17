import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptive_stab.certify import (LyapunovCertificate, check_lyapunov,
                                   estimate_policy_lipschitz,
                                   excitation_from_moments, lyapunov_drift,
                                   moment_scan, rpi_check)
from adaptive_stab.errors import CertificationError, ContractViolation
from adaptive_stab.kfuncs import exp_minus_one, identity, scaled_identity
from adaptive_stab.noise import NoiseModel
from adaptive_stab.plants import build_pwa, PwaExampleParams
from adaptive_stab.regions import RegionDescriptor
from adaptive_stab.system import PolicyFamily, SystemModel, step


class TestExcitationFromMoments:
    def test_direct_substitution(self):
        cert = excitation_from_moments(2.0, 0.0)
        assert cert.c_pe == pytest.approx(1.0)
        assert cert.p_pe == pytest.approx(0.25)

    def test_second_example(self):
        cert = excitation_from_moments(1.0, 3.0)
        assert cert.c_pe == pytest.approx(0.25)
        assert cert.p_pe == pytest.approx(1.0 / 16.0)

    def test_zero_first_moment_rejected(self):
        with pytest.raises(CertificationError):
            excitation_from_moments(0.0, 1.0)

    @given(st.floats(1e-6, 1e3), st.floats(0.0, 1e6))
    @settings(max_examples=200, deadline=None)
    def test_probability_cap_and_monotonicity(self, c1, c2):
        cert = excitation_from_moments(c1, c2)
        assert 0 < cert.p_pe <= 0.25
        worse = excitation_from_moments(c1, c2 + 1.0)
        assert worse.p_pe < cert.p_pe
        assert worse.c_pe == cert.c_pe  # c_PE does not depend on the variance


def _dither_only_system(dither_half: float, noise: NoiseModel):
    """d = 1 plant whose basis is the control itself."""
    sys = SystemModel(
        n=1, m=1, d=1, q=1,
        nominal_f=lambda x, u: np.zeros(np.shape(x)),
        basis_psi=lambda x, u: np.asarray(u, dtype=float),
        theta_star=np.zeros((1, 1)), process_noise=noise,
        state_space=RegionDescriptor.everything(1))
    if dither_half > 0:
        dither = NoiseModel.uniform_box([dither_half])
    else:
        dither = NoiseModel.point_mass([0.0])
    policy = PolicyFamily(eval=lambda x, s, th: np.asarray(s, dtype=float),
                          u_max=dither_half, dither=dither, name="dither-only")
    return sys, policy


class TestMomentScan:
    def test_uniform_dither_oracle(self):
        """psi = u, policy = dither only, S ~ U(-1,1): E|S| = 1/2 and
        Var|S| = 1/12 by direct quadrature."""
        sys, policy = _dither_only_system(1.0, NoiseModel.point_mass([0.0]))
        region = RegionDescriptor.interval(-1.0, 1.0)
        c1, c2, diag = moment_scan(sys, policy, region, x_grid=5,
                                   theta_samples=4, zeta_samples=4,
                                   mc_samples=40_000, seed=3)
        se = diag["worst_mean_se"]
        assert abs(c1 - 0.5) <= 4 * se
        assert c2 <= 1.0 / 12.0 + 0.005

    def test_pwa_meets_analytic_floor(self, pwa_bundle):
        floor = pwa_bundle.excitation.c_pe1
        c1, c2, diag = moment_scan(pwa_bundle.system, pwa_bundle.policy,
                                   pwa_bundle.pe_region, x_grid=9,
                                   theta_samples=12, zeta_samples=32,
                                   mc_samples=20_000, seed=5)
        assert c1 >= floor - 3 * diag["worst_mean_se"]

    def test_degenerate_no_noise_errors(self):
        sys, policy = _dither_only_system(0.0, NoiseModel.point_mass([0.0]))
        region = RegionDescriptor.interval(-1.0, 1.0)
        with pytest.raises(CertificationError, match="not certified"):
            moment_scan(sys, policy, region, x_grid=3, theta_samples=2,
                        zeta_samples=2, mc_samples=2000, seed=1)

    def test_sample_floor_enforced(self, pwa_bundle):
        with pytest.raises(ContractViolation):
            moment_scan(pwa_bundle.system, pwa_bundle.policy,
                        pwa_bundle.pe_region, mc_samples=10)

    def test_doubling_samples_converges(self, pwa_bundle):
        """Doubling the Monte-Carlo budget moves the worst-case first moment
        by less than three combined standard errors."""
        kw = dict(x_grid=5, theta_samples=8, zeta_samples=16, seed=13)
        a1, _, da = moment_scan(pwa_bundle.system, pwa_bundle.policy,
                                pwa_bundle.pe_region, mc_samples=20_000, **kw)
        b1, _, db = moment_scan(pwa_bundle.system, pwa_bundle.policy,
                                pwa_bundle.pe_region, mc_samples=40_000, **kw)
        assert abs(a1 - b1) < 3.0 * (da["worst_mean_se"] + db["worst_mean_se"])

    def test_probability_form_implied_by_moments(self):
        """Dual route: the excitation constants derived from the moments must
        satisfy the defining probability inequality
        P(|zeta^T psi|^2 >= c_PE) >= p_PE, checked by direct Monte Carlo on
        the dither-only plant."""
        from adaptive_stab.rng import substream
        sys, policy = _dither_only_system(1.0, NoiseModel.point_mass([0.0]))
        region = RegionDescriptor.interval(-1.0, 1.0)
        c1, c2, _ = moment_scan(sys, policy, region, x_grid=5, theta_samples=4,
                                zeta_samples=4, mc_samples=40_000, seed=3)
        cert = excitation_from_moments(c1, c2)
        rng = substream(99)
        s = rng.uniform(-1.0, 1.0, size=400_000)
        for zeta in (1.0, -1.0):
            prob = float(np.mean((zeta * s) ** 2 >= cert.c_pe))
            se = math.sqrt(prob * (1 - prob) / s.size)
            assert prob + 3 * se >= cert.p_pe


class TestRpiCheck:
    def test_paper_configuration_not_falsified(self, pwa_bundle):
        cert = rpi_check(pwa_bundle.system, pwa_bundle.policy,
                         pwa_bundle.rpi.region, pwa_bundle.rpi.vartheta_bar,
                         sample_budget=20_000, seed=2)
        assert cert.holds
        assert cert.samples_checked > 0

    def test_oversized_radius_falsified_and_replays(self, pwa_bundle):
        cert = rpi_check(pwa_bundle.system, pwa_bundle.policy,
                         pwa_bundle.rpi.region, 1.0,
                         sample_budget=20_000, seed=2)
        assert not cert.holds
        f = cert.falsified
        u = pwa_bundle.policy.eval(np.array(f["x"]), np.array(f["s"]),
                                   np.array(f["theta"]))
        nxt = step(pwa_bundle.system, np.array(f["x"]), u, np.array(f["w"]))
        assert np.array_equal(nxt, np.array(f["exit_state"]))
        assert not pwa_bundle.rpi.region.contains(nxt)

    def test_whole_space_trivially_invariant(self, pwa_bundle):
        cert = rpi_check(pwa_bundle.system, pwa_bundle.policy,
                         RegionDescriptor.everything(1), 1e-3)
        assert cert.holds


class TestPolicyLipschitz:
    def test_pwa_scale(self, pwa_bundle):
        c = pwa_bundle.extras["C"]
        # gradient of the gain at theta*: |d(th1/th2)| with th=(1, 0.1) is
        # sqrt(10^2 + 100^2) ~ 100.5; the saturation caps |x| near u1/10,
        # so the ratio tops out around 9; the 1.5 safety factor brings ~13.6
        assert 5.0 <= c <= 25.0

    def test_identical_parameters_zero_difference(self, pwa_bundle):
        from adaptive_stab.linalg import pinv, sat
        from adaptive_stab.system import split_theta
        th = pwa_bundle.system.theta_star

        def feedback(x, theta):
            th1, th2 = split_theta(theta, 1)
            return sat(-(np.atleast_1d(x) @ (pinv(th2) @ th1).T), 0.9)

        assert np.allclose(feedback(np.array([0.05]), th),
                           feedback(np.array([0.05]), th.copy()))

    def test_rank_collapse_detected(self, pwa_bundle):
        from adaptive_stab.linalg import pinv, sat
        from adaptive_stab.system import split_theta

        def feedback(x, theta):
            th1, th2 = split_theta(theta, 1)
            return sat(-(np.atleast_1d(x) @ (pinv(th2) @ th1).T), 0.9)

        with pytest.raises(CertificationError, match="radius"):
            estimate_policy_lipschitz(feedback, pwa_bundle.system.theta_star,
                                      ball_radius=0.5, seed=0)


class TestLyapunovDrift:
    def test_fixed_point_zero_drift(self, pwa_bundle):
        """Noiseless origin is an exact fixed point of the closed loop."""
        from dataclasses import replace
        sys = replace(pwa_bundle.system,
                      process_noise=NoiseModel.point_mass([0.0]))
        policy = PolicyFamily(eval=pwa_bundle.policy.eval, u_max=0.9,
                              dither=NoiseModel.point_mass([0.0]))
        drift, se = lyapunov_drift(sys, policy, pwa_bundle.lyapunov,
                                   [0.0], np.zeros((2, 1)), mc_samples=1000)
        assert drift == 0.0 and se == 0.0

    def test_noiseless_contraction_value(self, pwa_bundle):
        """x = 0.05 under the true parameter moves exactly to 0, so the
        drift equals -(e^0.05 - 1)."""
        from dataclasses import replace
        sys = replace(pwa_bundle.system,
                      process_noise=NoiseModel.point_mass([0.0]))
        policy = PolicyFamily(eval=pwa_bundle.policy.eval, u_max=0.9,
                              dither=NoiseModel.point_mass([0.0]))
        drift, se = lyapunov_drift(sys, policy, pwa_bundle.lyapunov,
                                   [0.05], np.zeros((2, 1)), mc_samples=500)
        assert drift == pytest.approx(-(math.exp(0.05) - 1.0), abs=1e-12)

    def test_drift_respects_certificate_bound(self, pwa_bundle):
        cert = pwa_bundle.lyapunov
        rng = np.random.default_rng(7)
        for _ in range(5):
            x = rng.uniform(-20.0, 20.0)
            vt = cert.vartheta_bar * rng.uniform(0, 1) * np.array([[0.6], [0.8]])
            drift, se = lyapunov_drift(pwa_bundle.system, pwa_bundle.policy,
                                       cert, [x], vt, mc_samples=4000, seed=11)
            bound = (-float(cert.alpha3(abs(x))) + cert.d_tilde
                     + float(cert.sigma3(np.linalg.norm(vt, 2))))
            assert drift <= bound + 3 * se


class TestCheckLyapunov:
    def test_pwa_certificate_passes(self, pwa_bundle):
        xs = np.linspace(-40.0, 40.0, 9)[:, None]
        report = check_lyapunov(pwa_bundle.system, pwa_bundle.policy,
                                pwa_bundle.lyapunov, xs, theta_samples=5,
                                mc_samples=4000, seed=3)
        assert report["ok"], report["failures"][:2]

    def test_zero_v_fails_sandwich(self, pwa_bundle):
        cert = LyapunovCertificate(
            V=lambda x: np.zeros(np.asarray(x).shape[:-1]),
            alpha1=identity(), alpha2=identity(), alpha3=identity(),
            sigma3=identity(), d_tilde=0.0, alpha_v=scaled_identity(0.5),
            region=pwa_bundle.rpi.region, vartheta_bar=1e-3)
        xs = np.array([[0.5]])
        report = check_lyapunov(pwa_bundle.system, pwa_bundle.policy, cert, xs,
                                theta_samples=2, mc_samples=1000)
        assert not report["sandwich_ok"]

    def test_inflated_offset_still_passes(self, pwa_bundle):
        base = pwa_bundle.lyapunov
        inflated = LyapunovCertificate(
            V=base.V, alpha1=base.alpha1, alpha2=base.alpha2,
            alpha3=base.alpha3, sigma3=base.sigma3,
            d_tilde=base.d_tilde + 10.0, alpha_v=base.alpha_v,
            region=base.region, vartheta_bar=base.vartheta_bar)
        xs = np.linspace(-10.0, 10.0, 5)[:, None]
        report = check_lyapunov(pwa_bundle.system, pwa_bundle.policy, inflated,
                                xs, theta_samples=3, mc_samples=2000, seed=4)
        assert report["drift_ok"]
