import warnings

import numpy as np
import pytest

import oracle
from pnbem import bem
from pnbem.dsp import ConfigError
from pnbem.estimators import (
    EstimatorConfig, JointEstimate, alternating_estimate, build_sensing_ch_step,
    build_sensing_pn_step, build_sensing_single, estimate_cpe, estimate_pn_known_channel,
    gauge_scalar, log_likelihood, ml_single_bem, solve,
)
from pnbem.frame import (
    FeasibilityError, FrameConfig, PilotParams, assemble_frame, build_pilot_pattern,
    data_capacity_bits,
)
from conftest import crandn, full_pilot_frame, random_frame, transmit

SMALL = FrameConfig(K=16, K_cp=4, M=3)
K32 = FrameConfig(K=32, K_cp=8, M=4)


def dpss(Q, cfg):
    return bem.make_basis(bem.DPSS, Q, cfg)


def nmse(est, ref):
    return np.linalg.norm(est - ref) ** 2 / np.linalg.norm(ref) ** 2


def post(x, cfg):
    return x[..., cfg.postcp_indices().ravel()]


class TestSensingSingle:
    def test_static_all_ones(self):
        cfg = FrameConfig(K=8, K_cp=2, M=1)
        pat = build_pilot_pattern(cfg, PilotParams(dmrs_symbols=(0,), dmrs_comb=1, ptrs=False))
        grid = assemble_frame(cfg, pat, [], 0, 4)
        grid.values[:] = 1.0
        B = bem.BemBasis(np.ones((cfg.N, 1), complex), bem.CE, orthonormal=False)
        S = build_sensing_single(grid, pat, cfg, (0,), B).S_eff
        F = oracle.dft(8)
        ref = F @ np.diag(F.conj().T @ np.ones(8)) @ np.ones(8)
        np.testing.assert_allclose(S[:, 0], ref, atol=1e-12)

    def test_dense_oracle(self):
        pat, grid = random_frame(SMALL, PilotParams(dmrs_symbols=(1,), ptrs_df=4), seed=2)
        B = dpss(3, SMALL)
        delays = (0, 1, 3)
        S = build_sensing_single(grid, pat, SMALL, delays, B).S_eff
        ref = oracle.dense_sensing_single(grid.pilot_only(), pat.observed, delays, B.matrix,
                                          SMALL)
        assert np.max(np.abs(S - ref)) < 1e-10

    def test_noiseless_consistency(self, rng):
        pat, grid = full_pilot_frame(SMALL)
        B = dpss(4, SMALL)
        delays = (0, 2)
        alpha = crandn(rng, 2, 5)
        y = transmit(grid, SMALL, bem.reconstruct(B, alpha), delays)
        prob = build_sensing_single(grid, pat, SMALL, delays, B, y)
        assert np.max(np.abs(prob.y_o - prob.S_eff @ alpha.ravel())) < 1e-10
        assert prob.shape == (pat.n_observed, 2 * 5)

    def test_zero_pilots(self):
        cfg = FrameConfig(K=8, K_cp=2, M=2)
        pat = build_pilot_pattern(cfg, PilotParams(ptrs=False))
        grid = assemble_frame(cfg, pat, np.zeros(data_capacity_bits(pat, 4), int), 0, 4)
        with pytest.raises(FeasibilityError):
            build_sensing_single(grid, pat, cfg, (0,), dpss(1, cfg))

    def test_underdetermined(self):
        pat, grid = random_frame(SMALL, PilotParams(ptrs_df=16, guard_width=0))
        with pytest.raises(FeasibilityError) as exc:
            build_sensing_single(grid, pat, SMALL, (0, 1), dpss(5, SMALL))
        assert exc.value.deficit == 12 - 3

    def test_delay_beyond_cp(self):
        pat, grid = full_pilot_frame(SMALL)
        with pytest.raises(ConfigError):
            build_sensing_single(grid, pat, SMALL, (0, 5), dpss(1, SMALL))

    def test_condition_flag(self):
        pat, grid = full_pilot_frame(SMALL)
        prob = build_sensing_single(grid, pat, SMALL, (0,), dpss(2, SMALL))
        assert 1 <= prob.cond < 1e8 and not prob.ill_conditioned


class TestSingleBem:
    def test_square_exact(self, rng):
        cfg = FrameConfig(K=8, K_cp=2, M=1)
        pat, grid = full_pilot_frame(cfg, seed=3)
        B = bem.make_basis(bem.DPSS, 3, cfg, 0.2)
        delays = (0, 1)
        alpha = crandn(rng, 2, 4)
        y = transmit(grid, cfg, bem.reconstruct(B, alpha), delays)
        prob = build_sensing_single(grid, pat, cfg, delays, B, y)
        assert prob.shape == (8, 8)
        est = ml_single_bem(prob)
        assert np.linalg.norm(prob.y_o - prob.S_eff @ est.alpha.ravel()) < 1e-9 * np.linalg.norm(
            prob.y_o)

    def test_overdetermined_recovery(self, rng):
        pat, grid = full_pilot_frame(K32, seed=4)
        B = dpss(4, K32)
        delays = (0, 3)
        alpha = crandn(rng, 2, 5)
        y = transmit(grid, K32, bem.reconstruct(B, alpha), delays)
        est = ml_single_bem(build_sensing_single(grid, pat, K32, delays, B, y))
        assert np.linalg.norm(est.alpha - alpha) / np.linalg.norm(alpha) < 1e-8
        np.testing.assert_allclose(est.products, bem.reconstruct(B, alpha), atol=1e-8)
        assert not est.rank_deficient

    def test_matches_pseudo_inverse(self, rng):
        pat, grid = random_frame(SMALL, PilotParams(dmrs_symbols=(0, 2), ptrs_df=4), seed=5)
        B = dpss(2, SMALL)
        prob = build_sensing_single(grid, pat, SMALL, (0, 1), B, crandn(rng, SMALL.M * SMALL.K))
        est = ml_single_bem(prob)
        ref = oracle.dense_ls_solve(prob.S_eff, prob.y_o)
        np.testing.assert_allclose(est.alpha.ravel(), ref, atol=1e-8)

    def test_rank_deficiency_flag(self, rng):
        pat, grid = full_pilot_frame(SMALL)
        m = np.repeat(dpss(1, SMALL).matrix, 2, axis=1)
        B = bem.BemBasis(m, bem.DPSS, orthonormal=False)
        prob = build_sensing_single(grid, pat, SMALL, (0,), B, crandn(rng, 48))
        est = ml_single_bem(prob)
        assert est.rank_deficient and est.rank == 2
        np.testing.assert_allclose(est.alpha.ravel(), oracle.dense_ls_solve(prob.S_eff, prob.y_o),
                                   atol=1e-8)


class TestStepSensing:
    def test_pn_step_identity_channel_reduces(self):
        pat, grid = random_frame(SMALL, PilotParams(dmrs_symbols=(1,), ptrs_df=4), seed=1)
        B = dpss(3, SMALL)
        single = build_sensing_single(grid, pat, SMALL, (0,), B).S_eff
        pn = build_sensing_pn_step(grid, pat, SMALL, (0,), B, np.ones((1, SMALL.N))).S_eff
        np.testing.assert_allclose(pn, single, atol=1e-12)

    def test_ch_step_unit_pn_reduces(self):
        pat, grid = random_frame(SMALL, PilotParams(dmrs_symbols=(1,), ptrs_df=4), seed=1)
        B = dpss(2, SMALL)
        delays = (0, 2)
        single = build_sensing_single(grid, pat, SMALL, delays, B).S_eff
        ch = build_sensing_ch_step(grid, pat, SMALL, delays, B, np.ones(SMALL.N)).S_eff
        np.testing.assert_allclose(ch, single, atol=1e-12)

    def test_dense_oracles(self, rng):
        cfg = FrameConfig(K=32, K_cp=8, M=2)
        pat, grid = random_frame(cfg, PilotParams(dmrs_symbols=(0,), ptrs_df=8), seed=9)
        delays = (0, 2, 7)
        taps, pn = crandn(rng, 3, cfg.N), np.exp(1j * rng.standard_normal(cfg.N))
        B_pn, B_ch = dpss(5, cfg), dpss(2, cfg)
        S = build_sensing_pn_step(grid, pat, cfg, delays, B_pn, taps).S_eff
        ref = oracle.dense_sensing_pn(grid.pilot_only(), pat.observed, delays, B_pn.matrix,
                                      taps, cfg)
        assert np.max(np.abs(S - ref)) < 1e-10
        S = build_sensing_ch_step(grid, pat, cfg, delays, B_ch, pn).S_eff
        ref = oracle.dense_sensing_ch(grid.pilot_only(), pat.observed, delays, B_ch.matrix,
                                      pn, cfg)
        assert np.max(np.abs(S - ref)) < 1e-10

    def test_planted_pn_given_channel(self, rng):
        pat, grid = full_pilot_frame(K32, seed=2)
        delays = (0, 3)
        B_pn = dpss(6, K32)
        taps = crandn(rng, 2, K32.N)
        alpha = crandn(rng, 7)
        y = transmit(grid, K32, taps, delays, bem.reconstruct(B_pn, alpha))
        prob = build_sensing_pn_step(grid, pat, K32, delays, B_pn, taps, y)
        a, _ = solve(prob)
        assert np.linalg.norm(a - alpha) / np.linalg.norm(alpha) < 1e-8

    def test_planted_channel_given_pn(self, rng):
        pat, grid = full_pilot_frame(K32, seed=2)
        delays = (0, 3)
        B_ch = dpss(3, K32)
        pn = np.exp(1j * np.cumsum(0.05 * rng.standard_normal(K32.N)))
        alpha = crandn(rng, 2, 4)
        y = transmit(grid, K32, bem.reconstruct(B_ch, alpha), delays, pn)
        a, _ = solve(build_sensing_ch_step(grid, pat, K32, delays, B_ch, pn, y))
        assert np.linalg.norm(a - alpha.ravel()) / np.linalg.norm(alpha) < 1e-8


def _planted(cfg, rng, Q_ch, B_pn, delays, seed=0, pn_scale=0.3):
    pat, grid = full_pilot_frame(cfg, seed=seed)
    B_ch = dpss(Q_ch, cfg)
    a_ch = crandn(rng, len(delays), Q_ch + 1)
    a_pn = np.zeros(B_pn.n_coeffs, complex)
    a_pn[0] = np.sqrt(cfg.N) * np.sign(B_pn.matrix[:, 0].sum().real)
    a_pn[1:] = pn_scale * crandn(rng, B_pn.n_coeffs - 1)
    h, p = bem.reconstruct(B_ch, a_ch), bem.reconstruct(B_pn, a_pn)
    return pat, grid, B_ch, h, p, transmit(grid, cfg, h, delays, p)


class TestAlternating:
    def test_zero_pn_static_gauge_two_iterations(self, rng):
        pat, grid = full_pilot_frame(K32, seed=1)
        delays = (0, 2, 5)
        B_ch = dpss(3, K32)
        h = bem.reconstruct(B_ch, crandn(rng, 3, 4))
        y = transmit(grid, K32, h, delays)
        B_pn = bem.make_basis(bem.CE, 0, K32)
        est = alternating_estimate(grid, pat, K32, delays, EstimatorConfig(Q_ch=3, Q_pn=0), y,
                                   B_ch, B_pn)
        assert est.iterations_used <= 2 and est.converged
        assert nmse(post(est.h_hat, K32), post(h, K32)) < 1e-10
        np.testing.assert_allclose(est.p_hat, 1.0, atol=1e-12)

    def test_static_channel_exact_recovery(self, rng):
        delays = (0, 3)
        B_pn = dpss(4, K32)
        for seed in range(10):
            pat, grid, B_ch, h, p, y = _planted(K32, rng, 0, B_pn, delays, seed)
            est = alternating_estimate(grid, pat, K32, delays,
                                       EstimatorConfig(Q_ch=0, Q_pn=4, eps=1e-30),
                                       y, B_ch, B_pn)
            c = np.vdot(post(est.p_hat, K32), post(p, K32)) / np.vdot(post(est.p_hat, K32),
                                                                   post(est.p_hat, K32))
            assert nmse(c * post(est.p_hat, K32), post(p, K32)) < 1e-10
            assert nmse(post(est.h_hat, K32) / c, post(h, K32)) < 1e-10

    def test_time_varying_converges_with_more_iterations(self, rng):
        delays = (0, 3)
        B_pn = dpss(4, K32)
        good = 0
        for seed in range(10):
            pat, grid, B_ch, h, p, y = _planted(K32, rng, 1, B_pn, delays, seed)
            est = alternating_estimate(grid, pat, K32, delays,
                                       EstimatorConfig(Q_ch=1, Q_pn=4, t_max=400, eps=1e-30),
                                       y, B_ch, B_pn)
            good += est.likelihood_trace[-1] < 1e-12 * est.likelihood_trace[0]
        assert good >= 7

    def test_likelihood_non_increasing(self, rng):
        for seed in range(100):
            pat, grid = random_frame(SMALL, PilotParams(dmrs_symbols=(0, 2), ptrs_df=4), seed)
            y = crandn(rng, SMALL.M * SMALL.K)
            est = alternating_estimate(grid, pat, SMALL, (0, 1),
                                       EstimatorConfig(Q_ch=1, Q_pn=3, t_max=6), y,
                                       dpss(1, SMALL), dpss(3, SMALL))
            L = np.array(est.likelihood_trace)
            assert np.all(np.diff(L) <= 1e-9 * L[0])

    def test_half_step_optimality(self, rng):
        pat, grid = random_frame(SMALL, PilotParams(dmrs_symbols=(0, 2), ptrs_df=4), 3)
        delays = (0, 1)
        y = crandn(rng, SMALL.M * SMALL.K)
        B_ch, B_pn = dpss(1, SMALL), dpss(3, SMALL)
        est = alternating_estimate(grid, pat, SMALL, delays, EstimatorConfig(Q_ch=1, Q_pn=3,
                                                                              t_max=3),
                                   y, B_ch, B_pn)
        # channel step is last: alpha_ch is optimal for the returned alpha_pn
        L0 = log_likelihood(grid, pat, SMALL, delays, est.alpha_pn, est.alpha_ch, B_pn, B_ch, y)
        for _ in range(20):
            d = 1e-7 * crandn(rng, *est.alpha_ch.shape)
            L = log_likelihood(grid, pat, SMALL, delays, est.alpha_pn, est.alpha_ch + d, B_pn,
                               B_ch, y)
            assert L >= L0 - 1e-12 * L0
        # PN step optimality for the returned channel
        prob = build_sensing_pn_step(grid, pat, SMALL, delays, B_pn, est.h_hat, y)
        a_pn, _ = solve(prob)
        L0 = np.linalg.norm(prob.y_o - prob.S_eff @ a_pn) ** 2
        for _ in range(20):
            d = 1e-7 * crandn(rng, a_pn.size)
            assert np.linalg.norm(prob.y_o - prob.S_eff @ (a_pn + d)) ** 2 >= L0 - 1e-12 * L0

    def test_gauge_normalization(self, rng):
        pat, grid = random_frame(SMALL, PilotParams(dmrs_symbols=(0, 2), ptrs_df=4), 3)
        est = alternating_estimate(grid, pat, SMALL, (0, 1), EstimatorConfig(Q_ch=1, Q_pn=3),
                                   crandn(rng, 48), dpss(1, SMALL), dpss(3, SMALL))
        assert abs(np.angle(np.mean(est.p_hat))) < 1e-12
        assert np.mean(np.abs(est.p_hat)) == pytest.approx(1.0, abs=1e-12)
        assert isinstance(est, JointEstimate)
        np.testing.assert_allclose(est.h_hat, bem.reconstruct(dpss(1, SMALL), est.alpha_ch))

    def test_gauge_scalar(self, rng):
        p = 3.0 * np.exp(1j * (0.7 + 0.1 * rng.standard_normal(50)))
        q = p * gauge_scalar(p)
        assert np.mean(np.abs(q)) == pytest.approx(1.0)
        assert abs(np.angle(q.mean())) < 1e-12

    def test_reduces_to_single_bem(self, rng):
        pat, grid = random_frame(SMALL, PilotParams(dmrs_symbols=(0, 2), ptrs_df=4), 4)
        delays = (0, 2)
        y = crandn(rng, 48)
        B_ch = dpss(2, SMALL)
        ones = bem.BemBasis(np.ones((SMALL.N, 1), complex), bem.CE, orthonormal=False)
        est = alternating_estimate(grid, pat, SMALL, delays, EstimatorConfig(Q_ch=2, Q_pn=0,
                                                                              t_max=1),
                                   y, B_ch, ones)
        ref = ml_single_bem(build_sensing_single(grid, pat, SMALL, delays, B_ch, y))
        np.testing.assert_allclose(est.alpha_ch, ref.alpha, atol=1e-8)

    def test_infeasible(self):
        pat, grid = random_frame(SMALL, PilotParams(ptrs_df=16, guard_width=0))
        with pytest.raises(FeasibilityError):
            alternating_estimate(grid, pat, SMALL, (0, 1), EstimatorConfig(Q_ch=2, Q_pn=1),
                                 np.zeros(48), dpss(2, SMALL), dpss(1, SMALL))

    @pytest.mark.parametrize("kw", [dict(t_max=0), dict(eps=0.0), dict(eps=-1.0)])
    def test_config_validation(self, kw):
        with pytest.raises(ConfigError):
            EstimatorConfig(**kw)

    def test_unit_modulus_option(self, rng):
        pat, grid = random_frame(SMALL, PilotParams(dmrs_symbols=(0, 2), ptrs_df=4), 3)
        est = alternating_estimate(grid, pat, SMALL, (0,), EstimatorConfig(
            Q_ch=1, Q_pn=3, unit_modulus=True), crandn(rng, 48), dpss(1, SMALL), dpss(3, SMALL))
        np.testing.assert_allclose(np.abs(est.p_hat), 1.0)


class TestCpe:
    def test_piecewise_constant(self, rng):
        pat, grid = random_frame(SMALL, PilotParams(dmrs_symbols=(0,), ptrs_df=4), 2)
        est = estimate_cpe(grid, pat, SMALL, (0, 1), EstimatorConfig(Q_ch=1), crandn(rng, 48))
        blocks = est.p_hat.reshape(SMALL.M, SMALL.symbol_len)
        np.testing.assert_allclose(blocks, blocks[:, :1] * np.ones((1, SMALL.symbol_len)),
                                   atol=1e-14)

    def test_exact_on_per_symbol_pn(self, rng):
        pat, grid = full_pilot_frame(K32, seed=6)
        delays = (0, 4)
        h = crandn(rng, 2, 1) * np.ones((1, K32.N))
        p = np.repeat(np.exp(1j * rng.standard_normal(K32.M)), K32.symbol_len)
        y = transmit(grid, K32, h, delays, p)
        est = estimate_cpe(grid, pat, K32, delays, EstimatorConfig(Q_ch=0), y,
                           B_ch=bem.make_basis(bem.CE, 0, K32))
        pr = est.h_hat * est.p_hat
        assert nmse(post(pr, K32), post(h * p, K32)) < 1e-8

    def test_wiener_pn_residual_exceeds_bem(self):
        from pnbem.channel import gen_phase_noise

        cfg = FrameConfig()
        o = bem.select_orders(0.0, 450, cfg, max_pn_coeffs=cfg.M)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            B_bem = bem.make_basis(bem.DPSS, o.Q_pn, cfg, o.W_pn)
        B_cpe = bem.gen_per_symbol_constant(cfg)
        r_cpe, r_bem = [], []
        for seed in range(20):
            p = gen_phase_noise(450, cfg, seed).samples
            r_cpe.append(nmse(bem.reconstruct(B_cpe, bem.fit(B_cpe, p)), p))
            r_bem.append(nmse(bem.reconstruct(B_bem, bem.fit(B_bem, p)), p))
        assert min(r_cpe) > 0
        assert np.mean(r_bem) < np.mean(r_cpe)


class TestKnownChannel:
    def test_single_pn_step(self, rng):
        pat, grid = full_pilot_frame(K32, seed=2)
        delays = (0, 1)
        taps = crandn(rng, 2, K32.N)
        B = dpss(5, K32)
        p = bem.reconstruct(B, crandn(rng, 6))
        est = estimate_pn_known_channel(grid, pat, K32, delays, taps, B,
                                        transmit(grid, K32, taps, delays, p))
        assert est.iterations_used == 1 and est.alpha_ch is None
        assert nmse(est.p_hat, p) < 1e-16


class TestLikelihood:
    def test_zero_at_truth(self, rng):
        pat, grid = full_pilot_frame(SMALL)
        delays = (0, 2)
        B_ch, B_pn = dpss(2, SMALL), dpss(3, SMALL)
        a_ch, a_pn = crandn(rng, 2, 3), crandn(rng, 4)
        y = transmit(grid, SMALL, bem.reconstruct(B_ch, a_ch), delays, bem.reconstruct(B_pn, a_pn))
        assert log_likelihood(grid, pat, SMALL, delays, a_pn, a_ch, B_pn, B_ch, y) < 1e-18

    def test_matches_sensing_residual(self, rng):
        pat, grid = random_frame(SMALL, PilotParams(dmrs_symbols=(1,), ptrs_df=4), 5)
        delays = (0, 2)
        B_ch, B_pn = dpss(2, SMALL), dpss(3, SMALL)
        a_ch, a_pn = crandn(rng, 2, 3), crandn(rng, 4)
        y = crandn(rng, 48)
        L = log_likelihood(grid, pat, SMALL, delays, a_pn, a_ch, B_pn, B_ch, y)
        prob = build_sensing_ch_step(grid, pat, SMALL, delays, B_ch, bem.reconstruct(B_pn, a_pn), y)
        ref = np.linalg.norm(prob.y_o - prob.S_eff @ a_ch.ravel()) ** 2
        assert L == pytest.approx(ref, rel=1e-12)

    def test_gauge_invariance(self, rng):
        pat, grid = random_frame(SMALL, PilotParams(dmrs_symbols=(1,), ptrs_df=4), 5)
        B_ch, B_pn = dpss(2, SMALL), dpss(3, SMALL)
        a_ch, a_pn, y = crandn(rng, 1, 3), crandn(rng, 4), crandn(rng, 48)
        c = 0.4 - 1.3j
        L1 = log_likelihood(grid, pat, SMALL, (0,), a_pn, a_ch, B_pn, B_ch, y)
        L2 = log_likelihood(grid, pat, SMALL, (0,), c * a_pn, a_ch / c, B_pn, B_ch, y)
        assert L1 == pytest.approx(L2, rel=1e-12)
