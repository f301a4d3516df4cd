import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.stats import multivariate_t

from bpds.forecast import PredictiveSample
from bpds.scoring import ScoreSpec
from bpds.synthesis import (BPDSMixture, InfeasibleTargetError, ModelProbabilities,
                            ScoredModel, SynthesisError, baseline_margin_log_density,
                            baseline_predictive, decision_conditioned_probs,
                            in_convex_hull, insert_baseline, mixture_moments,
                            score_components, score_moments, score_support,
                            solve_tilting, target_score, tilted_mixture,
                            update_prior_probabilities)


def probs(*w, stage="prior"):
    return ModelProbabilities(np.array(w, dtype=float), stage)


class TestPriorUpdate:
    def test_gamma_one_zero_tau_is_bayes_factor_update(self):
        prev = probs(0.0, 0.5, 0.5)
        out = update_prior_probabilities(prev, 1.0, np.log([3.0, 1.0]))
        np.testing.assert_allclose(out.models, [0.75, 0.25], atol=1e-14)

    def test_discount_scales_log_odds(self):
        prev = probs(0.0, 0.8, 0.2)
        gamma = 0.95
        out = update_prior_probabilities(prev, gamma, np.zeros(2))
        got = np.log(out.models[0] / out.models[1])
        want = gamma * np.log(0.8 / 0.2)
        assert got == pytest.approx(want, abs=1e-12)

    def test_realized_score_tilt_enters(self):
        prev = probs(0.0, 0.5, 0.5)
        scores = np.array([[1.0, 1.0], [0.0, 0.0]])
        tau = np.array([0.3, 0.1])
        out = update_prior_probabilities(prev, 1.0, np.zeros(2), scores, tau)
        want = np.exp(0.4) / (np.exp(0.4) + 1.0)
        assert out.models[0] == pytest.approx(want, abs=1e-12)

    def test_underflowed_model_floors_not_nan(self):
        prev = probs(0.0, 0.5, 0.5)
        out = update_prior_probabilities(prev, 1.0, np.array([0.0, -800000.0]))
        assert out.models[0] == pytest.approx(1.0)
        assert np.isfinite(out.weights).all()

    def test_degenerate_update_raises(self):
        prev = probs(0.0, 0.5, 0.5)
        with pytest.raises(SynthesisError):
            update_prior_probabilities(prev, 1.0, np.array([np.nan, np.nan]))


class TestBaselineInsertion:
    def test_paper_default_share(self):
        out = insert_baseline(probs(0.0, 0.5, 0.5), 0.1)
        np.testing.assert_allclose(out.weights, [0.1, 0.45, 0.45], atol=1e-15)

    def test_zero_share_unchanged(self):
        out = insert_baseline(probs(0.0, 0.3, 0.7), 0.0)
        np.testing.assert_allclose(out.weights, [0.0, 0.3, 0.7])

    def test_single_model_half(self):
        out = insert_baseline(probs(0.0, 1.0), 0.5)
        np.testing.assert_allclose(out.weights, [0.5, 0.5])


class TestDecisionConditioning:
    def test_equal_densities_unchanged(self):
        pi = probs(0.2, 0.4, 0.4)
        out = decision_conditioned_probs(pi, np.full(3, -7.3))
        np.testing.assert_allclose(out.weights, pi.weights, atol=1e-14)

    def test_log_gap_of_ln3_gives_3_to_1(self):
        pi = probs(0.0, 0.5, 0.5)
        out = decision_conditioned_probs(pi, np.array([-np.inf, np.log(3.0), 0.0]))
        assert out.models[0] / out.models[1] == pytest.approx(3.0, abs=1e-12)

    def test_extreme_x_shifts_weight_to_fat_tails(self):
        # at an x that both models consider a 12-sd event, the fat-tailed
        # baseline's density dominates and its share must rise above pi0
        pi = probs(0.1, 0.45, 0.45)
        lds = np.array([baseline_margin_log_density(np.array([12.0]), np.zeros(1),
                                                    np.eye(1)),
                        -72.0, -74.0])  # ~N(0,1) log density at 12 sd
        out = decision_conditioned_probs(pi, lds)
        assert out.baseline > pi.baseline
        assert out.baseline > 0.99


class TestBaselinePredictive:
    def make_component(self, rng, n=100_000, k=1, loc=0.0, scale=1.0):
        draws = rng.normal(loc=loc, scale=scale, size=(n, 3, k))
        return PredictiveSample(outcomes=draws, model="m1")

    def test_covariance_inflated_by_two(self):
        rng = np.random.default_rng(0)
        comp = self.make_component(rng)
        base = baseline_predictive([comp], probs(0.0, 1.0), N=100_000, seed=1)
        flat = base.outcomes.reshape(base.n_draws, -1)
        np.testing.assert_allclose(flat.var(axis=0), 2.0, rtol=0.05)
        np.testing.assert_allclose(np.corrcoef(flat.T) - np.eye(3), 0.0, atol=0.02)

    def test_location_matches_mixture_mean(self):
        rng = np.random.default_rng(2)
        comp = self.make_component(rng, loc=1.7)
        base = baseline_predictive([comp], probs(0.0, 1.0), N=50_000, seed=3)
        flat = base.outcomes.reshape(base.n_draws, -1)
        se = flat.std(axis=0) / np.sqrt(flat.shape[0])
        assert np.all(np.abs(flat.mean(axis=0) - 1.7) < 3.5 * se)

    def test_infinite_df_hook_is_gaussian_with_inflated_cov(self):
        rng = np.random.default_rng(4)
        comp = self.make_component(rng)
        base = baseline_predictive([comp], probs(0.0, 1.0), N=200_000, seed=5,
                                   df=np.inf)
        flat = base.outcomes.reshape(base.n_draws, -1)
        np.testing.assert_allclose(flat.var(axis=0), 2.0, rtol=0.03)
        # Gaussian kurtosis (excess ~ 0), unlike the df=10 T (excess 1 at 2x var)
        z = (flat[:, 0] - flat[:, 0].mean()) / flat[:, 0].std()
        assert abs(np.mean(z ** 4) - 3.0) < 0.1

    def test_margin_log_density_matches_scipy(self):
        mean = np.array([1.0, -0.5])
        cov = np.array([[2.0, 0.3], [0.3, 1.0]])
        df, inflate = 10.0, 2.0
        x = np.array([0.2, 0.7])
        want = multivariate_t(loc=mean, shape=inflate * cov * (df - 2) / df + 1e-12 * np.eye(2),
                              df=df).logpdf(x)
        assert baseline_margin_log_density(x, mean, cov) == pytest.approx(float(want),
                                                                          abs=1e-9)


class TestScoreMoments:
    def test_single_model_constant_score(self):
        sm = ScoredModel(scores=np.tile([1.3, 0.7], (50, 1)),
                         log_weights=np.full(50, -np.log(50)))
        ts = score_moments([sm], probs(1.0))
        np.testing.assert_allclose(ts.m_p, [1.3, 0.7], atol=1e-14)
        np.testing.assert_allclose(ts.V_p, 0.0, atol=1e-14)

    def test_two_point_masses_hand_moments(self):
        sm = ScoredModel(scores=np.array([[0.0], [2.0]]),
                         log_weights=np.log([0.5, 0.5]))
        ts = score_moments([sm], probs(1.0))
        assert ts.m_p[0] == pytest.approx(1.0, abs=1e-14)
        assert ts.V_p[0, 0] == pytest.approx(1.0, abs=1e-14)

    def test_between_model_variance_counted(self):
        a = ScoredModel(scores=np.full((10, 1), 0.0), log_weights=np.zeros(10))
        b = ScoredModel(scores=np.full((10, 1), 2.0), log_weights=np.zeros(10))
        ts = score_moments([a, b], probs(0.5, 0.5))
        assert ts.m_p[0] == pytest.approx(1.0)
        assert ts.V_p[0, 0] == pytest.approx(1.0)

    def test_eigen_factor_reproduces_variance_and_sign_rule(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            sm = ScoredModel(scores=rng.uniform(0, 2, size=(200, 6)),
                             log_weights=np.zeros(200))
            ts = score_moments([sm], probs(1.0))
            np.testing.assert_allclose(ts.C_p @ ts.C_p.T, ts.V_p, atol=1e-8)
            assert ts.C_p[:, 0].sum() > 0.0
            assert np.all(np.diff(ts.eigenvalues) <= 1e-12)


class TestTargetScore:
    def base_ts(self, m_p, c1):
        dim = len(m_p)
        C = np.zeros((dim, dim))
        C[:, 0] = c1
        from bpds.synthesis import TargetScore
        return TargetScore(m_p=np.array(m_p, dtype=float), V_p=C @ C.T, C_p=C,
                           eigenvalues=np.array([1.0] + [0.0] * (dim - 1)))

    def test_all_positive_direction_binds_at_cap(self):
        ts = target_score(self.base_ts([1.0, 1.0], [0.5, 0.5]), eps_cap=0.25)
        assert ts.epsilon == pytest.approx(0.25)
        np.testing.assert_allclose(ts.m_f, [1.125, 1.125])

    def test_scalar_negative_direction_hits_ratio(self):
        ts = target_score(self.base_ts([1.0], [-1.0]), min_ratio=0.75, eps_cap=10.0)
        assert ts.epsilon == pytest.approx(0.25)
        assert ts.m_f[0] / ts.m_p[0] == pytest.approx(0.75, abs=1e-12)

    def test_scalar_positive_direction_caps(self):
        ts = target_score(self.base_ts([1.0], [1.0]), eps_cap=0.3)
        np.testing.assert_allclose(ts.m_f, [1.3])

    def test_zero_epsilon_keeps_m_p(self):
        ts = target_score(self.base_ts([1.0, 0.8], [0.3, -0.2]), epsilon=0.0)
        np.testing.assert_allclose(ts.m_f, ts.m_p)
        assert ts.epsilon == 0.0

    def test_mixed_direction_min_ratio_binds_on_worst_coordinate(self):
        ts = target_score(self.base_ts([1.0, 2.0], [0.5, -1.0]), min_ratio=0.75,
                          eps_cap=10.0)
        assert ts.epsilon == pytest.approx(0.5)
        assert np.min(ts.m_f / ts.m_p) == pytest.approx(0.75, abs=1e-12)

    def test_clamped_into_feasible_box(self):
        ts = target_score(self.base_ts([1.9], [1.0]), eps_cap=5.0)
        assert ts.m_f[0] < 2.0

    def test_support_clamp(self):
        lo, hi = np.array([0.5]), np.array([1.2])
        ts = target_score(self.base_ts([1.0], [1.0]), eps_cap=5.0, support=(lo, hi))
        assert ts.m_f[0] <= 1.2 - 0.01 * 0.7 + 1e-12


def discrete_scored(rng, n_points=5, dim=1, n_models=1):
    """Discrete score supports with non-uniform base probabilities."""
    out = []
    for _ in range(n_models):
        pts = np.sort(rng.uniform(0.1, 1.9, size=(n_points, dim)), axis=0)
        pr = rng.dirichlet(np.ones(n_points))
        out.append(ScoredModel(scores=pts, log_weights=np.log(pr)))
    return out


class TestSolveTilting:
    def test_zero_tilt_fixed_point(self):
        rng = np.random.default_rng(0)
        scored = discrete_scored(rng, dim=2)
        pi = probs(1.0)
        ts = score_moments(scored, pi)
        tv = solve_tilting(scored, pi, ts.m_p)
        assert tv.converged and tv.iterations <= 2
        np.testing.assert_allclose(tv.tau, 0.0, atol=1e-12)

    def test_matches_bisection_oracle_scalar(self):
        rng = np.random.default_rng(1)
        scored = discrete_scored(rng, n_points=5, dim=1)
        pi = probs(1.0)
        s = scored[0].scores[:, 0]
        p = np.exp(scored[0].log_weights)
        m_f = np.array([0.6 * s.min() + 0.4 * s.max()])

        def moment(tau):
            w = p * np.exp(tau * (s - s.max()))
            return (w @ s) / w.sum() - m_f[0]

        lo_t, hi_t = -200.0, 200.0
        for _ in range(200):
            mid = 0.5 * (lo_t + hi_t)
            if moment(mid) < 0:
                lo_t = mid
            else:
                hi_t = mid
        oracle = 0.5 * (lo_t + hi_t)
        tv = solve_tilting(scored, pi, m_f, tol=1e-12, max_iter=500)
        assert tv.converged
        assert tv.tau[0] == pytest.approx(oracle, abs=1e-6)

    def test_constraint_satisfaction_all_coordinates(self):
        rng = np.random.default_rng(2)
        scored = [ScoredModel(scores=rng.uniform(0.2, 1.8, size=(800, 4)),
                              log_weights=np.zeros(800)) for _ in range(2)]
        pi = probs(0.0, 0.55, 0.45)
        scored = [ScoredModel(scores=rng.uniform(0.2, 1.8, size=(800, 4)),
                              log_weights=np.zeros(800))] + scored
        ts = score_moments(scored, pi)
        tgt = target_score(ts, eps_cap=0.1, support=score_support(scored))
        tv = solve_tilting(scored, pi, tgt.m_f, tol=1e-6)
        assert tv.converged
        mix = tilted_mixture(scored, pi, tv.tau)
        np.testing.assert_allclose(mix.expected_score(scored), tgt.m_f, atol=1e-6)

    def test_infeasible_target_raises(self):
        rng = np.random.default_rng(3)
        scored = discrete_scored(rng, dim=2)
        with pytest.raises(InfeasibleTargetError):
            solve_tilting(scored, probs(1.0), np.array([5.0, 5.0]))

    def test_second_order_approximation_small_perturbations(self):
        rng = np.random.default_rng(4)
        fails = 0
        for trial in range(50):
            scored = [ScoredModel(scores=rng.uniform(0.2, 1.8, size=(600, 3)),
                                  log_weights=np.zeros(600)) for _ in range(2)]
            pi = probs(0.5, 0.5)
            ts = score_moments(scored, pi)
            eps = 0.02 * rng.normal(size=3)
            eps *= 0.02 / max(np.linalg.norm(eps), 1e-12)
            m_f = ts.m_p + ts.C_p @ eps
            tv = solve_tilting(scored, pi, m_f, tol=1e-10, max_iter=500)
            approx = np.linalg.solve(ts.V_p, m_f - ts.m_p)
            rel = np.linalg.norm(tv.tau - approx) / np.linalg.norm(tv.tau)
            if rel > 0.10:
                fails += 1
        assert fails == 0

    def test_shift_invariance_of_base_weights(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform(0.2, 1.8, size=(50, 2))
        lw = rng.normal(size=50)
        a = ScoredModel(scores=pts, log_weights=lw)
        b = ScoredModel(scores=pts, log_weights=lw + 123.4)
        pi = probs(1.0)
        m_f = score_moments([a], pi).m_p + 0.01
        ta = solve_tilting([a], pi, m_f)
        tb = solve_tilting([b], pi, m_f)
        np.testing.assert_allclose(ta.tau, tb.tau, atol=1e-12)
        ma = tilted_mixture([a], pi, ta.tau)
        mb = tilted_mixture([b], pi, ta.tau)
        np.testing.assert_allclose(ma.weights[0], mb.weights[0], atol=1e-13)
        np.testing.assert_allclose(ma.pi_tilde, mb.pi_tilde, atol=1e-13)

    def test_hull_membership_utility(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        assert in_convex_hull(pts, np.array([0.2, 0.2]))
        assert not in_convex_hull(pts, np.array([0.8, 0.8]))


class TestTiltedMixture:
    def test_zero_tau_identity(self):
        rng = np.random.default_rng(6)
        scored = [ScoredModel(scores=rng.uniform(0, 2, (100, 2)), log_weights=np.zeros(100))
                  for _ in range(3)]
        pi = probs(0.1, 0.6, 0.3)
        mix = tilted_mixture(scored, pi, np.zeros(2))
        np.testing.assert_allclose(mix.pi_tilde, pi.weights, atol=1e-14)
        np.testing.assert_allclose(mix.ess_per_model, 1.0, atol=1e-12)
        assert mix.ess_overall == pytest.approx(
            1.0 / np.sum(pi.weights ** 2 / 100) / 300)

    def test_constant_score_component(self):
        c = np.array([0.5, 1.5])
        tau = np.array([0.3, -0.2])
        sm = ScoredModel(scores=np.tile(c, (40, 1)), log_weights=np.zeros(40))
        mix = tilted_mixture([sm], probs(1.0), tau)
        assert mix.log_a[0] == pytest.approx(tau @ c, abs=1e-12)
        np.testing.assert_allclose(mix.weights[0], 1.0 / 40, atol=1e-15)
        assert mix.ess_per_model[0] == pytest.approx(1.0)

    def test_two_model_enumeration_oracle(self):
        rng = np.random.default_rng(7)
        scored = discrete_scored(rng, n_points=6, dim=2, n_models=2)
        pi = probs(0.0, 0.35, 0.65)
        scored = [ScoredModel(scores=np.zeros((1, 2)), log_weights=np.zeros(1))] + scored
        tau = np.array([0.8, -0.5])
        mix = tilted_mixture(scored, pi, tau)
        # brute force: f(y_i, M_j) ∝ pi_j p_j(y_i) exp(tau's_i)
        table = []
        for j, sm in enumerate(scored):
            table.append(np.exp(np.log(np.maximum(pi.weights[j], 1e-300))
                                + sm.log_weights + sm.scores @ tau))
        Z = sum(t.sum() for t in table)
        for j in (1, 2):
            assert mix.pi_tilde[j] == pytest.approx(table[j].sum() / Z, abs=1e-10)
            np.testing.assert_allclose(mix.pi_tilde[j] * mix.weights[j],
                                       table[j] / Z, atol=1e-10)

    def test_ess_weakly_decreases_along_epsilon_ray(self):
        rng = np.random.default_rng(8)
        scored = [ScoredModel(scores=rng.uniform(0.2, 1.8, size=(500, 3)),
                              log_weights=np.zeros(500)) for _ in range(2)]
        pi = probs(0.5, 0.5)
        ts = score_moments(scored, pi)
        direction = ts.C_p[:, 0]
        last = np.inf
        for scale in (0.0, 0.02, 0.05, 0.1, 0.2):
            m_f = ts.m_p + scale * direction
            tv = solve_tilting(scored, pi, m_f, tol=1e-8)
            mix = tilted_mixture(scored, pi, tv.tau)
            assert mix.ess_overall <= last + 1e-9
            last = mix.ess_overall

    def test_kl_minimality_against_constrained_oracle(self):
        # 25-point grid, two models: the tilted joint must match a generic
        # KL-constrained minimizer probability-for-probability
        rng = np.random.default_rng(9)
        n_pts = 25
        pts = np.column_stack([np.linspace(0.1, 1.9, n_pts),
                               np.abs(np.sin(np.linspace(0, 3, n_pts))) + 0.2])
        p1 = rng.dirichlet(np.ones(n_pts))
        p2 = rng.dirichlet(np.ones(n_pts))
        scored = [ScoredModel(scores=pts, log_weights=np.log(p1)),
                  ScoredModel(scores=pts, log_weights=np.log(p2))]
        pi = probs(0.55, 0.45)
        ts = score_moments(scored, pi)
        m_f = ts.m_p + ts.C_p @ np.array([0.05, 0.0])
        tv = solve_tilting(scored, pi, m_f, tol=1e-10, max_iter=500)
        mix = tilted_mixture(scored, pi, tv.tau)
        tilted = np.concatenate([mix.pi_tilde[j] * mix.weights[j] for j in range(2)])

        prior = np.concatenate([pi.weights[0] * p1, pi.weights[1] * p2])
        S = np.vstack([pts, pts])

        def kl(f):
            f = np.maximum(f, 1e-300)
            return float(f @ (np.log(f) - np.log(prior)))

        cons = [{"type": "eq", "fun": lambda f: f.sum() - 1.0},
                {"type": "eq", "fun": lambda f: f @ S - m_f}]
        res = minimize(kl, prior, method="SLSQP", constraints=cons,
                       bounds=[(1e-12, 1.0)] * (2 * n_pts),
                       options={"maxiter": 2000, "ftol": 1e-14})
        assert res.success
        np.testing.assert_allclose(tilted, res.x, atol=1e-4)


class TestMixtureMoments:
    def test_weighted_mixture_moments(self):
        a = PredictiveSample(outcomes=np.zeros((4, 3, 1)), model="a")
        b = PredictiveSample(outcomes=np.full((4, 3, 1), 2.0), model="b")
        mean, cov = mixture_moments([a, b], np.array([0.5, 0.5]))
        np.testing.assert_allclose(mean, 1.0)
        np.testing.assert_allclose(cov, 1.0)
