import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hoope.enkf import (
    AugmentedEnsemble, FilterDivergence, InflationConfig, LocalizationConfig,
    adaptive_inflation_update, analyze, inflate_fixed, letkf_local_solve, periodic_distance,
    taper, taper_matrix,
)
from hoope.synth import ObservationBatch

NO_LOC = LocalizationConfig(np.inf)
NO_INF = InflationConfig("fixed", 1.0, 1.0)


def random_ensemble(rng, n=3, k=8, scale=1.0):
    return AugmentedEnsemble(rng.normal(5.0, scale, (2 * n, k)), n)


def sample_cov(members):
    return np.cov(members, ddof=1)


def dense_kalman(members, H, R, y):
    """Kalman update with the ensemble sample covariance as B."""
    B = sample_cov(members)
    mean = members.mean(axis=1)
    K = B @ H.T @ np.linalg.inv(H @ B @ H.T + R)
    return mean + K @ (y - H @ mean), (np.eye(len(mean)) - K @ H) @ B


def state_obs(rows, values, var):
    rows = np.asarray(rows)
    return ObservationBatch(0.0, rows, np.asarray(values, dtype=float), np.full(rows.size, var))


class TestTaper:
    cfg = LocalizationConfig(3.0)

    def test_values(self):
        assert taper(0.0, self.cfg) == 1.0
        assert taper(3.0, self.cfg) == pytest.approx(np.exp(-0.5), rel=1e-15)
        assert taper(self.cfg.cutoff, self.cfg) == 0.0
        assert taper(self.cfg.cutoff + 1, self.cfg) == 0.0
        assert self.cfg.cutoff == pytest.approx(2 * np.sqrt(10 / 3) * 3)

    def test_no_localization(self):
        np.testing.assert_array_equal(taper(np.arange(10.0), NO_LOC), 1.0)

    def test_invalid_sigma(self):
        with pytest.raises(ValueError):
            LocalizationConfig(0.0)

    def test_periodic_distance(self):
        assert periodic_distance(0, 8, 9) == 1
        assert periodic_distance(2, 6, 9) == 4
        assert periodic_distance(4, 4, 9) == 0

    def test_pseudo_observation_rule(self):
        ens = random_ensemble(np.random.default_rng(0), n=9, k=4)
        obs = ObservationBatch(0.0, [0, 3], [1.0, 2.0], [1.0, 1.0], [False, True])
        w = taper_matrix(ens, obs, LocalizationConfig(3.0))
        # pseudo obs of parameter 3 reaches only row n_state + 3
        expected = np.zeros(18)
        expected[9 + 3] = 1.0
        np.testing.assert_array_equal(w[:, 1], expected)
        # state obs at grid 0 reaches X and F at neighbouring grids
        assert w[0, 0] == 1.0 and w[9, 0] == 1.0 and w[8, 0] == pytest.approx(np.exp(-0.5 / 9))


class TestInflateFixed:
    def test_identity(self):
        ens = random_ensemble(np.random.default_rng(1))
        np.testing.assert_allclose(inflate_fixed(ens, 1.0, 1.0).members, ens.members, atol=1e-14)

    def test_doubles_state_perturbations(self):
        ens = random_ensemble(np.random.default_rng(2))
        out = inflate_fixed(ens, 4.0, 1.0)
        np.testing.assert_allclose(np.linalg.norm(out.perturbations[:3], axis=1),
                                   2 * np.linalg.norm(ens.perturbations[:3], axis=1), rtol=1e-14)
        np.testing.assert_allclose(out.mean, ens.mean, atol=1e-14)

    def test_blockwise_covariance(self):
        ens = random_ensemble(np.random.default_rng(3))
        out = inflate_fixed(ens, 1.7, 3.2)
        B0, B1 = sample_cov(ens.members), sample_cov(out.members)
        np.testing.assert_allclose(B1[:3, :3], 1.7 * B0[:3, :3], atol=1e-12)
        np.testing.assert_allclose(B1[3:, 3:], 3.2 * B0[3:, 3:], atol=1e-12)
        np.testing.assert_allclose(B1[:3, 3:], np.sqrt(1.7 * 3.2) * B0[:3, 3:], atol=1e-12)


class TestLocalSolve:
    def test_no_effective_observations(self):
        rng = np.random.default_rng(4)
        k = 6
        la = letkf_local_solve(rng.standard_normal((3, k)), rng.standard_normal(3), np.zeros(3))
        np.testing.assert_array_equal(la.w_mean, 0.0)
        np.testing.assert_allclose(la.p_tilde_a, np.eye(k) / (k - 1), atol=1e-15)
        np.testing.assert_allclose(la.w_matrix, np.eye(k), atol=1e-14)

    def test_scalar_kalman(self):
        rng = np.random.default_rng(5)
        k = 10
        xb = rng.normal(2.0, 1.5, k)
        pert = xb - xb.mean()
        d, r = 0.7, 0.4
        la = letkf_local_solve(pert[None, :], [d], [1.0 / r])
        s2 = pert.var(ddof=1)
        increment = pert @ la.w_mean
        assert increment == pytest.approx(s2 / (s2 + r) * d, abs=1e-10)

    def test_symmetric_factors(self):
        rng = np.random.default_rng(6)
        la = letkf_local_solve(rng.standard_normal((4, 7)), rng.standard_normal(4), rng.uniform(0.5, 2, 4))
        np.testing.assert_allclose(la.w_matrix, la.w_matrix.T, atol=1e-14)
        assert np.all(np.linalg.eigvalsh(la.p_tilde_a) > 0)
        # W^2 = (k - 1) P~a: positive square root
        np.testing.assert_allclose(la.w_matrix @ la.w_matrix, 6 * la.p_tilde_a, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(la.w_matrix) > 0)

    def test_negative_precision_rejected(self):
        with pytest.raises(ValueError):
            letkf_local_solve(np.ones((1, 3)), [0.0], [-1.0])


def kalman_case(seed, n, k, observed):
    rng = np.random.default_rng(seed)
    ens = AugmentedEnsemble(rng.normal(3.0, 1.0, (n, k)) + rng.normal(0, 2, (n, 1)), n // 2)
    H = np.eye(n)[observed]
    R = np.diag(rng.uniform(0.2, 1.5, len(observed)))
    y = H @ ens.mean + rng.normal(0, 1, len(observed))
    obs = ObservationBatch(0.0, np.asarray(observed), y, np.diag(R).copy())
    return ens, H, R, y, obs


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("observed", [[0, 1, 2], [0, 2], [1]])
def test_dense_kalman_equivalence(seed, observed):
    n, k = 6, 8 + seed
    ens, H, R, y, obs = kalman_case(seed, n, k, observed)
    out = analyze(ens, obs, NO_LOC, InflationConfig("fixed", 1.0, 1.0))
    mean, cov = dense_kalman(ens.members, H, R, y)
    np.testing.assert_allclose(out.mean, mean, atol=1e-8)
    np.testing.assert_allclose(sample_cov(out.members), cov, atol=1e-8)


def test_global_etkf_equivalence():
    # direct ensemble-space update on the full vector
    ens, H, R, y, obs = kalman_case(11, 6, 9, [0, 1, 2])
    k = ens.k
    X = ens.perturbations
    Y = H @ X
    Rinv = np.linalg.inv(R)
    P = np.linalg.inv((k - 1) * np.eye(k) + Y.T @ Rinv @ Y)
    w = P @ Y.T @ Rinv @ (y - H @ ens.mean)
    vals, vecs = np.linalg.eigh((k - 1) * P)
    W = vecs @ np.diag(np.sqrt(vals)) @ vecs.T
    expected = ens.mean[:, None] + X @ (w[:, None] + W)
    out = analyze(ens, obs, NO_LOC, NO_INF)
    np.testing.assert_allclose(out.members, expected, atol=1e-10)


class TestAnalyze:
    def test_empty_observations_inflates_only(self):
        ens = random_ensemble(np.random.default_rng(7))
        empty = ObservationBatch(0.0, [], [], [])
        out = analyze(ens, empty, LocalizationConfig(), InflationConfig("fixed", 1.5, 2.0))
        np.testing.assert_allclose(out.members, inflate_fixed(ens, 1.5, 2.0).members, atol=1e-14)
        out = analyze(ens, None, LocalizationConfig(), InflationConfig("fixed", 1.5, 2.0))
        np.testing.assert_allclose(out.members, inflate_fixed(ens, 1.5, 2.0).members, atol=1e-14)

    def test_weightless_observations(self):
        ens = random_ensemble(np.random.default_rng(8))
        obs = state_obs([0, 2], [100.0, -50.0], 1e12)
        inf = InflationConfig("fixed", 1.2, 1.3)
        out = analyze(ens, obs, LocalizationConfig(), inf)
        np.testing.assert_allclose(out.members, inflate_fixed(ens, 1.2, 1.3).members, rtol=1e-5)

    def test_zero_innovation_keeps_mean(self):
        ens = random_ensemble(np.random.default_rng(9), n=9, k=10)
        obs = state_obs([0, 1, 4, 5], ens.mean[[0, 1, 4, 5]], 0.01)
        out = analyze(ens, obs, LocalizationConfig(), InflationConfig("fixed", 1.3, 1.1))
        np.testing.assert_allclose(out.mean, ens.mean, atol=1e-10)

    def test_spread_contraction(self):
        rng = np.random.default_rng(10)
        for _ in range(5):
            ens = random_ensemble(rng, n=9, k=12, scale=2.0)
            rows = [0, 1, 4, 5]
            obs = state_obs(rows, ens.mean[rows] + rng.normal(0, 1, 4), 0.5)
            inf = InflationConfig("fixed", 1.4, 1.4)
            out = analyze(ens, obs, LocalizationConfig(), inf)
            bg = inflate_fixed(ens, 1.4, 1.4)
            assert np.trace(sample_cov(out.members[rows])) <= np.trace(sample_cov(bg.members[rows]))

    def test_order_invariance(self):
        rng = np.random.default_rng(12)
        ens = random_ensemble(rng, n=9, k=10)
        obs = ObservationBatch(0.0, [0, 1, 4, 5, 3], rng.normal(5, 1, 5), rng.uniform(0.1, 1, 5),
                               [False, False, False, False, True])
        perm = np.array([3, 0, 4, 2, 1])
        a = analyze(ens, obs, LocalizationConfig(), NO_INF)
        b = analyze(ens, obs.subset(perm), LocalizationConfig(), NO_INF)
        np.testing.assert_allclose(a.members, b.members, atol=1e-10)

    def test_pseudo_observation_touches_only_its_parameter(self):
        ens = random_ensemble(np.random.default_rng(13), n=9, k=6)
        obs = ObservationBatch(0.0, [2], [7.0], [0.1], [True])
        out = analyze(ens, obs, LocalizationConfig(), NO_INF)
        changed = ~np.all(np.isclose(out.members, ens.members, atol=1e-14), axis=1)
        assert np.flatnonzero(changed).tolist() == [9 + 2]

    def test_inflate_params_flag(self):
        ens = random_ensemble(np.random.default_rng(14))
        out = analyze(ens, None, LocalizationConfig(), InflationConfig("fixed", 2.0, 5.0), inflate_params=False)
        np.testing.assert_allclose(out.f, ens.f, atol=1e-14)

    def test_location_checked(self):
        ens = random_ensemble(np.random.default_rng(15))
        with pytest.raises(ValueError):
            analyze(ens, state_obs([3], [1.0], 1.0), LocalizationConfig(), NO_INF)

    def test_divergence_detected(self):
        ens = random_ensemble(np.random.default_rng(16))
        ens.members[0, 0] = 2e6
        with pytest.raises(FilterDivergence):
            analyze(ens, None, LocalizationConfig(), NO_INF)
        ens.members[0, 0] = np.nan
        with pytest.raises(FilterDivergence):
            analyze(ens, None, LocalizationConfig(), NO_INF)


class TestAdaptiveInflation:
    def test_fixed_point(self):
        # p = 1, R^-1 = 1, spread 1, squared innovation 2 -> rho_o = 1
        Y = np.array([[1.0, -1.0]]) / np.sqrt(2)
        out = adaptive_inflation_update([np.sqrt(2.0)], Y, [1.0], 1.0, 0.04)
        assert out == pytest.approx(1.0, abs=1e-12)

    def test_confident_prior(self):
        rng = np.random.default_rng(1)
        out = adaptive_inflation_update(rng.normal(0, 3, 4), rng.standard_normal((4, 6)),
                                        np.ones(4), 1.7, 0.0)
        assert out == 1.7

    def test_hand_computed(self):
        d = np.array([0.5, -1.2, 2.0])
        Y = np.array([[1.0, -0.5, -0.5], [0.2, 0.4, -0.6], [-1.0, 0.0, 1.0]])
        rinv = np.array([2.0, 1.0, 0.5])
        w = np.array([1.0, 0.5, 0.25])
        k = 3
        spread = [sum(v * v for v in row) / (k - 1) for row in Y]
        T = sum(r * s for r, s in zip(rinv, spread))
        p = sum(w)
        dRd = sum(r * e * e for r, e in zip(rinv, d))
        rho_o = (dRd - p) / T
        rho_b, vb = 1.3, 0.04
        vo = 2.0 / p * ((rho_b * T / p + 1.0) / (T / p)) ** 2
        expected = (rho_b * vo + rho_o * vb) / (vb + vo)
        expected = min(max(expected, 1.0), 10.0)
        out = adaptive_inflation_update(d, Y, rinv, rho_b, vb, weights=w)
        assert out == pytest.approx(expected, abs=1e-12)

    def test_clamped(self):
        Y = np.array([[0.01, -0.01]])
        assert adaptive_inflation_update([100.0], Y, [1.0], 9.9, 100.0) == 10.0
        assert adaptive_inflation_update([0.0], np.array([[10.0, -10.0]]), [1.0], 1.0, 100.0) == 1.0

    def test_zero_spread_keeps_prior(self):
        assert adaptive_inflation_update([1.0], np.zeros((1, 4)), [1.0], 2.2, 0.04) == 2.2

    def test_rowwise(self):
        rng = np.random.default_rng(2)
        d, Y = rng.normal(0, 2, 3), rng.standard_normal((3, 5))
        rinv = rng.uniform(0, 1, (4, 3))
        rows = adaptive_inflation_update(d, Y, rinv, np.full(4, 1.2), 0.04, weights=rinv)
        for i in range(4):
            assert rows[i] == pytest.approx(
                adaptive_inflation_update(d, Y, rinv[i], 1.2, 0.04, weights=rinv[i]), abs=1e-14)

    def test_analyze_updates_per_variable(self):
        rng = np.random.default_rng(3)
        ens = random_ensemble(rng, n=9, k=10)
        inf = InflationConfig("adaptive", prior_var=0.04, initial=1.05)
        obs = state_obs([0, 1, 4, 5], ens.mean[[0, 1, 4, 5]] + rng.normal(0, 3, 4), 0.01)
        analyze(ens, obs, LocalizationConfig(), inf)
        assert inf.factors.shape == (18,)
        assert np.all((inf.factors >= 1.0) & (inf.factors <= 10.0))
        assert len(np.unique(np.round(inf.factors, 12))) > 1
        # state and parameter rows at one grid see the same observations
        np.testing.assert_allclose(inf.factors[:9], inf.factors[9:], atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1.0, 5.0), st.floats(1.0, 5.0))
def test_inflation_scales_covariance(seed, rx, rt):
    ens = random_ensemble(np.random.default_rng(seed))
    out = inflate_fixed(ens, rx, rt)
    B0, B1 = sample_cov(ens.members), sample_cov(out.members)
    s = np.sqrt(np.r_[np.full(3, rx), np.full(3, rt)])
    np.testing.assert_allclose(B1, B0 * np.outer(s, s), rtol=1e-10, atol=1e-12)
