import math

import numpy as np
import pytest
from scipy.special import erf

from rfensemble import (
    ChannelSpec,
    ConfigError,
    FeatureEnsemble,
    ModelConfig,
    SolveOptions,
    TrainedEnsemble,
    activation_coeffs,
    empirical_overlaps,
    featurize,
    gauss_hermite_rule,
    generate_dataset,
    generic_gen_error,
    EnsembleCovariance,
    mp_spectral_model,
    run_experiment,
    sample_feature_ensemble,
    solve_fixed_point,
    train_logistic,
    train_ridge,
    training_loss,
)
from rfensemble.erm_lab import preactivation, run_trial

COEFFS = activation_coeffs(erf, gauss_hermite_rule(201))
SQUARE = ChannelSpec(loss="square", teacher="linear")
LOGISTIC = ChannelSpec(loss="logistic", teacher="sign")


class TestGenerateDataset:
    def test_sign_labels_balanced(self):
        ds = generate_dataset(4000, 50, 1.0, "sign", seed=0)
        assert abs(ds.y.mean()) < 5 / math.sqrt(4000)
        assert set(np.unique(ds.y)) <= {-1.0, 1.0}

    def test_linear_labels_variance_concentrates(self):
        ds = generate_dataset(10_000, 1000, 1.7, "linear", seed=1)
        assert ds.y.var() == pytest.approx(1.7, rel=0.1)

    def test_teacher_norm_concentrates(self):
        ds = generate_dataset(10, 5000, 2.0, "linear", seed=2)
        assert np.dot(ds.theta, ds.theta) / 5000 == pytest.approx(2.0, abs=5 / math.sqrt(5000) * 2.0)

    def test_deterministic(self):
        a = generate_dataset(100, 20, 1.0, "sign", seed=3)
        b = generate_dataset(100, 20, 1.0, "sign", seed=3)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)


class TestFeaturize:
    def test_identity_map_recovers_scaled_inputs(self):
        d = 6
        ident = activation_coeffs(lambda x: x, gauss_hermite_rule(101))
        ens = FeatureEnsemble(
            F_list=(np.eye(d),), coeffs=ident, theta=np.zeros(d), seeds=(0,), activation=lambda x: x
        )
        X = np.random.default_rng(0).standard_normal((4, d))
        blocks = featurize(X, ens)
        np.testing.assert_allclose(blocks[0], X / math.sqrt(d), atol=1e-15)

    def test_erf_features_bounded(self):
        ds = generate_dataset(50, 30, 1.0, "sign", seed=4)
        ens = sample_feature_ensemble(2, 40, 30, COEFFS, ds.theta, seed=5, activation=erf)
        for U in featurize(ds, ens):
            assert np.all(np.abs(U) < 1.0)

    def test_column_second_moment_matches_coefficients(self):
        n, p, d = 6000, 60, 600
        ds = generate_dataset(n, d, 1.0, "sign", seed=6)
        ens = sample_feature_ensemble(1, p, d, COEFFS, ds.theta, seed=7, activation=erf)
        U = featurize(ds, ens)[0]
        want = COEFFS.kappa1**2 + COEFFS.kappa_star_sq
        got = np.mean(U**2)
        assert got == pytest.approx(want, abs=6 / math.sqrt(n))

    def test_gaussian_surrogate_moments(self):
        n, p, d = 4000, 50, 400
        ds = generate_dataset(n, d, 1.0, "sign", seed=8)
        ens = sample_feature_ensemble(1, p, d, COEFFS, ds.theta, seed=9, activation=erf)
        U = featurize(ds, ens, mode="gaussian_surrogate", surrogate_seed=1)
        want = COEFFS.kappa1**2 + COEFFS.kappa_star_sq
        assert np.mean(U[0] ** 2) == pytest.approx(want, abs=6 / math.sqrt(n))

    def test_shape_mismatch_rejected(self):
        ens = sample_feature_ensemble(1, 10, 8, COEFFS, np.zeros(8), seed=0)
        with pytest.raises(ConfigError):
            featurize(np.zeros((5, 9)), ens)


class TestTrainRidge:
    def test_weights_shrink_like_inverse_lambda(self):
        ds = generate_dataset(100, 40, 1.0, "linear", seed=10)
        ens = sample_feature_ensemble(1, 60, 40, COEFFS, ds.theta, seed=11, activation=erf)
        feats = featurize(ds, ens)
        w3, _ = train_ridge(feats, ds.y, 1e3)
        w4, _ = train_ridge(feats, ds.y, 1e4)
        ratio = np.linalg.norm(w3) / np.linalg.norm(w4)
        assert ratio == pytest.approx(10.0, rel=0.05)

    def test_interpolation_rank_dichotomy(self):
        ds = generate_dataset(80, 40, 1.0, "linear", seed=12)
        ens = sample_feature_ensemble(1, 160, 40, COEFFS, ds.theta, seed=13, activation=erf)
        feats = featurize(ds, ens)
        W, _ = train_ridge(feats, ds.y, 1e-6)
        mse = np.mean((ds.y - preactivation(feats[0], W[:, 0])) ** 2)
        assert mse <= 1e-10

        ens_small = sample_feature_ensemble(1, 40, 40, COEFFS, ds.theta, seed=14, activation=erf)
        feats_small = featurize(ds, ens_small)
        W2, _ = train_ridge(feats_small, ds.y, 1e-6)
        mse2 = np.mean((ds.y - preactivation(feats_small[0], W2[:, 0])) ** 2)
        assert mse2 > 1e-6

    def test_two_by_two_hand_solve(self):
        # oracle: explicit 2x2 normal equations solved by hand (Cramer)
        U = np.array([[1.0, 2.0], [3.0, -1.0]])
        y = np.array([1.0, -2.0])
        lam = 0.7
        p = 2
        A = U.T @ U / p + lam * np.eye(p)
        b = U.T @ y / math.sqrt(p)
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        w_hand = np.array([(b[0] * A[1, 1] - b[1] * A[0, 1]) / det, (A[0, 0] * b[1] - A[1, 0] * b[0]) / det])
        W, resid = train_ridge([U], y, lam)
        np.testing.assert_allclose(W[:, 0], w_hand, atol=1e-12)
        assert resid[0] <= 1e-10

    def test_min_norm_limit_stable(self):
        ds = generate_dataset(60, 30, 1.0, "linear", seed=15)
        ens = sample_feature_ensemble(1, 120, 30, COEFFS, ds.theta, seed=16, activation=erf)
        feats = featurize(ds, ens)
        w_a, _ = train_ridge(feats, ds.y, 1e-6)
        w_b, _ = train_ridge(feats, ds.y, 1e-6 + 1e-9)
        rel = np.linalg.norm(w_a - w_b) / np.linalg.norm(w_a)
        assert rel <= 1e-4


class TestTrainLogistic:
    def test_large_lambda_null_predictor(self):
        ds = generate_dataset(200, 30, 1.0, "sign", seed=17)
        ens = sample_feature_ensemble(1, 50, 30, COEFFS, ds.theta, seed=18, activation=erf)
        feats = featurize(ds, ens)
        W, gns, _ = train_logistic(feats, ds.y, 1e4)
        assert np.linalg.norm(W) < 1e-2
        loss = np.mean(np.logaddexp(0, -ds.y * preactivation(feats[0], W[:, 0])))
        assert loss == pytest.approx(math.log(2), abs=1e-3)

    def test_separable_margins_nonnegative(self):
        ds = generate_dataset(40, 20, 1.0, "sign", seed=19)
        ens = sample_feature_ensemble(1, 200, 20, COEFFS, ds.theta, seed=20, activation=erf)
        feats = featurize(ds, ens)
        W, _, _ = train_logistic(feats, ds.y, 1e-4)
        margins = ds.y * preactivation(feats[0], W[:, 0])
        assert np.all(margins >= 0)

    def test_gradient_matches_finite_differences(self):
        # oracle: central differences of the summed objective
        ds = generate_dataset(60, 15, 1.0, "sign", seed=21)
        ens = sample_feature_ensemble(1, 25, 15, COEFFS, ds.theta, seed=22, activation=erf)
        U = featurize(ds, ens)[0]
        lam = 0.3
        W, gns, _ = train_logistic([U], ds.y, lam)
        w = W[:, 0]
        rng = np.random.default_rng(23)
        direction = rng.standard_normal(len(w))
        direction /= np.linalg.norm(direction)
        eps = 1e-6

        def objective(wv):
            z = preactivation(U, wv)
            return float(np.sum(np.logaddexp(0, -ds.y * z)) + 0.5 * lam * wv @ wv)

        fd = (objective(w + eps * direction) - objective(w - eps * direction)) / (2 * eps)
        assert fd == pytest.approx(0.0, abs=1e-5)
        assert gns[0] <= 1e-9 * math.sqrt(len(w))


class TestEmpiricalOverlaps:
    def test_zero_weights(self):
        ens = sample_feature_ensemble(2, 30, 20, COEFFS, np.zeros(20), seed=24)
        trained = TrainedEnsemble(W=np.zeros((30, 2)), ensemble=ens, grad_norms=np.zeros(2), iterations=np.zeros(2))
        ov = empirical_overlaps(trained)
        assert ov.m == ov.q0 == ov.q1 == 0.0

    def test_identical_learners(self):
        d = 20
        rng = np.random.default_rng(25)
        F = rng.standard_normal((30, d))
        ens = FeatureEnsemble(F_list=(F, F), coeffs=COEFFS, theta=rng.standard_normal(d), seeds=(0, 0), activation=erf)
        w = rng.standard_normal(30)
        trained = TrainedEnsemble(W=np.column_stack([w, w]), ensemble=ens, grad_norms=np.zeros(2), iterations=np.zeros(2))
        ov = empirical_overlaps(trained)
        # same F and same weights: the cross overlap only misses the
        # kappa_star^2 |w|^2/p piece that the diagonal block carries
        assert ov.q1 == pytest.approx(ov.q0 - COEFFS.kappa_star_sq * w @ w / 30, rel=1e-12)

    def test_q0_matches_monte_carlo_contraction(self):
        n_fresh, p, d = 40_000, 60, 120
        rng = np.random.default_rng(26)
        theta = rng.standard_normal(d)
        ens = sample_feature_ensemble(1, p, d, COEFFS, theta, seed=27, activation=erf)
        w = rng.standard_normal(p)
        trained = TrainedEnsemble(W=w[:, None], ensemble=ens, grad_norms=np.zeros(1), iterations=np.zeros(1))
        ov = empirical_overlaps(trained)
        X = rng.standard_normal((n_fresh, d))
        scores = preactivation(featurize(X, ens)[0], w)
        mc = scores**2
        se = mc.std(ddof=1) / math.sqrt(n_fresh)
        assert abs(ov.q0 - mc.mean()) <= 3 * se

    def test_overlap_concentration_rate(self):
        # per-trial std of m shrinks like 1/sqrt(p), within a factor 2
        stds = {}
        for p in (100, 200, 400):
            ms = []
            for t in range(12):
                rec = run_trial(t, (28, p, t), SQUARE, COEFFS, n=2 * p, p=p, d=p, K=1,
                                rho=1.0, lam=0.1, estimator="mean", activation=erf, test_samples=100)
                ms.append(rec.m)
            stds[p] = np.std(ms, ddof=1)
        for p_small, p_big in ((100, 400),):
            expected = math.sqrt(p_big / p_small)
            ratio = stds[p_small] / stds[p_big]
            assert expected / 2 < ratio < expected * 2


class TestRunExperiment:
    def test_deterministic(self):
        kwargs = dict(n=60, p=40, d=30, K=2, rho=1.0, lam=0.5, trials=2, master_seed=5, activation=erf, test_samples=500)
        a = run_experiment(SQUARE, COEFFS, **kwargs)
        b = run_experiment(SQUARE, COEFFS, **kwargs)
        for ra, rb in zip(a.records, b.records):
            assert ra == rb

    def test_failures_recorded_not_raised(self):
        hinge = ChannelSpec(loss="hinge", teacher="sign")
        res = run_experiment(hinge, COEFFS, n=30, p=20, d=10, K=1, rho=1.0, lam=0.5,
                             trials=2, master_seed=0, activation=erf, test_samples=100)
        assert res.failures == 2
        assert all(not r.ok and "ConfigError" in r.error for r in res.records)

    def test_csv_roundtrip(self, tmp_path):
        res = run_experiment(SQUARE, COEFFS, n=40, p=30, d=20, K=2, rho=1.0, lam=0.5,
                             trials=2, master_seed=1, activation=erf, test_samples=200)
        out = tmp_path / "trials.csv"
        res.write_csv(out)
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("trial,seed,ok,m,q0,q1,")
        assert len(lines) == 3
        summary = res.summary_json()
        assert '"failures": 0' in summary

    def test_empirical_error_matches_gaussian_model_at_empirical_overlaps(self):
        res = run_experiment(LOGISTIC, COEFFS, n=300, p=200, d=150, K=2, rho=1.0, lam=1e-2,
                             trials=8, master_seed=2, activation=erf, test_samples=4000)
        agg = res.aggregate()
        cov = EnsembleCovariance(rho=1.0, m=agg["m"]["mean"], q0=agg["q0"]["mean"], q1=agg["q1"]["mean"], K=2)
        mc, mc_se = generic_gen_error(cov, "avg_sign", "zero_one", 10**5, seed=3)
        se = math.hypot(agg["test_error"]["std_error"], mc_se)
        assert abs(agg["test_error"]["mean"] - mc) <= 3 * se + 1e-3

    def test_training_loss_matches_theory(self):
        # asymptotic per-sample training loss vs the trained ensembles at d=200
        alpha, gamma, lam = 1.5, 0.75, 1e-2
        model = mp_spectral_model(alpha, gamma, COEFFS)
        cfg = ModelConfig(alpha=alpha, gamma=gamma, rho=1.0, lam=lam, K=1, spec=LOGISTIC,
                          spectrum=model, coeffs=COEFFS)
        fp = solve_fixed_point(cfg, SolveOptions(tol=1e-10, max_iters=30000))
        theory = training_loss(fp.params, fp.conj, 1.0, LOGISTIC)
        d = 200
        n = int(round(alpha / gamma * d))
        p = int(round(d / gamma))
        res = run_experiment(LOGISTIC, COEFFS, n=n, p=p, d=d, K=1, rho=1.0, lam=lam,
                             trials=10, master_seed=4, activation=erf, test_samples=100)
        agg = res.aggregate()
        assert agg["failures"] == 0
        se = agg["train_loss"]["std_error"]
        assert abs(agg["train_loss"]["mean"] - theory) <= 3 * se
