import numpy as np
import pytest

from milrp import cspbase, dsp
from milrp.cspbase import (CspModel, LdaModel, baseline_pipeline,
                           class_covariance, csp_features, csp_fit,
                           jacobi_eigh, lda_fit, lda_predict)
from milrp.trialio import Trial, TrialSet
from milrp.featmap import default_grid


def seg(data):
    return dsp.Segment(data=np.asarray(data, dtype=float), t_start_s=0.5,
                       t_end_s=2.5)


def random_spd_pair(rng, n=22):
    a = rng.normal(size=(n, n))
    b = rng.normal(size=(n, n))
    c1 = a @ a.T / n + 0.1 * np.eye(n)
    c2 = b @ b.T / n + 0.1 * np.eye(n)
    return c1 / np.trace(c1), c2 / np.trace(c2)


class TestJacobi:
    def test_2x2_matches_characteristic_polynomial_roots(self, rng):
        for _ in range(100):
            a = rng.normal(size=(2, 2))
            a = (a + a.T) / 2.0
            tr = a[0, 0] + a[1, 1]
            det = a[0, 0] * a[1, 1] - a[0, 1] ** 2
            disc = np.sqrt(tr * tr / 4.0 - det)
            roots = np.sort([tr / 2.0 - disc, tr / 2.0 + disc])
            w, _ = jacobi_eigh(a)
            np.testing.assert_allclose(w, roots, rtol=0, atol=1e-10)

    def test_3x3_matches_characteristic_polynomial_roots(self, rng):
        for _ in range(100):
            a = rng.normal(size=(3, 3))
            a = (a + a.T) / 2.0
            # char poly: l^3 + c2 l^2 + c1 l + c0 from trace invariants
            c2 = -np.trace(a)
            c1 = 0.5 * (np.trace(a) ** 2 - np.trace(a @ a))
            c0 = -np.linalg.det(a)
            roots = np.sort(np.roots([1.0, c2, c1, c0]).real)
            w, _ = jacobi_eigh(a)
            np.testing.assert_allclose(w, roots, rtol=0, atol=1e-10)

    def test_eigenpairs_satisfy_the_matrix(self, rng):
        for n in (5, 13, 22):
            a = rng.normal(size=(n, n))
            a = (a + a.T) / 2.0
            w, v = jacobi_eigh(a)
            np.testing.assert_allclose(a @ v, v @ np.diag(w), rtol=0, atol=1e-10)
            np.testing.assert_allclose(v.T @ v, np.eye(n), rtol=0, atol=1e-12)

    def test_asymmetric_input_rejected(self, rng):
        with pytest.raises(ValueError, match="symmetric"):
            jacobi_eigh(rng.normal(size=(4, 4)))


class TestClassCovariance:
    def test_constant_pair_normalizes_by_trace(self):
        # identical rows: X X^T is the all-ones matrix times c^2 N,
        # trace 2 c^2 N, so every normalized entry is exactly 0.5
        cov = class_covariance([seg(np.full((2, 50), 3.0))])
        np.testing.assert_allclose(cov, np.full((2, 2), 0.5), rtol=0, atol=1e-15)

    def test_white_noise_is_near_diagonal(self, rng):
        segs = [seg(rng.normal(size=(22, 2000))) for _ in range(20)]
        cov = class_covariance(segs)
        off = cov - np.diag(np.diag(cov))
        assert np.abs(off).max() < 0.05

    def test_exactly_symmetric(self, rng):
        cov = class_covariance([seg(rng.normal(size=(22, 100)))])
        assert np.all(cov - cov.T == 0.0)

    def test_zero_power_trial_rejected_with_index(self):
        good = seg(np.ones((2, 10)))
        with pytest.raises(ValueError, match="segment 1"):
            class_covariance([good, seg(np.zeros((2, 10)))])

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            class_covariance([])


class TestCspFit:
    def test_identical_covariances_have_no_discriminative_direction(self):
        half_eye = 0.5 * np.eye(4)
        model = csp_fit(half_eye, half_eye, m=2)
        np.testing.assert_allclose(model.eigenvalues, 0.5, atol=1e-10)

    def test_two_channel_axis_aligned_case(self):
        c1 = np.diag([1.0, 0.1]) / 1.1
        c2 = np.diag([0.1, 1.0]) / 1.1
        model = csp_fit(c1, c2, m=1)
        np.testing.assert_allclose(model.eigenvalues, [1.0 / 1.1, 0.1 / 1.1],
                                   atol=1e-10)
        for w in model.filters:
            wn = np.abs(w) / np.linalg.norm(w)
            assert wn.max() > 0.999  # aligned with a coordinate axis

    def test_whitening_identity(self, rng):
        for _ in range(20):
            c1, c2 = random_spd_pair(rng)
            model = csp_fit(c1, c2, m=3)
            ident = model.filters @ (c1 + c2) @ model.filters.T
            np.testing.assert_allclose(ident, np.eye(6), rtol=0, atol=1e-8)

    def test_rayleigh_quotients_equal_the_eigenvalues(self, rng):
        c1, c2 = random_spd_pair(rng)
        model = csp_fit(c1, c2, m=3)
        for w, lam in zip(model.filters, model.eigenvalues):
            quotient = (w @ c1 @ w) / (w @ (c1 + c2) @ w)
            assert abs(quotient - lam) < 1e-8

    def test_eigenvalue_pairing_sums_to_one(self, rng):
        c1, c2 = random_spd_pair(rng)
        model = csp_fit(c1, c2, m=3)
        for w, lam in zip(model.filters, model.eigenvalues):
            lam2 = (w @ c2 @ w) / (w @ (c1 + c2) @ w)
            assert abs(lam + lam2 - 1.0) < 1e-8

    def test_rank_deficient_composite_gets_the_ridge(self, rng):
        x = rng.normal(size=(22, 300))
        x -= x.mean(axis=0)  # channel-mean removal drops one rank
        cov = x @ x.T
        cov /= np.trace(cov)
        model = csp_fit(cov, cov, m=3)
        assert model.ridge > 0.0

    def test_non_positive_composite_rejected(self):
        bad = -np.eye(4)
        with pytest.raises(ValueError, match="positive definite"):
            csp_fit(bad, bad, m=1)

    def test_too_many_pairs_rejected(self):
        with pytest.raises(ValueError, match="pairs"):
            csp_fit(np.eye(4), np.eye(4), m=3)


class TestCspFeatures:
    def test_identical_filters_share_variance_equally(self, rng):
        w = rng.normal(size=22)
        model = CspModel(filters=np.tile(w, (6, 1)), eigenvalues=np.full(6, 0.5),
                         m=3)
        f = csp_features(model, seg(rng.normal(size=(22, 200))))
        np.testing.assert_allclose(f, np.log(1.0 / 6.0), rtol=1e-12)

    def test_hand_computed_variance_shares(self):
        # projected variances 9 and 1 -> log 0.9, log 0.1
        model = CspModel(filters=np.eye(2), eigenvalues=np.array([0.9, 0.1]),
                         m=1)
        t = np.arange(1000)
        data = np.stack([3.0 * np.sign(np.sin(t + 0.5)),
                         1.0 * np.sign(np.cos(t + 0.5))])
        data -= data.mean(axis=1, keepdims=True)
        # force exact variances 9 and 1
        data[0] *= 3.0 / data[0].std()
        data[1] *= 1.0 / data[1].std()
        f = csp_features(model, seg(data))
        np.testing.assert_allclose(f, [np.log(0.9), np.log(0.1)], rtol=1e-9)

    def test_shares_sum_to_one(self, rng):
        c1, c2 = random_spd_pair(rng)
        model = csp_fit(c1, c2, m=3)
        f = csp_features(model, seg(rng.normal(size=(22, 300))))
        assert abs(np.exp(f).sum() - 1.0) < 1e-12

    def test_zero_variance_rejected(self):
        model = CspModel(filters=np.eye(2), eigenvalues=np.array([0.5, 0.5]),
                         m=1)
        with pytest.raises(ValueError, match="variance"):
            csp_features(model, seg(np.zeros((2, 100))))

    def test_channel_count_mismatch_rejected(self, rng):
        model = CspModel(filters=np.eye(2), eigenvalues=np.array([0.5, 0.5]),
                         m=1)
        with pytest.raises(ValueError, match="channels"):
            csp_features(model, seg(rng.normal(size=(3, 100))))


class TestLda:
    def test_separated_clusters_along_first_axis(self, rng):
        fa = rng.normal(size=(100, 4)) + np.array([4.0, 0, 0, 0])
        fb = rng.normal(size=(100, 4)) + np.array([-4.0, 0, 0, 0])
        model = lda_fit(fa, fb)
        cosine = abs(model.weights[0]) / np.linalg.norm(model.weights)
        assert cosine > 0.99
        correct = sum(lda_predict(model, f) == 0 for f in fa)
        correct += sum(lda_predict(model, f) == 1 for f in fb)
        assert correct == 200

    def test_identical_means_degenerate_to_bias_sign(self, rng):
        shared = rng.normal(size=(200, 3))
        model = lda_fit(shared[:100], shared[100:])
        assert np.linalg.norm(model.weights) < 1.0
        # prediction reduces to the sign of an almost-zero affine score
        assert lda_predict(model, np.zeros(3)) in (0, 1)

    def test_swapping_classes_flips_every_score(self, rng):
        fa = rng.normal(size=(50, 3)) + 1.0
        fb = rng.normal(size=(50, 3)) - 1.0
        ab = lda_fit(fa, fb)
        ba = lda_fit(fb, fa)
        for f in rng.normal(size=(20, 3)):
            score_ab = ab.weights @ f + ab.bias
            score_ba = ba.weights @ f + ba.bias
            np.testing.assert_allclose(score_ab, -score_ba, rtol=0, atol=1e-9)

    def test_needs_two_samples_per_class(self, rng):
        with pytest.raises(ValueError, match="2 samples"):
            lda_fit(rng.normal(size=(1, 3)), rng.normal(size=(5, 3)))


def variance_lateralized_trialset(rng, subject, session, n=40, boost=4.0):
    """Two-class synthetic: the label decides which channel carries power."""
    channels = tuple(default_grid().placements)
    c3, c4 = channels.index("C3"), channels.index("C4")
    trials = []
    for i in range(n):
        label = "left" if i % 2 == 0 else "right"
        data = rng.normal(size=(22, 900)).astype(np.float32)
        t = np.arange(900) / 250.0
        wave = np.sin(2 * np.pi * 10.0 * t + rng.uniform(0, 2 * np.pi))
        data[c4 if label == "left" else c3] += boost * wave.astype(np.float32)
        trials.append(Trial(data=data, cue_sample=125, label=label))
    return TrialSet(subject=subject, session=session, sample_rate=250.0,
                    channel_names=channels, trials=trials)


class TestBaselinePipeline:
    def test_constructed_separability_reaches_90_percent(self, rng):
        train = variance_lateralized_trialset(rng, "A01", "T", n=60)
        test = variance_lateralized_trialset(rng, "A02", "E", n=40)
        assert baseline_pipeline(train, test) >= 90.0

    def test_training_set_memorized_when_separable(self, rng):
        tset = variance_lateralized_trialset(rng, "A01", "T", n=40)
        assert baseline_pipeline(tset, tset) == 100.0

    def test_montage_mismatch_rejected(self, rng):
        train = variance_lateralized_trialset(rng, "A01", "T", n=10)
        test = variance_lateralized_trialset(rng, "A02", "E", n=10)
        test = TrialSet(subject="A02", session="E", sample_rate=250.0,
                        channel_names=tuple(reversed(train.channel_names)),
                        trials=test.trials)
        with pytest.raises(ValueError, match="montage"):
            baseline_pipeline(train, test)


class TestBaselineSerialization:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        c1, c2 = random_spd_pair(rng)
        csp = csp_fit(c1, c2, m=3)
        lda = lda_fit(rng.normal(size=(20, 6)), rng.normal(size=(20, 6)) + 1.0)
        path = tmp_path / "baseline.cspb"
        cspbase.save_baseline_model(csp, lda, path, config_digest="beef")
        csp2, lda2, digest = cspbase.load_baseline_model(path)
        assert np.array_equal(csp.filters, csp2.filters)
        assert np.array_equal(csp.eigenvalues, csp2.eigenvalues)
        assert csp.m == csp2.m and csp.ridge == csp2.ridge
        assert np.array_equal(lda.weights, lda2.weights)
        assert lda.bias == lda2.bias
        assert digest == "beef"

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.cspb"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(cspbase._binio.FormatError, match="magic"):
            cspbase.load_baseline_model(path)
