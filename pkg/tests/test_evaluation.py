import numpy as np
import pytest

import genzsl.dataio as io
import genzsl.evaluation as ev
import genzsl.model as mo
from genzsl.errors import ValidationError


def pool_classifier(points, ids=None, metric="euclidean"):
    """Classifier whose pool is exactly one point per class."""
    points = np.asarray(points, dtype=np.float64)
    ids = np.arange(len(points)) if ids is None else np.asarray(ids)
    return ev.GeneratedPoolClassifier(ids, points[:, None, :], metric)


def identity_generator():
    """Surgically wired generator with G(t, z) = t in two dimensions."""
    arch = mo.ArchSpec(semantic_dim=2, visual_dim=2, noise_dim=1, hidden_dim=2,
                       reduced_dim=2)
    gen, _ = mo.init_params(arch, 2, False, io.philox(0, 1))
    gen.store["reduce.W"][:] = np.eye(2)
    gen.store["reduce.b"][:] = 0.0
    gen.store["h0.W"][:] = np.vstack([np.eye(2), np.zeros((1, 2))])
    gen.store["h0.b"][:] = 0.0
    gen.store["out.W"][:] = np.eye(2)
    gen.store["out.b"][:] = 0.0
    return gen


class ShiftedScores:
    """Wraps a classifier, adding a constant to every class score."""

    def __init__(self, base, shift):
        self.base = base
        self.shift = shift
        self.class_ids = base.class_ids

    def scores(self, x):
        return self.base.scores(x) + self.shift

    def predict(self, x):
        return self.class_ids[np.argmax(self.scores(x), axis=1)]


class TestBuildClassifier:
    def test_pool_shape_and_determinism(self):
        arch = mo.ArchSpec(semantic_dim=4, visual_dim=6, noise_dim=2, hidden_dim=8)
        gen, _ = mo.init_params(arch, 3, False, io.philox(1, 1))
        sem = io.philox(2, 2).standard_normal((3, 4))
        a = ev.build_classifier(gen, sem, 7, io.philox(3, 3))
        b = ev.build_classifier(gen, sem, 7, io.philox(3, 3))
        assert a.pools.shape == (3, 7, 6)
        assert a.pools.tobytes() == b.pools.tobytes()

    def test_single_generation_degenerates_to_nearest_center(self):
        arch = mo.ArchSpec(semantic_dim=4, visual_dim=6, noise_dim=2, hidden_dim=8)
        gen, _ = mo.init_params(arch, 3, False, io.philox(1, 1))
        sem = io.philox(2, 2).standard_normal((3, 4))
        clf = ev.build_classifier(gen, sem, 1, io.philox(3, 3))
        x = io.philox(4, 4).standard_normal((10, 6))
        centers = clf.pools[:, 0, :]
        expected = np.argmin(
            ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2), axis=1)
        np.testing.assert_array_equal(clf.predict(x), expected)

    def test_n_generate_must_be_positive(self):
        arch = mo.ArchSpec(semantic_dim=4, visual_dim=6, noise_dim=2, hidden_dim=8)
        gen, _ = mo.init_params(arch, 3, False, io.philox(1, 1))
        with pytest.raises(ValidationError):
            ev.build_classifier(gen, np.ones((2, 4)), 0, io.philox(0, 0))


class TestTop1:
    def test_oracle_pool_scores_one(self):
        protos = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        clf = pool_classifier(protos)
        assert ev.top1(clf, protos, [0, 1, 2]) == 1.0

    def test_adversarial_shared_pool_breaks_ties_to_lowest_index(self):
        shared = np.tile(np.array([[1.0, 1.0]]), (4, 1))
        clf = pool_classifier(shared, ids=[5, 6, 7, 8])
        labels = np.array([5, 6, 7, 8, 5, 5])
        x = np.zeros((6, 2))
        acc = ev.top1(clf, x, labels)
        assert acc == pytest.approx(np.mean(labels == 5))

    def test_random_pool_on_balanced_classes_hits_chance(self):
        accs = []
        for seed in range(10):
            g = io.philox(seed, 42)
            clf = ev.GeneratedPoolClassifier(
                np.arange(4), 100.0 * g.standard_normal((4, 5, 3)), "euclidean")
            x = g.standard_normal((200, 3))
            labels = np.repeat(np.arange(4), 50)
            accs.append(ev.top1(clf, x, labels))
        assert abs(np.mean(accs) - 0.25) < 0.03

    def test_shift_invariance(self):
        g = io.philox(9, 9)
        clf = pool_classifier(g.standard_normal((4, 3)))
        x = g.standard_normal((20, 3))
        labels = g.integers(0, 4, size=20)
        assert ev.top1(clf, x, labels) == ev.top1(ShiftedScores(clf, 11.0), x, labels)


class TestHarmonicMean:
    def test_values(self):
        assert ev.harmonic_mean(0.5, 0.5) == pytest.approx(0.5)
        assert ev.harmonic_mean(1.0, 0.0) == 0.0
        assert ev.harmonic_mean(0.0, 0.0) == 0.0
        assert ev.harmonic_mean(0.6, 0.3) == pytest.approx(0.4, abs=1e-12)

    def test_range_check(self):
        with pytest.raises(ValidationError):
            ev.harmonic_mean(1.2, 0.5)


class TestSuCurveAuc:
    def _separable_setup(self):
        protos = np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0], [20.0, 20.0]])
        clf = pool_classifier(protos, ids=[0, 1, 2, 3])
        x = np.vstack([protos + 0.01, protos - 0.01])
        labels = np.array([0, 1, 2, 3, 0, 1, 2, 3])
        return clf, x, labels

    def test_oracle_scorer_reaches_unit_area(self):
        clf, x, labels = self._separable_setup()
        curve, auc = ev.su_curve_auc(clf, x, labels, unseen_ids=[2, 3])
        assert any(a_s == 1.0 and a_u == 1.0 for a_s, a_u in curve)
        assert auc == pytest.approx(1.0, abs=1e-9)

    def test_extreme_biases_pin_the_endpoints(self):
        clf, x, labels = self._separable_setup()
        curve, _ = ev.su_curve_auc(clf, x, labels, unseen_ids=[2, 3])
        assert curve[0][1] == 0.0   # most negative bias: nothing unseen wins
        assert curve[-1][0] == 0.0  # most positive bias: nothing seen wins

    def test_two_point_curve_bounded_by_rectangle(self):
        # every test point sits on the class-0 pool; class 2 is unseen and
        # one unit away, so one threshold flips all predictions at once
        pools = np.array([[0.0, 0.0], [5.0, 5.0], [1.0, 0.0]])
        clf = pool_classifier(pools, ids=[0, 1, 2])
        x = np.zeros((8, 2))
        labels = np.array([0, 1, 0, 1, 2, 2, 2, 2])
        curve, auc = ev.su_curve_auc(clf, x, labels, unseen_ids=[2])
        a_s = max(p[0] for p in curve)
        a_u = max(p[1] for p in curve)
        assert a_s == pytest.approx(0.5)
        assert a_u == pytest.approx(1.0)
        assert auc <= a_s * a_u + 1e-12

    def test_grid_refinement_agreement(self):
        g = io.philox(31, 0)
        clf = ev.GeneratedPoolClassifier(
            np.arange(8), g.standard_normal((8, 6, 4)), "euclidean")
        x = g.standard_normal((160, 4))
        labels = np.repeat(np.arange(8), 20)
        sigma = clf.scores(x).std()
        auc_coarse = ev.su_curve_auc(clf, x, labels, np.arange(4, 8),
                                     np.linspace(-3 * sigma, 3 * sigma, 51))[1]
        auc_fine = ev.su_curve_auc(clf, x, labels, np.arange(4, 8),
                                   np.linspace(-3 * sigma, 3 * sigma, 501))[1]
        assert abs(auc_coarse - auc_fine) < 0.02

    def test_dominant_scorer_has_no_smaller_area(self):
        clf, x, labels = self._separable_setup()
        g = io.philox(47, 0)
        noisy = ev.GeneratedPoolClassifier(
            np.arange(4), 30.0 * g.standard_normal((4, 3, 2)), "euclidean")
        grid = np.linspace(-5.0, 5.0, 101)
        _, auc_good = ev.su_curve_auc(clf, x, labels, [2, 3], grid)
        _, auc_bad = ev.su_curve_auc(noisy, x, labels, [2, 3], grid)
        assert auc_good >= auc_bad

    def test_curve_shift_invariance(self):
        g = io.philox(13, 1)
        clf = pool_classifier(g.standard_normal((4, 3)))
        x = g.standard_normal((40, 3))
        labels = g.integers(0, 4, size=40)
        grid = np.linspace(-2, 2, 21)
        c1, a1 = ev.su_curve_auc(clf, x, labels, [2, 3], grid)
        c2, a2 = ev.su_curve_auc(ShiftedScores(clf, 4.5), x, labels, [2, 3], grid)
        assert c1 == c2 and a1 == a2

    def test_needs_both_populations(self):
        clf = pool_classifier(np.eye(2))
        with pytest.raises(ValidationError):
            ev.su_curve_auc(clf, np.eye(2), [0, 0], unseen_ids=[1])
        with pytest.raises(ValidationError):
            ev.su_curve_auc(clf, np.eye(2), [0, 1], unseen_ids=[1], bias_grid=[])


class TestRetrievalMap:
    def test_true_centers_on_separated_clusters_are_perfect(self):
        gen = identity_generator()
        protos = np.array([[0.0, 0.0], [30.0, 0.0], [0.0, 30.0]])
        g = io.philox(3, 5)
        feats = np.vstack([p + 0.1 * g.standard_normal((10, 2)) for p in protos])
        labels = np.repeat([4, 5, 6], 10)
        result = ev.retrieval_map(gen, protos, feats, labels, [4, 5, 6],
                                  fractions=(0.25, 0.5, 1.0), n_generate=6,
                                  rng=io.philox(0, 7))
        assert result[1.0] == pytest.approx(1.0)
        assert result[0.25] == pytest.approx(1.0)

    def test_k_of_one_with_nearest_correct(self):
        gen = identity_generator()
        protos = np.array([[0.0, 0.0], [30.0, 0.0]])
        feats = np.array([[0.05, 0.0], [29.0, 0.0], [31.0, 0.0], [30.0, 1.0]])
        labels = np.array([7, 8, 8, 8])
        result = ev.retrieval_map(gen, protos, feats, labels, [7, 8],
                                  fractions=(1e-9,), n_generate=4, rng=io.philox(1, 7))
        assert result[1e-9] == pytest.approx(1.0)

    def test_random_centers_on_overlapping_clusters_hit_class_prior(self):
        maps = []
        for seed in range(10):
            g = io.philox(seed, 8)
            gen = identity_generator()
            descriptors = 50.0 * g.standard_normal((4, 2))
            feats = g.standard_normal((100, 2))
            labels = np.repeat(np.arange(4), 25)
            result = ev.retrieval_map(gen, descriptors, feats, labels, np.arange(4),
                                      fractions=(1.0,), n_generate=4, rng=io.philox(seed, 9))
            maps.append(result[1.0])
        assert abs(np.mean(maps) - 0.25) < 0.05

    def test_invariance_under_joint_isometry(self):
        gen = identity_generator()
        g = io.philox(21, 3)
        descriptors = g.standard_normal((3, 2))
        feats = g.standard_normal((30, 2))
        labels = np.repeat([0, 1, 2], 10)
        theta = 0.7
        Q = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        shift = np.array([3.0, -1.0])
        base = ev.retrieval_map(gen, descriptors, feats, labels, [0, 1, 2],
                                fractions=(0.5, 1.0), n_generate=1, rng=io.philox(5, 5))
        moved = ev.retrieval_map(gen, descriptors @ Q.T + shift, feats @ Q.T + shift,
                                 labels, [0, 1, 2], fractions=(0.5, 1.0),
                                 n_generate=1, rng=io.philox(5, 5))
        for frac in (0.5, 1.0):
            assert base[frac] == pytest.approx(moved[frac], abs=1e-12)

    def test_average_precision_variant(self):
        gen = identity_generator()
        protos = np.array([[0.0, 0.0], [30.0, 0.0]])
        feats = np.vstack([protos[0] + 0.01, protos[1] + 0.01,
                           protos[0] - 0.01, protos[1] - 0.01])
        labels = np.array([0, 1, 0, 1])
        res = ev.retrieval_map(gen, protos, feats, labels, [0, 1], fractions=(1.0,),
                               n_generate=2, rng=io.philox(2, 2),
                               method="average_precision")
        assert res[1.0] == pytest.approx(1.0)

    def test_missing_class_images_rejected(self):
        gen = identity_generator()
        with pytest.raises(ValidationError):
            ev.retrieval_map(gen, np.zeros((1, 2)), np.ones((3, 2)), [1, 1, 1], [0],
                             fractions=(1.0,), n_generate=2, rng=io.philox(0, 0))


class TestEvaluateModel:
    def test_full_battery_is_deterministic_and_in_range(self):
        d = io.make_synthetic(io.SyntheticSpec(k_seen=4, k_unseen=2, visual_dim=8,
                                               semantic_dim=6, samples_per_class=16,
                                               seed=3))
        arch = mo.ArchSpec(semantic_dim=6, visual_dim=8, noise_dim=3, hidden_dim=10)
        gen, _ = mo.init_params(arch, 4, False, io.philox(8, 0))
        r1 = ev.evaluate_model(gen, d, 12, io.philox(9, 0))
        r2 = ev.evaluate_model(gen, d, 12, io.philox(9, 0))
        assert r1 == r2
        assert 0.0 <= r1.top1_unseen <= 1.0
        assert 0.0 <= r1.su_auc <= 1.0
        assert 0.0 <= r1.harmonic_mean <= 1.0
        assert set(r1.retrieval_map) == {0.25, 0.5, 1.0}
        assert all(p[0] <= 1.0 and p[1] <= 1.0 for p in r1.su_curve)
