"""Tests for the numpy random forest: split selection against a brute-force
oracle, leaf smoothing, ensemble member behavior, and persistence."""

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from flowuq import RandomForestFlowClassifier
from flowuq.exceptions import DataError
from flowuq.forest import _best_split
from flowuq.uncertainty import decompose


def _gini_cost(y_left, y_right, n_classes):
    def gini(ys):
        if ys.size == 0:
            return 0.0
        p = np.bincount(ys, minlength=n_classes) / ys.size
        return 1.0 - np.sum(p * p)

    return y_left.size * gini(y_left) + y_right.size * gini(y_right)


def _brute_force_split(Xs, ys, n_classes):
    """All (gap, feature-slot) candidates by explicit looping; ties resolve
    to the earliest gap, then the earliest slot, as the growth contract
    promises."""
    best = None
    n, m = Xs.shape
    for gap in range(n - 1):
        for slot in range(m):
            sv = np.sort(Xs[:, slot], kind="stable")
            if sv[gap + 1] <= sv[gap]:
                continue
            thr = 0.5 * (sv[gap] + sv[gap + 1])
            mask = Xs[:, slot] <= thr
            cost = _gini_cost(ys[mask], ys[~mask], n_classes)
            if best is None or cost < best[0] - 1e-12:
                best = (cost, slot, thr)
    return None if best is None else (best[1], best[2])


def _memorizer(**kw):
    """A single fully-deterministic tree: no bootstrap, all features."""
    kw.setdefault("n_trees", 1)
    kw.setdefault("bootstrap", False)
    kw.setdefault("features_per_split", "all")
    return RandomForestFlowClassifier(**kw)


class TestBestSplit:
    def test_clean_two_class_cut(self):
        slot, thr = _best_split(
            np.array([[0.0], [1.0], [2.0], [3.0]]), np.array([0, 0, 1, 1]), 2
        )
        assert (slot, thr) == (0, 1.5)

    def test_midpoint_of_irregular_gap(self):
        slot, thr = _best_split(
            np.array([[0.0], [1.0], [7.0], [9.0]]), np.array([0, 0, 1, 1]), 2
        )
        assert (slot, thr) == (0, 4.0)

    def test_tie_breaks_to_earliest_gap(self):
        # both cuts of [0, 1, 2] with labels [0, 1, 0] cost the same
        slot, thr = _best_split(
            np.array([[0.0], [1.0], [2.0]]), np.array([0, 1, 0]), 2
        )
        assert (slot, thr) == (0, 0.5)

    def test_tie_breaks_to_earliest_slot(self):
        # identical columns: both slots offer the same perfect cut
        xs = np.array([[0.0, 0.0], [1.0, 1.0]])
        slot, _ = _best_split(xs, np.array([0, 1]), 2)
        assert slot == 0

    def test_constant_features_yield_none(self):
        assert _best_split(np.ones((4, 2)), np.array([0, 1, 0, 1]), 2) is None

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        xs = rng.normal(size=(rng.integers(5, 30), rng.integers(1, 4)))
        ys = rng.integers(0, 3, size=xs.shape[0])
        got = _best_split(xs, ys, 3)
        expected = _brute_force_split(xs, ys, 3)
        if expected is None:
            assert got is None
        else:
            assert got[0] == expected[0]
            assert got[1] == pytest.approx(expected[1], abs=1e-12)


class TestSingleTree:
    def test_memorizes_distinct_rows(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(50, 4))
        y = rng.integers(0, 3, size=50)
        model = _memorizer().fit(x, y)
        assert (model.predict(x) == y).mean() == 1.0

    def test_laplace_smoothed_leaves(self):
        x = np.array([[0.0], [0.0], [0.0], [0.0], [5.0]])
        y = np.array([0, 0, 0, 0, 1])
        model = _memorizer().fit(x, y)
        members = model.member_proba(np.array([[0.0], [5.0]]))
        # left leaf holds counts [4, 0] -> (4+1)/6, (0+1)/6
        np.testing.assert_allclose(members[0, 0], [5 / 6, 1 / 6], atol=1e-15)
        # right leaf holds counts [0, 1] -> 1/3, 2/3
        np.testing.assert_allclose(members[1, 0], [1 / 3, 2 / 3], atol=1e-15)

    def test_depth_zero_is_single_leaf(self):
        x = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([0, 0, 1, 1])
        model = _memorizer(max_depth=0).fit(x, y)
        probs = model.predict_proba(x)
        np.testing.assert_allclose(probs, 0.5, atol=1e-15)  # (2+1)/(4+2)

    def test_min_samples_split_blocks_growth(self):
        x = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([0, 0, 1, 1])
        model = _memorizer(min_samples_split=5).fit(x, y)
        assert model.trees_[0].n_nodes == 1

    def test_deeper_never_hurts_training_error(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(200, 5))
        y = (x[:, 0] + x[:, 1] * x[:, 2] > 0).astype(int) + (x[:, 3] > 1.0)
        previous = 1.0
        for depth in (1, 2, 4, 8, None):
            model = _memorizer(max_depth=depth).fit(x, y)
            error = (model.predict(x) != y).mean()
            assert error <= previous + 1e-12
            previous = error


@pytest.fixture(scope="module")
def noisy():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(300, 6))
    y = (x[:, 0] > 0).astype(int) + (x[:, 1] > 0.5)
    return x, y


class TestEnsemble:
    def test_member_shapes_and_mean(self, noisy):
        x, y = noisy
        model = RandomForestFlowClassifier(n_trees=8, seed=1).fit(x, y)
        members = model.member_proba(x[:10])
        assert members.shape == (10, 8, 3)
        np.testing.assert_allclose(members.sum(axis=2), 1.0, atol=1e-12)
        np.testing.assert_array_equal(
            model.predict_proba(x[:10]), members.mean(axis=1)
        )

    def test_identical_trees_have_no_disagreement(self, noisy):
        x, y = noisy
        model = RandomForestFlowClassifier(
            n_trees=5, bootstrap=False, features_per_split="all", seed=0
        ).fit(x, y)
        members = model.member_proba(x[:20])
        assert decompose(members).epistemic.max() <= 1e-9

    def test_bootstrap_produces_disagreement(self, noisy):
        x, y = noisy
        model = RandomForestFlowClassifier(n_trees=5, seed=0).fit(x, y)
        members = model.member_proba(x[:50])
        assert decompose(members).epistemic.max() > 1e-6

    def test_tree_seeds_independent_of_ensemble_size(self, noisy):
        x, y = noisy
        small = RandomForestFlowClassifier(n_trees=2, seed=9).fit(x, y)
        large = RandomForestFlowClassifier(n_trees=5, seed=9).fit(x, y)
        for t in range(2):
            np.testing.assert_array_equal(
                small.trees_[t].feature, large.trees_[t].feature
            )
            np.testing.assert_array_equal(
                small.trees_[t].threshold, large.trees_[t].threshold
            )

    def test_seed_determinism(self, noisy):
        x, y = noisy
        a = RandomForestFlowClassifier(n_trees=4, seed=2).fit(x, y)
        b = RandomForestFlowClassifier(n_trees=4, seed=2).fit(x, y)
        np.testing.assert_array_equal(a.predict_proba(x), b.predict_proba(x))
        c = RandomForestFlowClassifier(n_trees=4, seed=3).fit(x, y)
        assert not np.array_equal(a.predict_proba(x), c.predict_proba(x))

    def test_default_forest_learns_blobs(self, blob_bundle):
        model = RandomForestFlowClassifier(seed=0).fit(
            blob_bundle.train.features, blob_bundle.train.labels
        )
        assert model.n_trees == 25
        accuracy = (
            model.predict(blob_bundle.train.features) == blob_bundle.train.labels
        ).mean()
        assert accuracy >= 0.99

    def test_feature_scaling_changes_nothing(self, noisy):
        """Axis-aligned splits only consult value order per feature, so a
        positive per-feature rescaling must leave every prediction alone."""
        x, y = noisy
        scale = np.array([3.0, 0.25, 10.0, 1.0, 0.5, 7.0])
        plain = RandomForestFlowClassifier(n_trees=4, seed=5).fit(x, y)
        scaled = RandomForestFlowClassifier(n_trees=4, seed=5).fit(x * scale, y)
        np.testing.assert_allclose(
            scaled.predict_proba(x * scale), plain.predict_proba(x), atol=1e-12
        )


class TestValidationAndErrors:
    def test_single_class_rejected(self):
        with pytest.raises(DataError):
            RandomForestFlowClassifier().fit(np.zeros((4, 2)) + np.arange(4)[:, None], np.zeros(4, dtype=int))

    @pytest.mark.parametrize(
        "kw",
        [
            {"n_trees": 0},
            {"min_samples_split": 1},
            {"max_depth": -1},
            {"features_per_split": 7},
        ],
    )
    def test_bad_settings_rejected(self, kw):
        x = np.arange(12, dtype=float).reshape(6, 2)
        y = np.array([0, 1, 0, 1, 0, 1])
        with pytest.raises(ValueError):
            RandomForestFlowClassifier(**kw).fit(x, y)

    def test_unfitted_raises(self):
        with pytest.raises(NotFittedError):
            RandomForestFlowClassifier().predict(np.zeros((1, 2)))

    def test_predict_dimension_checked(self):
        x = np.arange(12, dtype=float).reshape(6, 2)
        y = np.array([0, 1, 0, 1, 0, 1])
        model = RandomForestFlowClassifier(n_trees=1).fit(x, y)
        with pytest.raises(ValueError):
            model.predict(np.zeros((2, 3)))


class TestSaveLoad:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(80, 3))
        y = rng.integers(0, 2, size=80)
        model = RandomForestFlowClassifier(n_trees=6, seed=1).fit(x, y)
        path = tmp_path / "forest.npz"
        model.save(path)
        back = RandomForestFlowClassifier.load(path)
        np.testing.assert_array_equal(back.member_proba(x), model.member_proba(x))

    def test_foreign_file_rejected(self, tmp_path):
        path = tmp_path / "junk.npz"
        np.savez(path, c=np.zeros(1))
        with pytest.raises(DataError):
            RandomForestFlowClassifier.load(path)
