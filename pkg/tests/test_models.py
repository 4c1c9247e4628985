import json
import math

import numpy as np
import pytest

from approxlab import models
from approxlab.corpus import Label
from approxlab.features import FeatureSpace, FeatureVector, SpaceMismatchError
from approxlab.models import ModelKind, TrainConfig


def fv(values, space=FeatureSpace.PIXEL_GRID):
    return FeatureVector(np.asarray(values, dtype=np.float64), space)


def toy_separable(n=40, dim=2, seed=0):
    """Class = sign of the first coordinate, with a margin around zero."""
    rng = np.random.default_rng(seed)
    data = []
    for _ in range(n):
        x = rng.normal(size=dim)
        sign = 1.0 if rng.random() > 0.5 else -1.0
        x[0] = sign * rng.uniform(0.2, 1.5)
        label = Label.MALWARE if x[0] > 0 else Label.BENIGN
        data.append((fv(x), label))
    return data


def fd_gradient(theta, batch, l2, h=1e-5):
    """Central finite differences, independent of the analytic path."""
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        lu, _ = models.logreg_loss_grad(up, batch, l2=l2)
        ld, _ = models.logreg_loss_grad(down, batch, l2=l2)
        grad[i] = (lu - ld) / (2 * h)
    return grad


class TestLossGrad:
    def test_zero_theta_balanced_batch_is_ln2(self):
        batch = [(fv([1.0, 2.0]), Label.BENIGN), (fv([3.0, -1.0]), Label.MALWARE)]
        loss, _ = models.logreg_loss_grad(np.zeros(3), batch)
        assert loss == pytest.approx(math.log(2), abs=1e-9)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        batch = [
            (fv(rng.normal(size=4)), Label.MALWARE if rng.random() > 0.5 else Label.BENIGN)
            for _ in range(8)
        ]
        theta = rng.normal(size=5)
        _, analytic = models.logreg_loss_grad(theta, batch, l2=1e-3)
        numeric = fd_gradient(theta, batch, l2=1e-3)
        rel = np.abs(analytic - numeric).max() / max(1.0, np.abs(numeric).max())
        assert rel < 1e-4

    def test_dim_mismatch(self):
        batch = [(fv([1.0, 2.0]), Label.BENIGN)]
        with pytest.raises(models.DimMismatchError):
            models.logreg_loss_grad(np.zeros(5), batch)

    def test_empty_batch(self):
        with pytest.raises(models.EmptyDataError):
            models.logreg_loss_grad(np.zeros(3), [])


class TestTrainLogreg:
    def test_separable_reaches_perfect_training_accuracy(self):
        data = toy_separable()
        model = models.train_logreg(data, TrainConfig(seed=1))
        assert models.evaluate(model, data).accuracy == 1.0

    def test_deterministic(self):
        data = toy_separable(seed=3)
        a = models.train_logreg(data, TrainConfig(seed=9))
        b = models.train_logreg(data, TrainConfig(seed=9))
        assert (a.params["weights"] == b.params["weights"]).all()
        assert a.params["bias"] == b.params["bias"]

    def test_loss_decreases(self):
        data = toy_separable(seed=5)
        theta0 = np.zeros(3)
        initial, _ = models.logreg_loss_grad(theta0, data, l2=1e-4)
        model = models.train_logreg(data, TrainConfig(seed=2))
        theta = np.append(model.params["weights"], model.params["bias"])
        final, _ = models.logreg_loss_grad(theta, data, l2=1e-4)
        assert final < initial

    def test_median_loss_drop_over_seeds(self):
        data = toy_separable(n=30, seed=11)
        finals = []
        for seed in range(10):
            model = models.train_logreg(data, TrainConfig(seed=seed, epochs=10))
            theta = np.append(model.params["weights"], model.params["bias"])
            finals.append(models.logreg_loss_grad(theta, data, l2=1e-4)[0])
        assert np.median(finals) < math.log(2)

    def test_single_class_rejected(self):
        data = [(fv([1.0]), Label.BENIGN), (fv([2.0]), Label.BENIGN)]
        with pytest.raises(models.SingleClassError):
            models.train_logreg(data)

    def test_zero_model_predicts_benign(self):
        model = models.PredModel(
            ModelKind.LOGREG,
            "pixel_grid:2",
            {"weights": np.zeros(2), "bias": 0.0},
        )
        assert models.predict(model, fv([0.3, -0.7])) is Label.BENIGN


def brute_force_knn(points, labels, query, k):
    """All-pairs oracle: plain python distances, (dist, index) sort."""
    scored = sorted(
        (math.dist(p, query), i) for i, p in enumerate(points)
    )
    votes = [labels[i] for _, i in scored[:k]]
    ones = sum(1 for v in votes if v is Label.MALWARE)
    return Label.MALWARE if 2 * ones > len(votes) else Label.BENIGN


class TestKnn:
    def test_stored_point_returns_own_label(self):
        data = toy_separable(n=9)
        model = models.train_knn(data, k=1)
        for vec, label in data:
            assert models.predict(model, vec) == label

    def test_even_k_rejected(self):
        with pytest.raises(models.EvenKError):
            models.train_knn(toy_separable(n=10), k=2)

    def test_empty_rejected(self):
        with pytest.raises(models.EmptyDataError):
            models.train_knn([], k=1)

    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_matches_brute_force_oracle(self, k):
        rng = np.random.default_rng(100 + k)
        n = int(rng.integers(20, 200))
        pts = rng.normal(size=(n, 5))
        labels = [Label.MALWARE if rng.random() > 0.5 else Label.BENIGN for _ in range(n)]
        data = [(fv(p), lab) for p, lab in zip(pts, labels)]
        model = models.train_knn(data, k=k)
        for _ in range(30):
            q = rng.normal(size=5)
            assert models.predict(model, fv(q)) == brute_force_knn(
                pts.tolist(), labels, q.tolist(), k
            )

    def test_distance_tie_broken_by_lower_index(self):
        # two stored points equidistant from the query, different labels
        data = [
            (fv([1.0, 0.0]), Label.MALWARE),
            (fv([-1.0, 0.0]), Label.BENIGN),
            (fv([0.0, 5.0]), Label.BENIGN),
        ]
        model = models.train_knn(data, k=1)
        assert models.predict(model, fv([0.0, 0.0])) is Label.MALWARE


class TestTree:
    def test_perfect_axis_split(self):
        data = [
            (fv([0.1, 5.0]), Label.BENIGN),
            (fv([0.2, -3.0]), Label.BENIGN),
            (fv([0.9, 2.0]), Label.MALWARE),
            (fv([0.8, 1.0]), Label.MALWARE),
        ]
        model = models.train_tree(data, max_depth=3)
        nodes = model.params["nodes"]
        assert nodes[0]["feature"] == 0
        assert nodes[0]["threshold"] == pytest.approx(0.5, abs=0.31)
        assert models.evaluate(model, data).accuracy == 1.0
        internal = [n for n in nodes if "leaf" not in n]
        assert len(internal) == 1  # depth-1 tree

    def test_children_partition_parent(self):
        data = toy_separable(n=60, dim=3, seed=8)
        model = models.train_tree(data, max_depth=4)
        nodes = model.params["nodes"]
        X = np.stack([v.values for v, _ in data])

        def rows_reaching(idx, rows):
            node = nodes[idx]
            if "leaf" in node:
                return [rows]
            mask = X[rows, node["feature"]] <= node["threshold"]
            left = rows_reaching(node["left"], rows[mask])
            right = rows_reaching(node["right"], rows[~mask])
            assert len(rows[mask]) + len(rows[~mask]) == len(rows)
            return left + right

        leaves = rows_reaching(0, np.arange(len(data)))
        assert sum(len(r) for r in leaves) == len(data)

    def test_tie_breaks_prefer_lower_feature(self):
        # features 0 and 1 both split perfectly; feature 0 must win
        data = [
            (fv([0.0, 0.0, 0.3]), Label.BENIGN),
            (fv([0.0, 0.0, 0.6]), Label.BENIGN),
            (fv([1.0, 1.0, 0.1]), Label.MALWARE),
            (fv([1.0, 1.0, 0.9]), Label.MALWARE),
        ]
        model = models.train_tree(data, max_depth=2)
        assert model.params["nodes"][0]["feature"] == 0

    def test_benign_tie_break_at_leaf(self):
        data = [
            (fv([0.0]), Label.BENIGN),
            (fv([0.0]), Label.MALWARE),
        ]
        model = models.train_tree(data, max_depth=1)
        assert models.predict(model, fv([0.0])) is Label.BENIGN


class TestForest:
    def test_deterministic_and_accurate_on_separable(self):
        data = toy_separable(n=80, dim=4, seed=13)
        a = models.train_forest(data, n_trees=11, max_depth=4, seed=5)
        b = models.train_forest(data, n_trees=11, max_depth=4, seed=5)
        assert a.params["trees"] == b.params["trees"]
        assert models.evaluate(a, data).accuracy >= 0.9

    def test_records_per_tree_seeds(self):
        data = toy_separable(n=20, seed=2)
        model = models.train_forest(data, n_trees=3, seed=7)
        assert len(model.params["feature_seeds"]) == 3


class TestPredictEvaluate:
    def test_space_mismatch(self):
        model = models.train_knn(toy_separable(n=5), k=1)
        wrong = FeatureVector(np.zeros(256), FeatureSpace.BYTE_HIST)
        with pytest.raises(SpaceMismatchError):
            models.predict(model, wrong)

    def test_constant_model_on_balanced_data(self):
        model = models.PredModel(
            ModelKind.LOGREG, "pixel_grid:1", {"weights": np.zeros(1), "bias": -5.0}
        )
        data = [(fv([0.0]), Label.BENIGN), (fv([1.0]), Label.MALWARE)]
        report = models.evaluate(model, data)
        assert report.accuracy == 0.5
        assert report.per_class_accuracy[Label.BENIGN] == 1.0
        assert report.per_class_accuracy[Label.MALWARE] == 0.0

    def test_empty_eval(self):
        model = models.train_knn(toy_separable(n=5), k=1)
        with pytest.raises(models.EmptyDataError):
            models.evaluate(model, [])


class TestSerialization:
    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_bit_exact_roundtrip(self, tmp_path, kind):
        data = toy_separable(n=24, dim=3, seed=21)
        model = models.train_by_kind(kind, data, seed=3)
        path_a, path_b = tmp_path / "a.json", tmp_path / "b.json"
        models.save_model(model, path_a)
        loaded = models.load_model(path_a)
        models.save_model(loaded, path_b)
        assert path_a.read_bytes() == path_b.read_bytes()
        for vec, _ in data:
            assert models.predict(model, vec) == models.predict(loaded, vec)

    def test_format_guard(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"format": "other/9"}))
        with pytest.raises(ValueError):
            models.load_model(path)

    def test_train_config_digest_recorded(self):
        data = toy_separable(n=10, seed=1)
        model = models.train_logreg(data, TrainConfig(seed=4))
        assert model.train_config_digest == TrainConfig(seed=4).digest()
