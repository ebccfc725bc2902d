"""Tests for dataset generation, splitting, persistence and augmentation."""

import json

import numpy as np
import pytest

from sslcalib.core.tensor import Tensor, backward, cross_entropy, one_hot, sgd_step
from sslcalib.data.augment import AugmentationPolicy, augment_strong, augment_weak
from sslcalib.data.dataset import (
    DatasetError,
    load_csv_dataset,
    make_blobs,
    make_two_moons,
    read_csv,
    read_dataset,
    split,
    write_dataset,
)
from sslcalib.nn import MlpClassifier, mlp_forward, predict_proba


class TestGenerators:
    def test_two_moons_balanced(self):
        ds = make_two_moons(101, noise=0.1, seed=0)
        assert ds.n_examples == 101
        assert ds.n_features == 2
        assert np.bincount(ds.labels).tolist() == [51, 50]

    def test_deterministic_in_seed(self):
        a, b = make_two_moons(50, seed=3), make_two_moons(50, seed=3)
        np.testing.assert_array_equal(a.features, b.features)
        c = make_two_moons(50, seed=4)
        assert not np.allclose(a.features, c.features)

    def test_blobs_centers_apart(self):
        ds = make_blobs(300, centers=3, spread=0.1, seed=0, separation=6.0)
        means = np.stack([ds.features[ds.labels == c].mean(axis=0) for c in range(3)])
        dists = np.linalg.norm(means[:, None] - means[None], axis=-1)
        assert dists[np.triu_indices(3, 1)] == pytest.approx(np.full(3, 6.0), abs=0.2)

    def test_too_small(self):
        with pytest.raises(DatasetError):
            make_two_moons(7)
        with pytest.raises(DatasetError):
            make_blobs(11, centers=3)

    def test_everything_starts_unlabeled(self):
        counts = make_two_moons(40).counts()
        assert counts == {"labeled": 0, "unlabeled": 40, "validation": 0, "test": 0}


class TestSplit:
    def test_counts_and_disjoint(self, moons):
        counts = moons.counts()
        assert counts == {"labeled": 8, "unlabeled": 132, "validation": 40, "test": 60}
        all_ids = np.concatenate([moons.ids_for(s) for s in counts])
        assert np.unique(all_ids).shape[0] == moons.n_examples

    def test_stratified_labels(self, blobs):
        assert np.bincount(blobs.labeled().labels).tolist() == [5, 5, 5]

    def test_unlabeled_view_has_no_labels(self, moons):
        assert not hasattr(moons.unlabeled(), "labels")

    def test_infeasible(self):
        ds = make_two_moons(40)
        with pytest.raises(DatasetError):
            split(ds, 25, 0, 0)
        with pytest.raises(DatasetError):
            split(ds, 4, 20, 20)

    def test_unknown_split(self, moons):
        with pytest.raises(ValueError):
            moons.ids_for("train")


class TestPersistence:
    def test_round_trip(self, moons, tmp_path):
        write_dataset(moons, tmp_path, extra={"config": {"dataset.kind": "two_moons"}})
        loaded = read_dataset(tmp_path)
        np.testing.assert_array_equal(loaded.features, moons.features)
        np.testing.assert_array_equal(loaded.labels, moons.labels)
        np.testing.assert_array_equal(loaded.split_codes, moons.split_codes)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["config"] == {"dataset.kind": "two_moons"}

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetError, match="split manifest not found"):
            read_dataset(tmp_path)

    @staticmethod
    def edit_manifest(directory, edit):
        path = directory / "manifest.json"
        manifest = json.loads(path.read_text())
        edit(manifest["splits"])
        path.write_text(json.dumps(manifest))

    @pytest.mark.parametrize("bad_id, message", [
        (-1, "outside"),
        (10**6, "outside"),
        (1.5, "non-integer"),
        (True, "non-integer"),
    ])
    def test_bad_manifest_id(self, moons, tmp_path, bad_id, message):
        write_dataset(moons, tmp_path)
        self.edit_manifest(tmp_path, lambda splits: splits["test"].append(bad_id))
        with pytest.raises(DatasetError, match=message):
            read_dataset(tmp_path)

    def test_last_valid_id_is_accepted(self, moons, tmp_path):
        write_dataset(moons, tmp_path)
        last = moons.n_examples - 1
        assert read_dataset(tmp_path).split_codes[last] == moons.split_codes[last]

    def test_id_in_two_splits(self, moons, tmp_path):
        write_dataset(moons, tmp_path)
        self.edit_manifest(tmp_path, lambda splits: splits["test"].append(splits["labeled"][0]))
        with pytest.raises(DatasetError, match="more than once"):
            read_dataset(tmp_path)

    def test_repeated_id_in_one_split(self, moons, tmp_path):
        write_dataset(moons, tmp_path)
        self.edit_manifest(tmp_path, lambda splits: splits["labeled"].append(splits["labeled"][0]))
        with pytest.raises(DatasetError, match="more than once"):
            read_dataset(tmp_path)

    def test_unknown_split_name(self, moons, tmp_path):
        write_dataset(moons, tmp_path)
        self.edit_manifest(tmp_path, lambda splits: splits.update(holdout=splits.pop("test")))
        with pytest.raises(DatasetError, match="unknown split 'holdout'"):
            read_dataset(tmp_path)

    def test_bad_csv_row(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("f0,label\n1.0,0\nabc,1\n")
        with pytest.raises(DatasetError, match=":3:"):
            read_csv(path)

    def test_csv_dataset(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("a,label,b\n1.0,0,2.0\n3.0,2,4.0\n")
        ds = load_csv_dataset(path)
        assert ds.n_classes == 3
        np.testing.assert_array_equal(ds.features, [[1.0, 2.0], [3.0, 4.0]])


class TestAugmentation:
    def test_strong_is_noisier(self, rng):
        x = np.zeros((4000, 2))
        policy = AugmentationPolicy()
        weak = augment_weak(x, policy, rng)
        strong = augment_strong(x, policy, rng)
        assert weak.std() == pytest.approx(0.05, rel=0.1)
        assert np.mean(strong == 0.0) == pytest.approx(0.2, abs=0.03)
        assert strong[strong != 0].std() == pytest.approx(0.15, rel=0.1)

    def test_input_untouched(self, rng):
        x = np.ones((3, 2))
        augment_strong(x, AugmentationPolicy(), rng)
        np.testing.assert_array_equal(x, 1.0)

    def test_invalid_policy(self):
        with pytest.raises(ValueError):
            AugmentationPolicy(weak_noise_sigma=0.3, strong_noise_sigma=0.1)
        with pytest.raises(ValueError):
            AugmentationPolicy(strong_mask_prob=1.0)


class TestDataOracles:
    def test_blobs_without_spread_sit_on_centers(self):
        ds = make_blobs(30, centers=3, spread=0.0, seed=2)
        for c in range(3):
            members = ds.features[ds.labels == c]
            assert np.all(members == members[0])

    def test_small_split(self):
        ds = split(make_two_moons(40, seed=0), 2, 0, 10)
        assert ds.counts()["labeled"] == 4

    def test_identity_policy(self, rng):
        x = rng.normal(size=(5, 3))
        policy = AugmentationPolicy(0.0, 0.0, 0.0)
        np.testing.assert_array_equal(augment_weak(x, policy, rng), x)
        np.testing.assert_array_equal(augment_strong(x, policy, rng), x)

    def test_heavy_masking_rate(self, rng):
        out = augment_strong(np.ones((1, 10**4)), AugmentationPolicy(0.0, 0.0, 0.99), rng)
        assert np.mean(out == 0.0) == pytest.approx(0.99, abs=0.01)

    def test_noise_free_moons_are_separable(self):
        ds = make_two_moons(400, noise=0.0, seed=7)
        model = MlpClassifier.init(2, 2, np.random.default_rng(0), hidden=(32, 32))
        targets = one_hot(ds.labels, 2)
        for _ in range(5000):
            backward(cross_entropy(mlp_forward(model, Tensor(ds.features)), targets))
            sgd_step(model.parameters(), 0.3)
        error = np.mean(predict_proba(model, ds.features).argmax(axis=1) != ds.labels)
        assert error <= 0.02

    def test_weak_view_keeps_decisions(self):
        ds = make_blobs(600, centers=3, spread=1.0, seed=4, separation=6.0)
        model = MlpClassifier.init(2, 3, np.random.default_rng(1), hidden=(16,))
        targets = one_hot(ds.labels, 3)
        for _ in range(500):
            backward(cross_entropy(mlp_forward(model, Tensor(ds.features)), targets))
            sgd_step(model.parameters(), 0.1)
        before = predict_proba(model, ds.features).argmax(axis=1)
        weak = augment_weak(ds.features, AugmentationPolicy(), np.random.default_rng(2))
        after = predict_proba(model, weak).argmax(axis=1)
        assert np.mean(before == after) >= 0.95
