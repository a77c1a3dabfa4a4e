import numpy as np
import pytest

from metareweight.data import LabeledDataset
from metareweight.noise import (NoiseKind, NoiseSpec, TransitionMatrix,
                                build_transition, corrupt, majority_feasibility)
from metareweight.numkit import Rng


class TestNoiseSpec:
    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            NoiseSpec(NoiseKind.UNIFORM, 1.0, 5)
        with pytest.raises(ValueError):
            NoiseSpec(NoiseKind.UNIFORM, -0.1, 5)

    def test_rejects_too_few_classes(self):
        with pytest.raises(ValueError):
            NoiseSpec(NoiseKind.UNIFORM, 0.2, 1)
        with pytest.raises(ValueError):
            NoiseSpec(NoiseKind.FLIP2, 0.2, 2)


class TestBuildTransition:
    def test_uniform_closed_form(self):
        t = build_transition(NoiseSpec(NoiseKind.UNIFORM, 0.4, 5, seed=3))
        assert np.allclose(np.diag(t.probs), 0.68, atol=1e-12)
        off = t.probs[~np.eye(5, dtype=bool)]
        assert np.allclose(off, 0.08, atol=1e-12)

    def test_flip_structure(self):
        t = build_transition(NoiseSpec(NoiseKind.FLIP, 0.4, 5, seed=3))
        assert np.allclose(np.diag(t.probs), 0.6, atol=1e-15)
        for y in range(5):
            row = t.probs[y].copy()
            row[y] = 0.0
            hot = np.nonzero(row)[0]
            assert hot.size == 1
            assert row[hot[0]] == pytest.approx(0.4, abs=1e-15)
            assert hot[0] != y
            assert hot[0] == t.targets[y]

    def test_flip2_structure(self):
        t = build_transition(NoiseSpec(NoiseKind.FLIP2, 0.4, 5, seed=3))
        assert np.allclose(np.diag(t.probs), 0.6, atol=1e-15)
        for y in range(5):
            row = t.probs[y].copy()
            row[y] = 0.0
            hot = np.nonzero(row)[0]
            assert hot.size == 2
            assert np.allclose(row[hot], 0.2, atol=1e-15)
            assert y not in hot
            assert set(hot) == set(t.targets[y])

    @pytest.mark.parametrize("kind", list(NoiseKind))
    def test_zero_rate_is_identity(self, kind):
        t = build_transition(NoiseSpec(kind, 0.0, 4, seed=1))
        assert np.array_equal(t.probs, np.eye(4))

    @pytest.mark.parametrize("kind", list(NoiseKind))
    @pytest.mark.parametrize("rate", [0.0, 0.15, 0.4, 0.7])
    def test_rows_stochastic(self, kind, rate):
        t = build_transition(NoiseSpec(kind, rate, 6, seed=9))
        assert np.all(np.abs(t.probs.sum(axis=1) - 1.0) <= 1e-12)
        assert np.all(t.probs >= 0.0)

    def test_target_map_deterministic_per_seed(self):
        a = build_transition(NoiseSpec(NoiseKind.FLIP, 0.3, 7, seed=11))
        b = build_transition(NoiseSpec(NoiseKind.FLIP, 0.3, 7, seed=11))
        c = build_transition(NoiseSpec(NoiseKind.FLIP, 0.3, 7, seed=12))
        assert np.array_equal(a.targets, b.targets)
        assert not np.array_equal(a.targets, c.targets)

    def test_invalid_matrix_rejected(self):
        with pytest.raises(ValueError, match="sum"):
            TransitionMatrix(2, np.array([[0.5, 0.4], [0.0, 1.0]]))
        with pytest.raises(ValueError, match="nonnegative"):
            TransitionMatrix(2, np.array([[1.5, -0.5], [0.0, 1.0]]))

    def test_csv_round_trip(self, tmp_path):
        t = build_transition(NoiseSpec(NoiseKind.FLIP2, 0.4, 5, seed=3))
        path = tmp_path / "matrix.csv"
        t.save_csv(path)
        loaded = TransitionMatrix.load_csv(path)
        assert loaded.num_classes == 5
        assert np.array_equal(loaded.probs, t.probs)


def _class_balanced_dataset(n, k):
    labels = np.arange(n, dtype=np.int64) % k
    return LabeledDataset(np.zeros((n, 2)), labels, k)


class TestCorrupt:
    def test_identity_matrix_is_noop(self):
        ds = _class_balanced_dataset(500, 4)
        t = build_transition(NoiseSpec(NoiseKind.UNIFORM, 0.0, 4))
        out = corrupt(ds, t, Rng(5))
        assert np.array_equal(out.observed_labels, ds.labels)
        assert not out.is_corrupted.any()
        assert np.array_equal(out.features, ds.features)

    def test_uniform_retention_rate(self):
        # retention must match (1-eta)+eta/K, not (1-eta): the corruption
        # draw can land back on the true class
        ds = _class_balanced_dataset(100_000, 5)
        t = build_transition(NoiseSpec(NoiseKind.UNIFORM, 0.4, 5))
        out = corrupt(ds, t, Rng(7))
        retained = np.mean(out.observed_labels == out.true_labels)
        assert abs(retained - 0.68) < 0.01
        assert not np.allclose(retained, 0.6, atol=0.01)

    def test_flip2_mass_on_two_columns(self):
        ds = _class_balanced_dataset(100_000, 5)
        t = build_transition(NoiseSpec(NoiseKind.FLIP2, 0.4, 5, seed=2))
        out = corrupt(ds, t, Rng(8))
        for y in range(5):
            mask = out.true_labels == y
            freq = np.bincount(out.observed_labels[mask], minlength=5) / mask.sum()
            hot = np.argsort(freq)[-3:]
            assert y in hot  # true class plus the two targets carry all mass
            others = np.setdiff1d(np.arange(5), hot)
            assert np.all(freq[others] == 0.0)
            for target in t.targets[y]:
                assert abs(freq[target] - 0.2) < 0.01

    def test_marginals_within_three_standard_errors(self):
        ds = _class_balanced_dataset(100_000, 5)
        rng = Rng(31)
        for i, spec in enumerate([NoiseSpec(NoiseKind.UNIFORM, 0.4, 5, seed=1),
                                  NoiseSpec(NoiseKind.FLIP, 0.3, 5, seed=1)]):
            t = build_transition(spec)
            out = corrupt(ds, t, rng.spawn(i))
            for y in range(5):
                mask = out.true_labels == y
                n_y = mask.sum()
                freq = np.bincount(out.observed_labels[mask], minlength=5) / n_y
                for c in range(5):
                    p = t.probs[y, c]
                    se = np.sqrt(p * (1 - p) / n_y)
                    if se == 0.0:
                        assert freq[c] == p
                    else:
                        assert abs(freq[c] - p) <= 3 * se

    def test_seed_determinism(self):
        ds = _class_balanced_dataset(1000, 5)
        t = build_transition(NoiseSpec(NoiseKind.FLIP, 0.3, 5, seed=4))
        a = corrupt(ds, t, Rng(6))
        b = corrupt(ds, t, Rng(6))
        assert np.array_equal(a.observed_labels, b.observed_labels)

    def test_flags_mark_effective_mislabels(self):
        ds = _class_balanced_dataset(10_000, 3)
        t = build_transition(NoiseSpec(NoiseKind.UNIFORM, 0.5, 3))
        out = corrupt(ds, t, Rng(9))
        assert np.array_equal(out.is_corrupted, out.observed_labels != out.true_labels)


class TestMajorityFeasibility:
    def test_flip_thresholds(self):
        assert majority_feasibility(NoiseSpec(NoiseKind.FLIP, 0.3, 5)) == "ok"
        assert majority_feasibility(NoiseSpec(NoiseKind.FLIP, 0.5, 5)) == "warning"

    def test_flip2_thresholds(self):
        # the two targets carry rate/2 each, so the cutover is 2/3
        assert majority_feasibility(NoiseSpec(NoiseKind.FLIP2, 0.5, 5)) == "ok"
        assert majority_feasibility(NoiseSpec(NoiseKind.FLIP2, 0.67, 5)) == "warning"

    def test_uniform_never_warns(self):
        assert majority_feasibility(NoiseSpec(NoiseKind.UNIFORM, 0.7, 5)) == "ok"
        assert majority_feasibility(NoiseSpec(NoiseKind.UNIFORM, 0.99, 5)) == "ok"
