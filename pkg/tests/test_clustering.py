"""Capacity-constrained clustering: invariants, hand cases, baselines, files."""

import itertools

import numpy as np
import pytest

import subtail as st

from oracles import unit_rows


def circle(*angles_deg):
    a = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    return np.stack([np.cos(a), np.sin(a)], axis=1)


def random_ds(rng, num_classes=4, max_count=30, d=5):
    counts = np.sort(rng.integers(1, max_count + 1, size=num_classes))[::-1].copy()
    labels = np.repeat(np.arange(num_classes), counts)
    x = unit_rows(rng, int(counts.sum()), d)
    return st.LongTailDataset(x, labels, counts), x


class TestCapacityThreshold:
    def test_floor_dominates_small_tail(self):
        assert st.capacity_threshold(tail_count=5, delta=10) == 10

    def test_tail_dominates_large_tail(self):
        assert st.capacity_threshold(tail_count=50, delta=10) == 50

    def test_tie(self):
        assert st.capacity_threshold(tail_count=10, delta=10) == 10


class TestClusterClass:
    def test_antipodal_pairs_recovered(self):
        # two tight pairs on opposite sides of the circle; with capacity 2
        # the only sensible 2+2 split is the two pairs
        feats = circle(0, 8, 180, 188)
        assign, centers = st.cluster_class(feats, capacity=2, config=st.ClusterConfig())
        assert assign[0] == assign[1]
        assert assign[2] == assign[3]
        assert assign[0] != assign[2]
        assert centers.shape == (2, 2)
        assert np.allclose(np.linalg.norm(centers, axis=1), 1.0, atol=1e-12)

    def test_capacity_plus_one_respects_cap(self):
        rng = np.random.default_rng(0)
        feats = unit_rows(rng, 7, 3)
        assign, centers = st.cluster_class(feats, capacity=6, config=st.ClusterConfig())
        sizes = np.bincount(assign)
        assert len(sizes) == 2
        assert sizes.max() <= 6
        assert sizes.min() >= 1

    def test_rejects_class_at_or_below_capacity(self):
        rng = np.random.default_rng(1)
        with pytest.raises(ValueError):
            st.cluster_class(unit_rows(rng, 5, 3), capacity=5, config=st.ClusterConfig())

    def test_rejects_non_unit_features(self):
        rng = np.random.default_rng(2)
        feats = unit_rows(rng, 8, 3) * 1.01
        with pytest.raises(ValueError):
            st.cluster_class(feats, capacity=4, config=st.ClusterConfig())

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        feats = unit_rows(rng, 23, 4)
        a1, c1 = st.cluster_class(feats, capacity=6, config=st.ClusterConfig())
        a2, c2 = st.cluster_class(feats, capacity=6, config=st.ClusterConfig())
        assert np.array_equal(a1, a2)
        assert np.array_equal(c1, c2)

    def test_sizes_capped_never_empty(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            n = int(rng.integers(7, 60))
            cap = int(rng.integers(3, 12))
            if n <= cap:
                continue
            feats = unit_rows(rng, n, 4)
            assign, centers = st.cluster_class(feats, capacity=cap, config=st.ClusterConfig())
            m = int(np.ceil(n / cap))
            sizes = np.bincount(assign, minlength=m)
            assert len(np.unique(assign)) == m
            assert sizes.max() <= cap
            assert sizes.min() >= 1


class TestClusterDataset:
    def test_bypass_when_all_classes_small(self):
        rng = np.random.default_rng(5)
        ds, x = random_ds(rng, num_classes=3, max_count=8)
        model = st.cluster_dataset(x, ds, st.ClusterConfig(delta=10))
        assert model.num_subclasses == 3
        assert np.array_equal(model.assignments, ds.labels)
        assert np.array_equal(model.per_class_cluster_count, np.ones(3, dtype=np.int64))

    def test_subclass_count_formula_on_longtail_profile(self):
        cfg = st.GeneratorConfig(num_classes=30, head_count=80, imbalance_ratio=16, seed=7)
        ds = st.generate(cfg)
        feats = ds.inputs / np.linalg.norm(ds.inputs, axis=1, keepdims=True)
        model = st.cluster_dataset(feats, ds, st.ClusterConfig(delta=10))
        m = st.capacity_threshold(int(ds.class_counts[-1]), 10)
        expected = sum(
            int(np.ceil(n / m)) if n > m else 1 for n in ds.class_counts.tolist()
        )
        assert model.capacity == m
        assert model.num_subclasses == expected

    def test_purity_coverage_and_cap(self):
        rng = np.random.default_rng(6)
        for trial in range(10):
            ds, x = random_ds(rng, num_classes=5, max_count=40)
            model = st.cluster_dataset(x, ds, st.ClusterConfig(delta=6))
            assert model.assignments.shape == (ds.num_samples,)
            # every subclass belongs to exactly one class and matches labels
            assert np.array_equal(
                model.subclass_of_class[model.assignments], ds.labels
            )
            sizes = model.subclass_sizes()
            assert sizes.min() >= 1
            assert sizes.max() <= model.capacity
            assert sizes.sum() == ds.num_samples

    def test_subclass_ids_are_class_major(self):
        rng = np.random.default_rng(7)
        ds, x = random_ds(rng, num_classes=4, max_count=25)
        model = st.cluster_dataset(x, ds, st.ClusterConfig(delta=5))
        # ids grouped by class in class order
        owner = model.subclass_of_class
        assert np.all(np.diff(owner) >= 0)
        counts = np.bincount(owner, minlength=ds.num_classes)
        assert np.array_equal(counts, model.per_class_cluster_count)

    def test_deterministic_and_feature_sensitive(self):
        rng = np.random.default_rng(8)
        ds, x = random_ds(rng, num_classes=4, max_count=30)
        m1 = st.cluster_dataset(x, ds, st.ClusterConfig(delta=5))
        m2 = st.cluster_dataset(x, ds, st.ClusterConfig(delta=5))
        assert np.array_equal(m1.assignments, m2.assignments)
        assert np.array_equal(m1.centers, m2.centers)

    def test_rejects_row_mismatch(self):
        rng = np.random.default_rng(9)
        ds, x = random_ds(rng)
        with pytest.raises(ValueError):
            st.cluster_dataset(x[:-1], ds, st.ClusterConfig())


class TestStats:
    def test_size_stats_hand_case(self):
        s = st.size_stats([5, 5, 2])
        assert s.max_size == 5
        assert s.min_size == 2
        assert s.mean_size == pytest.approx(4.0)
        assert s.std_size == pytest.approx(np.std([5, 5, 2]))
        assert s.size_imbalance_ratio == pytest.approx(2.5)

    def test_cluster_stats_excludes_singleton_classes_by_default(self):
        rng = np.random.default_rng(10)
        counts = np.array([30, 3])
        labels = np.repeat([0, 1], counts)
        ds = st.LongTailDataset(unit_rows(rng, 33, 4), labels, counts)
        model = st.cluster_dataset(ds.inputs / np.linalg.norm(ds.inputs, axis=1, keepdims=True), ds, st.ClusterConfig(delta=10))
        scoped = st.cluster_stats(model)
        full = st.cluster_stats(model, include_singleton_classes=True)
        assert scoped is not None and full is not None
        # the tail class's size-3 pass-through subclass only counts when asked
        assert full.min_size == 3
        assert scoped.min_size > 3 or scoped.max_size <= model.capacity

    def test_cluster_stats_none_when_nothing_clustered(self):
        rng = np.random.default_rng(11)
        ds, x = random_ds(rng, num_classes=3, max_count=6)
        model = st.cluster_dataset(x, ds, st.ClusterConfig(delta=10))
        assert st.cluster_stats(model) is None
        assert st.cluster_stats(model, include_singleton_classes=True) is not None


class TestBaselineKmeans:
    def test_single_cluster(self):
        rng = np.random.default_rng(12)
        feats = unit_rows(rng, 9, 3)
        assign = st.baseline_kmeans(feats, k=1, seed=0)
        assert np.all(assign == 0)

    def test_recovers_separated_blobs_optimally(self):
        rng = np.random.default_rng(13)
        base = np.array([1.0, 0.0, 0.0])
        other = np.array([-1.0, 0.0, 0.0])
        pts = np.concatenate([
            base + 0.05 * rng.normal(size=(5, 3)),
            other + 0.05 * rng.normal(size=(5, 3)),
        ])
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        assign = st.baseline_kmeans(pts, k=2, seed=1)

        def objective(mask):
            total = 0.0
            for side in (mask, ~mask):
                if side.sum() == 0:
                    return np.inf
                mu = pts[side].mean(axis=0)
                total += float(np.sum((pts[side] - mu) ** 2))
            return total

        best = min(
            objective(np.array(bits, dtype=bool))
            for bits in itertools.product([False, True], repeat=10)
            if any(bits) and not all(bits)
        )
        got = objective(assign == 0)
        assert got == pytest.approx(best, rel=1e-9)

    def test_capacity_version_no_less_balanced_on_skewed_blobs(self):
        rng = np.random.default_rng(14)
        big = np.array([1.0, 0.0, 0.0]) + 0.1 * rng.normal(size=(18, 3))
        small = np.array([-1.0, 0.0, 0.0]) + 0.1 * rng.normal(size=(2, 3))
        pts = np.concatenate([big, small])
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)

        lloyd = st.baseline_kmeans(pts, k=2, seed=2)
        ratio_lloyd = st.size_stats(np.bincount(lloyd, minlength=2)).size_imbalance_ratio
        capped, _ = st.cluster_class(pts, capacity=10, config=st.ClusterConfig())
        ratio_capped = st.size_stats(np.bincount(capped, minlength=2)).size_imbalance_ratio
        assert ratio_capped <= ratio_lloyd

    def test_seeded_determinism(self):
        rng = np.random.default_rng(15)
        feats = unit_rows(rng, 20, 4)
        a = st.baseline_kmeans(feats, k=3, seed=5)
        b = st.baseline_kmeans(feats, k=3, seed=5)
        assert np.array_equal(a, b)

    def test_rejects_bad_k(self):
        rng = np.random.default_rng(16)
        feats = unit_rows(rng, 4, 3)
        with pytest.raises(ValueError):
            st.baseline_kmeans(feats, k=0, seed=0)
        with pytest.raises(ValueError):
            st.baseline_kmeans(feats, k=5, seed=0)


class TestRoundTrip:
    def test_save_load_bit_exact(self, tmp_path):
        rng = np.random.default_rng(17)
        ds, x = random_ds(rng, num_classes=4, max_count=30)
        model = st.cluster_dataset(x, ds, st.ClusterConfig(delta=5))
        p = tmp_path / "clusters.csv"
        st.save_clusters(model, p)
        back = st.load_clusters(p)
        assert np.array_equal(back.assignments, model.assignments)
        assert np.array_equal(back.subclass_of_class, model.subclass_of_class)
        assert np.array_equal(back.centers, model.centers)
        assert back.capacity == model.capacity
        assert np.array_equal(back.per_class_cluster_count, model.per_class_cluster_count)

    def test_malformed_file_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("sample_index,class\n0,0\n")
        with pytest.raises(st.ClusterFormatError):
            st.load_clusters(p)

    def test_truncated_file_rejected(self, tmp_path):
        rng = np.random.default_rng(18)
        ds, x = random_ds(rng, num_classes=3, max_count=20)
        model = st.cluster_dataset(x, ds, st.ClusterConfig(delta=5))
        p = tmp_path / "clusters.csv"
        st.save_clusters(model, p)
        lines = p.read_text().splitlines()
        p.write_text("\n".join(lines[: len(lines) // 2]) + "\n")
        with pytest.raises(st.ClusterFormatError):
            st.load_clusters(p)
