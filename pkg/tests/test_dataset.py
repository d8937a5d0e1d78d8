"""Dataset generator: count profile, sampling, splits, file round trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

import subtail as st

from oracles import unit_rows


def cfg(**kw):
    base = dict(num_classes=10, head_count=40, imbalance_ratio=8.0, seed=3)
    base.update(kw)
    return st.GeneratorConfig(**base)


class TestCountProfile:
    def test_balanced_when_ratio_one(self):
        counts = st.class_count_profile(cfg(num_classes=2, head_count=10, imbalance_ratio=1))
        assert counts.tolist() == [10, 10]

    def test_cifar_analog_counts(self):
        # frozen from an out-of-band evaluation of the exponential profile:
        # max(1, floor(500 * 100 ** (-k / 99))) summed over k = 0..99
        counts = st.class_count_profile(cfg(num_classes=100, head_count=500, imbalance_ratio=100))
        assert counts[0] == 500
        assert counts[-1] == 5
        assert int(counts.sum()) == 10847

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            cfg(num_classes=1, head_count=17, imbalance_ratio=1)

    @given(
        c=hst.integers(min_value=2, max_value=60),
        head=hst.integers(min_value=1, max_value=400),
        ratio=hst.floats(min_value=1.0, max_value=500.0, allow_nan=False),
    )
    @settings(max_examples=60, deadline=None)
    def test_profile_monotone_and_positive(self, c, head, ratio):
        ratio = min(ratio, float(head))
        counts = st.class_count_profile(cfg(num_classes=c, head_count=head, imbalance_ratio=ratio))
        assert counts.shape == (c,)
        assert counts[0] == head
        assert np.all(counts >= 1)
        assert np.all(np.diff(counts) <= 0)


class TestGenerate:
    def test_shapes_and_labels(self):
        ds = st.generate(cfg())
        counts = st.class_count_profile(cfg())
        assert ds.num_samples == int(counts.sum())
        assert ds.input_dim == 8
        assert ds.num_classes == 10
        assert np.array_equal(np.bincount(ds.labels, minlength=10), counts)
        assert ds.true_subclusters is not None
        assert ds.true_subclusters.shape == (ds.num_samples,)

    def test_determinism(self):
        a = st.generate(cfg(seed=11))
        b = st.generate(cfg(seed=11))
        assert a == b
        c = st.generate(cfg(seed=12))
        assert not np.array_equal(a.inputs, c.inputs)

    def test_subcluster_ids_refine_classes(self):
        config = cfg(subclusters_per_class=3)
        ds = st.generate(config)
        for sub_id in np.unique(ds.true_subclusters):
            owners = np.unique(ds.labels[ds.true_subclusters == sub_id])
            assert len(owners) == 1
        # classes too small to hold every component collapse to one
        for c, n in enumerate(ds.class_counts):
            subs = np.unique(ds.true_subclusters[ds.labels == c])
            assert len(subs) <= config.subclusters_per_class
            if n < 2 * config.subclusters_per_class:
                assert len(subs) == 1

    def test_head_classes_use_multiple_components(self):
        ds = st.generate(cfg(num_classes=4, head_count=60, imbalance_ratio=2, subclusters_per_class=3))
        subs = np.unique(ds.true_subclusters[ds.labels == 0])
        assert len(subs) == 3

    def test_separation_moves_class_means_apart(self):
        near = st.generate(cfg(separation=0.5, noise_sigma=0.1))
        far = st.generate(cfg(separation=20.0, noise_sigma=0.1))

        def mean_gap(ds):
            means = np.stack([ds.inputs[ds.labels == c].mean(axis=0) for c in range(ds.num_classes)])
            d = np.linalg.norm(means[:, None] - means[None, :], axis=-1)
            return d[~np.eye(len(means), dtype=bool)].mean()

        assert mean_gap(far) > mean_gap(near)

    def test_eval_set_is_balanced_and_disjoint_stream(self):
        ev = st.generate_eval(cfg(), per_class=7)
        assert np.all(ev.class_counts == 7)
        assert ev.num_samples == 70
        tr = st.generate(cfg())
        assert not np.array_equal(ev.inputs[:5], tr.inputs[:5])

    def test_eval_shares_mixture_with_train(self):
        config = cfg(separation=25.0, noise_sigma=0.2)
        tr = st.generate(config)
        ev = st.generate_eval(config, per_class=50)
        for c in range(config.num_classes):
            mt = tr.inputs[tr.labels == c].mean(axis=0)
            me = ev.inputs[ev.labels == c].mean(axis=0)
            gap = np.linalg.norm(mt - me)
            others = min(
                np.linalg.norm(mt - ev.inputs[ev.labels == o].mean(axis=0))
                for o in range(config.num_classes)
                if o != c
            )
            assert gap < others

    def test_validation_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            st.GeneratorConfig(num_classes=0, head_count=10, imbalance_ratio=2)
        with pytest.raises(ValueError):
            st.GeneratorConfig(num_classes=2, head_count=10, imbalance_ratio=0.5)
        with pytest.raises(ValueError):
            st.generate_eval(cfg(), per_class=0)


class TestDatasetType:
    def test_rejects_inconsistent_counts(self):
        x = unit_rows(np.random.default_rng(0), 4, 3)
        with pytest.raises(ValueError):
            st.LongTailDataset(x, np.array([0, 0, 1, 1]), np.array([3, 1]))

    def test_rejects_increasing_counts(self):
        x = unit_rows(np.random.default_rng(0), 4, 3)
        with pytest.raises(ValueError):
            st.LongTailDataset(x, np.array([0, 1, 1, 1]), np.array([1, 3]))

    def test_imbalance_ratio(self):
        ds = st.generate(cfg(num_classes=3, head_count=40, imbalance_ratio=4))
        assert st.imbalance_ratio(ds) == ds.class_counts[0] / ds.class_counts[-1]


class TestSplits:
    def test_threshold_boundaries(self):
        x = unit_rows(np.random.default_rng(1), 275, 2)
        counts = np.array([150, 100, 20, 5])
        labels = np.repeat(np.arange(4), counts)
        ds = st.LongTailDataset(x, labels, counts)
        split = st.split_labels(ds, many_threshold=100, few_threshold=20)
        # Many strictly above 100, Few strictly below 20, Medium inclusive
        assert split.tolist() == ["Many", "Medium", "Medium", "Few"]

    def test_all_classes_assigned(self):
        ds = st.generate(cfg())
        split = st.split_labels(ds, 100, 20)
        assert set(split.tolist()) <= {"Many", "Medium", "Few"}
        assert split.shape == (ds.num_classes,)


class TestRoundTrip:
    @pytest.mark.parametrize("binary", [False, True])
    def test_save_load_bit_exact(self, tmp_path, binary):
        ds = st.generate(cfg())
        p = tmp_path / ("ds.bin" if binary else "ds.csv")
        st.save_dataset(ds, p, binary=binary)
        back = st.load_dataset(p)
        assert back == ds
        assert back.inputs.dtype == np.float64
        assert np.array_equal(back.inputs, ds.inputs)

    def test_round_trip_without_ground_truth(self, tmp_path):
        ds = st.generate(cfg())
        bare = st.LongTailDataset(ds.inputs, ds.labels, ds.class_counts)
        p = tmp_path / "bare.csv"
        st.save_dataset(bare, p)
        back = st.load_dataset(p)
        assert back.true_subclusters is None
        assert back == bare

    def test_malformed_header(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("not-a-dataset v9\n")
        with pytest.raises(st.DatasetFormatError):
            st.load_dataset(p)

    def test_truncated_rows(self, tmp_path):
        ds = st.generate(cfg(num_classes=2, head_count=5, imbalance_ratio=1))
        p = tmp_path / "ds.csv"
        st.save_dataset(ds, p)
        lines = p.read_text().splitlines()
        p.write_text("\n".join(lines[:-2]) + "\n")
        with pytest.raises(st.DatasetFormatError):
            st.load_dataset(p)

    def test_label_out_of_range(self, tmp_path):
        ds = st.generate(cfg(num_classes=2, head_count=5, imbalance_ratio=1))
        p = tmp_path / "ds.csv"
        st.save_dataset(ds, p)
        text = p.read_text()
        # a label column value beyond the declared class count
        lines = text.splitlines()
        parts = lines[1].split(",")
        parts[0] = "7"
        lines[1] = ",".join(parts)
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(st.DatasetFormatError):
            st.load_dataset(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            st.load_dataset(tmp_path / "nope.csv")
