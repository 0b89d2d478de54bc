"""Synthetic scenes: determinism, shift semantics, benchmark wiring, disk IO."""

import numpy as np
import pytest

from dualalign.scenes import (DEFAULT_TARGET_SHIFT, NUM_CLASSES, DiskDataset,
                              DomainShift, SceneSpec, apply_shift,
                              generate_domain, make_benchmark, write_benchmark)


class TestGenerateDomain:
    def test_deterministic(self):
        spec = SceneSpec(seed=4)
        a = generate_domain(spec, DomainShift.identity(), 5)
        b = generate_domain(spec, DomainShift.identity(), 5)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.image, y.image)
            np.testing.assert_array_equal(x.labels, y.labels)

    def test_values_in_unit_range(self):
        scenes = generate_domain(SceneSpec(seed=1), DEFAULT_TARGET_SHIFT, 5)
        for s in scenes:
            assert s.image.min() >= 0.0 and s.image.max() <= 1.0
            assert s.image.dtype == np.float32

    def test_every_pixel_labeled(self):
        scenes = generate_domain(SceneSpec(seed=2), DomainShift.identity(), 10)
        for s in scenes:
            assert s.labels.min() >= 0 and s.labels.max() < NUM_CLASSES

    def test_class_presence_rate(self):
        scenes = generate_domain(SceneSpec(seed=0), DomainShift.identity(), 100)
        present = np.zeros(NUM_CLASSES)
        for s in scenes:
            present += np.bincount(np.unique(s.labels), minlength=NUM_CLASSES) > 0
        assert (present >= 80).all(), present

    def test_bad_resolution(self):
        with pytest.raises(ValueError, match="multiple of 8"):
            generate_domain(SceneSpec(height=60, width=64, seed=0),
                            DomainShift.identity(), 1)

    def test_labels_invariant_under_shift(self):
        spec = SceneSpec(seed=3)
        plain = generate_domain(spec, DomainShift.identity(), 8)
        shifted = generate_domain(spec, DEFAULT_TARGET_SHIFT, 8)
        for a, b in zip(plain, shifted):
            np.testing.assert_array_equal(a.labels, b.labels)

    def test_red_gain_raises_red_mean(self):
        spec = SceneSpec(seed=5)
        plain = generate_domain(spec, DomainShift.identity(), 20)
        boosted = generate_domain(spec, DomainShift(gain=(2.0, 1.0, 1.0)), 20)
        red_plain = np.mean([s.image[0].mean() for s in plain])
        red_boosted = np.mean([s.image[0].mean() for s in boosted])
        assert red_boosted > red_plain

    def test_default_shift_moves_channel_means(self):
        spec = SceneSpec(seed=6)
        plain = generate_domain(spec, DomainShift.identity(), 100)
        shifted = generate_domain(spec, DEFAULT_TARGET_SHIFT, 100)
        mean_plain = np.mean([s.image.mean(axis=(1, 2)) for s in plain], axis=0)
        mean_shift = np.mean([s.image.mean(axis=(1, 2)) for s in shifted], axis=0)
        gaps = np.abs(mean_plain - mean_shift)
        assert gaps.max() > 0.05
        assert gaps.mean() > 0.03


class TestApplyShift:
    def test_identity_is_bitwise_noop(self):
        rng = np.random.default_rng(7)
        img = rng.uniform(0, 1, size=(3, 16, 16)).astype(np.float32)
        out = apply_shift(img, DomainShift.identity())
        assert out is img  # no step ran at all

    def test_noisy_shift_needs_rng(self):
        img = np.zeros((3, 8, 8), dtype=np.float32)
        with pytest.raises(ValueError, match="random generator"):
            apply_shift(img, DomainShift(noise_sigma=0.05))

    def test_sampled_shift_within_ranges(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            s = DomainShift.sample(rng)
            assert all(0.5 <= g <= 1.5 for g in s.gain)
            assert all(-0.2 <= b <= 0.2 for b in s.bias)
            assert 0.7 <= s.gamma <= 1.4
            assert 0.0 <= s.noise_sigma <= 0.08
            assert 0.0 <= s.vgrad <= 0.15


class TestBenchmark:
    def test_default_split_sizes(self):
        ds = make_benchmark(seed=0, n_source=20, n_target_train=10, n_target_eval=5)
        assert len(ds.source) == 20
        assert ds.n_target_train == 10
        assert len(ds.target_eval) == 5

    def test_source_labeled_target_train_not(self):
        ds = make_benchmark(seed=0, n_source=4, n_target_train=3, n_target_eval=2)
        assert all(s.labels is not None for s in ds.source)
        assert all(s.labels is not None for s in ds.target_eval)
        img = ds.target_train_image(0)
        assert isinstance(img, np.ndarray)       # images only, no label field
        assert ds.target_train_reads == 1

    def test_disjoint_split_seeds(self):
        ds = make_benchmark(seed=0, n_source=2, n_target_train=2, n_target_eval=2)
        seeds = {ds.meta["source_seed"], ds.meta["target_train_seed"],
                 ds.meta["target_eval_seed"]}
        assert len(seeds) == 3

    def test_deterministic(self):
        a = make_benchmark(seed=3, n_source=3, n_target_train=3, n_target_eval=3)
        b = make_benchmark(seed=3, n_source=3, n_target_train=3, n_target_eval=3)
        for x, y in zip(a.source, b.source):
            np.testing.assert_array_equal(x.image, y.image)
        np.testing.assert_array_equal(a.target_train_image(2), b.target_train_image(2))


class TestDiskRoundTrip:
    def test_write_then_load(self, tmp_path):
        ds = make_benchmark(seed=1, n_source=4, n_target_train=3, n_target_eval=2)
        write_benchmark(ds, tmp_path)
        loaded = DiskDataset(tmp_path)
        assert len(loaded.source) == 4
        assert loaded.n_target_train == 3
        np.testing.assert_array_equal(loaded.source[0].labels, ds.source[0].labels)
        # images survive 8-bit quantization to within half a level
        np.testing.assert_allclose(loaded.source[0].image, ds.source[0].image,
                                   atol=0.5 / 255 + 1e-6)

    def test_layout_names(self, tmp_path):
        ds = make_benchmark(seed=1, n_source=2, n_target_train=2, n_target_eval=1)
        write_benchmark(ds, tmp_path)
        assert (tmp_path / "source" / "img_00000.ppm").exists()
        assert (tmp_path / "source" / "lbl_00001.pgm").exists()
        assert (tmp_path / "target_train" / "img_00001.ppm").exists()
        assert not (tmp_path / "target_train" / "lbl_00000.pgm").exists()
        assert (tmp_path / "target_eval" / "lbl_00000.pgm").exists()
        assert (tmp_path / "manifest.txt").exists()

    def test_lazy_split_loading(self, tmp_path):
        from dualalign.errors import DataError
        ds = make_benchmark(seed=1, n_source=2, n_target_train=2, n_target_eval=1)
        write_benchmark(ds, tmp_path)
        loaded = DiskDataset(tmp_path)
        # removing target_train must not affect source/eval access
        for p in (tmp_path / "target_train").iterdir():
            p.unlink()
        (tmp_path / "target_train").rmdir()
        assert len(loaded.source) == 2
        assert len(loaded.target_eval) == 1
        with pytest.raises(DataError):
            loaded.target_train_image(0)

    def test_count_mismatch_detected(self, tmp_path):
        ds = make_benchmark(seed=1, n_source=2, n_target_train=2, n_target_eval=1)
        write_benchmark(ds, tmp_path)
        (tmp_path / "source" / "img_00001.ppm").unlink()
        from dualalign.errors import DataError
        with pytest.raises(DataError, match="img_00001"):
            _ = DiskDataset(tmp_path).source
