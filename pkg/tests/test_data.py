import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftcurves import data


def build_container_bytes(images, labels, channels=None, n=None):
    """Hand-assembled .ftc bytes, independent of data.write_container."""
    images = np.asarray(images, dtype=np.uint8)
    c = channels if channels is not None else images.shape[1]
    count = n if n is not None else images.shape[0]
    return (
        b"FTC1"
        + struct.pack("<BI", c, count)
        + images.tobytes()
        + bytes(int(l) for l in labels)
    )


@pytest.fixture
def two_image_fixture(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (2, 1, 32, 32), dtype=np.uint8)
    labels = [3, 9]
    path = tmp_path / "two.ftc"
    path.write_bytes(build_container_bytes(images, labels))
    return path, images, labels


class TestContainer:
    def test_fixture_loads_byte_exact(self, two_image_fixture):
        path, images, labels = two_image_fixture
        raw = data.load_container(path)
        assert len(raw) == 2
        np.testing.assert_array_equal(raw.images, images)
        np.testing.assert_array_equal(raw.labels, labels)

    def test_wrong_magic(self, tmp_path):
        p = tmp_path / "bad.ftc"
        p.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(data.ContainerFormatError, match="magic"):
            data.load_container(p)

    def test_truncated_payload(self, tmp_path):
        rng = np.random.default_rng(1)
        images = rng.integers(0, 256, (2, 1, 32, 32), dtype=np.uint8)
        p = tmp_path / "short.ftc"
        # declare 4 images but provide 2
        p.write_bytes(build_container_bytes(images, [0, 1], n=4))
        with pytest.raises(data.ContainerTruncatedError):
            data.load_container(p)

    def test_label_out_of_range(self, tmp_path):
        rng = np.random.default_rng(2)
        images = rng.integers(0, 256, (1, 1, 32, 32), dtype=np.uint8)
        p = tmp_path / "lbl.ftc"
        p.write_bytes(build_container_bytes(images, [11]))
        with pytest.raises(data.ContainerLabelError, match="11"):
            data.load_container(p)

    def test_bad_channel_count(self, tmp_path):
        p = tmp_path / "chan.ftc"
        p.write_bytes(b"FTC1" + struct.pack("<BI", 4, 1) + bytes(4 * 1024 + 1))
        with pytest.raises(data.ContainerFormatError, match="channel"):
            data.load_container(p)

    def test_trailing_bytes(self, two_image_fixture):
        path, _, _ = two_image_fixture
        with open(path, "ab") as f:
            f.write(b"\x00")
        with pytest.raises(data.ContainerFormatError, match="trailing"):
            data.load_container(path)

    def test_write_then_load_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        images = rng.integers(0, 256, (5, 3, 32, 32), dtype=np.uint8)
        labels = rng.integers(0, 10, 5)
        p = tmp_path / "rt.ftc"
        data.write_container(images, labels, p)
        raw = data.load_container(p)
        np.testing.assert_array_equal(raw.images, images)
        np.testing.assert_array_equal(raw.labels, labels)


class TestGreyscale:
    def test_white_stays_white(self):
        img = np.full((1, 3, 32, 32), 255, dtype=np.uint8)
        assert data.ntsc_greyscale(img)[0, 0, 0, 0] == pytest.approx(255.0)

    def test_pure_red(self):
        img = np.zeros((1, 3, 32, 32), dtype=np.uint8)
        img[0, 0] = 255
        assert data.ntsc_greyscale(img)[0, 0, 0, 0] == pytest.approx(76.245)

    @settings(max_examples=30, deadline=None)
    @given(v=st.integers(0, 255))
    def test_equal_channels_identity(self, v):
        img = np.full((1, 3, 32, 32), v, dtype=np.uint8)
        assert data.ntsc_greyscale(img)[0, 0, 5, 5] == pytest.approx(float(v), abs=1e-9)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_bounded_by_channel_extremes(self, seed):
        rng = np.random.default_rng(seed)
        img = rng.integers(0, 256, (1, 3, 32, 32), dtype=np.uint8)
        grey = data.ntsc_greyscale(img)
        assert (grey >= img.min(axis=1, keepdims=True) - 1e-9).all()
        assert (grey <= img.max(axis=1, keepdims=True) + 1e-9).all()

    def test_rejects_single_channel(self):
        with pytest.raises(ValueError):
            data.ntsc_greyscale(np.zeros((1, 1, 32, 32), dtype=np.uint8))


class TestStandardize:
    def test_two_pixel_example(self):
        img = np.array([[[[0.0, 2.0]]]])
        out = data.standardize_per_image(img)
        np.testing.assert_allclose(out, [[[[-1.0, 1.0]]]], atol=1e-6)

    def test_constant_image_becomes_zero(self):
        img = np.full((1, 1, 32, 32), 7.0)
        assert not data.standardize_per_image(img).any()

    def test_zero_mean_unit_std(self):
        rng = np.random.default_rng(4)
        imgs = rng.uniform(0, 255, (10, 1, 32, 32))
        out = data.standardize_per_image(imgs)
        means = out.mean(axis=(1, 2, 3))
        stds = out.std(axis=(1, 2, 3))
        assert (np.abs(means) < 1e-5).all()
        assert (np.abs(stds - 1) < 1e-3).all()

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        imgs = rng.uniform(0, 255, (3, 1, 8, 8))
        once = data.standardize_per_image(imgs)
        twice = data.standardize_per_image(once)
        assert np.abs(once - twice).max() < 1e-4

    def test_per_dataset_alternative(self):
        rng = np.random.default_rng(5)
        imgs = rng.uniform(0, 255, (20, 1, 32, 32))
        out = data.standardize_per_dataset(imgs)
        assert abs(out.mean()) < 1e-5
        assert abs(out.std() - 1) < 1e-3
        # per-image stds now differ; only the pooled std is 1
        assert out.std(axis=(1, 2, 3)).std() > 1e-3


class TestClassWeights:
    def test_balanced_gives_ones(self):
        labels = np.repeat(np.arange(10), 5)
        np.testing.assert_allclose(data.class_weights(labels), np.ones(10))

    def test_two_class_reduction(self):
        labels = np.array([0] * 90 + [1] * 10)
        w = data.class_weights(labels, n_classes=2)
        np.testing.assert_allclose(w, [50 / 90, 5.0], rtol=1e-3)
        assert w[0] == pytest.approx(0.556, abs=1e-3)

    def test_mean_weight_is_one(self):
        rng = np.random.default_rng(6)
        labels = np.concatenate([np.arange(10), rng.integers(0, 10, 500)])
        w = data.class_weights(labels)
        assert w[labels].mean() == pytest.approx(1.0, abs=1e-6)

    def test_missing_class_errors(self):
        with pytest.raises(data.MissingClassError, match="every class"):
            data.class_weights(np.array([0, 1, 2]))


class TestSampleSubset:
    def _dataset(self, n=50):
        rng = np.random.default_rng(7)
        return data.Dataset(
            rng.normal(0, 1, (n, 1, 4, 4)).astype(np.float32), rng.integers(0, 10, n)
        )

    def test_same_seed_same_subset(self):
        ds = self._dataset()
        a = data.sample_subset(ds, 10, seed=3)
        b = data.sample_subset(ds, 10, seed=3)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_full_size_is_permutation(self):
        ds = self._dataset(20)
        sub = data.sample_subset(ds, 20, seed=1)
        assert sorted(sub.images.sum(axis=(1, 2, 3)).tolist()) == sorted(
            ds.images.sum(axis=(1, 2, 3)).tolist()
        )

    def test_distinct_indices(self):
        ds = self._dataset(30)
        sub = data.sample_subset(ds, 30, seed=2)
        sums = sub.images.sum(axis=(1, 2, 3))
        assert len(np.unique(sums)) == 30

    def test_too_large_rejected(self):
        with pytest.raises(ValueError):
            data.sample_subset(self._dataset(5), 6)

    def test_default_size(self):
        import inspect

        assert inspect.signature(data.sample_subset).parameters["n"].default == 1000


class TestLabelEntropy:
    def test_uniform_ten_classes(self):
        assert data.label_entropy(np.arange(10)) == pytest.approx(3.3219, abs=1e-4)

    def test_single_class(self):
        assert data.label_entropy(np.zeros(10, dtype=int)) == 0.0

    @settings(max_examples=40, deadline=None)
    @given(labels=st.lists(st.integers(0, 9), min_size=1, max_size=200))
    def test_bounds(self, labels):
        h = data.label_entropy(np.array(labels))
        assert 0.0 <= h <= np.log2(10) + 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            data.label_entropy(np.array([], dtype=int))


class TestSyntheticDigits:
    def test_deterministic(self):
        a = data.synthetic_digits(20, seed=5)
        b = data.synthetic_digits(20, seed=5)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_every_class_present(self):
        raw = data.synthetic_digits(10, seed=6)
        assert sorted(raw.labels.tolist()) == list(range(10))

    def test_prepare_pipeline(self):
        ds = data.prepare_dataset(data.synthetic_digits(12, seed=8))
        assert ds.images.shape == (12, 1, 32, 32)
        assert ds.images.dtype == np.float32
        assert (np.abs(ds.images.mean(axis=(1, 2, 3))) < 1e-5).all()
