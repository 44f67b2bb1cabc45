"""IDX and USPS loaders, toy domains and batching."""

import gzip
import struct

import numpy as np
import pytest

from lstnet.data import (MNIST_COUNTS, USPS_COUNTS, Batcher, DataFormatError, LabeledDataset, batcher, load_idx,
                         load_mnist, load_usps, make_toy_domains, read_idx_images, shift_right, to_unit_range,
                         toy_labeled, usps_libsvm_to_csv, write_idx, write_usps_csv)


def _minimal_idx_label(path, index):
    """Independent reader: one label byte straight from the file."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        magic, n = struct.unpack(">II", fh.read(8))
        assert magic == 0x801
        fh.seek(8 + index)
        return fh.read(1)[0]


@pytest.fixture
def idx_pair(tmp_path, rng):
    images = rng.integers(0, 256, (5, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, 5, dtype=np.uint8)
    img, lab = tmp_path / "imgs", tmp_path / "labs"
    write_idx(img, lab, images, labels)
    return img, lab, images, labels


class TestIdx:
    def test_round_trip(self, idx_pair):
        img, lab, images, labels = idx_pair
        ds = load_idx(img, lab)
        assert ds.images.shape == (5, 28, 28, 1)
        np.testing.assert_array_equal(ds.labels, labels)
        np.testing.assert_allclose(ds.images[..., 0], images / 127.5 - 1, atol=1e-6)

    def test_header_is_big_endian(self, idx_pair):
        raw = idx_pair[0].read_bytes()
        assert raw[:4] == b"\x00\x00\x08\x03"
        assert struct.unpack(">I", raw[4:8])[0] == 5

    def test_endpoints(self):
        np.testing.assert_array_equal(to_unit_range(np.array([0, 255], np.uint8)), [-1.0, 1.0])

    def test_bad_magic(self, idx_pair, tmp_path):
        bad = tmp_path / "bad"
        raw = bytearray(idx_pair[0].read_bytes())
        raw[3] = 0x01
        bad.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="magic"):
            read_idx_images(bad)

    def test_truncated(self, idx_pair, tmp_path):
        bad = tmp_path / "short"
        bad.write_bytes(idx_pair[0].read_bytes()[:-10])
        with pytest.raises(DataFormatError, match="truncat|bytes"):
            read_idx_images(bad)

    def test_count_mismatch(self, idx_pair, tmp_path, rng):
        lab = tmp_path / "labs4"
        write_idx(tmp_path / "i4", lab, np.zeros((4, 28, 28), np.uint8), np.zeros(4, np.uint8))
        with pytest.raises(DataFormatError, match="5 images.*4 labels"):
            load_idx(idx_pair[0], lab)

    def test_expected_count(self, idx_pair):
        with pytest.raises(DataFormatError, match="expected 60000"):
            load_idx(idx_pair[0], idx_pair[1], expected_count=60000)

    def test_gzip(self, tmp_path, rng):
        images = rng.integers(0, 256, (3, 4, 4), dtype=np.uint8)
        write_idx(tmp_path / "a.gz", tmp_path / "b.gz", images, np.array([1, 2, 3], np.uint8))
        ds = load_idx(tmp_path / "a.gz", tmp_path / "b.gz")
        assert list(ds.labels) == [1, 2, 3]

    def test_mnist_cardinality_on_synthetic_files(self, tmp_path):
        for split, stem in (("train", "train"), ("test", "t10k")):
            n = MNIST_COUNTS[split]
            write_idx(tmp_path / f"{stem}-images-idx3-ubyte", tmp_path / f"{stem}-labels-idx1-ubyte",
                      np.zeros((n, 28, 28), np.uint8), np.arange(n) % 10)
            ds = load_mnist(tmp_path, split)
            assert len(ds) == n and ds.image_shape == (28, 28, 1)

    def test_mnist_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_mnist(tmp_path, "test")


class TestUsps:
    def test_passthrough_row(self, tmp_path):
        p = tmp_path / "u.csv"
        p.write_text("3," + ",".join(["0"] * 256) + "\n")
        ds = load_usps(p)
        assert ds.labels[0] == 3
        np.testing.assert_array_equal(ds.images, -1.0)
        assert ds.image_shape == (16, 16, 1)

    def test_column_count_names_row(self, tmp_path):
        p = tmp_path / "u.csv"
        p.write_text("1," + ",".join(["0"] * 256) + "\n2,0,0\n")
        with pytest.raises(DataFormatError, match="row 2"):
            load_usps(p)

    def test_label_range_names_row(self, tmp_path):
        p = tmp_path / "u.csv"
        p.write_text("10," + ",".join(["0"] * 256) + "\n")
        with pytest.raises(DataFormatError, match="row 1.*label"):
            load_usps(p)

    @pytest.mark.parametrize("split", ["train", "test"])
    def test_cardinality_on_synthetic_file(self, tmp_path, split):
        n = USPS_COUNTS[split]
        p = tmp_path / f"{split}.csv"
        write_usps_csv(p, np.full((n, 256), 128, np.uint8), np.arange(n) % 10)
        assert len(load_usps(p, split)) == n

    def test_wrong_count(self, tmp_path):
        p = tmp_path / "u.csv"
        write_usps_csv(p, np.zeros((10, 256), np.uint8), np.zeros(10, int))
        with pytest.raises(DataFormatError, match="7291"):
            load_usps(p, "train")

    def test_libsvm_conversion(self, tmp_path):
        src = tmp_path / "usps"
        src.write_text("4 1:-1 2:1 256:0\n1 3:1\n")
        assert usps_libsvm_to_csv(src, tmp_path / "out.csv") == 2
        ds = load_usps(tmp_path / "out.csv")
        assert list(ds.labels) == [3, 0]
        px = ds.images[0, ..., 0].ravel()
        assert px[0] == -1.0 and px[1] == 1.0


class TestDatasetTypes:
    def test_label_count_mismatch(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((3, 2, 2, 1), np.float32), labels=np.zeros(2, int))

    def test_pixel_range(self):
        with pytest.raises(ValueError, match="pixel"):
            LabeledDataset(np.full((1, 2, 2, 1), 2.0, np.float32), labels=np.zeros(1, int))

    def test_subset(self):
        ds = LabeledDataset(np.zeros((10, 2, 2, 1), np.float32), labels=np.arange(10))
        sub = ds.subset(4, seed=1)
        assert len(sub) == 4 and len(set(sub.labels)) == 4


class TestToy:
    def test_shapes(self):
        a, b, _ = make_toy_domains(0, 100)
        assert a.images.shape == b.images.shape == (100, 8, 8, 1)

    def test_b_is_inverted_shift_of_a(self):
        a, b, pairing = make_toy_domains(3, 50)
        unit_a, unit_b = (a.images[..., 0] + 1) / 2, (b.images[..., 0] + 1) / 2
        for i in range(50):
            np.testing.assert_allclose(unit_b[i], 1 - shift_right(unit_a[pairing.source[i]]), atol=1e-6)

    def test_class_balance(self):
        _, _, pairing = make_toy_domains(1, 103)
        counts = np.bincount(pairing.labels_a, minlength=4)
        assert counts.max() - counts.min() <= 1

    def test_labels_follow_pairing(self):
        a, b = toy_labeled(2, 40)
        _, _, pairing = make_toy_domains(2, 40)
        np.testing.assert_array_equal(b.labels, a.labels[pairing.source])

    def test_needs_two(self):
        with pytest.raises(ValueError):
            make_toy_domains(0, 1)


class TestBatcher:
    def test_usps_batches_per_epoch(self):
        assert Batcher(7291, 64, 0).batches_per_epoch == 113

    def test_same_seed_same_order(self):
        a = [b.tolist() for b in Batcher(100, 8, 5).epoch_indices(0)]
        assert a == [b.tolist() for b in Batcher(100, 8, 5).epoch_indices(0)]

    def test_epoch_is_partial_permutation(self):
        idx = np.concatenate(list(Batcher(100, 8, 5).epoch_indices(0)))
        assert len(idx) == 96 and len(set(idx.tolist())) == 96 and idx.max() < 100

    def test_epochs_reshuffle(self):
        b = Batcher(50, 10, 1)
        first = [b.next_indices().tolist() for _ in range(5)]
        second = [b.next_indices().tolist() for _ in range(5)]
        assert first != second and b.epoch == 1

    def test_resume(self):
        a = Batcher(50, 7, 2)
        for _ in range(9):
            a.next_indices()
        b = Batcher(50, 7, 2)
        b.restore(a.state())
        for _ in range(5):
            np.testing.assert_array_equal(a.next_indices(), b.next_indices())

    @pytest.mark.parametrize("size", [0, -3])
    def test_bad_batch_size(self, size):
        with pytest.raises(ValueError):
            Batcher(10, size, 0)

    def test_batch_larger_than_dataset(self):
        with pytest.raises(ValueError):
            Batcher(10, 11, 0)

    def test_stream(self):
        ds = LabeledDataset(np.zeros((9, 2, 2, 1), np.float32), labels=np.zeros(9, int))
        stream = batcher(ds, 4, 0)
        assert [next(stream).shape[0] for _ in range(3)] == [4, 4, 4]


class TestRealData:
    """Runs only when the real files are supplied."""

    def test_mnist_counts_and_golden_sample(self, data_dir):
        train = load_mnist(data_dir / "mnist", "train")
        test = load_mnist(data_dir / "mnist", "test")
        assert (len(train), len(test)) == (60000, 10000)
        assert test.labels[0] == 7
        labels_file = next(p for p in (data_dir / "mnist").iterdir() if p.name.startswith("t10k-labels"))
        assert _minimal_idx_label(labels_file, 0) == 7

    def test_usps_counts(self, data_dir):
        assert len(load_usps(data_dir / "usps" / "usps_train.csv", "train")) == 7291
        assert len(load_usps(data_dir / "usps" / "usps_test.csv", "test")) == 2007
