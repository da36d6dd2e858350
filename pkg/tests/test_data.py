import gzip
import struct

import numpy as np
import pytest
from scipy.stats import chi2

from fedpm import data, rng
from fedpm.errors import DataError, FormatError, PartitionError


@pytest.fixture
def idx_files(tmp_path):
    gen = np.random.default_rng(0)
    images = gen.integers(0, 256, size=(20, 4, 3), dtype=np.uint8)
    labels = gen.integers(0, 10, size=20).astype(np.uint8)
    img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
    data.write_idx(images, labels, img, lab)
    return images, labels, img, lab


def test_idx_roundtrip(idx_files):
    images, labels, img, lab = idx_files
    ds = data.load_idx(img, lab, num_classes=10)
    assert len(ds) == 20 and ds.num_features == 12
    np.testing.assert_array_equal(ds.samples, images.reshape(20, -1) / 255.0)
    np.testing.assert_array_equal(ds.labels, labels)


def test_idx_gzip(idx_files, tmp_path):
    images, labels, img, lab = idx_files
    gz = tmp_path / "img.idx.gz"
    gz.write_bytes(gzip.compress(img.read_bytes()))
    assert len(data.load_idx(gz, lab, 10)) == 20


def test_idx_bad_magic(idx_files):
    _, _, img, lab = idx_files
    raw = bytearray(lab.read_bytes())
    struct.pack_into(">I", raw, 0, 0x0803)
    lab.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        data.load_idx(img, lab)


def test_idx_truncated(idx_files):
    _, _, img, lab = idx_files
    img.write_bytes(img.read_bytes()[:-1])
    with pytest.raises(FormatError):
        data.load_idx(img, lab)


def test_idx_count_mismatch(idx_files, tmp_path):
    images, labels, img, _ = idx_files
    lab2 = tmp_path / "short.idx"
    data.write_idx(images, labels[:19], tmp_path / "unused.idx", lab2)
    with pytest.raises(FormatError):
        data.load_idx(img, lab2)


def test_mnist_filenames(tmp_path):
    gen = np.random.default_rng(1)
    images = gen.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    labels = np.arange(5, dtype=np.uint8)
    data.write_idx(images, labels, tmp_path / "t10k-images-idx3-ubyte", tmp_path / "t10k-labels-idx1-ubyte")
    ds = data.load_mnist(tmp_path, "test")
    assert ds.num_features == 784 and ds.num_classes == 10
    with pytest.raises(FileNotFoundError):
        data.load_mnist(tmp_path, "train")


def test_dataset_rejects_bad_labels():
    with pytest.raises(DataError):
        data.Dataset(np.zeros((2, 3)), np.array([0, 5]), 3)
    with pytest.raises(DataError):
        data.Dataset(np.zeros((2, 3)), np.array([0]), 3)


def nearest_mean_accuracy(train, test):
    means = np.stack([train.samples[train.labels == k].mean(axis=0) for k in range(train.num_classes)])
    dist = ((test.samples[:, None, :] - means[None]) ** 2).sum(axis=2)
    return float(np.mean(dist.argmin(axis=1) == test.labels))


@pytest.mark.parametrize("dims, classes", [(2, 2), (2, 10), (784, 10)])
def test_synthetic_is_separable(dims, classes):
    train, test = data.synth_split(0, 2000, 1000, dims, classes, 10.0)
    assert nearest_mean_accuracy(train, test) >= 0.99


def test_synthetic_properties():
    a = data.synth_dataset(4, 300, 5, 3, 10.0)
    b = data.synth_dataset(4, 300, 5, 3, 10.0)
    assert np.array_equal(a.samples, b.samples) and np.array_equal(a.labels, b.labels)
    assert a.samples.min() >= 0 and a.samples.max() <= 1
    one_each = data.synth_dataset(4, 7, 5, 7, 10.0)
    assert sorted(one_each.labels) == list(range(7))
    with pytest.raises(DataError):
        data.synth_dataset(4, 3, 5, 7, 10.0)


def labelled_dataset(n, classes=10, seed=0):
    labels = np.random.default_rng(seed).permutation(np.arange(n) % classes)
    return data.Dataset(np.arange(n, dtype=np.float64)[:, None], labels, classes)


def test_partition_iid_even_split():
    ds = labelled_dataset(60000)
    shards = data.partition_iid(ds, 10, np.random.default_rng(0))
    assert [len(s) for s in shards] == [6000] * 10
    ids = np.concatenate([s.samples[:, 0] for s in shards])
    assert np.array_equal(np.sort(ids), np.arange(60000))


def test_partition_iid_histograms():
    ds = labelled_dataset(20000)
    expected = ds.class_histogram() / len(ds)
    for seed in range(5):
        for shard in data.partition_iid(ds, 10, np.random.default_rng(seed)):
            obs = shard.class_histogram()
            stat = (((obs - expected * len(shard)) ** 2) / (expected * len(shard))).sum()
            assert stat < chi2.ppf(0.999, ds.num_classes - 1)


def test_partition_iid_too_many_clients():
    with pytest.raises(PartitionError):
        data.partition_iid(labelled_dataset(5), 6, np.random.default_rng(0))


def test_split_sizes_remainder_to_largest():
    sizes = data.split_sizes(10, np.array([0.2, 0.5, 0.3]))
    assert sizes.sum() == 10
    np.testing.assert_array_equal(sizes, [2, 5, 3])
    sizes = data.split_sizes(7, np.array([1 / 3, 1 / 3 + 1e-9, 1 / 3 - 1e-9]))
    np.testing.assert_array_equal(sizes, [2, 3, 2])


@pytest.mark.parametrize("seed", range(5))
def test_partition_noniid_properties(seed):
    ds = labelled_dataset(12000)
    gen = rng.stream(seed, "partition")
    shards = data.partition_noniid(ds, 10, 2, gen)
    assert len(shards) == 10
    ids = np.concatenate([s.samples[:, 0] for s in shards])
    assert len(np.unique(ids)) == len(ids) <= len(ds)
    assert all(len(np.unique(s.labels)) <= 2 for s in shards)
    # sizes track the j_n draw, replayed from the same stream position
    replay = rng.stream(seed, "partition")
    for k in range(10):
        replay.permutation(np.flatnonzero(ds.labels == k))
    p = data.draw_proportions(10, replay)
    sizes = np.array([len(s) for s in shards])
    np.testing.assert_array_equal(sizes, data.split_sizes(sizes.sum(), p))


def test_noniid_unbalancedness():
    gen = np.random.default_rng(0)
    ratios = [(lambda p: p.max() / p.min())(data.draw_proportions(10, gen)) for _ in range(1000)]
    assert max(ratios) > 5
    assert min(ratios) >= 1


def test_partition_noniid_infeasible():
    ds = labelled_dataset(100)
    with pytest.raises(PartitionError):
        data.partition_noniid(ds, 3, 2, np.random.default_rng(0))
    with pytest.raises(PartitionError):
        data.partition_noniid(ds, 10, 11, np.random.default_rng(0))
