"""Datasets: IDX ingestion, synthetic blobs and federated partitioning."""
from dataclasses import dataclass
import gzip
import os
import struct

import numpy as np

from .errors import DataError, FormatError, PartitionError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if len(self.samples) != len(self.labels):
            raise DataError(f"{len(self.samples)} samples but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def num_features(self):
        return self.samples.shape[1]

    def subset(self, index):
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.samples[index], self.labels[index], self.num_classes)

    def class_histogram(self):
        return np.bincount(self.labels, minlength=self.num_classes)


def _open(path):
    path = os.fspath(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_idx(path, magic, ndim):
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4 + 4 * ndim:
        raise FormatError(f"{path}: truncated IDX header")
    (found,) = struct.unpack_from(">I", raw)
    if found != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack_from(">" + "I" * ndim, raw, 4)
    body = raw[4 + 4 * ndim:]
    expected = int(np.prod(dims))
    if len(body) != expected:
        raise FormatError(f"{path}: expected {expected} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path, num_classes=None):
    images = _read_idx(images_path, IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, LABELS_MAGIC, 1).astype(np.int64)
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if len(labels) else 0
    samples = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(samples, labels, num_classes)


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images (n, rows, cols) and labels (n,) in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def load_mnist(data_dir, split="train"):
    """Load an MNIST split from ``data_dir`` (plain or .gz files)."""
    names = []
    for base in MNIST_FILES[split]:
        for candidate in (base, base + ".gz", base.replace("-idx", ".idx")):
            path = os.path.join(data_dir, candidate)
            if os.path.exists(path):
                names.append(path)
                break
        else:
            raise FileNotFoundError(f"{base} not found in {data_dir}")
    return load_idx(*names, num_classes=10)


def _blob_centres(gen, dims, classes, separation):
    # pairwise distance between centres is exactly `separation` when dims >= classes
    if dims >= classes:
        q, _ = np.linalg.qr(gen.normal(size=(dims, classes)))
        return q.T * (separation / np.sqrt(2.0))
    # too few dimensions for orthogonal centres: neighbours on a circle (or a line),
    # moved clear of the clip at 0
    if dims == 1:
        return np.linspace(0.0, separation * (classes - 1), classes)[:, None] + 3.0
    angles = 2.0 * np.pi * np.arange(classes) / classes
    radius = separation / (2.0 * np.sin(np.pi / classes)) if classes > 1 else 0.0
    ring = np.stack([np.cos(angles), np.sin(angles)], axis=1) * radius
    q, _ = np.linalg.qr(gen.normal(size=(dims, 2)))
    centres = ring @ q.T
    return centres - centres.min(axis=0) + 3.0


def synth_dataset(seed, n, dims, classes, separation):
    """Gaussian blobs with unit noise, one per class, mapped into [0, 1].

    Class centres are ``separation`` noise-stds apart. Features are scaled
    by a common factor and clipped at 0 and 1, which gives sparse,
    pixel-like inputs. Labels cycle so each class appears once before any
    repeats.
    """
    if n < classes:
        raise DataError("need at least one sample per class")
    gen = np.random.default_rng([int(seed), 0xB10B])
    centres = _blob_centres(gen, dims, classes, float(separation))
    labels = np.arange(n) % classes
    gen.shuffle(labels)
    raw = centres[labels] + gen.normal(size=(n, dims))
    scale = np.abs(centres).max() + 2.0
    return Dataset(np.clip(raw / scale, 0.0, 1.0), labels.astype(np.int64), classes)


def synth_split(seed, n_train, n_test, dims, classes, separation):
    """Train/test sets drawn from the same blob distribution."""
    full = synth_dataset(seed, n_train + n_test, dims, classes, separation)
    return full.subset(np.arange(n_train)), full.subset(np.arange(n_train, n_train + n_test))


def partition_iid(ds, N, gen):
    if N < 1 or N > len(ds):
        raise PartitionError(f"cannot split {len(ds)} samples across {N} clients")
    order = gen.permutation(len(ds))
    return [ds.subset(np.sort(part)) for part in np.array_split(order, N)]


def draw_proportions(N, gen, low=10, high=100):
    """Client fractions p_n = j_n / sum(j) with j_n uniform on {low..high}."""
    j = gen.integers(low, high + 1, size=N)
    return j / j.sum()


def split_sizes(total, p):
    """Integer sizes floor(p * total), remainder to the largest fraction."""
    sizes = np.floor(np.asarray(p) * total).astype(np.int64)
    sizes[np.argmax(p)] += total - sizes.sum()
    return sizes


def partition_noniid(ds, N, c_max, gen, max_attempts=100):
    """Unbalanced shards with at most ``c_max`` classes per client.

    Client ``n`` holds a fraction ``p_n`` of the samples used, taken evenly
    from ``c_max`` classes drawn uniformly at random. When the requests on a
    class exceed its supply, every request is scaled down by the same factor,
    so shard sizes stay proportional to ``p_n`` and some samples go unused.
    """
    C = ds.num_classes
    if not 1 <= c_max <= C:
        raise PartitionError(f"c_max must lie in [1, {C}]")
    if N < 1 or N > len(ds):
        raise PartitionError(f"cannot split {len(ds)} samples across {N} clients")
    by_class = [gen.permutation(np.flatnonzero(ds.labels == k)) for k in range(C)]
    supply = np.array([len(pool) for pool in by_class])
    present = np.flatnonzero(supply)
    if len(present) > N * c_max:
        raise PartitionError(f"{len(present)} classes cannot be covered by {N} clients x {c_max}")
    p = draw_proportions(N, gen)
    for _ in range(max_attempts):
        assigned = [np.sort(gen.choice(present, size=min(c_max, len(present)), replace=False))
                    for _ in range(N)]
        if set(np.concatenate(assigned).tolist()) != set(present.tolist()):
            continue
        shards = _allocate(by_class, supply, assigned, p)
        if shards is not None:
            return [ds.subset(np.sort(s)) for s in shards]
    raise PartitionError(f"no feasible class assignment after {max_attempts} attempts")


def _allocate(by_class, supply, assigned, p):
    demand = np.zeros(len(supply))
    for n, classes in enumerate(assigned):
        demand[classes] += p[n] / len(classes)
    used = int(np.floor(np.min(supply[demand > 0] / demand[demand > 0])))
    used = min(used, int(supply.sum()))
    while used > 0:
        sizes = split_sizes(used, p)
        take = np.zeros((len(assigned), len(supply)), dtype=np.int64)
        for n, classes in enumerate(assigned):
            base, extra = divmod(int(sizes[n]), len(classes))
            take[n, classes] = base
            take[n, classes[:extra]] += 1
        if np.all(take.sum(axis=0) <= supply):
            break
        used -= 1
    if used <= 0 or np.any(take[np.arange(len(assigned))[:, None], np.array(assigned)] == 0):
        return None
    cursor = np.zeros(len(supply), dtype=np.int64)
    shards = []
    for n, classes in enumerate(assigned):
        parts = []
        for k in classes:
            parts.append(by_class[k][cursor[k]:cursor[k] + take[n, k]])
            cursor[k] += take[n, k]
        shards.append(np.concatenate(parts))
    return shards
