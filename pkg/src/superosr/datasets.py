"""Dataset loading and open-set split construction.

Covers the IDX image/label binary format (bit-exact reader and writer), the
CIFAR-10 binary batch layout with optional BT.601 grayscale conversion, a
seeded Gaussian-blob generator for fast experiments, known/unknown split
construction, and stratified batch iteration that guarantees every known
class appears in every batch.

Images are float64 NHWC in [0, 1]; labels are int64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError, InputError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

# Known-class presets for the 10-class image datasets.
KNOWN_SET_PRESETS = {
    "set1": (0, 2, 3, 4, 6, 9),
    "set2": (0, 1, 2, 5, 7, 8),
    "set3": (0, 1, 3, 4, 7, 8),
}

_LUMA = (0.299, 0.587, 0.114)  # ITU-R BT.601


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, C), values in [0, 1]
    labels: np.ndarray  # (N,)
    class_names: list[str] | None = None
    provenance: str = ""

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass
class OpenSplit:
    known_classes: list[int]  # original label ids, order defines the remap
    train: Dataset  # labels remapped to [0, K)
    test: Dataset  # knowns remapped, every unknown relabeled to K

    @property
    def n_known(self) -> int:
        return len(self.known_classes)


def _read_idx_header(data: bytes, path, expected_magic: int, n_dims: int):
    if len(data) < 4 * (1 + n_dims):
        raise DataFormatError(f"{path}: header truncated")
    magic = struct.unpack(">I", data[:4])[0]
    if magic != expected_magic:
        raise DataFormatError(
            f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    dims = struct.unpack(f">{n_dims}I", data[4 : 4 * (1 + n_dims)])
    return dims, data[4 * (1 + n_dims) :]


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label file pair (big-endian, unsigned byte payload)."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    (n, h, w), payload = _read_idx_header(
        images_path.read_bytes(), images_path, IDX_IMAGE_MAGIC, 3
    )
    if len(payload) < n * h * w:
        raise DataFormatError(
            f"{images_path}: payload holds {len(payload)} bytes, header promises {n * h * w}"
        )
    images = (
        np.frombuffer(payload[: n * h * w], dtype=np.uint8)
        .reshape(n, h, w, 1)
        .astype(np.float64)
        / 255.0
    )
    (n_labels,), label_payload = _read_idx_header(
        labels_path.read_bytes(), labels_path, IDX_LABEL_MAGIC, 1
    )
    if len(label_payload) < n_labels:
        raise DataFormatError(f"{labels_path}: label payload truncated")
    if n_labels != n:
        raise DataFormatError(f"{labels_path}: {n_labels} labels for {n} images")
    labels = np.frombuffer(label_payload[:n_labels], dtype=np.uint8).astype(np.int64)
    return Dataset(images, labels, provenance=f"idx:{images_path.name}")


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write a dataset back to the IDX pair; inverse of :func:`load_idx`."""
    n, h, w, c = dataset.images.shape
    if c != 1:
        raise InputError("IDX image files hold single-channel images")
    pixels = np.round(dataset.images[..., 0] * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, h, w))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        f.write(dataset.labels.astype(np.uint8).tobytes())


_CIFAR_RECORD = 3073  # 1 label byte + 32*32*3 pixel bytes


def load_cifar10(batch_paths, to_grayscale: bool = True) -> Dataset:
    """Parse CIFAR-10 binary batches; optionally convert to BT.601 luma."""
    images, labels = [], []
    for path in batch_paths:
        data = Path(path).read_bytes()
        if len(data) % _CIFAR_RECORD != 0:
            raise DataFormatError(
                f"{path}: length {len(data)} is not a multiple of {_CIFAR_RECORD}"
            )
        records = np.frombuffer(data, dtype=np.uint8).reshape(-1, _CIFAR_RECORD)
        labels.append(records[:, 0].astype(np.int64))
        planes = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64)
        if to_grayscale:
            luma = _LUMA[0] * planes[:, 0] + _LUMA[1] * planes[:, 1] + _LUMA[2] * planes[:, 2]
            images.append(luma[..., None] / 255.0)
        else:
            images.append(planes.transpose(0, 2, 3, 1) / 255.0)
    return Dataset(
        np.concatenate(images), np.concatenate(labels), provenance="cifar10"
    )


def make_blobs(
    n_classes: int,
    per_class: int,
    dim: int,
    center_scale: float = 1.0,
    noise_sigma: float = 0.2,
    seed: int = 0,
) -> Dataset:
    """Seeded isotropic Gaussian classes around uniform random centers.

    Samples are shaped (N, 1, dim, 1) so the image-oriented model stack and
    loaders treat them uniformly.
    """
    if n_classes <= 0 or per_class <= 0 or dim <= 0:
        raise InputError("n_classes, per_class and dim must be positive")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-center_scale, center_scale, size=(n_classes, dim))
    samples = np.repeat(centers, per_class, axis=0)
    samples = samples + noise_sigma * rng.standard_normal(samples.shape)
    labels = np.repeat(np.arange(n_classes, dtype=np.int64), per_class)
    images = samples.reshape(-1, 1, dim, 1)
    return Dataset(
        images,
        labels,
        provenance=f"blobs(classes={n_classes},per_class={per_class},dim={dim},seed={seed})",
    )


def build_open_split(train: Dataset, test: Dataset, known_classes) -> OpenSplit:
    """Filter/remap the train set to the known classes; relabel test unknowns to K."""
    known = [int(c) for c in known_classes]
    if not known:
        raise InputError("known_classes must be nonempty")
    if len(set(known)) != len(known):
        raise InputError("known_classes contains duplicates")
    all_labels = np.concatenate([train.labels, test.labels])
    valid = set(np.unique(all_labels).tolist())
    for c in known:
        if c not in valid:
            raise InputError(f"class {c} does not occur in the data")
    k = len(known)
    remap = {orig: new for new, orig in enumerate(known)}

    train_mask = np.isin(train.labels, known)
    train_labels = np.array([remap[int(c)] for c in train.labels[train_mask]], dtype=np.int64)
    train_ds = Dataset(
        train.images[train_mask], train_labels, train.class_names, train.provenance
    )

    test_labels = np.array(
        [remap.get(int(c), k) for c in test.labels], dtype=np.int64
    )
    test_ds = Dataset(test.images, test_labels, test.class_names, test.provenance)
    return OpenSplit(known_classes=known, train=train_ds, test=test_ds)


def stratified_batches(split: OpenSplit, batch_size: int, seed: int):
    """One epoch of index batches partitioning the training set.

    Every batch holds at least one sample of each known class; the remaining
    slots are a seeded shuffle without replacement.  Deterministic per seed.
    """
    k = split.n_known
    labels = split.train.labels
    n = labels.shape[0]
    if batch_size < k:
        raise ConfigError(f"batch_size {batch_size} < number of known classes {k}")
    n_batches = -(-n // batch_size)  # ceil
    rng = np.random.default_rng(seed)
    per_class = []
    for cls in range(k):
        idx = np.flatnonzero(labels == cls)
        if idx.size < n_batches:
            raise ConfigError(
                f"class {cls} has {idx.size} samples but {n_batches} batches need one each"
            )
        per_class.append(rng.permutation(idx))

    batches = [[] for _ in range(n_batches)]
    rest = []
    for idx in per_class:
        for b in range(n_batches):
            batches[b].append(idx[b])
        rest.append(idx[n_batches:])
    pool = rng.permutation(np.concatenate(rest)) if rest else np.empty(0, dtype=np.int64)
    cursor = 0
    for b in range(n_batches):
        room = batch_size - len(batches[b])
        take = min(room, pool.shape[0] - cursor)
        batch = np.concatenate([np.asarray(batches[b], dtype=np.int64), pool[cursor : cursor + take]])
        cursor += take
        yield batch
