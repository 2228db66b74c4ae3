"""Datasets, the IDX reader, and the label-skew client splitter."""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (s, input_dim), values in [0, 1]
    labels: np.ndarray  # (s,) ints in [0, classes)
    classes: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or labels.ndim != 1 or len(features) != len(labels):
            raise ValueError("features must be (s, d) with s labels")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.classes):
            raise ValueError(f"labels must lie in [0, {self.classes})")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.classes)


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    train: Dataset
    test: Dataset
    label_set: tuple
    train_index: np.ndarray  # row indices into the partitioned dataset
    test_index: np.ndarray


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _header(raw, path, magic, n_dims):
    need = 4 * (1 + n_dims)
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header at offset 0")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise IdxFormatError(
            f"{path}: bad magic 0x{found:08x} at offset 0, expected 0x{magic:08x}")
    if len(raw) < need:
        raise IdxFormatError(f"{path}: truncated header at offset {len(raw)}")
    return struct.unpack(f">{n_dims}I", raw[4:need]), need


def load_idx(images_path, labels_path, classes: int = 10) -> Dataset:
    """Read an IDX image/label pair (optionally gzip-compressed).

    Pixels are scaled from ``0..255`` to ``[0, 1]`` and flattened row-major.
    """
    raw_images = _read_bytes(images_path)
    (count, rows, cols), offset = _header(raw_images, images_path, IMAGE_MAGIC, 3)
    expected = count * rows * cols
    pixels = raw_images[offset:]
    if len(pixels) < expected:
        raise IdxFormatError(
            f"{images_path}: truncated pixel data at offset {offset + len(pixels)}, "
            f"expected {expected} bytes after offset {offset}")
    raw_labels = _read_bytes(labels_path)
    (n_labels,), loff = _header(raw_labels, labels_path, LABEL_MAGIC, 1)
    if n_labels != count:
        raise IdxFormatError(
            f"image count {count} does not match label count {n_labels}")
    label_bytes = raw_labels[loff:]
    if len(label_bytes) < n_labels:
        raise IdxFormatError(
            f"{labels_path}: truncated label data at offset {loff + len(label_bytes)}")
    images = np.frombuffer(pixels[:expected], dtype=np.uint8).reshape(count, rows * cols)
    labels = np.frombuffer(label_bytes[:n_labels], dtype=np.uint8).astype(np.int64)
    return Dataset(images.astype(np.float64) / 255.0, labels, classes)


def write_idx(images_path, labels_path, images, labels, compress: bool = False):
    """Write uint8 images (count, rows, cols) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    img = struct.pack(">4I", IMAGE_MAGIC, count, rows, cols) + images.tobytes()
    lab = struct.pack(">2I", LABEL_MAGIC, len(labels)) + labels.tobytes()
    for path, payload in ((images_path, img), (labels_path, lab)):
        if compress:
            payload = gzip.compress(payload, mtime=0)
        Path(path).write_bytes(payload)


def blob_means(classes: int, dim: int) -> np.ndarray:
    """Deterministic class centres inside the unit cube.

    Coordinate ``d`` is raised for class ``d mod classes``; when there are
    fewer coordinates than classes the binary code of the class is used.
    """
    means = np.full((classes, dim), 0.25)
    if dim >= classes:
        for d in range(dim):
            means[d % classes, d] = 0.75
    else:
        if 2 ** dim < classes:
            raise ValueError(f"dim={dim} cannot separate {classes} classes")
        for c in range(classes):
            bits = [(c >> b) & 1 for b in range(dim)]
            means[c] = 0.25 + 0.5 * np.array(bits)
    return means


def synth_blobs(classes: int, per_class: int, dim: int, spread: float, rng) -> Dataset:
    """Gaussian blobs ``N(mu_c, spread^2 I)`` clipped to ``[0, 1]``."""
    if min(classes, per_class, dim) < 1:
        raise ValueError("classes, per_class and dim must be >= 1")
    means = blob_means(classes, dim)
    labels = np.repeat(np.arange(classes), per_class)
    noise = rng.standard_normal((len(labels), dim)) * spread
    features = np.clip(means[labels] + noise, 0.0, 1.0)
    return Dataset(features, labels, classes)


def assign_labels(num_clients: int, classes: int, labels_per_client: int, rng):
    """Give every client ``labels_per_client`` distinct labels.

    Round-robin: the ``K * L`` slots, taken client by client, cycle through
    the labels, so label usage differs by at most one. The label order and
    the client order are random permutations.
    """
    if not 1 <= labels_per_client <= classes:
        raise ValueError("labels_per_client must lie in [1, classes]")
    label_order = rng.permutation(classes)
    client_order = rng.permutation(num_clients)
    held = [None] * num_clients
    for pos, k in enumerate(client_order):
        slots = pos * labels_per_client + np.arange(labels_per_client)
        held[k] = tuple(sorted(int(c) for c in label_order[slots % classes]))
    return held


def partition_label_skew(data: Dataset, num_clients: int, labels_per_client: int,
                         test_fraction: float, rng) -> list[ClientShard]:
    """Split ``data`` into label-skewed client shards.

    Samples of each label are shuffled and divided evenly among the clients
    holding that label; each client then holds out ``test_fraction`` of its
    samples, stratified by label.
    """
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must lie in [0, 1)")
    label_sets = assign_labels(num_clients, data.classes, labels_per_client, rng)
    holders = {c: [k for k in range(num_clients) if c in label_sets[k]]
               for c in range(data.classes)}
    per_client = [dict() for _ in range(num_clients)]
    for c in range(data.classes):
        if not holders[c]:
            continue
        idx = np.flatnonzero(data.labels == c)
        if len(idx) < len(holders[c]):
            raise ValueError(
                f"label {c} has {len(idx)} samples for {len(holders[c])} clients")
        idx = rng.permutation(idx)
        for k, part in zip(holders[c], np.array_split(idx, len(holders[c]))):
            per_client[k][c] = part

    shards = []
    for k in range(num_clients):
        train_parts, test_parts = [], []
        for c in label_sets[k]:
            part = per_client[k][c]
            n_test = int(round(test_fraction * len(part)))
            if len(part) > 1:
                n_test = min(n_test, len(part) - 1)
            else:
                n_test = 0
            test_parts.append(part[:n_test])
            train_parts.append(part[n_test:])
        train_idx = np.sort(np.concatenate(train_parts))
        test_idx = np.sort(np.concatenate(test_parts))
        shards.append(ClientShard(k, data.subset(train_idx), data.subset(test_idx),
                                  label_sets[k], train_idx, test_idx))
    return shards


def partition_manifest(shards) -> dict:
    return {
        str(s.client_id): {
            "label_set": [int(c) for c in s.label_set],
            "n_train": len(s.train),
            "n_test": len(s.test),
            "train_counts": {str(c): int(np.sum(s.train.labels == c)) for c in s.label_set},
            "test_counts": {str(c): int(np.sum(s.test.labels == c)) for c in s.label_set},
        }
        for s in shards
    }


def write_partition_manifest(shards, path) -> None:
    Path(path).write_text(json.dumps(partition_manifest(shards), indent=2, sort_keys=True))
