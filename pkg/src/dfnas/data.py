"""Datasets: synthetic generators, IID and Dirichlet partitioning, disk format.

Synthetic geometries stand in for image benchmarks at desk scale:

* ``blobs``   - Gaussian clusters in D dimensions, linearly separable at noise 0.
* ``rings``   - concentric 2-D rings, separable only with a nonlinearity.
* ``patches`` - oriented gratings with random phase; per-pixel marginals are
  identical across classes, so spatial filters are required and purely linear
  (identity-only) paths stay near chance.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, FormatError

DATASET_MAGIC = b"DFND"
DATASET_VERSION = 1


@dataclass
class Dataset:
    """Features (N x C x H x W or N x D), integer labels, class count."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim not in (2, 4):
            raise DataError(f"features must be rank 2 or 4, got {self.features.ndim}")
        n = self.features.shape[0]
        if n < 1:
            raise DataError("dataset is empty")
        if self.labels.shape != (n,):
            raise DataError(f"labels shape {self.labels.shape} does not match N={n}")
        if self.num_classes < 1:
            raise DataError(f"num_classes must be >= 1, got {self.num_classes}")
        if ((self.labels < 0) | (self.labels >= self.num_classes)).any():
            bad = int(np.nonzero((self.labels < 0) | (self.labels >= self.num_classes))[0][0])
            raise DataError(
                f"label {int(self.labels[bad])} at index {bad} outside "
                f"[0, {self.num_classes})"
            )

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.features.shape[1:]

    def subset(self, indices: np.ndarray, access_log: list | None = None) -> "Dataset":
        """Materialize a shard; optionally record which parent rows were read."""
        indices = np.asarray(indices, dtype=np.int64)
        if access_log is not None:
            access_log.append(indices.copy())
        return Dataset(
            features=self.features[indices].copy(),
            labels=self.labels[indices].copy(),
            num_classes=self.num_classes,
        )


@dataclass(frozen=True)
class DataSpec:
    """Everything a generator needs; fully determines the dataset given a seed."""

    kind: str  # blobs | rings | patches
    n_samples: int
    num_classes: int
    noise: float = 0.1
    feature_dim: int = 8  # blobs/rings
    image_channels: int = 1  # patches
    image_size: int = 8  # patches


def _balanced_counts(n: int, classes: int) -> np.ndarray:
    counts = np.full(classes, n // classes, dtype=np.int64)
    counts[: n % classes] += 1
    return counts


def generate_synthetic(spec: DataSpec, rng: np.random.Generator) -> Dataset:
    """Deterministic balanced dataset of the requested geometry."""
    if spec.n_samples < 1:
        raise ConfigurationError(f"n_samples must be >= 1, got {spec.n_samples}")
    if spec.num_classes < 2:
        raise ConfigurationError(f"num_classes must be >= 2, got {spec.num_classes}")
    if spec.noise < 0:
        raise ConfigurationError(f"noise must be >= 0, got {spec.noise}")

    counts = _balanced_counts(spec.n_samples, spec.num_classes)
    labels = np.repeat(np.arange(spec.num_classes), counts)

    if spec.kind == "blobs":
        if spec.feature_dim < spec.num_classes:
            raise ConfigurationError(
                f"blobs need feature_dim >= num_classes, got "
                f"{spec.feature_dim} < {spec.num_classes}"
            )
        means = np.zeros((spec.num_classes, spec.feature_dim))
        means[np.arange(spec.num_classes), np.arange(spec.num_classes)] = 3.0
        features = means[labels] + spec.noise * rng.normal(
            size=(spec.n_samples, spec.feature_dim)
        )
    elif spec.kind == "rings":
        if spec.feature_dim < 2:
            raise ConfigurationError("rings need feature_dim >= 2")
        radius = 1.0 + labels.astype(np.float64)
        angle = rng.uniform(0.0, 2.0 * np.pi, size=spec.n_samples)
        r = radius + spec.noise * rng.normal(size=spec.n_samples)
        features = np.zeros((spec.n_samples, spec.feature_dim))
        features[:, 0] = r * np.cos(angle)
        features[:, 1] = r * np.sin(angle)
        if spec.feature_dim > 2:
            features[:, 2:] = spec.noise * rng.normal(
                size=(spec.n_samples, spec.feature_dim - 2)
            )
    elif spec.kind == "patches":
        features = _oriented_gratings(spec, labels, rng)
    else:
        raise ConfigurationError(f"unknown dataset kind {spec.kind!r}")

    perm = rng.permutation(spec.n_samples)
    return Dataset(features=features[perm], labels=labels[perm], num_classes=spec.num_classes)


def _oriented_gratings(
    spec: DataSpec, labels: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Per class: a sinusoidal grating at a class-specific orientation.

    The phase is uniform per sample, so class means are ~zero everywhere and a
    linear readout of raw pixels carries no class signal.
    """
    size = spec.image_size
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    angles = np.pi * labels / spec.num_classes
    freq = 2.0 * 2.0 * np.pi / size  # two full cycles across the patch
    phase = rng.uniform(0.0, 2.0 * np.pi, size=labels.shape[0])
    proj = (
        np.cos(angles)[:, None, None] * xx[None] + np.sin(angles)[:, None, None] * yy[None]
    )
    img = np.cos(freq * proj + phase[:, None, None])
    img = img[:, None, :, :]  # single drawn channel
    if spec.image_channels > 1:
        img = np.repeat(img, spec.image_channels, axis=1)
    img = img + spec.noise * rng.normal(size=img.shape)
    return img


# ---------------------------------------------------------------------------
# partitioning


@dataclass
class Partition:
    """Disjoint per-client index lists covering the parent dataset exactly."""

    client_indices: list[np.ndarray]
    parent_size: int = field(default=0)

    def __post_init__(self):
        self.client_indices = [np.asarray(ix, dtype=np.int64) for ix in self.client_indices]
        merged = (
            np.concatenate(self.client_indices)
            if self.client_indices
            else np.empty(0, dtype=np.int64)
        )
        if self.parent_size == 0:
            self.parent_size = int(merged.size)
        uniq = np.unique(merged)
        if uniq.size != merged.size:
            raise DataError("partition assigns a sample to more than one client")
        if merged.size != self.parent_size or (
            merged.size and (uniq[0] != 0 or uniq[-1] != self.parent_size - 1)
        ):
            raise DataError("partition does not cover the dataset exactly")

    @property
    def num_clients(self) -> int:
        return len(self.client_indices)

    def sizes(self) -> list[int]:
        return [int(ix.size) for ix in self.client_indices]


def iid_split(dataset: Dataset, num_clients: int, rng: np.random.Generator) -> Partition:
    """Seeded shuffle into near-equal shards (sizes differ by at most one)."""
    n = len(dataset)
    if num_clients < 1 or num_clients > n:
        raise ConfigurationError(f"cannot split {n} samples into {num_clients} clients")
    perm = rng.permutation(n)
    sizes = _balanced_counts(n, num_clients)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    shards = [perm[bounds[i] : bounds[i + 1]] for i in range(num_clients)]
    return Partition(client_indices=shards, parent_size=n)


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation of `total` by proportions, conserving the sum exactly."""
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        remainders = raw - counts
        # ties broken by lowest index for determinism
        order = np.lexsort((np.arange(len(raw)), -remainders))
        counts[order[:short]] += 1
    return counts


def dirichlet_split(
    dataset: Dataset,
    num_clients: int,
    concentration: float,
    rng: np.random.Generator,
    max_retries: int = 10,
) -> Partition:
    """Class-skewed shards: per class, client proportions drawn from a
    symmetric Dirichlet, allocated by largest-remainder rounding.

    Redraws (up to `max_retries`) if some client ends up with zero samples.
    """
    if num_clients < 1:
        raise ConfigurationError(f"num_clients must be >= 1, got {num_clients}")
    if concentration <= 0:
        raise ConfigurationError(f"concentration must be > 0, got {concentration}")

    for _ in range(max_retries):
        shards: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
        for c in range(dataset.num_classes):
            class_idx = np.nonzero(dataset.labels == c)[0]
            if class_idx.size == 0:
                continue
            if num_clients == 1:
                proportions = np.ones(1)
            else:
                proportions = rng.dirichlet(np.full(num_clients, concentration))
            counts = _largest_remainder(proportions, class_idx.size)
            bounds = np.concatenate([[0], np.cumsum(counts)])
            for k in range(num_clients):
                shards[k].append(class_idx[bounds[k] : bounds[k + 1]])
        client_indices = [
            np.sort(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)
            for parts in shards
        ]
        if all(ix.size > 0 for ix in client_indices):
            return Partition(client_indices=client_indices, parent_size=len(dataset))
    raise DataError(
        f"dirichlet partition left a client empty after {max_retries} draws "
        f"(K={num_clients}, concentration={concentration})"
    )


# ---------------------------------------------------------------------------
# disk format


def save_dataset(dataset: Dataset, path) -> None:
    """Little-endian binary: magic, version, classes, rank, dims, f64 features,
    u32 labels."""
    shape = dataset.features.shape
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<II", DATASET_VERSION, dataset.num_classes))
        fh.write(struct.pack("<B", len(shape)))
        fh.write(struct.pack(f"<{len(shape)}I", *shape))
        fh.write(np.ascontiguousarray(dataset.features, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.labels, dtype="<u4").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    view = memoryview(raw)
    if len(view) < 13:
        raise FormatError(f"dataset file truncated at byte {len(view)}: header incomplete")
    if bytes(view[:4]) != DATASET_MAGIC:
        raise FormatError(f"bad dataset magic {bytes(view[:4])!r}")
    version, num_classes = struct.unpack("<II", view[4:12])
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    rank = view[12]
    offset = 13
    if offset + 4 * rank > len(view):
        raise FormatError(f"dataset file truncated at byte {offset}")
    shape = struct.unpack_from(f"<{rank}I", view, offset)
    offset += 4 * rank
    numel = 1
    for d in shape:
        numel *= d
    n = shape[0] if rank else 0
    need = 8 * numel + 4 * n
    if offset + need != len(view):
        raise FormatError(
            f"dataset file has {len(view) - offset} payload bytes at offset {offset}, "
            f"expected {need}"
        )
    features = np.frombuffer(view, dtype="<f8", count=numel, offset=offset).reshape(shape)
    offset += 8 * numel
    labels = np.frombuffer(view, dtype="<u4", count=n, offset=offset).astype(np.int64)
    return Dataset(features=features.copy(), labels=labels, num_classes=int(num_classes))


def load_csv(path, num_classes: int | None = None) -> Dataset:
    """Import `label,f0,f1,...` rows (small hand-made fixtures)."""
    rows: list[list[float]] = []
    labels: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            try:
                labels.append(int(parts[0]))
                rows.append([float(v) for v in parts[1:]])
            except ValueError as err:
                raise FormatError(f"bad CSV value on line {line_no}: {err}") from None
            if len(rows) > 1 and len(rows[-1]) != len(rows[0]):
                raise FormatError(f"inconsistent column count on line {line_no}")
    if not rows:
        raise FormatError("CSV contains no samples")
    label_arr = np.asarray(labels, dtype=np.int64)
    classes = num_classes if num_classes is not None else int(label_arr.max()) + 1
    return Dataset(
        features=np.asarray(rows, dtype=np.float64), labels=label_arr, num_classes=classes
    )
