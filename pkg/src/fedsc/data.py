"""Synthetic datasets, heterogeneous client partitions, and the FSD1 file format.

Labels are 1-based class ids in ``{1..num_classes}`` throughout; arrays that
are indexed by class use row ``j`` for label ``j + 1``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidArgumentError,
    MalformedHeaderError,
    TruncatedFileError,
)

_MAGIC = b"FSD1"
_HEADER = struct.Struct("<4sIII")


@dataclass
class Dataset:
    """A labelled feature matrix.

    Attributes:
        features: float32 array of shape (num_samples, dim).
        labels: int64 array of 1-based class ids, shape (num_samples,).
        num_classes: number of classes the label space covers.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DimensionMismatchError("features must be 2-d (samples x dim)")
        if self.labels.shape != (self.features.shape[0],):
            raise DimensionMismatchError(
                f"labels shape {self.labels.shape} does not match "
                f"{self.features.shape[0]} samples"
            )
        if self.num_classes < 1:
            raise InvalidArgumentError("num_classes must be >= 1")
        if self.labels.size and (
            self.labels.min() < 1 or self.labels.max() > self.num_classes
        ):
            raise InvalidArgumentError(
                f"labels must lie in 1..{self.num_classes}"
            )

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        """Per-class sample counts; entry j counts label j + 1."""
        return np.bincount(self.labels - 1, minlength=self.num_classes)

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)


@dataclass
class ClientDataset:
    """One client's local shard. Clients are 1-based, never empty."""

    client_id: int
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    class_counts: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.client_id < 1:
            raise InvalidArgumentError("client_id must be >= 1")
        ds = Dataset(self.features, self.labels, self.num_classes)
        self.features, self.labels = ds.features, ds.labels
        if self.features.shape[0] < 1:
            raise InvalidArgumentError(f"client {self.client_id} has no samples")
        self.class_counts = ds.class_counts()

    @property
    def total(self) -> int:
        return self.features.shape[0]


@dataclass
class PartitionConfig:
    """How a global dataset is split across clients.

    ``scheme`` is one of ``dirichlet``, ``biased``, ``long_tailed``.  The
    long-tailed scheme thins the global dataset by ``rho`` first and then
    partitions with ``inner_scheme``.
    """

    scheme: str = "dirichlet"
    num_clients: int = 10
    alpha: float = 0.2
    rho: float = 100.0
    inner_scheme: str = "dirichlet"
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in ("dirichlet", "biased", "long_tailed"):
            raise InvalidArgumentError(f"unknown partition scheme '{self.scheme}'")
        if self.inner_scheme not in ("dirichlet", "biased"):
            raise InvalidArgumentError(
                f"unknown inner partition scheme '{self.inner_scheme}'"
            )
        if self.num_clients < 2:
            raise InvalidArgumentError("num_clients must be >= 2")
        if self.alpha <= 0:
            raise InvalidArgumentError("alpha must be > 0")
        if self.rho < 1:
            raise InvalidArgumentError("rho must be >= 1")


def generate_gaussian_blobs(
    num_classes: int,
    per_class_count: int,
    dim: int,
    separation: float = 4.0,
    seed: int = 0,
) -> Dataset:
    """Sample an isotropic Gaussian blob per class.

    Class means are drawn by rejection so every pair sits at least
    ``separation`` apart (unit noise scale); samples are mean + N(0, I).

    Args:
        num_classes: number of blobs, >= 2.
        per_class_count: samples per class, >= 1.
        dim: feature dimensionality, >= 2.
        separation: minimum pairwise distance between class means.
        seed: RNG seed; output is a pure function of the arguments.
    """
    if num_classes < 2:
        raise InvalidArgumentError("num_classes must be >= 2")
    if per_class_count < 1:
        raise InvalidArgumentError("per_class_count must be >= 1")
    if dim < 2:
        raise InvalidArgumentError("dim must be >= 2")
    if separation <= 0:
        raise InvalidArgumentError("separation must be > 0")

    rng = np.random.default_rng(seed)
    radius = separation * max(1.0, float(num_classes) ** (1.0 / dim))
    means: list[np.ndarray] = []
    misses = 0
    while len(means) < num_classes:
        cand = rng.uniform(-radius, radius, size=dim)
        if all(np.linalg.norm(cand - m) >= separation for m in means):
            means.append(cand)
            misses = 0
        else:
            # widen the search box if placement keeps colliding
            misses += 1
            if misses >= 64:
                radius *= 1.5
                misses = 0

    features = np.empty((num_classes * per_class_count, dim))
    labels = np.empty(num_classes * per_class_count, dtype=np.int64)
    for j, mean in enumerate(means):
        block = slice(j * per_class_count, (j + 1) * per_class_count)
        features[block] = mean + rng.standard_normal((per_class_count, dim))
        labels[block] = j + 1
    return Dataset(features, labels, num_classes)


def split_holdout(
    dataset: Dataset, fraction: float = 0.1, seed: int = 0
) -> tuple[Dataset, Dataset]:
    """Hold out ``fraction`` of every class (at least one sample) for evaluation.

    Returns (train, heldout); both preserve the original sample order.
    """
    if not 0 < fraction < 1:
        raise InvalidArgumentError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    held = []
    for j in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == j + 1)
        if idx.size < 2:
            raise InvalidArgumentError(
                f"class {j + 1} needs >= 2 samples to hold out a split"
            )
        take = max(1, int(round(fraction * idx.size)))
        held.append(rng.choice(idx, size=take, replace=False))
    held_idx = np.sort(np.concatenate(held))
    mask = np.zeros(dataset.num_samples, dtype=bool)
    mask[held_idx] = True
    return dataset.subset(~mask), dataset.subset(mask)


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total``; ties go to the lower index."""
    ideal = proportions * total
    counts = np.floor(ideal).astype(np.int64)
    left = total - int(counts.sum())
    if left > 0:
        order = np.argsort(-(ideal - counts), kind="stable")
        counts[order[:left]] += 1
    return counts


def partition_dirichlet(
    dataset: Dataset, num_clients: int, alpha: float, seed: int = 0
) -> list[ClientDataset]:
    """Split a dataset across clients with Dirichlet(alpha) class proportions.

    Per class, client shares are drawn from Dirichlet(alpha * 1_K) and turned
    into integer counts by largest-remainder rounding.  Clients left empty by
    rounding receive one sample reassigned from the largest client, so every
    client ends with at least one sample.
    """
    if num_clients < 1:
        raise InvalidArgumentError("num_clients must be >= 1")
    if alpha <= 0:
        raise InvalidArgumentError("alpha must be > 0")
    if num_clients > dataset.num_samples:
        raise InvalidArgumentError(
            f"cannot split {dataset.num_samples} samples across {num_clients} clients"
        )

    rng = np.random.default_rng(seed)
    assigned: list[list[np.ndarray]] = [
        [np.empty(0, dtype=np.int64) for _ in range(dataset.num_classes)]
        for _ in range(num_clients)
    ]
    for j in range(dataset.num_classes):
        idx = rng.permutation(np.flatnonzero(dataset.labels == j + 1))
        if idx.size == 0:
            continue
        shares = rng.dirichlet(np.full(num_clients, alpha))
        counts = _largest_remainder(shares, idx.size)
        stops = np.cumsum(counts)
        start = 0
        for k in range(num_clients):
            assigned[k][j] = idx[start : stops[k]]
            start = stops[k]

    totals = np.array([sum(a.size for a in per) for per in assigned])
    while (totals == 0).any():
        empty = int(np.argmin(totals))
        donor = int(np.argmax(totals))
        donor_class = int(np.argmax([a.size for a in assigned[donor]]))
        moved = assigned[donor][donor_class][-1:]
        assigned[donor][donor_class] = assigned[donor][donor_class][:-1]
        assigned[empty][donor_class] = moved
        totals[donor] -= 1
        totals[empty] += 1

    clients = []
    for k in range(num_clients):
        idx = np.sort(np.concatenate(assigned[k]))
        clients.append(
            ClientDataset(k + 1, dataset.features[idx], dataset.labels[idx],
                          dataset.num_classes)
        )
    return clients


def partition_biased(
    dataset: Dataset,
    num_clients: int,
    seed: int = 0,
    full_client_fraction: float = 0.1,
) -> list[ClientDataset]:
    """Block-biased split: K-1 clients own disjoint class blocks, one sees all.

    Client K first receives ``full_client_fraction`` of every class (at least
    one sample per class); the remaining samples of each class block go to the
    block's owner.  Requires num_classes divisible by num_clients - 1.
    """
    if num_clients < 2:
        raise InvalidArgumentError("num_clients must be >= 2")
    if dataset.num_classes % (num_clients - 1) != 0:
        raise InvalidArgumentError(
            f"{dataset.num_classes} classes do not split evenly across "
            f"{num_clients - 1} biased clients"
        )
    if not 0 < full_client_fraction < 1:
        raise InvalidArgumentError("full_client_fraction must lie in (0, 1)")

    rng = np.random.default_rng(seed)
    block = dataset.num_classes // (num_clients - 1)
    full_parts: list[np.ndarray] = []
    rest_by_class: list[np.ndarray] = []
    for j in range(dataset.num_classes):
        idx = rng.permutation(np.flatnonzero(dataset.labels == j + 1))
        if idx.size < 2:
            raise InvalidArgumentError(
                f"class {j + 1} needs >= 2 samples for a biased split"
            )
        take = max(1, int(np.floor(full_client_fraction * idx.size)))
        full_parts.append(idx[:take])
        rest_by_class.append(idx[take:])

    clients = []
    for k in range(num_clients - 1):
        idx = np.sort(np.concatenate(rest_by_class[k * block : (k + 1) * block]))
        clients.append(
            ClientDataset(k + 1, dataset.features[idx], dataset.labels[idx],
                          dataset.num_classes)
        )
    idx = np.sort(np.concatenate(full_parts))
    clients.append(
        ClientDataset(num_clients, dataset.features[idx], dataset.labels[idx],
                      dataset.num_classes)
    )
    return clients


def long_tail_profile(n_max: int, num_classes: int, rho: float) -> np.ndarray:
    """Kept-per-class counts floor(n_max * rho^(-j / (num_classes - 1)))."""
    if rho < 1:
        raise InvalidArgumentError("rho must be >= 1")
    if num_classes < 2:
        raise InvalidArgumentError("num_classes must be >= 2")
    j = np.arange(num_classes)
    return np.floor(n_max * rho ** (-j / (num_classes - 1))).astype(np.int64)


def apply_long_tail(dataset: Dataset, rho: float, seed: int = 0) -> Dataset:
    """Thin a class-balanced dataset to an exponential long-tail profile.

    Class j keeps floor(n_max * rho^(-j / (|C| - 1))) samples, chosen at
    random; surviving samples keep their original order, so rho = 1 is the
    identity.
    """
    counts = dataset.class_counts()
    if counts.size < 2:
        raise InvalidArgumentError("long-tail thinning needs >= 2 classes")
    if not (counts == counts[0]).all():
        raise InvalidArgumentError(
            "long-tail thinning expects a class-balanced dataset"
        )
    keep = long_tail_profile(int(counts[0]), dataset.num_classes, rho)
    if keep[-1] < 1:
        raise InvalidArgumentError(
            f"rho={rho} empties the rarest class ({counts[0]} per class)"
        )
    rng = np.random.default_rng(seed)
    chosen = []
    for j in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == j + 1)
        chosen.append(rng.choice(idx, size=keep[j], replace=False))
    return dataset.subset(np.sort(np.concatenate(chosen)))


def partition_dataset(dataset: Dataset, config: PartitionConfig) -> list[ClientDataset]:
    """Apply a PartitionConfig. Long-tail thinning happens before partitioning."""
    scheme = config.scheme
    if scheme == "long_tailed":
        dataset = apply_long_tail(dataset, config.rho, config.seed)
        scheme = config.inner_scheme
    if scheme == "dirichlet":
        return partition_dirichlet(dataset, config.num_clients, config.alpha, config.seed)
    return partition_biased(dataset, config.num_clients, config.seed)


def save_dataset(path, dataset: Dataset) -> None:
    """Write the FSD1 container: magic, u32 counts, then f32 rows + u32 labels."""
    record = np.dtype([("x", "<f4", (dataset.dim,)), ("y", "<u4")])
    body = np.empty(dataset.num_samples, dtype=record)
    body["x"] = dataset.features
    body["y"] = dataset.labels.astype(np.uint32)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, dataset.num_samples, dataset.dim,
                              dataset.num_classes))
        fh.write(body.tobytes())


def load_dataset(path) -> Dataset:
    """Read an FSD1 container written by :func:`save_dataset`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise MalformedHeaderError(f"{path}: header truncated at {len(raw)} bytes")
    magic, n, dim, num_classes = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    if dim < 1 or num_classes < 1:
        raise DimensionMismatchError(
            f"{path}: header declares dim={dim}, num_classes={num_classes}"
        )
    expected = _HEADER.size + n * (4 * dim + 4)
    if len(raw) != expected:
        raise TruncatedFileError(
            f"{path}: expected {expected} bytes for {n} samples, found {len(raw)}"
        )
    record = np.dtype([("x", "<f4", (dim,)), ("y", "<u4")])
    body = np.frombuffer(raw, dtype=record, offset=_HEADER.size)
    # frombuffer views are read-only; copy into owned arrays
    features = np.array(body["x"].reshape(n, dim), dtype=np.float32)
    labels = body["y"].astype(np.int64)
    return Dataset(features, labels, num_classes)
