"""Prototype collaboration pipeline.

Per round the server turns client class prototypes into relational and
consistent prototypes:

    client means -> global means -> angular differences -> top-M adjacency
    -> relational prototypes -> discrepancy-aware weights -> consistent
    prototypes

Class axes are 0-based (row j holds label j + 1); client axes follow the
1-based client ids in ascending order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ClassUnsupportedError,
    DegeneratePrototypeError,
    DimensionMismatchError,
    EmptyClientError,
    InvalidArgumentError,
)

_EPS = 1e-12


@dataclass
class PrototypeSet:
    """One client's per-class feature means.

    ``vectors[j]`` is meaningful only where ``present[j]`` is True (the owner
    holds at least one sample of class j + 1).
    """

    vectors: np.ndarray  # (num_classes, d)
    present: np.ndarray  # (num_classes,) bool
    owner: int = 0

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.present = np.asarray(self.present, dtype=bool)
        if self.vectors.ndim != 2 or self.present.shape != (self.vectors.shape[0],):
            raise DimensionMismatchError("prototype set shapes are inconsistent")


@dataclass
class GlobalPrototypes:
    """Average of client prototypes over the clients that hold each class."""

    vectors: np.ndarray        # (num_classes, d)
    support_count: np.ndarray  # (num_classes,) int


@dataclass
class AngularTable:
    """Cosine of each client prototype against the global one, per class."""

    phi: np.ndarray    # (num_classes, num_clients)
    valid: np.ndarray  # (num_classes, num_clients) bool


@dataclass
class AdjacencyTensor:
    """Per class, each client's self-plus-top-M angular neighbourhood."""

    a: np.ndarray  # (num_classes, num_clients, num_clients) uint8


@dataclass
class RelationalSet:
    """Neighbourhood-averaged prototypes r[j, k]."""

    r: np.ndarray      # (num_classes, num_clients, d)
    valid: np.ndarray  # (num_classes, num_clients) bool


@dataclass
class DiscrepancyWeights:
    """Sigmoid weights favouring large, label-balanced clients."""

    discrepancies: np.ndarray  # (num_clients,)
    weights: np.ndarray        # (num_clients,) nonnegative, sums to 1
    a: float
    b: float


@dataclass
class ConsistentSet:
    """Weight-averaged relational prototypes o[j], one row per class."""

    o: np.ndarray        # (num_classes, d)
    present: np.ndarray  # (num_classes,) bool


@dataclass
class Collaboration:
    """Everything the server derives from one batch of prototype sets."""

    global_prototypes: GlobalPrototypes
    angular: AngularTable
    adjacency: AdjacencyTensor
    relational: RelationalSet
    weights: DiscrepancyWeights
    consistent: ConsistentSet


def compute_client_prototypes(
    features_by_class: list[np.ndarray], d: int, num_classes: int, owner: int = 0
) -> PrototypeSet:
    """Mean feature vector per class; absent classes get a False mask entry.

    Args:
        features_by_class: one (n_j, d) array per class, n_j may be 0.
        d: feature dimensionality.
        num_classes: length the class axis must have.
        owner: 1-based id of the owning client (0 = unowned).
    """
    if len(features_by_class) != num_classes:
        raise DimensionMismatchError(
            f"expected {num_classes} class groups, got {len(features_by_class)}"
        )
    vectors = np.zeros((num_classes, d))
    present = np.zeros(num_classes, dtype=bool)
    for j, feats in enumerate(features_by_class):
        feats = np.asarray(feats, dtype=np.float64)
        if feats.size == 0:
            continue
        if feats.ndim != 2 or feats.shape[1] != d:
            raise DimensionMismatchError(
                f"class {j + 1} features have shape {feats.shape}, expected (*, {d})"
            )
        vectors[j] = feats.mean(axis=0)
        present[j] = True
    return PrototypeSet(vectors, present, owner)


def prototypes_from_features(
    z: np.ndarray, labels: np.ndarray, num_classes: int, owner: int = 0
) -> PrototypeSet:
    """Group a labelled feature matrix by class and average it."""
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    groups = [z[labels == j + 1] for j in range(num_classes)]
    return compute_client_prototypes(groups, z.shape[1], num_classes, owner)


def compute_global_prototypes(
    sets: list[PrototypeSet], allow_missing: bool = False
) -> GlobalPrototypes:
    """Average client prototypes per class over the clients that hold it.

    Raises class-unsupported if some class has no supporting client, unless
    ``allow_missing`` is set (then its row is zero with support_count 0).
    """
    if not sets:
        raise InvalidArgumentError("need at least one prototype set")
    vectors = np.stack([s.vectors for s in sets])   # (K, C, d)
    present = np.stack([s.present for s in sets])   # (K, C)
    support = present.sum(axis=0)
    if not allow_missing and (support == 0).any():
        missing = int(np.flatnonzero(support == 0)[0]) + 1
        raise ClassUnsupportedError(f"no client holds class {missing}")
    masked = np.where(present[:, :, None], vectors, 0.0)
    totals = masked.sum(axis=0)
    denom = np.maximum(support, 1)[:, None]
    return GlobalPrototypes(totals / denom, support.astype(np.int64))


def angular_differences(
    global_prototypes: GlobalPrototypes, sets: list[PrototypeSet]
) -> AngularTable:
    """Cosine similarity phi[j, k] between g_j and client k's prototype.

    Entries are valid where the client holds the class and the class has
    global support.  A zero-norm prototype on a valid entry is degenerate.
    """
    g = global_prototypes.vectors
    num_classes = g.shape[0]
    num_clients = len(sets)
    phi = np.zeros((num_classes, num_clients))
    valid = np.zeros((num_classes, num_clients), dtype=bool)
    g_norm = np.linalg.norm(g, axis=1)
    for k, s in enumerate(sets):
        for j in range(num_classes):
            if not s.present[j] or global_prototypes.support_count[j] == 0:
                continue
            c_norm = np.linalg.norm(s.vectors[j])
            if g_norm[j] < _EPS or c_norm < _EPS:
                raise DegeneratePrototypeError(
                    f"zero-norm prototype for class {j + 1}, client {s.owner or k + 1}"
                )
            phi[j, k] = float(g[j] @ s.vectors[j] / (g_norm[j] * c_norm))
            valid[j, k] = True
    return AngularTable(phi, valid)


def build_adjacency(table: AngularTable, neighbors: int) -> AdjacencyTensor:
    """Self plus the M clients with closest angular difference, per class.

    Neighbour candidates are the other clients valid for the class; ties on
    the absolute angular difference go to the lower client index.  Rows for
    clients that lack the class stay all-zero.
    """
    if neighbors < 0:
        raise InvalidArgumentError("neighbors must be >= 0")
    num_classes, num_clients = table.phi.shape
    a = np.zeros((num_classes, num_clients, num_clients), dtype=np.uint8)
    for j in range(num_classes):
        valid_idx = np.flatnonzero(table.valid[j])
        for k in valid_idx:
            a[j, k, k] = 1
            others = valid_idx[valid_idx != k]
            if others.size == 0 or neighbors == 0:
                continue
            diffs = np.abs(table.phi[j, others] - table.phi[j, k])
            order = np.argsort(diffs, kind="stable")
            for q in others[order[: min(neighbors, others.size)]]:
                a[j, k, q] = 1
    return AdjacencyTensor(a)


def relational_prototypes(
    adjacency: AdjacencyTensor, sets: list[PrototypeSet]
) -> RelationalSet:
    """Average each client's selected neighbourhood of class prototypes."""
    num_classes, num_clients, _ = adjacency.a.shape
    if len(sets) != num_clients:
        raise DimensionMismatchError(
            f"adjacency covers {num_clients} clients, got {len(sets)} sets"
        )
    d = sets[0].vectors.shape[1]
    vectors = np.stack([s.vectors for s in sets])  # (K, C, d)
    r = np.zeros((num_classes, num_clients, d))
    valid = np.zeros((num_classes, num_clients), dtype=bool)
    for j in range(num_classes):
        for k in range(num_clients):
            row = adjacency.a[j, k]
            count = int(row.sum())
            if count == 0:
                continue
            r[j, k] = (row[:, None] * vectors[:, j, :]).sum(axis=0) / count
            valid[j, k] = True
    return RelationalSet(r, valid)


def client_discrepancy(class_counts: np.ndarray) -> float:
    """Distance of a client's label histogram from uniform.

    d = sqrt(0.5 * sum_j (n_j / n - 1/|C|)^2); 0 for a perfectly balanced
    client, approaching sqrt((|C| - 1) / (2 |C|)) as it concentrates on one
    class.
    """
    counts = np.asarray(class_counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise EmptyClientError("client has no samples")
    ratios = counts / total
    uniform = 1.0 / counts.size
    return float(np.sqrt(0.5 * np.sum((ratios - uniform) ** 2)))


def aggregation_weights(
    sample_counts: np.ndarray, discrepancies: np.ndarray
) -> DiscrepancyWeights:
    """Normalized sigmoid weights e_k from sizes and label-skew discrepancies.

    e_k = sigmoid(a n_k - b d_k) / sum_i sigmoid(a n_i - b d_i) with
    a = 1 / sum(n) and b = 1 / sum(d) (b = 0 when every discrepancy is 0).
    """
    n = np.asarray(sample_counts, dtype=np.float64)
    d = np.asarray(discrepancies, dtype=np.float64)
    if n.shape != d.shape or n.ndim != 1 or n.size == 0:
        raise DimensionMismatchError("counts and discrepancies must be equal-length 1-d")
    if (n <= 0).any():
        raise EmptyClientError("every client must hold at least one sample")
    if (d < 0).any():
        raise InvalidArgumentError("discrepancies must be >= 0")
    a = 1.0 / n.sum()
    d_total = d.sum()
    b = 0.0 if d_total == 0 else 1.0 / d_total
    raw = 1.0 / (1.0 + np.exp(-(a * n - b * d)))
    return DiscrepancyWeights(d, raw / raw.sum(), a, b)


def consistent_prototypes(
    relational: RelationalSet,
    weights: DiscrepancyWeights,
    allow_missing: bool = False,
) -> ConsistentSet:
    """Weighted average of relational prototypes across clients, per class.

    Clients lacking a class are excluded and the remaining weights are
    renormalized for that class.
    """
    num_classes, num_clients, d = relational.r.shape
    if weights.weights.shape != (num_clients,):
        raise DimensionMismatchError("weights do not match the client axis")
    o = np.zeros((num_classes, d))
    present = np.zeros(num_classes, dtype=bool)
    for j in range(num_classes):
        mask = relational.valid[j]
        w_total = weights.weights[mask].sum()
        if not mask.any() or w_total <= 0:
            if allow_missing:
                continue
            raise ClassUnsupportedError(f"no relational prototype for class {j + 1}")
        w = weights.weights[mask] / w_total
        o[j] = w @ relational.r[j, mask]
        present[j] = True
    return ConsistentSet(o, present)


def build_collaboration(
    sets: list[PrototypeSet],
    class_counts: np.ndarray,
    neighbors: int,
    allow_missing: bool = True,
) -> Collaboration:
    """Run the full server-side pipeline for one batch of client reports.

    Args:
        sets: prototype sets in ascending client-id order.
        class_counts: (num_clients, num_classes) per-client label histograms.
        neighbors: adjacency size M.
        allow_missing: tolerate classes no reporting client holds.
    """
    counts = np.asarray(class_counts)
    if counts.ndim != 2 or counts.shape[0] != len(sets):
        raise DimensionMismatchError("class_counts must be (num_clients, num_classes)")
    global_prototypes = compute_global_prototypes(sets, allow_missing=allow_missing)
    angular = angular_differences(global_prototypes, sets)
    adjacency = build_adjacency(angular, neighbors)
    relational = relational_prototypes(adjacency, sets)
    discrepancies = np.array([client_discrepancy(row) for row in counts])
    weights = aggregation_weights(counts.sum(axis=1), discrepancies)
    consistent = consistent_prototypes(relational, weights, allow_missing=allow_missing)
    return Collaboration(global_prototypes, angular, adjacency, relational,
                         weights, consistent)
