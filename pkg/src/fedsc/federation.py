"""Round-based federation: local SGD on the composite loss, size-weighted
model averaging, and the server-side prototype rebuild.

Every quantity is a deterministic function of (config, seed): client RNGs are
derived from (seed, round, client id), the server's sampling RNG from the
seed alone, so FedAvg and FedSC runs with the same seed see identical client
selections and identical round-1 training (round 1 is CE-only for both, since
no prototypes exist yet).
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import ClientDataset, Dataset, PartitionConfig, partition_dataset, split_holdout
from .errors import (
    EmptyDatasetError,
    InvalidArgumentError,
    MalformedCsvError,
)
from .losses import compute_normalizers, total_loss
from .model import (
    ModelParams,
    OptimizerConfig,
    backward,
    evaluate_accuracy,
    forward_features,
    init_params,
    sgd_step,
)
from .prototypes import (
    Collaboration,
    ConsistentSet,
    PrototypeSet,
    RelationalSet,
    build_collaboration,
    prototypes_from_features,
)

# seed-derivation domains so data, init, sampling, and clients draw from
# unrelated streams
_TAG_INIT = 11
_TAG_SAMPLE = 22
_TAG_CLIENT = 33

CSV_HEADER = ["round", "accuracy", "loss_total", "loss_ce", "loss_rpcl",
              "loss_cpdr", "wall_ms"]


@dataclass
class FederationConfig:
    """Knobs for one federated run."""

    rounds: int = 100
    num_clients: int = 10
    local_epochs: int = 10
    participation_fraction: float = 1.0
    neighbors: int = 2
    temperature: float = 0.05
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    algorithm: str = "fedsc"
    seed: int = 0
    hidden_dim: int = 64
    feature_dim: int = 32
    rpcl_weight: float = 1.0
    cpdr_weight: float = 1.0
    cpdr_norm: str = "l1"
    threads: int = 1

    def __post_init__(self):
        if self.rounds < 1:
            raise InvalidArgumentError("rounds must be >= 1")
        if self.num_clients < 1:
            raise InvalidArgumentError("num_clients must be >= 1")
        if self.local_epochs < 1:
            raise InvalidArgumentError("local_epochs must be >= 1")
        if not 0 < self.participation_fraction <= 1:
            raise InvalidArgumentError("participation_fraction must lie in (0, 1]")
        if self.neighbors < 0:
            raise InvalidArgumentError("neighbors must be >= 0")
        if self.temperature <= 0:
            raise InvalidArgumentError("temperature must be > 0")
        if self.algorithm not in ("fedavg", "fedsc"):
            raise InvalidArgumentError(f"unknown algorithm '{self.algorithm}'")
        if self.cpdr_norm not in ("l1", "l2"):
            raise InvalidArgumentError(f"unknown cpdr norm '{self.cpdr_norm}'")
        if self.threads < 1:
            raise InvalidArgumentError("threads must be >= 1")


@dataclass
class ClientUpdate:
    """What one client sends back: new weights, prototypes, loss means."""

    client_id: int
    params: ModelParams
    prototypes: PrototypeSet
    num_samples: int
    ce: float
    rpcl: float
    cpdr: float
    total: float


@dataclass
class RoundMetrics:
    round: int
    accuracy: float
    loss_total: float
    loss_ce: float
    loss_rpcl: float
    loss_cpdr: float
    wall_ms: float


@dataclass
class ServerState:
    """Global model plus the latest report from every client seen so far."""

    params: ModelParams
    round_index: int = 0
    latest_prototypes: dict[int, PrototypeSet] = field(default_factory=dict)
    latest_class_counts: dict[int, np.ndarray] = field(default_factory=dict)
    collaboration: Collaboration | None = None

    @property
    def relational(self) -> RelationalSet | None:
        return self.collaboration.relational if self.collaboration else None

    @property
    def consistent(self) -> ConsistentSet | None:
        return self.collaboration.consistent if self.collaboration else None


@dataclass
class ExperimentResult:
    metrics: list[RoundMetrics]
    state: ServerState
    test: Dataset


def _minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def run_client(
    global_params: ModelParams,
    dataset: ClientDataset,
    config: FederationConfig,
    round_index: int,
    relational: RelationalSet | None = None,
    consistent: ConsistentSet | None = None,
) -> ClientUpdate:
    """Local epochs of minibatch SGD, then prototypes from the final extractor.

    The optimizer state starts fresh each round.  When relational and
    consistent prototypes are provided (and the algorithm is fedsc) the
    composite loss applies; otherwise training is plain cross-entropy.
    Distance normalizers are recomputed from a feature snapshot at the start
    of every epoch.
    """
    rng = np.random.default_rng(
        np.random.SeedSequence((config.seed, _TAG_CLIENT, round_index,
                                dataset.client_id))
    )
    params = global_params.copy(reset_momentum=True)
    use_protos = (
        config.algorithm == "fedsc"
        and relational is not None
        and consistent is not None
    )
    x, y = dataset.features, dataset.labels
    sums = np.zeros(4)
    batches = 0
    for _ in range(config.local_epochs):
        context = None
        if use_protos:
            snapshot = forward_features(params, x).z
            context = compute_normalizers(snapshot, relational, config.temperature)
        for idx in _minibatches(dataset.total, config.optimizer.batch_size, rng):
            fb = forward_features(params, x[idx], y[idx])
            breakdown = total_loss(
                fb,
                relational if use_protos else None,
                consistent if use_protos else None,
                context,
                params,
                rpcl_weight=config.rpcl_weight,
                cpdr_weight=config.cpdr_weight,
                cpdr_norm=config.cpdr_norm,
            )
            grads = backward(params, fb, breakdown.grad_z, breakdown.grad_logits)
            params = sgd_step(params, grads, config.optimizer)
            sums += (breakdown.ce, breakdown.rpcl, breakdown.cpdr, breakdown.total)
            batches += 1

    final_z = forward_features(params, x).z
    prototypes = prototypes_from_features(final_z, y, dataset.num_classes,
                                          owner=dataset.client_id)
    ce, rpcl, cpdr, tot = (sums / batches).tolist()
    return ClientUpdate(dataset.client_id, params, prototypes, dataset.total,
                        ce, rpcl, cpdr, tot)


def aggregate_models(
    contributions: list[tuple[ModelParams, int]]
) -> ModelParams:
    """Sample-count-weighted average of model weights, fresh momentum.

    Computed in delta form around the first contributor so averaging
    identical models reproduces them bit for bit.
    """
    if not contributions:
        raise InvalidArgumentError("nothing to aggregate")
    counts = np.array([n for _, n in contributions], dtype=np.float64)
    if (counts <= 0).any():
        raise InvalidArgumentError("sample counts must be positive")
    weights = counts / counts.sum()
    base = contributions[0][0]
    out = base.copy(reset_momentum=True)
    for name, value in out.weights().items():
        acc = value.copy()
        for (params, _), w in zip(contributions, weights):
            acc += w * (getattr(params, name) - value)
        setattr(out, name, acc)
    return out


def _rebuild_collaboration(state: ServerState, config: FederationConfig) -> None:
    ids = sorted(state.latest_prototypes)
    sets = [state.latest_prototypes[i] for i in ids]
    counts = np.stack([state.latest_class_counts[i] for i in ids])
    state.collaboration = build_collaboration(sets, counts, config.neighbors,
                                              allow_missing=True)


def run_round(
    state: ServerState,
    clients: list[ClientDataset],
    config: FederationConfig,
    rng: np.random.Generator,
    test: Dataset,
) -> tuple[ServerState, RoundMetrics]:
    """One federated round: sample, train, aggregate, rebuild prototypes.

    Clients run independently (optionally on a thread pool); aggregation and
    the prototype rebuild walk clients in ascending id order, so results do
    not depend on scheduling.
    """
    start = time.perf_counter()
    state.round_index += 1
    k = len(clients)
    num_selected = max(1, int(round(config.participation_fraction * k)))
    selected = np.sort(rng.choice(k, size=num_selected, replace=False))
    chosen = [clients[i] for i in selected]

    relational, consistent = state.relational, state.consistent

    def train(client: ClientDataset) -> ClientUpdate:
        return run_client(state.params, client, config, state.round_index,
                          relational, consistent)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            updates = list(pool.map(train, chosen))
    else:
        updates = [train(c) for c in chosen]
    updates.sort(key=lambda u: u.client_id)

    state.params = aggregate_models([(u.params, u.num_samples) for u in updates])
    for update, client in zip(updates, chosen):
        state.latest_prototypes[update.client_id] = update.prototypes
        state.latest_class_counts[update.client_id] = client.class_counts
    _rebuild_collaboration(state, config)

    accuracy = evaluate_accuracy(state.params, test.features, test.labels)
    means = np.mean([(u.total, u.ce, u.rpcl, u.cpdr) for u in updates], axis=0)
    wall_ms = (time.perf_counter() - start) * 1000.0
    metrics = RoundMetrics(state.round_index, accuracy, float(means[0]),
                           float(means[1]), float(means[2]), float(means[3]),
                           wall_ms)
    return state, metrics


def run_experiment(
    config: FederationConfig,
    dataset: Dataset,
    partition: PartitionConfig,
    test: Dataset | None = None,
) -> ExperimentResult:
    """Partition a dataset, run the configured number of rounds, return metrics.

    When ``test`` is None, a balanced 10%-per-class split is held out before
    partitioning.  The partition's client count must match the federation
    config.
    """
    if dataset.num_samples == 0:
        raise EmptyDatasetError("cannot run on an empty dataset")
    if partition.num_clients != config.num_clients:
        raise InvalidArgumentError(
            f"partition has {partition.num_clients} clients, "
            f"config expects {config.num_clients}"
        )
    if test is None:
        dataset, test = split_holdout(dataset, 0.1, seed=partition.seed)
    clients = partition_dataset(dataset, partition)

    params = init_params(
        dataset.dim, config.hidden_dim, config.feature_dim, dataset.num_classes,
        seed=np.random.SeedSequence((config.seed, _TAG_INIT)),
    )
    state = ServerState(params)
    sampler = np.random.default_rng(np.random.SeedSequence((config.seed, _TAG_SAMPLE)))
    metrics = []
    for _ in range(config.rounds):
        state, round_metrics = run_round(state, clients, config, sampler, test)
        metrics.append(round_metrics)
    return ExperimentResult(metrics, state, test)


def rounds_to_accuracy(metrics: list[RoundMetrics], threshold: float) -> int | None:
    """First round whose test accuracy reaches the threshold, else None."""
    for m in metrics:
        if m.accuracy >= threshold:
            return m.round
    return None


def write_metrics_csv(path, metrics: list[RoundMetrics]) -> None:
    """Fixed 6-decimal CSV, one row per round."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for m in metrics:
            writer.writerow([
                m.round,
                f"{m.accuracy:.6f}", f"{m.loss_total:.6f}", f"{m.loss_ce:.6f}",
                f"{m.loss_rpcl:.6f}", f"{m.loss_cpdr:.6f}", f"{m.wall_ms:.6f}",
            ])


def read_metrics_csv(path) -> list[RoundMetrics]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_HEADER:
        raise MalformedCsvError(f"{path}: missing or wrong header")
    out = []
    for row in rows[1:]:
        if len(row) != len(CSV_HEADER):
            raise MalformedCsvError(f"{path}: row has {len(row)} fields")
        try:
            out.append(RoundMetrics(int(row[0]), *(float(v) for v in row[1:])))
        except ValueError as exc:
            raise MalformedCsvError(f"{path}: {exc}") from exc
    return out


def write_run_metadata(path, entries: dict) -> None:
    """Flat key=value run description (resolved config, seed, variant flags)."""
    with open(path, "w") as fh:
        for key, value in entries.items():
            fh.write(f"{key}={value}\n")
