"""Server-side orchestration: rounds of dispatch, local search and aggregation.

Each round the server sends the current (w, alpha) blob to K selected clients,
runs their local search in parallel, then replaces both the weights and the
architecture parameters with the sample-weighted average of the clients'
post-update values. Exactly one blob travels down and one up per selected
client per round. Transport always goes through full serialization, so
measured byte counts are the real wire cost. Aggregation order is canonical
(ascending client id), making results independent of completion order.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .blob import ParameterBlob, check_layouts_match
from .data import Dataset, Partition
from .errors import ConfigurationError, DfnasError
from .local_search import LocalSearchConfig, client_local_search, with_round
from .seeds import derive_seed, stream
from .supernet import (
    ChildArchitecture,
    SpaceConfig,
    Supernet,
    build_supernet,
    derive_child,
    flatten_params,
    forward_logits,
    prune_edges,
    unflatten_params,
)
from .tensor import Tensor
from . import tensor as tz

WEIGHTING_MODES = ("uniform", "proportional")
SEARCH_MODES = ("dfnas", "baseline")


@dataclass(frozen=True)
class FederationConfig:
    rounds: int
    client_pool: int
    clients_per_round: int
    weighting: str = "proportional"
    mode: str = "dfnas"
    server_alpha_threshold: float = float("-inf")
    workers: int = 1
    master_seed: int = 0

    def validate(self) -> None:
        if self.rounds < 1:
            raise ConfigurationError(f"rounds must be >= 1, got {self.rounds}")
        if self.client_pool < 1:
            raise ConfigurationError(f"client_pool must be >= 1, got {self.client_pool}")
        if not 1 <= self.clients_per_round <= self.client_pool:
            raise ConfigurationError(
                f"clients_per_round must be in [1, {self.client_pool}], "
                f"got {self.clients_per_round}"
            )
        if self.weighting not in WEIGHTING_MODES:
            raise ConfigurationError(f"weighting must be one of {WEIGHTING_MODES}")
        if self.mode not in SEARCH_MODES:
            raise ConfigurationError(f"mode must be one of {SEARCH_MODES}")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")


@dataclass
class RoundRecord:
    round_index: int
    client_ids: list[int]
    client_sizes: list[int]
    test_acc: float
    test_loss: float
    bytes_up: int
    bytes_down: int
    wall_s: float  # measured; informational only
    work_units: int  # deterministic cost proxy (candidate executions + eval samples)


@dataclass
class FederationResult:
    history: list[RoundRecord]
    child: ChildArchitecture
    net: Supernet
    final_blob: ParameterBlob


class ClientFailure(DfnasError):
    def __init__(self, round_index: int, client_id: int, cause: Exception):
        super().__init__(f"round {round_index}: client {client_id} failed: {cause}")
        self.round_index = round_index
        self.client_id = client_id
        self.cause = cause


def select_clients(pool: int, k: int, rng: np.random.Generator) -> list[int]:
    """Uniform sample without replacement, sorted for deterministic iteration."""
    if k > pool:
        raise ConfigurationError(f"cannot select {k} clients from a pool of {pool}")
    chosen = rng.choice(pool, size=k, replace=False)
    return sorted(int(c) for c in chosen)


def client_weights(mode: str, sizes: list[int]) -> list[float]:
    """Per-round aggregation weights over the selected clients (sum to 1)."""
    k = len(sizes)
    if mode == "uniform":
        return [1.0 / k] * k
    total = float(sum(sizes))
    return [s / total for s in sizes]


def aggregate_by_client(
    blobs_by_id: dict[int, ParameterBlob], weights_by_id: dict[int, float]
) -> ParameterBlob:
    """Aggregate in canonical ascending-client-id order regardless of how the
    reports arrived, so results never depend on completion order."""
    order = sorted(blobs_by_id)
    if sorted(weights_by_id) != order:
        raise ConfigurationError("client ids of blobs and weights differ")
    return aggregate([blobs_by_id[c] for c in order], [weights_by_id[c] for c in order])


def aggregate(blobs: list[ParameterBlob], weights: list[float]) -> ParameterBlob:
    """Convex combination of identically laid out blobs, left to right."""
    if not blobs:
        raise ConfigurationError("nothing to aggregate")
    if len(blobs) != len(weights):
        raise ConfigurationError(
            f"{len(blobs)} blobs but {len(weights)} weights"
        )
    if any(w < 0 for w in weights):
        raise ConfigurationError(f"negative aggregation weight in {weights}")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ConfigurationError(f"aggregation weights sum to {sum(weights)!r}, not 1")
    for other in blobs[1:]:
        check_layouts_match(blobs[0], other)
    records = []
    for i, first in enumerate(blobs[0].records):
        acc = weights[0] * first.values
        for blob, w in zip(blobs[1:], weights[1:]):
            acc = acc + w * blob.records[i].values
        records.append(type(first)(name=first.name, shape=first.shape, values=acc))
    return ParameterBlob(format_version=blobs[0].format_version, records=records)


def evaluate(
    model: Supernet | ChildArchitecture, dataset: Dataset, batch_size: int = 256
) -> tuple[float, float]:
    """Accuracy and mean loss under the deterministic argmax path (no sampling)."""
    if len(dataset) == 0:
        raise ConfigurationError("test set is empty")
    if isinstance(model, Supernet):
        selections = tuple(
            int(np.argmax(np.where(e.pruned, -np.inf, e.alpha))) for e in model.edges
        )
        run = lambda feats: forward_logits(model, selections, feats)  # noqa: E731
    else:
        run = model.forward
    correct = 0
    loss_sum = 0.0
    n = len(dataset)
    for start in range(0, n, batch_size):
        feats = Tensor(dataset.features[start : start + batch_size])
        labels = dataset.labels[start : start + batch_size]
        logits = run(feats)
        correct += int((logits.data.argmax(axis=1) == labels).sum())
        loss_sum += tz.softmax_cross_entropy(logits, labels).item() * len(labels)
    return correct / n, loss_sum / n


@dataclass
class FederationState:
    config: FederationConfig
    local: LocalSearchConfig
    space: SpaceConfig
    shards: list[Dataset]
    test_set: Dataset
    net: Supernet
    global_blob: ParameterBlob


def _run_client(
    blob_bytes: bytes,
    shard: Dataset,
    space: SpaceConfig,
    config: LocalSearchConfig,
):
    # serialization round trip is mandatory on both hops
    blob = ParameterBlob.from_bytes(blob_bytes)
    report = client_local_search(blob, shard, space, config)
    return report.blob.to_bytes(), report


def run_round(state: FederationState, round_index: int) -> RoundRecord:
    """One full round: select, dispatch, collect, aggregate, evaluate."""
    cfg = state.config
    started = time.perf_counter()
    rng = stream(cfg.master_seed, "selection", round_index)
    selected = select_clients(cfg.client_pool, cfg.clients_per_round, rng)

    payload = state.global_blob.to_bytes()
    bytes_down = len(payload) * len(selected)

    jobs = []
    for cid in selected:
        client_cfg = with_round(
            state.local, seed=derive_seed(cfg.master_seed, "client", cid), round_index=round_index
        )
        # pruning is a server-side decision; prune masks are not part of the
        # wire format, so clients never prune locally in federated mode
        client_cfg = replace(client_cfg, alpha_threshold=float("-inf"))
        jobs.append((cid, state.shards[cid], client_cfg))

    results: dict[int, tuple[bytes, object]] = {}
    if cfg.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {
                cid: pool.submit(_run_client, payload, shard, state.space, ccfg)
                for cid, shard, ccfg in jobs
            }
            for cid, fut in futures.items():
                try:
                    results[cid] = fut.result()
                except DfnasError as err:
                    raise ClientFailure(round_index, cid, err) from err
    else:
        for cid, shard, ccfg in jobs:
            try:
                results[cid] = _run_client(payload, shard, state.space, ccfg)
            except DfnasError as err:
                raise ClientFailure(round_index, cid, err) from err

    reports = [results[cid][1] for cid in selected]
    bytes_up = sum(len(rb) for rb, _ in results.values())

    sizes = [state.shards[cid].features.shape[0] for cid in selected]
    weights = client_weights(cfg.weighting, sizes)
    blobs_by_id = {cid: ParameterBlob.from_bytes(rb) for cid, (rb, _) in results.items()}
    weights_by_id = dict(zip(selected, weights))
    aggregated = aggregate_by_client(blobs_by_id, weights_by_id)

    state.global_blob = aggregated
    unflatten_params(state.net, aggregated)
    if cfg.server_alpha_threshold > float("-inf"):
        prune_edges(state.net, cfg.server_alpha_threshold)

    test_acc, test_loss = evaluate(state.net, state.test_set)
    work_units = sum(r.candidate_executions for r in reports) + len(state.test_set)

    return RoundRecord(
        round_index=round_index,
        client_ids=selected,
        client_sizes=sizes,
        test_acc=test_acc,
        test_loss=test_loss,
        bytes_up=bytes_up,
        bytes_down=bytes_down,
        wall_s=time.perf_counter() - started,
        work_units=work_units,
    )


def run_federated_search(
    train: Dataset,
    test: Dataset,
    partition: Partition,
    space: SpaceConfig,
    fed: FederationConfig,
    local: LocalSearchConfig,
    resplit: Callable[[int], Partition] | None = None,
    round_callback: Callable[[RoundRecord, ParameterBlob], None] | None = None,
    access_log: list | None = None,
) -> FederationResult:
    """Full search: T rounds then child derivation from the aggregated net.

    In baseline mode the architecture is fixed at configuration time (single
    candidate per block) and only weights are exchanged.
    """
    fed.validate()
    local.validate()
    if partition.num_clients != fed.client_pool:
        raise ConfigurationError(
            f"partition has {partition.num_clients} clients, pool is {fed.client_pool}"
        )
    net = build_supernet(space)
    if fed.mode == "baseline" and net.cardinality() != 1:
        raise ConfigurationError(
            "baseline mode needs a fixed architecture (one candidate per block); "
            "set fixed_path on the space config"
        )

    shards = [train.subset(ix, access_log) for ix in partition.client_indices]
    state = FederationState(
        config=fed,
        local=local,
        space=space,
        shards=shards,
        test_set=test,
        net=net,
        global_blob=flatten_params(net, include_alpha=fed.mode == "dfnas"),
    )

    history: list[RoundRecord] = []
    for t in range(fed.rounds):
        if resplit is not None and t > 0:
            new_partition = resplit(t)
            state.shards = [train.subset(ix, access_log) for ix in new_partition.client_indices]
        record = run_round(state, t)
        history.append(record)
        if round_callback is not None:
            round_callback(record, state.global_blob)

    child = derive_child(state.net)
    return FederationResult(
        history=history, child=child, net=state.net, final_blob=state.global_blob
    )
