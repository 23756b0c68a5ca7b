"""Client-side single-path architecture search on one private shard.

Each batch: sample a path, run only that path forward, backpropagate, update
the network weights by SGD, update every block's alpha with the score-function
rule scaled by its mask gradient, then apply threshold pruning. The whole run
is a pure function of (parameter blob, shard, config), so clients can execute
in parallel without sharing state.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .blob import ParameterBlob
from .data import Dataset
from .errors import ConfigurationError, DataError
from .seeds import stream
from .supernet import (
    SpaceConfig,
    alpha_gradient,
    build_supernet,
    flatten_params,
    forward_path,
    prune_edges,
    sample_path,
    unflatten_params,
)
from .tensor import SGD, Tensor, global_grad_norm


@dataclass(frozen=True)
class LocalSearchConfig:
    epochs: int = 1
    batch_size: int = 32
    lr_w: float = 0.05
    lr_alpha: float = 0.003
    momentum_w: float = 0.9
    alpha_threshold: float = float("-inf")
    seed: int = 0
    epoch_offset: int = 0  # absolute index of this run's first epoch
    clip_norm: float | None = None

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_w < 0 or self.lr_alpha < 0:
            raise ConfigurationError("learning rates must be >= 0")
        if not 0.0 <= self.momentum_w < 1.0:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum_w}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigurationError(f"clip_norm must be > 0, got {self.clip_norm}")


@dataclass
class LocalSearchReport:
    blob: ParameterBlob
    sample_count: int
    epoch_losses: list[float]
    candidate_executions: int
    batches: int
    duration_s: float


def client_local_search(
    initial: ParameterBlob,
    shard: Dataset,
    space: SpaceConfig,
    config: LocalSearchConfig,
) -> LocalSearchReport:
    """Run the local search loop and return the updated parameters.

    Architecture updates happen only when the incoming blob carries alpha
    records; a weights-only blob trains a fixed architecture (plain SGD).
    Never touches any data beyond `shard`.
    """
    config.validate()
    if len(shard) == 0:
        raise DataError("client shard is empty")

    net = build_supernet(space)
    unflatten_params(net, initial)
    search_mode = any(r.name.endswith(".alpha") for r in initial.records)

    optimizer = SGD(net.parameters(), lr=config.lr_w, momentum=config.momentum_w)
    started = time.perf_counter()
    net.counters.reset()
    epoch_losses: list[float] = []
    total_batches = 0
    n = len(shard)

    for epoch in range(config.epochs):
        rng = stream(config.seed, "epoch", config.epoch_offset + epoch)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            features = Tensor(shard.features[batch_idx])
            labels = shard.labels[batch_idx]

            path = sample_path(net, rng)
            loss, tape = forward_path(net, path, features, labels)
            tape.backward(loss)

            if config.clip_norm is not None:
                norm = global_grad_norm(net.parameters())
                if norm > config.clip_norm:
                    factor = config.clip_norm / norm
                    for p in net.parameters():
                        if p.grad is not None:
                            p.grad *= factor
            optimizer.step(strict=False)  # only the sampled path has gradients

            if search_mode:
                for edge, selected, mask in zip(
                    net.edges, path.selections, path.mask_scalars
                ):
                    grad = alpha_gradient(edge, selected, float(mask.grad))
                    edge.alpha -= config.lr_alpha * grad
                prune_edges(net, config.alpha_threshold)

            losses.append(loss.item())
            total_batches += 1
        epoch_losses.append(float(np.mean(losses)))

    return LocalSearchReport(
        blob=flatten_params(net, include_alpha=search_mode),
        sample_count=n,
        epoch_losses=epoch_losses,
        candidate_executions=net.counters.candidate_executions,
        batches=total_batches,
        duration_s=time.perf_counter() - started,
    )


def with_round(config: LocalSearchConfig, seed: int, round_index: int) -> LocalSearchConfig:
    """Client config for one federated round: same stream family, epoch
    offset advanced so consecutive rounds continue the centralized schedule."""
    return replace(
        config, seed=seed, epoch_offset=round_index * config.epochs
    )
