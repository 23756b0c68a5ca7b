"""The searchable parent network: probabilities, single-path sampling,
pruning, and child derivation."""

import numpy as np

from dfnas.supernet import (
    SpaceConfig,
    build_supernet,
    derive_child,
    edge_probabilities,
    forward_path,
    prune_edges,
    sample_path,
)
from dfnas.tensor import Tensor

space = SpaceConfig(
    blocks=3,
    candidates=("conv3", "conv5", "identity", "sep3"),
    input_shape=(1, 8, 8),
    num_classes=4,
    channels=4,
    init_seed=0,
)
net = build_supernet(space)
print(f"search space: {net.cardinality()} architectures "
      f"({len(space.candidates)}^{space.blocks})")

print("\n== probabilities follow softmax(alpha) ==")
net.edges[0].alpha[:] = [1.0, 0.0, -1.0, 0.5]
print("alpha:", net.edges[0].alpha.tolist())
print("probs:", edge_probabilities(net.edges[0]).round(4).tolist())

print("\n== sampled paths, 2000 draws on block 0 ==")
rng = np.random.default_rng(1)
counts = np.zeros(4)
for _ in range(2000):
    counts[sample_path(net, rng).selections[0]] += 1
print("empirical:", (counts / 2000).round(4).tolist())

print("\n== one training step executes exactly one candidate per block ==")
feats = Tensor(np.random.default_rng(2).normal(size=(8, 1, 8, 8)))
labels = np.random.default_rng(3).integers(0, 4, size=8)
path = sample_path(net, rng)
net.counters.reset()
loss, tape = forward_path(net, path, feats, labels)
tape.backward(loss)
print(f"sampled path {path.selections}, loss {loss.item():.4f}")
print(f"candidate executions: {net.counters.candidate_executions} (== blocks)")
print(f"mask gradients: {[round(float(m.grad), 4) for m in path.mask_scalars]}")

print("\n== pruning and the derived child ==")
for edge in net.edges:
    edge.alpha[:] = np.random.default_rng(4).normal(size=4)
pruned = prune_edges(net, alpha_threshold=0.0)
print(f"pruned {pruned} candidates below threshold 0.0; "
      f"{net.cardinality()} architectures remain")
child = derive_child(net)
print("child:", " -> ".join(child.kinds), f"({child.num_params()} params)")
