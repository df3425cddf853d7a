"""
A forward and backward pass through the network
===============================================

The network embeds every point from its own features and those of its K
nearest neighbours, then alternates SpatialMix (project, convolve,
back-project, gate) and ChannelMix (per-point MLP) blocks. Layer l uses
plane (l - 1) mod 5, so a 10-layer backbone visits every plane twice and
the second visit adds the grid activations left by the first.
"""
import time

import numpy as np

from pointplane.cloud import CropBounds
from pointplane.dataio import synth_scene
from pointplane.losses import LossConfig, total_loss
from pointplane.network import NetworkConfig, forward, init_params, predict, prepare
from pointplane.projection import PlaneConfigs, PolarGridConfig, RangeImageConfig, plane_for_layer

# A desk-sized network: 10 layers of 32 channels over coarse grids.
planes = PlaneConfigs(CropBounds(-20, 20, -20, 20, -3, 2), 1.0, PolarGridConfig(1.0, 20.0, 16, 64),
                      RangeImageConfig.from_degrees(16, 128))
cfg = NetworkConfig(layers=10, channels=32, k_neighbors=8, num_classes=20, mlp_hidden=64,
                    conv_hidden=64, planes=planes)
params = init_params(cfg, seed=0)
n_params = sum(t.data.size for t in params.parameters().values())
print(f"{n_params} trainable values in {len(params.parameters())} tensors")
print("plane per layer:", ", ".join(plane_for_layer(l, cfg.layers).value for l in range(1, cfg.layers + 1)))

# prepare() does the geometry once: features, neighbour indices and the cell
# of every point on every plane. forward() then only does arithmetic.
scene = synth_scene(seed=1)
batch = prepare(scene, cfg)
print(f"{len(scene)} points, neighbours {batch.neighbors.shape}")

start = time.perf_counter()
logits = forward(batch, params, "train")
loss = total_loss(logits, batch.labels, LossConfig())
loss.backward()
elapsed = time.perf_counter() - start
grad_norm = np.sqrt(sum(float((t.grad ** 2).sum()) for t in params.parameters().values()))
print(f"logits {logits.shape}, loss {float(loss.data):.4f}, gradient norm {grad_norm:.3f} "
      f"({elapsed * 1000:.0f} ms for forward and backward)")

# The network treats the cloud as a set: reordering the points reorders the
# output and changes nothing else.
perm = np.random.default_rng(0).permutation(len(scene))
shuffled = forward(batch.permuted(perm), params, "eval").data
print("permutation equivariant:", np.allclose(shuffled, forward(batch, params, "eval").data[perm], atol=1e-5))
print("predicted classes before training:", np.bincount(predict(batch, params), minlength=20))
