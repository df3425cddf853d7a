"""The segmentation network: point embedding, projection backbone, head.

Clouds are prepared once (features, neighbour table, cell index for every
plane) and then pushed through the differentiable graph built from
:mod:`pointplane.autodiff`. A batch of clouds is handled by concatenating
their points, offsetting neighbour indices, and giving each cloud its own
slice of a ``B x h x w x C`` grid stack, so batch-norm statistics are
shared while projections stay per cloud.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .cloud import PointCloud, build_features, knn
from .errors import ConfigError, ShapeError
from .projection import DEFAULT_PLANE_ORDER, PlaneConfigs, PlaneKind, plane_cells, plane_for_layer


@dataclass(frozen=True)
class NetworkConfig:
    layers: int = 50
    channels: int = 256
    k_neighbors: int = 16
    num_classes: int = 20
    mlp_hidden: int = 256
    conv_hidden: int = 256
    channel_hidden: int | None = None
    planes: PlaneConfigs = field(default_factory=PlaneConfigs)
    plane_order: tuple = DEFAULT_PLANE_ORDER
    in_channels: int = 5

    def __post_init__(self):
        if self.layers < 5 or self.layers % 5:
            raise ConfigError(f"layers must be a positive multiple of 5, got {self.layers}")
        for name in ("channels", "k_neighbors", "num_classes", "mlp_hidden", "conv_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        object.__setattr__(self, "plane_order", tuple(PlaneKind(k) for k in self.plane_order))
        plane_for_layer(1, self.layers, self.plane_order)

    @property
    def hidden_channel_mix(self) -> int:
        return self.channel_hidden or self.channels


@dataclass
class NetworkParams:
    """Learnable tensors and batch-norm states, addressed by dotted names.

    ``tensors`` holds weights and biases; ``norms`` holds one
    :class:`BatchNormState` per normalisation (its gamma/beta are exposed
    by :meth:`parameters` as ``<name>.gamma`` / ``<name>.beta``).
    """

    config: NetworkConfig
    tensors: dict
    norms: dict

    def __getitem__(self, name):
        if name in self.tensors:
            return self.tensors[name]
        return self.norms[name]

    def block(self, prefix: str) -> dict:
        prefix = prefix.rstrip(".") + "."
        out = {k: v for k, v in self.parameters().items() if k.startswith(prefix)}
        out.update({k: v for k, v in self.norms.items() if k.startswith(prefix)})
        return out

    def parameters(self) -> dict:
        out = dict(self.tensors)
        for name, bn in self.norms.items():
            out[f"{name}.gamma"] = bn.gamma
            out[f"{name}.beta"] = bn.beta
        return dict(sorted(out.items()))

    def buffers(self) -> dict:
        """Running statistics (not trained by the optimiser)."""
        out = {}
        for name, bn in sorted(self.norms.items()):
            out[f"{name}.running_mean"] = bn.running_mean
            out[f"{name}.running_var"] = bn.running_var
        return out

    def count(self) -> int:
        return int(sum(t.data.size for t in self.parameters().values()))

    def set_mode(self, mode: str):
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
        for bn in self.norms.values():
            bn.mode = mode

    def zero_grad(self):
        for t in self.parameters().values():
            t.grad = None

    def astype(self, dtype) -> "NetworkParams":
        tensors = {k: Tensor(v.data.astype(dtype), requires_grad=True) for k, v in self.tensors.items()}
        norms = {
            k: BatchNormState(
                Tensor(bn.gamma.data.astype(dtype), requires_grad=True),
                Tensor(bn.beta.data.astype(dtype), requires_grad=True),
                bn.running_mean.astype(dtype), bn.running_var.astype(dtype),
                bn.momentum, bn.eps, bn.mode)
            for k, bn in self.norms.items()
        }
        return NetworkParams(self.config, tensors, norms)


def init_params(config: NetworkConfig, seed: int = 0, dtype=np.float64) -> NetworkParams:
    """Kaiming-uniform (fan-in) weights, zero biases, unit/zero batch-norm affine."""
    rng = np.random.default_rng(seed)
    tensors, norms = {}, {}
    C, H = config.channels, config.hidden_channel_mix

    def linear(name, cin, cout):
        bound = np.sqrt(6.0 / cin)
        tensors[f"{name}.weight"] = Tensor(rng.uniform(-bound, bound, (cout, cin)).astype(dtype),
                                           requires_grad=True)
        tensors[f"{name}.bias"] = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def conv(name, cin, cout):
        bound = np.sqrt(6.0 / (9 * cin))
        tensors[f"{name}.weight"] = Tensor(rng.uniform(-bound, bound, (cout, 3, 3, cin)).astype(dtype),
                                           requires_grad=True)
        tensors[f"{name}.bias"] = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def bn(name, channels):
        norms[name] = BatchNormState.create(channels, dtype)

    cin = config.in_channels
    bn("embed.bn_point", cin)
    linear("embed.point_linear", cin, C)
    bn("embed.bn_nbr_in", cin)
    linear("embed.mlp1", cin, config.mlp_hidden)
    linear("embed.mlp2", config.mlp_hidden, C)
    bn("embed.bn_nbr_out", C)
    linear("embed.merge", 2 * C, C)
    for i in range(config.layers):
        p = f"layers.{i}"
        bn(f"{p}.spatial.bn", C)
        conv(f"{p}.spatial.conv1", C, config.conv_hidden)
        conv(f"{p}.spatial.conv2", config.conv_hidden, C)
        linear(f"{p}.spatial.gate", C, C)
        bn(f"{p}.spatial.gate_bn", C)
        bn(f"{p}.channel.bn", C)
        linear(f"{p}.channel.fc1", C, H)
        linear(f"{p}.channel.fc2", H, C)
        bound = np.sqrt(6.0)
        tensors[f"{p}.channel.dw.weight"] = Tensor(rng.uniform(-bound, bound, C).astype(dtype),
                                                   requires_grad=True)
        tensors[f"{p}.channel.dw.bias"] = Tensor(np.zeros(C, dtype=dtype), requires_grad=True)
    linear("head", C, config.num_classes)
    return NetworkParams(config, dict(sorted(tensors.items())), dict(sorted(norms.items())))


# ------------------------------------------------------------ preparation

@dataclass
class PreparedBatch:
    """Network inputs for one or more clouds, points concatenated."""

    features: np.ndarray          # N x 5
    neighbors: np.ndarray         # N x K, indices into the concatenated points
    cells: dict                   # PlaneKind -> N flattened cell ids with per-cloud offset
    grid_shapes: dict             # PlaneKind -> (h, w)
    offsets: np.ndarray           # B + 1 point offsets
    labels: np.ndarray | None = None

    @property
    def batch_size(self) -> int:
        return len(self.offsets) - 1

    @property
    def num_points(self) -> int:
        return len(self.features)

    def permuted(self, perm: np.ndarray) -> "PreparedBatch":
        """Same single cloud with points reordered; neighbour ids are remapped."""
        if self.batch_size != 1:
            raise ShapeError("permuted() supports a single cloud")
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return PreparedBatch(
            self.features[perm], inv[self.neighbors[perm]],
            {k: v[perm] for k, v in self.cells.items()}, dict(self.grid_shapes),
            self.offsets.copy(), None if self.labels is None else self.labels[perm])


def prepare(clouds, config: NetworkConfig, neighbors=None) -> PreparedBatch:
    """Features, neighbour tables and plane cells for a cloud or list of clouds."""
    if isinstance(clouds, PointCloud):
        clouds = [clouds]
        if neighbors is not None:
            neighbors = [neighbors]
    clouds = list(clouds)
    feats, nbrs, labels = [], [], []
    cells = {k: [] for k in PlaneKind}
    shapes = {k: config.planes.shape(k) for k in PlaneKind}
    offsets = [0]
    for b, cloud in enumerate(clouds):
        feats.append(build_features(cloud))
        table = knn(cloud, config.k_neighbors) if neighbors is None else np.asarray(neighbors[b])
        if table.shape != (len(cloud), config.k_neighbors):
            raise ShapeError(f"neighbour table {table.shape} for {len(cloud)} points")
        nbrs.append(table + offsets[-1])
        for kind in PlaneKind:
            cell, (h, w) = plane_cells(cloud.coords, kind, config.planes.get(kind), degenerate="clamp")
            cells[kind].append(cell + b * h * w)
        labels.append(cloud.labels)
        offsets.append(offsets[-1] + len(cloud))
    has_labels = all(lab is not None for lab in labels)
    return PreparedBatch(
        np.concatenate(feats), np.concatenate(nbrs),
        {k: np.concatenate(v) for k, v in cells.items()}, shapes,
        np.asarray(offsets), np.concatenate(labels) if has_labels else None)


# ---------------------------------------------------------------- blocks

@dataclass
class BackboneState:
    """Running backbone features plus the last grid produced for each plane."""

    features: Tensor
    batch: PreparedBatch
    memory: dict = field(default_factory=dict)
    calls: list = field(default_factory=list)


def _lin(x, params, name):
    return ad.linear_pointwise(x, params[f"{name}.weight"], params[f"{name}.bias"])


def embed(features5, neighbors, params: NetworkParams) -> Tensor:
    """Per-point branch and max-pooled neighbourhood branch, merged to C channels."""
    f = ad.as_tensor(features5)
    neighbors = np.asarray(neighbors)
    if f.ndim != 2 or neighbors.shape[0] != f.shape[0]:
        raise ShapeError(f"embed: features {f.shape} vs neighbours {neighbors.shape}")
    point = _lin(ad.batch_norm(f, params["embed.bn_point"]), params, "embed.point_linear")

    n, k = neighbors.shape
    diff = ad.gather_rows(f, neighbors.T) - ad.reshape(f, (1, n, f.shape[1]))   # K x N x 5
    h = ad.batch_norm(diff, params["embed.bn_nbr_in"])
    h = ad.relu(_lin(h, params, "embed.mlp1"))
    h = ad.batch_norm(_lin(h, params, "embed.mlp2"), params["embed.bn_nbr_out"])
    nbr = ad.max_over_neighbors(h)
    return _lin(ad.concat([point, nbr], axis=-1), params, "embed.merge")


def spatial_mix(f_prev: Tensor, layer: int, state: BackboneState, params: NetworkParams) -> Tensor:
    """Project, (add the same plane's previous grid), convolve, gather, gate, add residual.

    ``layer`` is 1-based.
    """
    cfg = params.config
    kind = plane_for_layer(layer, cfg.layers, cfg.plane_order)
    batch = state.batch
    h, w = batch.grid_shapes[kind]
    b = batch.batch_size
    p = f"layers.{layer - 1}.spatial"

    x = ad.batch_norm(f_prev, params[f"{p}.bn"])
    grid = ad.scatter_mean_rows(x, batch.cells[kind], b * h * w)
    grid = ad.reshape(grid, (b, h, w, x.shape[-1]))
    if layer > 5:
        grid = grid + state.memory[kind]
    hidden = ad.relu(ad.conv2d_same(grid, params[f"{p}.conv1.weight"], params[f"{p}.conv1.bias"]))
    planes = ad.conv2d_same(hidden, params[f"{p}.conv2.weight"], params[f"{p}.conv2.bias"])
    state.memory[kind] = planes
    state.calls.append(kind)

    flat = ad.reshape(planes, (b * h * w, planes.shape[-1]))
    back = ad.gather_rows(flat, batch.cells[kind])
    gate = ad.sigmoid(ad.batch_norm(_lin(back, params, f"{p}.gate"), params[f"{p}.gate_bn"]))
    return back * gate + f_prev


def channel_mix(f_bar: Tensor, layer: int, params: NetworkParams) -> Tensor:
    """Pointwise MLP then per-channel scale, plus residual. ``layer`` is 1-based."""
    p = f"layers.{layer - 1}.channel"
    h = ad.batch_norm(f_bar, params[f"{p}.bn"])
    h = _lin(ad.relu(_lin(h, params, f"{p}.fc1")), params, f"{p}.fc2")
    h = ad.depthwise_pointwise(h, params[f"{p}.dw.weight"], params[f"{p}.dw.bias"])
    return h + f_bar


def forward(inputs, params: NetworkParams, mode: str = "train", return_state: bool = False):
    """Logits (N x num_classes) for a cloud, list of clouds, or a PreparedBatch."""
    cfg = params.config
    batch = inputs if isinstance(inputs, PreparedBatch) else prepare(inputs, cfg)
    params.set_mode(mode)
    dtype = params["head.weight"].dtype
    p0 = embed(Tensor(batch.features.astype(dtype)), batch.neighbors, params)
    state = BackboneState(p0, batch)
    f = p0
    for layer in range(1, cfg.layers + 1):
        f = spatial_mix(f, layer, state, params)
        f = channel_mix(f, layer, params)
    state.features = f
    logits = _lin(f + p0, params, "head")
    return (logits, state) if return_state else logits


def predict(inputs, params: NetworkParams) -> np.ndarray:
    """Arg-max class per point, eval mode, no tape."""
    with ad.no_grad():
        logits = forward(inputs, params, mode="eval")
    return np.argmax(logits.data, axis=1)
