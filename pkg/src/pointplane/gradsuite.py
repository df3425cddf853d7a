"""Finite-difference gradient checks for every differentiable op and the network.

All checks run in float64. Each check compares analytic directional
derivatives with central differences along several random directions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor, grad_check
from .cloud import CropBounds, PointCloud
from .losses import LossConfig, cross_entropy, lovasz_softmax, total_loss
from .network import NetworkConfig, forward, init_params, prepare
from .projection import PlaneConfigs, PolarGridConfig, RangeImageConfig

OP_TOLERANCE = 1e-4
NETWORK_TOLERANCE = 1e-3


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return bool(self.error <= self.tolerance)


def _t(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _bn(rng, c, mode):
    st = BatchNormState.create(c)
    st.gamma.data = rng.uniform(0.5, 1.5, c)
    st.beta.data = rng.standard_normal(c)
    st.running_mean = rng.standard_normal(c)
    st.running_var = rng.uniform(0.5, 2.0, c)
    st.mode = mode
    return st


def op_cases(seed: int = 0) -> list:
    """(name, fn, inputs) for every differentiable op."""
    rng = np.random.default_rng(seed)
    cells = rng.integers(0, 5, 12)
    rows = rng.integers(0, 6, 9)
    labels = rng.integers(0, 4, 10)
    labels[:4] = np.arange(4)
    pair_cols = rng.integers(0, 3, 6)
    bn_train, bn_eval = _bn(rng, 4, "train"), _bn(rng, 4, "eval")
    # distinct values keep max-pooling away from ties
    maxin = Tensor(rng.permutation(5 * 6 * 3).reshape(5, 6, 3) * 0.1 + rng.uniform(0, 0.01, (5, 6, 3)),
                   requires_grad=True)
    cases = [
        ("add", ad.add, [_t(rng, 4, 3), _t(rng, 3)]),
        ("sub", ad.sub, [_t(rng, 4, 3), _t(rng, 4, 3)]),
        ("mul", ad.mul, [_t(rng, 4, 3), _t(rng, 1, 3)]),
        ("relu", ad.relu, [_t(rng, 5, 4)]),
        ("sigmoid", ad.sigmoid, [_t(rng, 5, 4)]),
        ("softmax_rows", ad.softmax_rows, [_t(rng, 5, 4)]),
        ("log_softmax_rows", ad.log_softmax_rows, [_t(rng, 5, 4)]),
        ("reshape", lambda x: ad.reshape(x, (3, 8)), [_t(rng, 4, 6)]),
        ("concat", lambda a, b: ad.concat([a, b], axis=-1), [_t(rng, 4, 2), _t(rng, 4, 3)]),
        ("sum", lambda x: ad.sum(x, axis=0), [_t(rng, 4, 3)]),
        ("mean", ad.mean, [_t(rng, 4, 3)]),
        ("gather_rows", lambda x: ad.gather_rows(x, rows.reshape(3, 3)), [_t(rng, 6, 2)]),
        ("take_pairs", lambda x: ad.take_pairs(x, np.arange(6), pair_cols), [_t(rng, 6, 3)]),
        ("scatter_mean_rows", lambda x: ad.scatter_mean_rows(x, cells, 5), [_t(rng, 12, 3)]),
        ("linear_pointwise", ad.linear_pointwise, [_t(rng, 2, 5, 3), _t(rng, 4, 3), _t(rng, 4)]),
        ("depthwise_pointwise", ad.depthwise_pointwise, [_t(rng, 5, 3), _t(rng, 3), _t(rng, 3)]),
        ("conv2d_same", ad.conv2d_same, [_t(rng, 4, 5, 2), _t(rng, 3, 3, 3, 2), _t(rng, 3)]),
        ("conv2d_same_batched", ad.conv2d_same, [_t(rng, 2, 3, 4, 2), _t(rng, 2, 3, 3, 2), _t(rng, 2)]),
        ("max_over_neighbors", ad.max_over_neighbors, [maxin]),
        ("batch_norm_train", lambda x, g, b: ad.batch_norm(x, bn_train), None),
        ("batch_norm_eval", lambda x, g, b: ad.batch_norm(x, bn_eval), None),
        ("cross_entropy", lambda x: cross_entropy(x, labels, LossConfig(ignore_index=-1)), [_t(rng, 10, 4)]),
        ("lovasz_softmax", lambda x: lovasz_softmax(ad.softmax_rows(x), labels, LossConfig(ignore_index=-1)),
         [_t(rng, 10, 4)]),
        ("total_loss", lambda x: total_loss(x, labels, LossConfig(ignore_index=-1)), [_t(rng, 10, 4)]),
    ]
    out = []
    for name, fn, inputs in cases:
        if name.startswith("batch_norm"):
            st = bn_train if name.endswith("train") else bn_eval
            inputs = [_t(rng, 3, 6, 4), st.gamma, st.beta]
        out.append((name, fn, inputs))
    return out


def tiny_network(seed: int = 0, points: int = 20, layers: int = 5, channels: int = 4):
    """Small f64 network and a matching random cloud, for end-to-end checks."""
    rng = np.random.default_rng(seed)
    coords = np.column_stack([rng.uniform(-6, 6, points), rng.uniform(-6, 6, points),
                              rng.uniform(-2.5, 1.5, points)])
    cloud = PointCloud(coords, rng.uniform(0, 1, points), rng.integers(1, 3, points))
    planes = PlaneConfigs(CropBounds(-8, 8, -8, 8, -3, 2), 2.0, PolarGridConfig(0.5, 10.0, 6, 8),
                          RangeImageConfig.from_degrees(6, 12, 30.0, 30.0))
    cfg = NetworkConfig(layers=layers, channels=channels, k_neighbors=4, num_classes=3,
                        mlp_hidden=6, conv_hidden=6, planes=planes)
    params = init_params(cfg, seed, np.float64)
    # perturb zero-initialised biases and BN affines so every path carries gradient
    for t in params.parameters().values():
        t.data = t.data + 0.1 * rng.standard_normal(t.shape)
    return cloud, params


def network_check(seed: int = 0, directions: int = 3) -> CheckResult:
    """Mean-logit objective of a 20-point, L=5, C=4 network versus finite differences."""
    cloud, params = tiny_network(seed)
    batch = prepare(cloud, params.config)
    named = params.parameters()
    names = list(named)

    def fn(*tensors):
        return ad.mean(forward(batch, params, "train"))

    worst = max(grad_check(fn, [named[n] for n in names], seed=seed + d, joint=True) for d in range(directions))
    return CheckResult("network_end_to_end", worst, NETWORK_TOLERANCE)


def run_suite(seed: int = 0, directions: int = 3) -> list:
    results = []
    for name, fn, inputs in op_cases(seed):
        err = max(grad_check(fn, inputs, seed=seed + d) for d in range(directions))
        results.append(CheckResult(name, err, OP_TOLERANCE))
    results.append(network_check(seed, directions))
    return results
