"""Seeded synthetic models with the layer geometry of the reference networks.

Parameter values are Gaussian (He-scaled so activations stay O(1)); only
the parameter counts follow the published architectures.  Spatial
attributes are chosen so shape inference reproduces the listed output
image sizes.
"""
from __future__ import annotations

import math

import numpy as np

from fxquant import netir
from fxquant.netir import Model

FIXTURES = ("identity", "cifar10", "alexnet", "chain")


def _conv(rng, name, cin, cout, k, **kw):
    std = math.sqrt(2.0 / (cin * k * k))
    w = rng.normal(0.0, std, (cout, cin, k, k))
    return netir.conv2d(name, cin, cout, k, weight=w, **kw)


def _fc(rng, name, fin, fout):
    w = rng.normal(0.0, math.sqrt(2.0 / fin), (fout, fin))
    return netir.fully_connected(name, fin, fout, weight=w)


def identity_net() -> Model:
    layer = netir.fully_connected("fc0", 2, 2, weight=np.eye(2), bias=np.zeros(2))
    return Model((layer,), (2,))


def cifar10_net(seed: int = 0) -> Model:
    """Seven quantizable layers with the weight counts of the reference CIFAR-10 network (no biases)."""
    rng = np.random.default_rng(seed)
    layers = [
        _conv(rng, "conv0", 3, 256, 3),  # 24 -> 22
        netir.relu("relu0"),
        _conv(rng, "conv1", 256, 128, 3, stride=2, padding=2),  # -> 12
        netir.relu("relu1"),
        _conv(rng, "conv2", 128, 256, 3),  # -> 10
        netir.relu("relu2"),
        _conv(rng, "conv3", 256, 256, 3),  # -> 8
        netir.relu("relu3"),
        _conv(rng, "conv4", 256, 256, 3, stride=2, padding=2),  # -> 5
        netir.relu("relu4"),
        _conv(rng, "conv5", 256, 128, 7, stride=2, padding=2),  # -> 2
        netir.relu("relu5"),
        netir.flatten("flatten"),
        _fc(rng, "fc0", 512, 10),
    ]
    return Model(tuple(layers), (3, 24, 24))


def alexnet_net(seed: int = 0) -> Model:
    """AlexNet-like network with the conv / fc weight counts of the reference ImageNet model."""
    rng = np.random.default_rng(seed)
    layers = [
        _conv(rng, "conv1", 3, 96, 7, stride=2, padding=3),  # 224 -> 112
        netir.relu("relu1"),
        netir.maxpool("pool1", 2),  # -> 56
        _conv(rng, "conv2", 96, 160, 5, stride=2, padding=2),  # -> 28
        netir.relu("relu2"),
        netir.maxpool("pool2", 2),  # -> 14
        _conv(rng, "conv3", 160, 192, 3, padding=1),
        netir.relu("relu3"),
        _conv(rng, "conv4", 192, 192, 3, padding=1),
        netir.relu("relu4"),
        _conv(rng, "conv5", 192, 160, 3, padding=1),
        netir.relu("relu5"),
        netir.maxpool("pool5", 2),  # -> 7
        netir.flatten("flatten"),
        _fc(rng, "fc1", 160 * 7 * 7, 2048),
        netir.relu("relu6"),
        _fc(rng, "fc2", 2048, 2048),
    ]
    return Model(tuple(layers), (3, 224, 224))


def chain_net(seed: int = 0, depth: int = 5, channels: int = 16, size: int = 12, relu: bool = True) -> Model:
    """Small conv chain ``conv1..conv<depth>`` with Gaussian weights, 3x3 same-padding."""
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(1, depth + 1):
        layers.append(_conv(rng, f"conv{i}", channels, channels, 3, padding=1))
        if relu and i < depth:
            layers.append(netir.relu(f"relu{i}"))
    return Model(tuple(layers), (channels, size, size))


def build(kind: str, seed: int = 0) -> Model:
    if kind == "identity":
        return identity_net()
    if kind == "cifar10":
        return cifar10_net(seed)
    if kind == "alexnet":
        return alexnet_net(seed)
    if kind == "chain":
        return chain_net(seed)
    raise ValueError(f"unknown fixture {kind!r} (expected one of {', '.join(FIXTURES)})")


def gaussian_inputs(model: Model, n: int, seed: int = 0) -> np.ndarray:
    """Unit-Gaussian input batch of ``n`` samples."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n,) + model.input_shape)
