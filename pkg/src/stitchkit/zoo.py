"""Desk-scale model zoo: three heterogeneous architectures, one task.

cnn_a (4 trainable layers), cnn_b (6), mlp_c (5) all classify the same
synthetic dataset, trained with different seeds, so their fragments share
an upstream task while differing in depth, width, and family. 4+6+5
trainable layers fragment into a 15-fragment pool.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .layers import (
    AdaptiveAvgPool1x1,
    Conv2d,
    Flatten,
    Linear,
    MaxPool2d,
    ReLU,
    Softmax,
)
from .training import train_network


def _conv(rng, c_out, c_in, k, stride, padding, name):
    std = np.sqrt(2.0 / (c_in * k * k))
    # small positive bias keeps channels alive (full-rank joint activations)
    return Conv2d(
        rng.normal(0.0, std, (c_out, c_in, k, k)), np.full(c_out, 0.05), stride, padding, name
    )


def _linear(rng, n_out, n_in, name):
    std = np.sqrt(2.0 / n_in)
    return Linear(rng.normal(0.0, std, (n_out, n_in)), np.zeros(n_out), name)


def cnn_a(rng, num_classes, input_shape):
    # all-conv body: every cut point is fed by a conv map, whose folded
    # spatial samples keep the joint projections full rank
    c, h, w = input_shape
    layers = [
        _conv(rng, 8, c, 3, 1, 1, "conv1"),
        ReLU("relu1"),
        MaxPool2d(2, 2, "pool1"),
        _conv(rng, 12, 8, 3, 1, 1, "conv2"),
        ReLU("relu2"),
        MaxPool2d(2, 2, "pool2"),
        _conv(rng, 16, 12, 3, 1, 1, "conv3"),
        ReLU("relu3"),
        AdaptiveAvgPool1x1("gap"),
        Flatten("flat"),
        _linear(rng, num_classes, 16, "fc"),
        Softmax("softmax"),
    ]
    return layers, "cnn_a"


def cnn_b(rng, num_classes, input_shape):
    c, h, w = input_shape
    layers = [
        _conv(rng, 6, c, 3, 1, 1, "conv1"),
        ReLU("relu1"),
        _conv(rng, 12, 6, 3, 1, 1, "conv2"),
        ReLU("relu2"),
        MaxPool2d(2, 2, "pool1"),
        _conv(rng, 24, 12, 3, 1, 1, "conv3"),
        ReLU("relu3"),
        MaxPool2d(2, 2, "pool2"),
        _conv(rng, 32, 24, 3, 1, 1, "conv4"),
        ReLU("relu4"),
        AdaptiveAvgPool1x1("gap"),
        Flatten("flat"),
        _linear(rng, 24, 32, "fc1"),
        ReLU("relu5"),
        _linear(rng, num_classes, 24, "fc2"),
        Softmax("softmax"),
    ]
    return layers, "cnn_b"


def mlp_c(rng, num_classes, input_shape):
    n_in = int(np.prod(input_shape))
    layers = [
        Flatten("flat"),
        _linear(rng, 64, n_in, "fc1"),
        ReLU("relu1"),
        _linear(rng, 48, 64, "fc2"),
        ReLU("relu2"),
        _linear(rng, 32, 48, "fc3"),
        ReLU("relu3"),
        _linear(rng, 24, 32, "fc4"),
        ReLU("relu4"),
        _linear(rng, num_classes, 24, "fc5"),
        Softmax("softmax"),
    ]
    return layers, "mlp_c"


ARCHITECTURES = {"cnn_a": cnn_a, "cnn_b": cnn_b, "mlp_c": mlp_c}

# from-scratch training defaults; lr=0.001 is a fine-tuning rate, far too slow here
ZOO_EPOCHS = 12
ZOO_LR = 0.01


def resolve_arch(name):
    try:
        return ARCHITECTURES[name]
    except KeyError:
        raise ConfigError(
            f"unknown architecture {name!r}; choose from {sorted(ARCHITECTURES)}"
        ) from None


def build_zoo(
    train_dataset,
    arch_names=("cnn_a", "cnn_b", "mlp_c"),
    epochs=ZOO_EPOCHS,
    lr=ZOO_LR,
    momentum=0.9,
    batch_size=32,
    seed=0,
):
    """Train one network per architecture, each with its own derived seed."""
    nets = []
    for i, name in enumerate(arch_names):
        nets.append(
            train_network(
                resolve_arch(name),
                train_dataset,
                epochs=epochs,
                lr=lr,
                momentum=momentum,
                batch_size=batch_size,
                seed=seed + 1000 * i,
            )
        )
    return nets
