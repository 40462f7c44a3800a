"""Layer kinds for sequential networks.

Each layer knows its forward pass, its backward pass (for the trainer),
its static output shape (for network validation), and how to copy itself.
Activation shapes are tracked without the batch axis: (C, H, W) for
feature maps, (F,) for flat vectors.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .tensor_ops import (
    adaptive_avg_pool_1x1,
    as_tensor,
    col2im,
    conv_windows,
    im2col,
    resize_spatial,
)

TRAINABLE_KINDS = ("linear", "conv2d")


class Layer:
    kind = "layer"

    def forward(self, x):
        raise NotImplementedError

    def forward_cache(self, x):
        return self.forward(x), None

    def backward(self, grad, cache):
        raise NotImplementedError(f"{self.kind} has no backward pass")

    def out_shape(self, in_shape):
        raise NotImplementedError

    @property
    def n_params(self):
        return 0

    def params(self):
        """Mutable parameter arrays, name -> ndarray."""
        return {}

    def copy(self):
        return self


class Linear(Layer):
    kind = "linear"

    def __init__(self, weight, bias, name="linear"):
        self.weight = as_tensor(weight, "weight")
        self.bias = as_tensor(bias, "bias")
        self.name = name
        if self.weight.ndim != 2:
            raise DimensionError(f"linear weight must be 2-D, got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(
                f"bias shape {self.bias.shape} does not match weight {self.weight.shape}"
            )

    @property
    def out_features(self):
        return self.weight.shape[0]

    @property
    def in_features(self):
        return self.weight.shape[1]

    def forward(self, x):
        x = as_tensor(x, "input")
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(
                f"expected [N, {self.in_features}] input, got {x.shape}"
            )
        return x @ self.weight.T + self.bias

    def forward_cache(self, x):
        out = self.forward(x)
        return out, x

    def backward(self, grad, cache):
        x = cache
        gx = grad @ self.weight
        return gx, {"weight": grad.T @ x, "bias": grad.sum(axis=0)}

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.in_features:
            raise DimensionError(f"linear '{self.name}' cannot take shape {in_shape}")
        return (self.out_features,)

    @property
    def n_params(self):
        return self.weight.size + self.bias.size

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def copy(self):
        return Linear(self.weight.copy(), self.bias.copy(), self.name)


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, weight, bias, stride=1, padding=0, name="conv"):
        self.weight = as_tensor(weight, "weight")
        self.bias = as_tensor(bias, "bias")
        self.stride = int(stride)
        self.padding = int(padding)
        self.name = name
        if self.weight.ndim != 4:
            raise DimensionError(f"conv weight must be 4-D, got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(
                f"bias shape {self.bias.shape} does not match weight {self.weight.shape}"
            )

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[1]

    def forward(self, x):
        x = as_tensor(x, "input")
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise DimensionError(
                f"expected [N, {self.in_channels}, H, W] input, got {x.shape}"
            )
        o, c, kh, kw = self.weight.shape
        cols, (ho, wo) = im2col(x, kh, kw, self.stride, self.padding)
        out = cols @ self.weight.reshape(o, -1).T + self.bias
        return np.ascontiguousarray(
            out.reshape(x.shape[0], ho, wo, o).transpose(0, 3, 1, 2)
        )

    def forward_cache(self, x):
        x = as_tensor(x, "input")
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise DimensionError(
                f"expected [N, {self.in_channels}, H, W] input, got {x.shape}"
            )
        o, c, kh, kw = self.weight.shape
        cols, (ho, wo) = im2col(x, kh, kw, self.stride, self.padding)
        out = cols @ self.weight.reshape(o, -1).T + self.bias
        out = np.ascontiguousarray(out.reshape(x.shape[0], ho, wo, o).transpose(0, 3, 1, 2))
        return out, (cols, x.shape)

    def backward(self, grad, cache):
        cols, x_shape = cache
        o, c, kh, kw = self.weight.shape
        gmat = grad.transpose(0, 2, 3, 1).reshape(-1, o)
        dw = (gmat.T @ cols).reshape(self.weight.shape)
        db = gmat.sum(axis=0)
        dcols = gmat @ self.weight.reshape(o, -1)
        gx = col2im(dcols, x_shape, kh, kw, self.stride, self.padding)
        return gx, {"weight": dw, "bias": db}

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise DimensionError(f"conv '{self.name}' cannot take shape {in_shape}")
        c, h, w = in_shape
        o, _, kh, kw = self.weight.shape
        ho = (h + 2 * self.padding - kh) // self.stride + 1
        wo = (w + 2 * self.padding - kw) // self.stride + 1
        if ho < 1 or wo < 1:
            raise DimensionError(f"conv '{self.name}' output collapses on {in_shape}")
        return (o, ho, wo)

    @property
    def n_params(self):
        return self.weight.size + self.bias.size

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def copy(self):
        return Conv2d(self.weight.copy(), self.bias.copy(), self.stride, self.padding, self.name)


class ReLU(Layer):
    kind = "relu"

    def __init__(self, name="relu"):
        self.name = name

    def forward(self, x):
        return np.maximum(as_tensor(x, "input"), 0.0)

    def forward_cache(self, x):
        out = self.forward(x)
        return out, out

    def backward(self, grad, cache):
        return grad * (cache > 0), {}

    def out_shape(self, in_shape):
        return in_shape


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, k, stride=None, name="pool"):
        self.k = int(k)
        self.stride = int(stride) if stride is not None else int(k)
        self.name = name

    def forward(self, x):
        x = as_tensor(x, "input")
        if x.ndim != 4:
            raise DimensionError(f"maxpool expects 4-D input, got {x.shape}")
        win = conv_windows(x, self.k, self.k, self.stride, 0)
        return np.ascontiguousarray(win.max(axis=(4, 5)))

    def forward_cache(self, x):
        x = as_tensor(x, "input")
        win = conv_windows(x, self.k, self.k, self.stride, 0)
        n, c, ho, wo = win.shape[:4]
        flat = win.reshape(n, c, ho, wo, self.k * self.k)
        arg = flat.argmax(axis=4)  # first max wins: deterministic tie-break
        out = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]
        return np.ascontiguousarray(out), (arg, x.shape, (ho, wo))

    def backward(self, grad, cache):
        arg, x_shape, (ho, wo) = cache
        n, c = x_shape[0], x_shape[1]
        gx = np.zeros(x_shape)
        ni, ci, hi, wi = np.indices((n, c, ho, wo))
        rows = hi * self.stride + arg // self.k
        cols = wi * self.stride + arg % self.k
        np.add.at(gx, (ni, ci, rows, cols), grad)
        return gx, {}

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise DimensionError(f"maxpool '{self.name}' cannot take shape {in_shape}")
        c, h, w = in_shape
        ho = (h - self.k) // self.stride + 1
        wo = (w - self.k) // self.stride + 1
        if ho < 1 or wo < 1:
            raise DimensionError(f"maxpool '{self.name}' output collapses on {in_shape}")
        return (c, ho, wo)


class AdaptiveAvgPool1x1(Layer):
    kind = "adaptiveavgpool"

    def __init__(self, name="gap"):
        self.name = name

    def forward(self, x):
        return adaptive_avg_pool_1x1(x)

    def forward_cache(self, x):
        x = as_tensor(x, "input")
        return adaptive_avg_pool_1x1(x), x.shape

    def backward(self, grad, cache):
        n, c, h, w = cache
        return np.broadcast_to(grad / (h * w), cache).copy(), {}

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise DimensionError(f"pool '{self.name}' cannot take shape {in_shape}")
        return (in_shape[0], 1, 1)


class Flatten(Layer):
    kind = "flatten"

    def __init__(self, name="flatten"):
        self.name = name

    def forward(self, x):
        x = as_tensor(x, "input")
        return x.reshape(x.shape[0], -1)

    def forward_cache(self, x):
        x = as_tensor(x, "input")
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad, cache):
        return grad.reshape(cache), {}

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class Softmax(Layer):
    kind = "softmax"

    def __init__(self, name="softmax"):
        self.name = name

    def forward(self, x):
        x = as_tensor(x, "input")
        if x.ndim != 2:
            raise DimensionError(f"softmax expects 2-D logits, got {x.shape}")
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise DimensionError(f"softmax '{self.name}' cannot take shape {in_shape}")
        return in_shape


class Resize(Layer):
    """Spatial resampling adapter inserted at conv-to-conv joints."""

    kind = "resize"

    def __init__(self, target_h, target_w, name="resize"):
        self.target_h = int(target_h)
        self.target_w = int(target_w)
        self.name = name

    def forward(self, x):
        return resize_spatial(x, self.target_h, self.target_w)

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise DimensionError(f"resize '{self.name}' cannot take shape {in_shape}")
        return (in_shape[0], self.target_h, self.target_w)


def softmax_probs(logits):
    """Row-stochastic softmax of a 2-D logit array."""
    return Softmax().forward(logits)
