"""Dense float64 array primitives underlying the whole library.

Everything operates on C-contiguous float64 ndarrays and is pure: identical
inputs give bit-identical outputs, and no function mutates its arguments.
Analysis matrices follow the features-by-samples orientation; batched
activations are samples-first and get transposed at the analysis boundary.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, NumericError

# Relative scale of the automatic Tikhonov term guarding near-singular Gram
# matrices in solve_projection (small sample counts make them rank-deficient).
DEFAULT_RIDGE_SCALE = 1e-8


def as_tensor(x, name="tensor"):
    """Coerce to a C-contiguous float64 array, rejecting NaN/Inf."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr


def matmul(a, b):
    """Matrix product of two 2-D tensors."""
    a = as_tensor(a, "a")
    b = as_tensor(b, "b")
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def _padded(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv_windows(x, kh, kw, stride, padding):
    """Sliding (kh, kw) windows of a padded NCHW batch, strided.

    Returns a view of shape [N, C, Ho, Wo, kh, kw].
    """
    xp = _padded(x, padding)
    hp, wp = xp.shape[2], xp.shape[3]
    if kh > hp or kw > wp:
        raise DimensionError(
            f"kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        )
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation of an NCHW batch with an OCkhkw kernel.

    Output spatial size is floor((H + 2*padding - kh)/stride) + 1 per axis.
    No kernel flip (the convention of mainstream pre-trained models).
    """
    x = as_tensor(x, "input")
    w = as_tensor(weight, "weight")
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input/weight, got {x.shape} and {w.shape}")
    if stride < 1 or padding < 0:
        raise ConfigError(f"bad stride/padding: {stride}/{padding}")
    n, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if c != cw:
        raise DimensionError(f"input has {c} channels, weight expects {cw}")
    win = conv_windows(x, kh, kw, stride, padding)
    out = np.einsum("nchwkl,ockl->nohw", win, w, optimize=True)
    if bias is not None:
        b = as_tensor(bias, "bias")
        if b.shape != (o,):
            raise DimensionError(f"bias shape {b.shape} does not match {o} output channels")
        out = out + b[None, :, None, None]
    return np.ascontiguousarray(out)


def im2col(x, kh, kw, stride, padding):
    """Unfold an NCHW batch into a [N*Ho*Wo, C*kh*kw] patch matrix."""
    win = conv_windows(x, kh, kw, stride, padding)
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols), (ho, wo)


def col2im(cols, x_shape, kh, kw, stride, padding):
    """Scatter-add a patch matrix back onto the (padded) input grid."""
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    patches = cols.reshape(n, ho, wo, c, kh, kw)
    xp = np.zeros((n, c, hp, wp))
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                patches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if padding:
        xp = xp[:, :, padding : padding + h, padding : padding + w]
    return np.ascontiguousarray(xp)


def adaptive_avg_pool_1x1(x):
    """Mean over each HxW spatial plane: [N,C,H,W] -> [N,C,1,1]."""
    x = as_tensor(x, "input")
    if x.ndim != 4:
        raise DimensionError(f"adaptive_avg_pool_1x1 expects 4-D input, got {x.shape}")
    return x.mean(axis=(2, 3), keepdims=True)


def _pool_bins(size, target):
    # Adaptive bins: bin i covers [floor(i*size/t), ceil((i+1)*size/t))
    starts = (np.arange(target) * size) // target
    ends = -((-(np.arange(target) + 1) * size) // target)
    return starts, ends


def _resize_axis(x, axis, target):
    size = x.shape[axis]
    if target == size:
        return x
    if target < size:
        # downsample: adaptive average pooling over computed bins
        starts, ends = _pool_bins(size, target)
        pieces = [
            x.take(range(starts[i], ends[i]), axis=axis).mean(axis=axis, keepdims=True)
            for i in range(target)
        ]
        return np.concatenate(pieces, axis=axis)
    # upsample: nearest-neighbor replication
    idx = (np.arange(target) * size) // target
    return x.take(idx, axis=axis)


def resize_spatial(x, target_h, target_w):
    """Resize the spatial axes of an NCHW batch.

    Downsampling averages over adaptive bins, upsampling replicates
    nearest neighbors, same-size is the identity. Axes are independent,
    so mixed up/down targets work.
    """
    x = as_tensor(x, "input")
    if x.ndim != 4:
        raise DimensionError(f"resize_spatial expects 4-D input, got {x.shape}")
    if target_h < 1 or target_w < 1:
        raise DimensionError(f"target size {target_h}x{target_w} must be >= 1")
    if target_h == x.shape[2] and target_w == x.shape[3]:
        return x
    out = _resize_axis(x, 2, target_h)
    out = _resize_axis(out, 3, target_w)
    return np.ascontiguousarray(out)


def solve_projection(x, y, ridge=None):
    """Least-squares projection A with Y ~ A X for features-by-samples X, Y.

    Returns A = Y X^T (X X^T + ridge*I)^-1, shape [q, p], the minimizer of
    ||Y - A X||_F^2 plus the ridge penalty. ridge=None applies the default
    1e-8 * trace(X X^T) / p; ridge=0.0 requests the exact least-squares
    solution, falling back to the minimum-norm one (SVD) when X X^T is
    singular.
    """
    x = as_tensor(x, "x")
    y = as_tensor(y, "y")
    if x.ndim != 2 or y.ndim != 2:
        raise DimensionError(f"expected 2-D activation matrices, got {x.shape} and {y.shape}")
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"sample counts differ: {x.shape[1]} vs {y.shape[1]}")
    if x.shape[1] < 1:
        raise DimensionError("need at least one sample")
    p = x.shape[0]
    gram = x @ x.T
    if ridge is None:
        ridge = DEFAULT_RIDGE_SCALE * np.trace(gram) / p
    if ridge < 0:
        raise ConfigError(f"ridge must be >= 0, got {ridge}")
    if ridge == 0.0:
        # min-norm least squares handles rank-deficient X X^T
        at, *_ = np.linalg.lstsq(x.T, y.T, rcond=None)
        return np.ascontiguousarray(at.T)
    reg = gram + ridge * np.eye(p)
    a = np.linalg.solve(reg, x @ y.T).T
    return np.ascontiguousarray(a)


def center_columns(x):
    """Remove each row's mean across samples; equals X @ H_n exactly."""
    x = as_tensor(x, "x")
    if x.ndim != 2:
        raise DimensionError(f"center_columns expects a 2-D matrix, got {x.shape}")
    if x.shape[1] < 1:
        raise DimensionError("need at least one sample")
    return x - x.mean(axis=1, keepdims=True)
