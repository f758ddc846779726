"""
Dense, convolution, pooling and activation kernels with exact backward passes.

Tensors are plain ``numpy.ndarray`` values; images use the (batch, height,
width, channels) layout. Every ``*_forward`` returns ``(output, cache)`` and
the matching ``*_backward`` consumes the cache.
"""
from dataclasses import dataclass

import numpy as np

from app.errors import ConfigError, ShapeError

Tensor = np.ndarray


@dataclass(frozen=True)
class ConvSpec:
    kernel_h: int
    kernel_w: int
    channels: int
    dilation: int = 1
    stride: int = 1
    padding: str = "valid"

    def __post_init__(self):
        if min(self.kernel_h, self.kernel_w, self.channels, self.dilation, self.stride) < 1:
            raise ConfigError(f"Invalid convolution spec {self}")
        if self.padding not in ("valid", "same"):
            raise ConfigError(f"Padding must be 'valid' or 'same', got {self.padding!r}")

    @property
    def effective_kernel(self):
        """Receptive field (rows, cols) of one output position."""
        return (self.dilation * (self.kernel_h - 1) + 1, self.dilation * (self.kernel_w - 1) + 1)

    def output_size(self, height, width):
        eh, ew = self.effective_kernel
        if self.padding == "same":
            return -(-height // self.stride), -(-width // self.stride)
        return (height - eh) // self.stride + 1, (width - ew) // self.stride + 1

    def pads(self, height, width):
        """((top, bottom), (left, right)) zero padding."""
        if self.padding == "valid":
            return (0, 0), (0, 0)
        oh, ow = self.output_size(height, width)
        eh, ew = self.effective_kernel
        ph = max((oh - 1) * self.stride + eh - height, 0)
        pw = max((ow - 1) * self.stride + ew - width, 0)
        return (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)


def conv2d_forward(x, kernels, bias, spec):
    """
    Dilated cross-correlation: out(p) = sum_{s + l*t = p} F(s) k(t) + bias.

    Args:
        x: (B, H, W, C_in)
        kernels: (kh, kw, C_in, C_out)
        bias: (C_out,)
        spec (ConvSpec): kernel size, dilation, stride and padding.
    """
    if x.ndim != 4 or kernels.ndim != 4 or x.shape[3] != kernels.shape[2]:
        raise ShapeError("conv2d input/kernel channel mismatch", x.shape, kernels.shape)
    if kernels.shape[:2] != (spec.kernel_h, spec.kernel_w):
        raise ShapeError("conv2d kernel does not match spec", kernels.shape, (spec.kernel_h, spec.kernel_w))
    (pt, pb), (pl, pr) = spec.pads(x.shape[1], x.shape[2])
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if pt + pb + pl + pr else x
    oh, ow = spec.output_size(x.shape[1], x.shape[2])
    if oh < 1 or ow < 1:
        raise ShapeError("conv2d output would be empty", x.shape, kernels.shape)

    d, s = spec.dilation, spec.stride
    out = np.broadcast_to(bias, (x.shape[0], oh, ow, kernels.shape[3])).copy()
    for u in range(spec.kernel_h):
        for v in range(spec.kernel_w):
            window = xp[:, u * d:u * d + s * (oh - 1) + 1:s, v * d:v * d + s * (ow - 1) + 1:s, :]
            out += window @ kernels[u, v]
    return out, (xp, kernels, spec, x.shape)


def conv2d_backward(dout, cache):
    """Returns (dx, dkernels, dbias)."""
    xp, kernels, spec, x_shape = cache
    d, s = spec.dilation, spec.stride
    oh, ow = dout.shape[1], dout.shape[2]
    dxp = np.zeros_like(xp)
    dk = np.zeros_like(kernels)
    for u in range(spec.kernel_h):
        for v in range(spec.kernel_w):
            rows = slice(u * d, u * d + s * (oh - 1) + 1, s)
            cols = slice(v * d, v * d + s * (ow - 1) + 1, s)
            window = xp[:, rows, cols, :]
            dk[u, v] = np.tensordot(window, dout, axes=([0, 1, 2], [0, 1, 2]))
            dxp[:, rows, cols, :] += dout @ kernels[u, v].T
    db = dout.sum(axis=(0, 1, 2))
    (pt, _), (pl, _) = spec.pads(x_shape[1], x_shape[2])
    dx = dxp[:, pt:pt + x_shape[1], pl:pl + x_shape[2], :]
    return dx, dk, db


def maxpool2d_forward(x, window=2, stride=2):
    """
    Window maxima with floor division on odd sizes; ties go to the first
    position in row-major window order.
    """
    b, h, w, c = x.shape
    if h < window or w < window:
        raise ShapeError("maxpool2d input smaller than window", x.shape, (window, window))
    oh, ow = (h - window) // stride + 1, (w - window) // stride + 1
    best = None
    argbest = np.zeros((b, oh, ow, c), dtype=np.int64)
    for u in range(window):
        for v in range(window):
            view = x[:, u:u + stride * (oh - 1) + 1:stride, v:v + stride * (ow - 1) + 1:stride, :]
            if best is None:
                best = view.copy()
                continue
            better = view > best
            best[better] = view[better]
            argbest[better] = u * window + v
    return best, (x.shape, argbest, window, stride)


def maxpool2d_backward(dout, cache):
    x_shape, argbest, window, stride = cache
    dx = np.zeros(x_shape, dtype=dout.dtype)
    oh, ow = dout.shape[1], dout.shape[2]
    for u in range(window):
        for v in range(window):
            rows = slice(u, u + stride * (oh - 1) + 1, stride)
            cols = slice(v, v + stride * (ow - 1) + 1, stride)
            dx[:, rows, cols, :] += np.where(argbest == u * window + v, dout, 0)
    return dx


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, cache):
    return np.where(cache > 0, dout, 0).astype(dout.dtype)


def dense_forward(x, weight, bias):
    """x @ W + b over the last axis."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError("dense input/weight mismatch", x.shape, weight.shape)
    return x @ weight + bias, (x, weight)


def dense_backward(dout, cache):
    """Returns (dx, dweight, dbias)."""
    x, weight = cache
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    return dout @ weight.T, x2.T @ d2, d2.sum(axis=0)


def flatten_forward(x):
    """Row-major flatten of everything after the batch axis."""
    return x.reshape(x.shape[0], -1), x.shape


def flatten_backward(dout, cache):
    return dout.reshape(cache)


def dropout_forward(x, rate, training, rng=None):
    """Inverted dropout; identity at inference or when rate is 0."""
    if not training or rate == 0.0:
        return x, None
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"Dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def dropout_backward(dout, cache):
    return dout if cache is None else dout * cache


def softmax(logits, axis=-1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits, labels):
    """
    Mean sparse categorical cross-entropy.

    Returns:
        tuple: (loss, dlogits, probabilities)
    """
    labels = np.asarray(labels, dtype=np.int64)
    b = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_norm
    loss = -log_p[np.arange(b), labels].mean()
    p = np.exp(log_p)
    dlogits = p.copy()
    dlogits[np.arange(b), labels] -= 1.0
    return float(loss), dlogits / b, p
