"""Convolution, transposed convolution, activations and the MAE loss.

The public functions take ``float32`` tensors in ``(batch, channels,
height, width)`` layout.  Convolution weights are ``(out, in, k, k)``;
transposed convolution weights are ``(in, out, k, k)``, so a transposed
convolution is the adjoint of the ordinary convolution with the same
weights.  Backward passes are explicit functions; there is no graph.

Internally the kernels run channels-last, which keeps the patch copies
contiguous; :class:`Conv` works on channels-last tensors directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .._jit import njit

DTYPE = np.float32


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    transposed: bool = False

    def output_size(self, size: int) -> int:
        k, s, p = self.kernel, self.stride, self.padding
        if self.transposed:
            return (size - 1) * s - 2 * p + k
        return (size + 2 * p - k) // s + 1

    def weight_shape(self) -> tuple[int, int, int, int]:
        if self.transposed:
            return (self.in_channels, self.out_channels, self.kernel, self.kernel)
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)


def _check(x: np.ndarray, w: np.ndarray, spec: ConvSpec) -> None:
    """``x`` is channels-last here."""
    if x.ndim != 4 or x.shape[3] != spec.in_channels:
        raise ShapeError(f"expected {spec.in_channels} input channels, got tensor of shape {x.shape}")
    if w.shape != spec.weight_shape():
        raise ShapeError(f"expected weights {spec.weight_shape()}, got {w.shape}")
    if not spec.transposed and min(x.shape[1:3]) + 2 * spec.padding < spec.kernel:
        raise ShapeError(f"input {x.shape[1:3]} too small for kernel {spec.kernel}")


def _check_grad(grad_out, x, spec: ConvSpec) -> None:
    n, h, w, _ = x.shape
    expected = (n, spec.output_size(h), spec.output_size(w), spec.out_channels)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {expected} (channels-last)")


def im2col(x: np.ndarray, k: int, s: int, p: int) -> np.ndarray:
    """Channels-last patches as rows: ``(N*Ho*Wo, k*k*C)``."""
    n, _, _, c = x.shape
    if p:
        x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
    ho, wo = win.shape[1:3]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)


def col2im(cols: np.ndarray, shape: tuple[int, int, int, int], k: int, s: int, p: int) -> np.ndarray:
    """Scatter-add patch rows onto a channels-last ``(N, H, W, C)`` image; adjoint of :func:`im2col`."""
    n, h, w, c = shape
    ho = (h + 2 * p - k) // s + 1
    wo = (w + 2 * p - k) // s + 1
    cols = cols.reshape(n, ho, wo, k, k, c)
    out = np.zeros((n, h + 2 * p + s, w + 2 * p + s, c), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, i:i + s * ho:s, j:j + s * wo:s] += cols[:, :, :, i, j]
    return out[:, p:p + h, p:p + w]


def _conv_matrix(w):
    # (out, in, k, k) -> (k*k*in, out)
    o = w.shape[0]
    return w.transpose(2, 3, 1, 0).reshape(-1, o)


def _convt_matrix(w):
    # (in, out, k, k) -> (in, k*k*out)
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


def _bias_grad(g: np.ndarray) -> np.ndarray:
    return g.reshape(-1, g.shape[-1]).sum(axis=0, dtype=np.float64).astype(g.dtype)


def conv_nhwc_forward(x, w, b, spec: ConvSpec, cols=None):
    """Channels-last convolution; returns ``(y, cols)`` so the patches can be reused."""
    _check(x, w, spec)
    n, h, wd, _ = x.shape
    if cols is None:
        cols = im2col(x, spec.kernel, spec.stride, spec.padding)
    y = cols @ _conv_matrix(w)
    if b is not None:
        y += b
    return y.reshape(n, spec.output_size(h), spec.output_size(wd), spec.out_channels), cols


def conv_nhwc_backward(grad_out, x, w, spec: ConvSpec, cols=None, need_input_grad=True):
    _check(x, w, spec)
    _check_grad(grad_out, x, spec)
    if cols is None:
        cols = im2col(x, spec.kernel, spec.stride, spec.padding)
    g = grad_out.reshape(-1, spec.out_channels)
    k = spec.kernel
    grad_w = (cols.T @ g).reshape(k, k, spec.in_channels, spec.out_channels).transpose(3, 2, 0, 1)
    grad_x = None
    if need_input_grad and spec.stride == 1 and spec.padding < k:
        # stride 1: input gradient is a correlation with the flipped kernel, cheaper than col2im
        flipped = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        back = ConvSpec(spec.out_channels, spec.in_channels, k, 1, k - 1 - spec.padding)
        grad_x = conv_nhwc_forward(grad_out, flipped, None, back)[0]
    elif need_input_grad:
        grad_x = col2im(g @ _conv_matrix(w).T, x.shape, k, spec.stride, spec.padding)
    return grad_x, np.ascontiguousarray(grad_w), _bias_grad(grad_out)


def convt_nhwc_forward(x, w, b, spec: ConvSpec):
    _check(x, w, spec)
    n, h, wd, _ = x.shape
    cols = x.reshape(-1, spec.in_channels) @ _convt_matrix(w)
    shape = (n, spec.output_size(h), spec.output_size(wd), spec.out_channels)
    y = col2im(cols, shape, spec.kernel, spec.stride, spec.padding)
    if b is not None:
        y += b
    return y


def convt_nhwc_backward(grad_out, x, w, spec: ConvSpec, need_input_grad=True):
    _check(x, w, spec)
    _check_grad(grad_out, x, spec)
    k = spec.kernel
    gcols = im2col(grad_out, k, spec.stride, spec.padding)
    grad_x = None
    if need_input_grad:
        grad_x = (gcols @ _convt_matrix(w).T).reshape(x.shape)
    grad_w = (x.reshape(-1, spec.in_channels).T @ gcols).reshape(spec.in_channels, k, k, spec.out_channels)
    return grad_x, np.ascontiguousarray(grad_w.transpose(0, 3, 1, 2)), _bias_grad(grad_out)


def _nhwc(x):
    return np.ascontiguousarray(np.asarray(x).transpose(0, 2, 3, 1))


def _nchw(x):
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


def conv2d_forward(x, w, b, spec: ConvSpec) -> np.ndarray:
    if np.ndim(x) != 4:
        raise ShapeError(f"expected a 4-d (N, C, H, W) tensor, got shape {np.shape(x)}")
    return _nchw(conv_nhwc_forward(_nhwc(x), w, b, spec)[0])


def conv2d_backward(grad_out, x, w, spec: ConvSpec):
    """Returns ``(grad_x, grad_w, grad_b)`` for :func:`conv2d_forward`."""
    if np.ndim(grad_out) != 4 or np.ndim(x) != 4:
        raise ShapeError("expected 4-d (N, C, H, W) tensors")
    gx, gw, gb = conv_nhwc_backward(_nhwc(grad_out), _nhwc(x), w, spec)
    return _nchw(gx), gw, gb


def conv_transpose2d_forward(x, w, b, spec: ConvSpec) -> np.ndarray:
    if np.ndim(x) != 4:
        raise ShapeError(f"expected a 4-d (N, C, H, W) tensor, got shape {np.shape(x)}")
    return _nchw(convt_nhwc_forward(_nhwc(x), w, b, spec))


def conv_transpose2d_backward(grad_out, x, w, spec: ConvSpec):
    """Returns ``(grad_x, grad_w, grad_b)`` for :func:`conv_transpose2d_forward`."""
    if np.ndim(grad_out) != 4 or np.ndim(x) != 4:
        raise ShapeError("expected 4-d (N, C, H, W) tensors")
    gx, gw, gb = convt_nhwc_backward(_nhwc(grad_out), _nhwc(x), w, spec)
    return _nchw(gx), gw, gb


@njit(cache=True)
def _leaky_fwd(x, slope, out):
    for i in range(x.size):
        v = x[i]
        out[i] = v if v >= 0 else v * slope


@njit(cache=True)
def _leaky_bwd(g, x, slope, out):
    for i in range(x.size):
        out[i] = g[i] if x[i] >= 0 else g[i] * slope


def leaky_relu_forward(x, slope: float = 0.2) -> np.ndarray:
    """``max(x, slope * x)`` for ``slope`` in ``[0, 1]``."""
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    _leaky_fwd(x.reshape(-1), x.dtype.type(slope), out.reshape(-1))
    return out


def leaky_relu_backward(grad_out, x, slope: float = 0.2) -> np.ndarray:
    """Multiplies ``grad_out`` by 1 where ``x >= 0`` and by ``slope`` elsewhere."""
    g = np.ascontiguousarray(grad_out)
    x = np.ascontiguousarray(x)
    if g.shape != x.shape:
        raise ShapeError(f"gradient {g.shape} and input {x.shape} differ")
    out = np.empty_like(g)
    _leaky_bwd(g.reshape(-1), x.reshape(-1), g.dtype.type(slope), out.reshape(-1))
    return out


def mae_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean absolute error and its (sub)gradient with respect to ``pred``."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    loss = float(np.abs(diff, dtype=np.float64).sum() / diff.size)
    grad = (np.sign(diff) / diff.size).astype(pred.dtype)
    return loss, grad


# ---------------------------------------------------------------------------
# stateful channels-last wrappers used by the models
# ---------------------------------------------------------------------------

class Conv:
    """A convolution (or transposed convolution) with its parameters and forward cache.

    Weights are uniform in ``+-bound``.  The default ``init="fan_in"`` uses
    ``bound = sqrt(1 / fan_in)``.  ``init="rectifier"`` scales for the leaky
    rectifier (negative slope ``slope``) that follows the layer,
    ``bound = sqrt(6 / ((1 + slope**2) * fan_in))``, which keeps activation
    variance roughly constant through deep chains without skips.  For a
    stride-``s`` transposed convolution ``fan_in`` counts the taps that reach
    one output cell, ``C * k * k / s**2``.  Biases start at zero.  Without an
    ``rng`` the weights are all zero.
    """

    def __init__(self, spec: ConvSpec, rng: np.random.Generator | None = None,
                 init: str = "fan_in", slope: float = 0.0):
        self.spec = spec
        fan_in = spec.in_channels * spec.kernel * spec.kernel
        if spec.transposed:
            fan_in = max(1, fan_in // (spec.stride * spec.stride))
        if init == "fan_in":
            bound = np.sqrt(1.0 / fan_in)
        elif init == "rectifier":
            bound = np.sqrt(6.0 / ((1.0 + slope * slope) * fan_in))
        else:
            raise ValueError(f"unknown init {init!r}; expected 'fan_in' or 'rectifier'")
        shape = spec.weight_shape()
        if rng is None:
            self.weight = np.zeros(shape, dtype=DTYPE)
        else:
            self.weight = rng.uniform(-bound, bound, shape).astype(DTYPE)
        self.bias = np.zeros(spec.out_channels, dtype=DTYPE)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._x = None
        self._cols = None

    def forward(self, x: np.ndarray, keep: bool = True) -> np.ndarray:
        if self.spec.transposed:
            y = convt_nhwc_forward(x, self.weight, self.bias, self.spec)
        else:
            y, cols = conv_nhwc_forward(x, self.weight, self.bias, self.spec)
            if keep:
                self._cols = cols
        if keep:
            self._x = x
        return y

    def backward(self, grad_out: np.ndarray, need_input_grad: bool = True) -> np.ndarray | None:
        if self._x is None:
            raise RuntimeError("backward called before forward")
        if self.spec.transposed:
            gx, gw, gb = convt_nhwc_backward(grad_out, self._x, self.weight, self.spec, need_input_grad)
        else:
            gx, gw, gb = conv_nhwc_backward(grad_out, self._x, self.weight, self.spec, self._cols, need_input_grad)
        self.grad_weight[...] = gw
        self.grad_bias[...] = gb
        self._x = self._cols = None
        return gx


class LeakyReLU:
    def __init__(self, slope: float = 0.2):
        self.slope = slope
        self._x = None

    def forward(self, x: np.ndarray, keep: bool = True) -> np.ndarray:
        if keep:
            self._x = x
        return leaky_relu_forward(x, self.slope)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        g = leaky_relu_backward(grad_out, self._x, self.slope)
        self._x = None
        return g
