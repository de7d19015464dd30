"""Neural kernels over dense NCHW arrays.

Grouped convolutions with few channels per group run on the compiled
extension when it is importable; everything else (and every backward pass)
runs on numpy. Set ``LPNKIT_BACKEND=python`` to force the numpy path, or call
:func:`set_backend` at runtime.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

from ..errors import ShapeError
from . import _pykernels as _py
from .params import ConvParams, NormParams, _pair

try:
    from . import _ckernels as _ck
except ImportError:  # extension not built
    _ck = None

# groups whose (c_in/g)*(c_out/g) is at most this go to the direct loops
SMALL_GROUP = 4

_backend = "compiled" if _ck is not None and os.environ.get("LPNKIT_BACKEND", "") != "python" else "python"


def available_backends() -> list[str]:
    return ["python"] + (["compiled"] if _ck is not None else [])


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in available_backends():
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    _backend = name


@contextmanager
def use_backend(name: str):
    prev = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def _check_nchw(x, what="input"):
    if x.ndim != 4:
        raise ShapeError(f"{what} must be 4-D (n, c, h, w), got shape {x.shape}")


def _use_direct(x, w, groups, cin_g, cout_g):
    return (_backend == "compiled" and groups > 1 and cin_g * cout_g <= SMALL_GROUP
            and x.dtype == w.dtype and x.dtype in (np.float32, np.float64))


# ---------------------------------------------------------------- convolution

def check_conv2d(x_shape, w_shape, stride, padding, groups):
    if len(x_shape) != 4:
        raise ShapeError(f"conv2d input must be 4-D (n, c, h, w), got shape {tuple(x_shape)}")
    n, cin, h, w = x_shape
    cout, cin_g, kh, kw = w_shape
    if groups < 1 or cin % groups or cout % groups:
        raise ShapeError(f"groups={groups} must divide c_in={cin} and c_out={cout}")
    if cin_g * groups != cin:
        raise ShapeError(
            f"weight expects {cin_g * groups} input channels ({cin_g} per group x {groups}), input has {cin}")
    ph, pw = padding
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{w + 2 * pw}")
    oh = (h + 2 * ph - kh) // stride[0] + 1
    ow = (w + 2 * pw - kw) // stride[1] + 1
    return n, cout, oh, ow


def conv2d_raw(x, w, bias=None, stride=(1, 1), padding=(0, 0), groups=1):
    stride, padding = _pair(stride), _pair(padding)
    check_conv2d(x.shape, w.shape, stride, padding, groups)
    if bias is not None and bias.shape != (w.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match c_out={w.shape[0]}")
    cin_g = w.shape[1]
    cout_g = w.shape[0] // groups
    if _use_direct(x, w, groups, cin_g, cout_g):
        return _ck.conv2d_direct(np.ascontiguousarray(x), np.ascontiguousarray(w), bias,
                                 stride[0], stride[1], padding[0], padding[1], groups)
    return _py.conv2d(x, w, bias, stride, padding, groups)


def conv2d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """Cross-correlation with zero padding, ``groups`` channel partitions and optional bias."""
    return conv2d_raw(x, p.weight, p.bias, p.stride, p.padding, p.groups)


def conv2d_backward(x, w, gout, stride, padding, groups, has_bias):
    return _py.conv2d_backward(x, w, gout, _pair(stride), _pair(padding), groups, has_bias)


def check_conv_transpose2d(x_shape, w_shape, stride, padding, output_padding, groups):
    if len(x_shape) != 4:
        raise ShapeError(f"conv_transpose2d input must be 4-D, got shape {tuple(x_shape)}")
    n, cin, h, w = x_shape
    wcin, cout_g, kh, kw = w_shape
    if wcin != cin:
        raise ShapeError(f"transposed weight expects {wcin} input channels, input has {cin}")
    if groups < 1 or cin % groups:
        raise ShapeError(f"groups={groups} must divide c_in={cin}")
    if output_padding[0] >= stride[0] or output_padding[1] >= stride[1]:
        raise ShapeError(f"output_padding {output_padding} must be smaller than stride {stride}")
    oh = (h - 1) * stride[0] - 2 * padding[0] + kh + output_padding[0]
    ow = (w - 1) * stride[1] - 2 * padding[1] + kw + output_padding[1]
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"padding {padding} leaves an empty output")
    return n, cout_g * groups, oh, ow


def conv_transpose2d_raw(x, w, bias=None, stride=(1, 1), padding=(0, 0), output_padding=(0, 0), groups=1):
    stride, padding, output_padding = _pair(stride), _pair(padding), _pair(output_padding)
    check_conv_transpose2d(x.shape, w.shape, stride, padding, output_padding, groups)
    cin_g = w.shape[0] // groups
    cout_g = w.shape[1]
    if bias is not None and bias.shape != (cout_g * groups,):
        raise ShapeError(f"bias shape {bias.shape} does not match c_out={cout_g * groups}")
    if _use_direct(x, w, groups, cin_g, cout_g):
        return _ck.conv_transpose2d_direct(
            np.ascontiguousarray(x), np.ascontiguousarray(w), bias,
            stride[0], stride[1], padding[0], padding[1], output_padding[0], output_padding[1], groups)
    return _py.conv_transpose2d(x, w, bias, stride, padding, output_padding, groups)


def conv_transpose2d(x: np.ndarray, p: ConvParams, output_padding=0) -> np.ndarray:
    """Transposed convolution; the exact adjoint of :func:`conv2d` with the same weight."""
    return conv_transpose2d_raw(x, p.weight, p.bias, p.stride, p.padding, output_padding, p.groups)


def conv_transpose2d_backward(x, w, gout, stride, padding, output_padding, groups, has_bias):
    return _py.conv_transpose2d_backward(x, w, gout, _pair(stride), _pair(padding),
                                         _pair(output_padding), groups, has_bias)


# ------------------------------------------------------------- normalization

def batch_norm(x: np.ndarray, p: NormParams, training: bool = False) -> np.ndarray:
    """Per-channel normalization.

    Training mode normalizes with the biased batch variance and updates the
    running statistics in place (running_var receives the unbiased variance).
    """
    out, _ = batch_norm_forward(x, p, training)
    return out


def batch_norm_forward(x, p: NormParams, training, keep_cache=True):
    _check_nchw(x)
    c = x.shape[1]
    if p.gamma.shape != (c,):
        raise ShapeError(f"norm has {p.gamma.shape[0]} channels, input has {c}")
    if training:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = x.size // c
        unbiased = var * (m / max(m - 1, 1))
        p.running_mean *= 1 - p.momentum
        p.running_mean += p.momentum * mean.astype(p.running_mean.dtype)
        p.running_var *= 1 - p.momentum
        p.running_var += p.momentum * unbiased.astype(p.running_var.dtype)
    else:
        mean, var = p.running_mean, p.running_var
    inv = 1.0 / np.sqrt(var + p.epsilon)
    if not keep_cache:
        # fold into one scale and shift when no backward pass will follow
        a = (p.gamma * inv).astype(x.dtype, copy=False)
        b = (p.beta - mean * p.gamma * inv).astype(x.dtype, copy=False)
        return x * a.reshape(1, c, 1, 1) + b.reshape(1, c, 1, 1), None
    xhat = (x - mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out = xhat * p.gamma.reshape(1, c, 1, 1) + p.beta.reshape(1, c, 1, 1)
    return out.astype(x.dtype, copy=False), (xhat.astype(x.dtype, copy=False), inv.astype(x.dtype, copy=False))


def batch_norm_backward(gout, gamma, xhat, inv, training):
    c = gout.shape[1]
    ggamma = (gout * xhat).sum(axis=(0, 2, 3))
    gbeta = gout.sum(axis=(0, 2, 3))
    gx_hat = gout * gamma.reshape(1, c, 1, 1)
    if training:
        m = gout.size // c
        gx = (inv.reshape(1, c, 1, 1) / m) * (
            m * gx_hat
            - gx_hat.sum(axis=(0, 2, 3), keepdims=True)
            - xhat * (gx_hat * xhat).sum(axis=(0, 2, 3), keepdims=True))
    else:
        gx = gx_hat * inv.reshape(1, c, 1, 1)
    return gx, ggamma, gbeta


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize each sample over all of (c, h, w), then apply a per-channel affine."""
    out, _ = layer_norm_forward(x, gamma, beta, eps)
    return out


def layer_norm_forward(x, gamma, beta, eps=1e-5):
    _check_nchw(x)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm affine must have shape ({c},), got {gamma.shape}/{beta.shape}")
    mean = x.mean(axis=(1, 2, 3), keepdims=True)
    var = x.var(axis=(1, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    return xhat * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1), (xhat, inv)


def layer_norm_backward(gout, gamma, xhat, inv):
    c = gout.shape[1]
    ggamma = (gout * xhat).sum(axis=(0, 2, 3))
    gbeta = gout.sum(axis=(0, 2, 3))
    gx_hat = gout * gamma.reshape(1, c, 1, 1)
    m = gout[0].size
    gx = (inv / m) * (m * gx_hat - gx_hat.sum(axis=(1, 2, 3), keepdims=True)
                      - xhat * (gx_hat * xhat).sum(axis=(1, 2, 3), keepdims=True))
    return gx, ggamma, gbeta


# ----------------------------------------------------------------- softmax

def spatial_softmax(x: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Softmax of ``scale * x`` over all h*w positions of every (n, c) slice."""
    _check_nchw(x)
    if not np.isfinite(scale):
        raise ShapeError(f"softmax scale must be finite, got {scale}")
    n, c, h, w = x.shape
    z = scale * x.reshape(n, c, h * w)
    z = z - z.max(axis=2, keepdims=True)
    e = np.exp(z)
    e /= e.sum(axis=2, keepdims=True)
    return e.reshape(n, c, h, w)


def spatial_softmax_backward(s, gout, scale):
    n, c, h, w = s.shape
    sf = s.reshape(n, c, -1)
    gf = gout.reshape(n, c, -1)
    gz = sf * (gf - (gf * sf).sum(axis=2, keepdims=True))
    return (scale * gz).reshape(n, c, h, w)


# ----------------------------------------------------------------- pointwise

def _check_broadcast(a, b):
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None
    return shape


def relu(x):
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def add(x, y):
    _check_broadcast(x, y)
    return x + y


def mul(x, y):
    _check_broadcast(x, y)
    return x * y


def broadcast_add(x, v):
    """Add a per-(sample, channel) vector, shape (c,), (n, c) or (n, c, 1, 1), at every position."""
    _check_nchw(x)
    n, c = x.shape[:2]
    v = np.asarray(v)
    if v.shape == (c,):
        v = v.reshape(1, c, 1, 1)
    elif v.shape == (n, c):
        v = v.reshape(n, c, 1, 1)
    elif v.shape not in ((n, c, 1, 1), (1, c, 1, 1)):
        raise ShapeError(f"per-channel vector of shape {v.shape} does not fit input {x.shape}")
    return x + v


def global_sum_pool(x):
    _check_nchw(x)
    return x.sum(axis=(2, 3), keepdims=True)


def max_pool2d(x, kernel=3, stride=2, padding=1, with_arg=True):
    """Max pooling with -inf padding; also returns the flat argmax index of every window.

    With ``with_arg=False`` the index is skipped (returned as None), which
    roughly halves the cost at inference.
    """
    _check_nchw(x)
    k, s, pd = kernel, stride, padding
    n, c, h, w = x.shape
    oh = (h + 2 * pd - k) // s + 1
    ow = (w + 2 * pd - k) // s + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (pd, pd)), constant_values=-np.inf)
    out = np.full((n, c, oh, ow), -np.inf, dtype=x.dtype)
    if not with_arg:
        for i in range(k):
            for j in range(k):
                np.maximum(out, xp[:, :, i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s], out=out)
        return out, None
    arg = np.zeros((n, c, oh, ow), dtype=np.int64)
    for i in range(k):
        for j in range(k):
            win = xp[:, :, i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s]
            better = win > out
            out = np.where(better, win, out)
            arg = np.where(better, i * k + j, arg)
    return out, arg


def max_pool2d_backward(gout, arg, in_shape, kernel=3, stride=2, padding=1):
    k, s, pd = kernel, stride, padding
    n, c, h, w = in_shape
    oh, ow = gout.shape[2:]
    gxp = np.zeros((n, c, h + 2 * pd, w + 2 * pd), dtype=gout.dtype)
    for i in range(k):
        for j in range(k):
            sel = np.where(arg == i * k + j, gout, 0)
            gxp[:, :, i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s] += sel
    return gxp[:, :, pd:pd + h, pd:pd + w]
