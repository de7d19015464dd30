"""Minimal reverse-mode differentiation over the tensor_core kernels.

A :class:`Var` wraps a numpy array. Operations on Vars record a closure that
maps the output gradient to input gradients, but only while gradient
recording is enabled and at least one input requires a gradient; inference
under :func:`no_grad` costs nothing beyond the kernels themselves.

ReLU's subgradient at exactly 0 is 0.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ShapeError
from .tensor_core import kernels as K
from .tensor_core.params import NormParams, _pair

_grad_enabled = True


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Var:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        for node, g in _propagate(self).items():
            if node._parents == () and node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _record(data, parents, backward, op):
    out = Var(data)
    out.op = op
    if _needs_tape(*parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _needs_tape(*parents):
    return _grad_enabled and any(p.requires_grad for p in parents)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order[::-1]


def _propagate(root):
    if root.data.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {root.shape}")
    grads = {id(root): np.ones_like(root.data)}
    nodes = {}
    for node in _topo_order(root):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        nodes[node] = g
        if node._backward is None:
            continue
        for p, gp in zip(node._parents, node._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + gp
            else:
                grads[id(p)] = gp
    return nodes


def grad(output: Var, leaves: Sequence[Var]) -> list[np.ndarray]:
    """Gradients of scalar ``output`` w.r.t. ``leaves``; unreached leaves get zeros."""
    by_node = _propagate(output)
    return [by_node.get(leaf, np.zeros_like(leaf.data)) for leaf in leaves]


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- pointwise

def add(a, b):
    a, b = as_var(a), as_var(b)
    out = K.add(a.data, b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_var(a), as_var(b)
    K._check_broadcast(a.data, b.data)
    out = a.data - b.data
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = as_var(a), as_var(b)
    out = K.mul(a.data, b.data)
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def scale(a, c: float):
    a = as_var(a)
    return _record(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a):
    a = as_var(a)
    mask = a.data > 0
    return _record(K.relu(a.data), (a,), lambda g: (g * mask,), "relu")


def global_sum_pool(a):
    a = as_var(a)
    return _record(K.global_sum_pool(a.data), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "global_sum_pool")


def sum_all(a):
    a = as_var(a)
    return _record(a.data.sum(), (a,), lambda g: (np.full(a.shape, g, dtype=a.dtype),), "sum")


def mean_all(a):
    a = as_var(a)
    n = a.data.size
    return _record(a.data.mean(), (a,), lambda g: (np.full(a.shape, g / n, dtype=a.dtype),), "mean")


def mse_loss(pred, target, mask=None):
    """Mean squared error; ``mask`` (broadcastable, e.g. per-joint visibility) zeroes terms."""
    pred, target = as_var(pred), as_var(target)
    diff = pred.data - target.data
    if mask is not None:
        diff = diff * mask
    n = diff.size
    out = np.asarray((diff * diff).sum() / n, dtype=pred.dtype)

    def back(g):
        gd = (2.0 / n) * g * diff
        if mask is not None:
            gd = gd * mask
        return gd, -gd

    return _record(out, (pred, target), back, "mse")


# ---------------------------------------------------------------- kernels

def conv2d(x, weight, bias=None, stride=1, padding=0, groups=1):
    x, weight = as_var(x), as_var(weight)
    stride, padding = _pair(stride), _pair(padding)
    out = K.conv2d_raw(x.data, weight.data, None if bias is None else bias.data, stride, padding, groups)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gx, gw, gb = K.conv2d_backward(x.data, weight.data, g, stride, padding, groups, bias is not None)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _record(out, parents, back, "conv2d")


def conv_transpose2d(x, weight, bias=None, stride=1, padding=0, output_padding=0, groups=1):
    x, weight = as_var(x), as_var(weight)
    stride, padding, output_padding = _pair(stride), _pair(padding), _pair(output_padding)
    out = K.conv_transpose2d_raw(x.data, weight.data, None if bias is None else bias.data,
                                 stride, padding, output_padding, groups)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gx, gw, gb = K.conv_transpose2d_backward(x.data, weight.data, g, stride, padding,
                                                 output_padding, groups, bias is not None)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _record(out, parents, back, "conv_transpose2d")


def batch_norm(x, gamma, beta, running_mean, running_var, training, eps=1e-5, momentum=0.1):
    """Batch norm; running statistics are plain arrays updated in place in training mode."""
    x, gamma, beta = as_var(x), as_var(gamma), as_var(beta)
    p = NormParams(gamma.data, beta.data, running_mean, running_var, eps, momentum)
    if not _needs_tape(x, gamma, beta):
        return Var(K.batch_norm_forward(x.data, p, training, keep_cache=False)[0])
    out, (xhat, inv) = K.batch_norm_forward(x.data, p, training)

    def back(g):
        return K.batch_norm_backward(g, gamma.data, xhat, inv, training)

    return _record(out, (x, gamma, beta), back, "batch_norm")


def layer_norm(x, gamma, beta, eps=1e-5):
    x, gamma, beta = as_var(x), as_var(gamma), as_var(beta)
    out, (xhat, inv) = K.layer_norm_forward(x.data, gamma.data, beta.data, eps)
    return _record(out, (x, gamma, beta), lambda g: K.layer_norm_backward(g, gamma.data, xhat, inv), "layer_norm")


def spatial_softmax(x, scale_=1.0):
    x = as_var(x)
    s = K.spatial_softmax(x.data, scale_)
    return _record(s, (x,), lambda g: (K.spatial_softmax_backward(s, g, scale_),), "spatial_softmax")


def max_pool2d(x, kernel=3, stride=2, padding=1):
    x = as_var(x)
    if not _needs_tape(x):
        return Var(K.max_pool2d(x.data, kernel, stride, padding, with_arg=False)[0])
    out, arg = K.max_pool2d(x.data, kernel, stride, padding)
    return _record(out, (x,), lambda g: (K.max_pool2d_backward(g, arg, x.shape, kernel, stride, padding),),
                   "max_pool2d")


def relu_margin(output: Var) -> float:
    """Smallest |pre-activation| over every relu feeding ``output`` (inf if none)."""
    margin = np.inf
    for node in _topo_order(output):
        if node.op == "relu":
            (src,) = node._parents
            margin = min(margin, float(np.min(np.abs(src.data))))
    return margin


# ---------------------------------------------------------------- grad check

@dataclass
class GradCheckReport:
    errors: dict[str, float]
    eps: float
    threshold: float
    relu_margin: float = np.inf
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = bool(self.errors) and max(self.errors.values()) <= self.threshold

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0


def grad_check(fn: Callable[[], Var], leaves: Sequence[Var], eps: float = 1e-4,
               threshold: float = 1e-5) -> GradCheckReport:
    """Compare reverse-mode gradients of ``fn()`` with central differences.

    ``fn`` must rebuild its scalar output from the current ``leaf.data``. The
    error for each leaf is ``max|analytic - numeric| / max|numeric|``. Failures
    are reported in the result, never raised.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    out = fn()
    margin = relu_margin(out)
    analytic = grad(out, leaves)
    errors = {}
    with no_grad():
        for k, (leaf, ga) in enumerate(zip(leaves, analytic)):
            data = leaf.data
            gn = np.zeros(data.shape, dtype=np.float64)
            flat = data.reshape(-1)
            gflat = gn.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + eps
                fp = float(fn().data)
                flat[i] = old - eps
                fm = float(fn().data)
                flat[i] = old
                gflat[i] = (fp - fm) / (2 * eps)
            denom = max(float(np.max(np.abs(gn))), 1e-12)
            errors[leaf.name or f"leaf{k}"] = float(np.max(np.abs(ga - gn))) / denom
    return GradCheckReport(errors, eps, threshold, margin)


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: Optional[AdamState],
              lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    if state is None:
        state = AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])
    state.t += 1
    c1 = 1 - beta1 ** state.t
    c2 = 1 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        if lr:
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return state


class Adam:
    def __init__(self, params: Sequence[Var], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state: Optional[AdamState] = None

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        self.state = adam_step([p.data for p in self.params], grads, self.state, self.lr,
                               self.betas[0], self.betas[1], self.eps)
