"""Stateful layers built on :mod:`lpnkit.autodiff`.

Modules own their parameters as leaf :class:`~lpnkit.autodiff.Var` objects
and can describe their own cost: ``trace(shape, rows, prefix)`` walks the
layer with an input shape (c, h, w) for one sample, appends a
:class:`CostRow` for every layer that owns weights or does multiply-adds, and
returns the output shape. No arrays are touched, so tracing LPN-152 at full
resolution takes milliseconds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import SpecError
from .tensor_core import kernels as K
from .tensor_core.params import _pair


@dataclass
class CostRow:
    name: str
    params: int
    flops: int


class Module:
    training = True

    def __call__(self, x):
        return self.forward(ad.as_var(x))

    def forward(self, x: Var) -> Var:
        raise NotImplementedError

    def trace(self, shape, rows: list, prefix: str = ""):
        raise NotImplementedError

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def modules(self, prefix=""):
        yield prefix, self
        for name, child in self.children():
            yield from child.modules(f"{prefix}{name}.")

    def _own_params(self) -> Iterator[tuple[str, Var]]:
        for name, value in vars(self).items():
            if isinstance(value, Var):
                yield name, value

    def _own_buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(())

    def named_parameters(self, prefix="") -> Iterator[tuple[str, Var]]:
        for name, p in self._own_params():
            yield prefix + name, p
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Var]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        """Parameters and buffers (running statistics), keyed by dotted path."""
        out = {}
        for prefix, mod in self.modules():
            for name, p in mod._own_params():
                out[prefix + name] = p.data
            for name, buf in mod._own_buffers():
                out[prefix + name] = buf
        return out

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def train(self, mode=True):
        for _, m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def astype(self, dtype):
        for _, m in self.modules():
            for _, p in m._own_params():
                p.data = p.data.astype(dtype)
            m._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype):
        pass


def _param(shape, dtype=np.float32, fill=0.0, name=None):
    return Var(np.full(shape, fill, dtype=dtype), requires_grad=True, name=name)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=0, groups=1, bias=False):
        kh, kw = _pair(kernel)
        if cin % groups or cout % groups:
            raise SpecError(f"groups={groups} must divide {cin} and {cout}")
        self.cin, self.cout, self.groups = cin, cout, groups
        self.stride, self.padding = _pair(stride), _pair(padding)
        self.weight = _param((cout, cin // groups, kh, kw))
        self.bias = _param((cout,)) if bias else None

    def forward(self, x):
        return ad.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)

    def trace(self, shape, rows, prefix=""):
        _, c, oh, ow = K.check_conv2d((1, *shape), self.weight.shape, self.stride, self.padding, self.groups)
        kh, kw = self.weight.shape[2:]
        params = self.weight.data.size + (0 if self.bias is None else self.bias.data.size)
        rows.append(CostRow(prefix.rstrip("."), params, c * oh * ow * (self.cin // self.groups) * kh * kw))
        return c, oh, ow


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=0, output_padding=0, groups=1, bias=False):
        kh, kw = _pair(kernel)
        if cin % groups or cout % groups:
            raise SpecError(f"groups={groups} must divide {cin} and {cout}")
        self.cin, self.cout, self.groups = cin, cout, groups
        self.stride, self.padding = _pair(stride), _pair(padding)
        self.output_padding = _pair(output_padding)
        self.weight = _param((cin, cout // groups, kh, kw))
        self.bias = _param((cout,)) if bias else None

    def forward(self, x):
        return ad.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding,
                                   self.output_padding, self.groups)

    def trace(self, shape, rows, prefix=""):
        _, c, oh, ow = K.check_conv_transpose2d((1, *shape), self.weight.shape, self.stride, self.padding,
                                                self.output_padding, self.groups)
        kh, kw = self.weight.shape[2:]
        params = self.weight.data.size + (0 if self.bias is None else self.bias.data.size)
        # counted per output element, like a forward conv of the same kernel
        rows.append(CostRow(prefix.rstrip("."), params, c * oh * ow * (self.cin // self.groups) * kh * kw))
        return c, oh, ow


class BatchNorm2d(Module):
    def __init__(self, channels, eps=1e-5, momentum=0.1):
        self.weight = _param((channels,), fill=1.0)
        self.bias = _param((channels,))
        self.running_mean = np.zeros(channels, np.float32)
        self.running_var = np.ones(channels, np.float32)
        self.eps, self.momentum = eps, momentum

    def _own_buffers(self):
        yield "running_mean", self.running_mean
        yield "running_var", self.running_var

    def _cast_buffers(self, dtype):
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)

    def forward(self, x):
        return ad.batch_norm(x, self.weight, self.bias, self.running_mean, self.running_var,
                             self.training, self.eps, self.momentum)

    def trace(self, shape, rows, prefix=""):
        rows.append(CostRow(prefix.rstrip("."), 2 * shape[0], 0))
        return shape


class LayerNorm(Module):
    """Per-sample normalization over (c, h, w) with a per-channel affine."""

    def __init__(self, channels, eps=1e-5):
        self.weight = _param((channels,), fill=1.0)
        self.bias = _param((channels,))
        self.eps = eps

    def forward(self, x):
        return ad.layer_norm(x, self.weight, self.bias, self.eps)

    def trace(self, shape, rows, prefix=""):
        rows.append(CostRow(prefix.rstrip("."), 2 * shape[0], 0))
        return shape


class ReLU(Module):
    def forward(self, x):
        return ad.relu(x)

    def trace(self, shape, rows, prefix=""):
        return shape


class MaxPool2d(Module):
    def __init__(self, kernel=3, stride=2, padding=1):
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def forward(self, x):
        return ad.max_pool2d(x, self.kernel, self.stride, self.padding)

    def trace(self, shape, rows, prefix=""):
        c, h, w = shape
        k, s, p = self.kernel, self.stride, self.padding
        return c, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def children(self):
        for i, layer in enumerate(self.layers):
            yield str(i), layer

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def trace(self, shape, rows, prefix=""):
        for name, layer in self.children():
            shape = layer.trace(shape, rows, f"{prefix}{name}.")
        return shape


def init_gaussian(model: Module, rng: np.random.Generator, std: float = 0.001) -> Module:
    """Zero-mean Gaussian weights for every conv; norms start as identity."""
    for _, m in model.modules():
        if isinstance(m, (Conv2d, ConvTranspose2d)):
            m.weight.data[...] = rng.normal(0.0, std, m.weight.shape)
            if m.bias is not None:
                m.bias.data[...] = 0
    return model


def trace_costs(model: Module, shape) -> tuple[list[CostRow], tuple]:
    rows: list[CostRow] = []
    out = model.trace(tuple(shape), rows, "")
    return rows, out


def find(model: Module, kind: type) -> list[tuple[str, Module]]:
    return [(name.rstrip("."), m) for name, m in model.modules() if isinstance(m, kind)]


def first(model: Module, kind: type) -> Optional[Module]:
    hits = find(model, kind)
    return hits[0][1] if hits else None
