"""Standard and lightweight bottleneck blocks and the Global Context block.

Closed-form weight counts (convolution kernels only, no norms or biases)::

    standard     in*M + 9*M*M + M*N         = 17 M^2 when in = N = 4M
    lightweight  in*M + 9*M   + M*N         =  2 M^2 + 9M when in = N = M
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

from . import autodiff as ad
from .errors import SpecError
from .layers import BatchNorm2d, Conv2d, LayerNorm, Module, ReLU, Sequential


@dataclass(frozen=True)
class GCSpec:
    channels: int
    ratio: int = 16

    def __post_init__(self):
        if self.channels < 1 or self.ratio < 1:
            raise SpecError(f"GC block needs positive channels and ratio, got {self}")

    @property
    def hidden(self) -> int:
        return max(1, math.ceil(self.channels / self.ratio))


@dataclass(frozen=True)
class BottleneckSpec:
    hidden_dim: int
    kind: Literal["standard", "lightweight"] = "lightweight"
    expansion: Optional[int] = None
    stride: int = 1
    use_gc: bool = False
    in_channels: Optional[int] = None
    gc_ratio: int = 16

    def __post_init__(self):
        if self.kind not in ("standard", "lightweight"):
            raise SpecError(f"unknown block kind {self.kind!r}")
        if self.expansion is None:
            object.__setattr__(self, "expansion", 4 if self.kind == "standard" else 1)
        if self.in_channels is None:
            object.__setattr__(self, "in_channels", self.hidden_dim * self.expansion)
        if self.kind == "lightweight" and self.expansion != 1:
            raise SpecError("a lightweight bottleneck has expansion 1")
        if self.hidden_dim < 1 or self.expansion < 1 or self.in_channels < 1:
            raise SpecError(f"block dimensions must be positive: {self}")
        if self.stride not in (1, 2):
            raise SpecError(f"stride must be 1 or 2, got {self.stride}")

    @property
    def out_channels(self) -> int:
        return self.hidden_dim * self.expansion

    @property
    def needs_projection(self) -> bool:
        return self.stride != 1 or self.in_channels != self.out_channels


def analytic_params(spec: BottleneckSpec) -> int:
    """Convolution weights of the block's main path (no norms, no shortcut)."""
    m, n = spec.hidden_dim, spec.out_channels
    middle = 9 * m * m if spec.kind == "standard" else 9 * m
    return spec.in_channels * m + middle + m * n


class GCBlock(Module):
    """Global Context block: softmax-pooled context, bottleneck transform, broadcast add.

    All three 1x1 convs are bias-free; the softmax makes a bias on the mask
    conv a no-op and the layer norm's shift covers the transform.
    """

    def __init__(self, spec: GCSpec):
        c, hid = spec.channels, spec.hidden
        self.spec = spec
        self.conv_mask = Conv2d(c, 1, 1)
        self.transform = Sequential(Conv2d(c, hid, 1), LayerNorm(hid), ReLU(), Conv2d(hid, c, 1))

    def context(self, x):
        attn = ad.spatial_softmax(self.conv_mask(x))
        return ad.global_sum_pool(ad.mul(x, attn))

    def forward(self, x):
        return ad.add(x, self.transform(self.context(x)))

    def trace(self, shape, rows, prefix=""):
        c = shape[0]
        self.conv_mask.trace(shape, rows, prefix + "conv_mask.")
        self.transform.trace((c, 1, 1), rows, prefix + "transform.")
        return shape


class Bottleneck(Module):
    """1x1 reduce, 3x3 (dense or depthwise, carries the stride), 1x1 expand, optional GC, residual add.

    A 1x1 projection conv + norm replaces the identity shortcut whenever the
    stride or channel count changes.
    """

    def __init__(self, spec: BottleneckSpec):
        self.spec = spec
        m, n = spec.hidden_dim, spec.out_channels
        groups = m if spec.kind == "lightweight" else 1
        self.conv1 = Conv2d(spec.in_channels, m, 1)
        self.bn1 = BatchNorm2d(m)
        self.conv2 = Conv2d(m, m, 3, stride=spec.stride, padding=1, groups=groups)
        self.bn2 = BatchNorm2d(m)
        self.conv3 = Conv2d(m, n, 1)
        self.bn3 = BatchNorm2d(n)
        self.gc = GCBlock(GCSpec(n, spec.gc_ratio)) if spec.use_gc else None
        self.downsample = None
        if spec.needs_projection:
            self.downsample = Sequential(Conv2d(spec.in_channels, n, 1, stride=spec.stride), BatchNorm2d(n))

    def main_convs(self):
        return [self.conv1, self.conv2, self.conv3]

    def forward(self, x):
        out = ad.relu(self.bn1(self.conv1(x)))
        out = ad.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        if self.gc is not None:
            out = self.gc(out)
        shortcut = x if self.downsample is None else self.downsample(x)
        return ad.relu(ad.add(out, shortcut))

    def trace(self, shape, rows, prefix=""):
        out = shape
        for name in ("conv1", "bn1", "conv2", "bn2", "conv3", "bn3"):
            out = getattr(self, name).trace(out, rows, f"{prefix}{name}.")
        if self.gc is not None:
            self.gc.trace(out, rows, prefix + "gc.")
        if self.downsample is not None:
            self.downsample.trace(shape, rows, prefix + "downsample.")
        return out


def build_bottleneck(spec: BottleneckSpec) -> Bottleneck:
    return Bottleneck(spec)


def build_gc_block(spec: GCSpec) -> GCBlock:
    return GCBlock(spec)


def gc_params(spec: GCSpec) -> int:
    c, hid = spec.channels, spec.hidden
    return c + 2 * c * hid + 2 * hid
