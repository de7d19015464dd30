"""LPN and SimpleBaseline builders plus parameter/FLOP accounting.

Cost conventions, used by every report this module emits:

* params: every learnable scalar (conv weights, biases, norm affine pairs),
  reported in M = 10^6.
* FLOPs: multiply-accumulates of conv and transposed-conv layers only, each
  counted as ``output_elements * (c_in / groups) * k_h * k_w``, reported in
  G = 2^30. Norms, activations, pooling, softmax and additions are not counted.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .blocks import Bottleneck, BottleneckSpec, GCBlock
from .errors import SpecError
from .layers import (BatchNorm2d, Conv2d, ConvTranspose2d, CostRow, MaxPool2d, Module, ReLU, Sequential,
                     init_gaussian, trace_costs)

STAGE_BLOCKS = {50: (3, 4, 6, 3), 101: (3, 4, 23, 3), 152: (3, 8, 36, 3)}
M_UNIT = 10 ** 6
G_UNIT = 2 ** 30

# (family, depth, use_gc) -> (params in M, FLOPs in G) as published at 256x192
PUBLISHED = {
    ("lpn", 50, False): (2.7, 1.0063),
    ("lpn", 50, True): (2.9, 1.0079),
    ("lpn", 101, False): (5.0, 1.4118),
    ("lpn", 101, True): (5.3, 1.4143),
    ("lpn", 152, False): (6.9, 1.8189),
    ("lpn", 152, True): (7.4, 1.8224),
    ("simple_baseline", 50, False): (34.0, 8.9),
    ("simple_baseline", 101, False): (53.0, 12.4),
    ("simple_baseline", 152, False): (68.6, 15.7),
}


@dataclass(frozen=True)
class NetworkSpec:
    family: Literal["lpn", "simple_baseline"] = "lpn"
    depth: int = 50
    use_gc: bool = True
    num_joints: int = 17
    input_size: tuple[int, int] = (256, 192)
    # knobs below shrink the network for desk-scale training
    widths: tuple[int, int, int, int] = (64, 128, 256, 512)
    head_channels: int = 256
    stage_blocks: Optional[tuple[int, int, int, int]] = None
    gc_ratio: int = 16

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        object.__setattr__(self, "widths", tuple(int(v) for v in self.widths))
        if self.stage_blocks is not None:
            object.__setattr__(self, "stage_blocks", tuple(int(v) for v in self.stage_blocks))
        if self.family not in ("lpn", "simple_baseline"):
            raise SpecError(f"unknown family {self.family!r}; expected 'lpn' or 'simple_baseline'")
        if self.stage_blocks is None and self.depth not in STAGE_BLOCKS:
            raise SpecError(f"depth must be one of {sorted(STAGE_BLOCKS)}, got {self.depth}")
        if self.family == "simple_baseline" and self.use_gc:
            raise SpecError("GC blocks are only defined for the lightweight network")
        if self.num_joints < 1:
            raise SpecError("num_joints must be positive")
        h, w = self.input_size
        stride = 32 if self.family == "simple_baseline" else 16
        if h <= 0 or w <= 0 or h % stride or w % stride:
            raise SpecError(f"input size {self.input_size} must be divisible by the backbone stride")
        if len(self.widths) != 4 or min(self.widths) < 1 or self.head_channels < 1:
            raise SpecError("widths must be four positive integers")

    @property
    def blocks(self) -> tuple[int, int, int, int]:
        return self.stage_blocks or STAGE_BLOCKS[self.depth]

    @property
    def name(self) -> str:
        base = {"lpn": "LPN", "simple_baseline": "SimpleBaseline"}[self.family]
        return f"{base}-{self.depth}" + ("+GC" if self.use_gc else "")

    @property
    def heatmap_size(self) -> tuple[int, int]:
        return self.input_size[0] // 4, self.input_size[1] // 4

    def to_json(self) -> str:
        d = {"family": self.family, "depth": self.depth, "use_gc": self.use_gc,
             "num_joints": self.num_joints, "input_size": list(self.input_size)}
        default = NetworkSpec()
        for key in ("widths", "head_channels", "stage_blocks", "gc_ratio"):
            if getattr(self, key) != getattr(default, key):
                v = getattr(self, key)
                d[key] = list(v) if isinstance(v, tuple) else v
        return json.dumps(d)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise SpecError(f"unknown network config keys: {sorted(extra)}")
        d = dict(d)
        for key in ("input_size", "widths", "stage_blocks"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        try:
            return cls.from_dict(json.loads(text))
        except (json.JSONDecodeError, TypeError) as exc:
            raise SpecError(f"bad network config: {exc}") from None


class PoseNet(Module):
    """Stem, four residual stages, upsampling head, 1x1 heatmap regressor."""

    def __init__(self, spec: NetworkSpec, stem, layers, head, final):
        self.spec = spec
        self.stem = stem
        self.layer1, self.layer2, self.layer3, self.layer4 = layers
        self.head = head
        self.final = final

    @property
    def stages(self):
        return [self.layer1, self.layer2, self.layer3, self.layer4]

    def backbone(self, x):
        x = self.stem(ad.as_var(x))
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats

    def forward(self, x):
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
        return self.final(self.head(x))

    def trace(self, shape, rows, prefix=""):
        for name, child in self.children():
            shape = child.trace(shape, rows, f"{prefix}{name}.")
        return shape

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Inference-mode forward on a raw array, without recording a tape."""
        with ad.no_grad():
            return self(np.asarray(x, dtype=self.final.weight.dtype)).data


def _stem(width):
    return Sequential(Conv2d(3, width, 7, stride=2, padding=3), BatchNorm2d(width), ReLU(), MaxPool2d(3, 2, 1))


def _stages(spec: NetworkSpec, kind, strides):
    expansion = 1 if kind == "lightweight" else 4
    cin = spec.widths[0]
    layers = []
    for n, m, s in zip(spec.blocks, spec.widths, strides):
        blocks = []
        for b in range(n):
            bs = BottleneckSpec(hidden_dim=m, kind=kind, expansion=expansion, stride=s if b == 0 else 1,
                                use_gc=spec.use_gc, in_channels=cin, gc_ratio=spec.gc_ratio)
            blocks.append(Bottleneck(bs))
            cin = bs.out_channels
        layers.append(Sequential(*blocks))
    return layers, cin


def build_lpn(spec: NetworkSpec, rng: Optional[np.random.Generator] = None, init_std: float = 0.001) -> PoseNet:
    """Lightweight stages with no downsampling in the last one, two group-deconv units.

    Each upsampling unit is a 4x4 stride-2 transposed conv whose group count is
    gcd(c_in, c_out), followed by a 1x1 conv, norm and relu.
    """
    if spec.family != "lpn":
        raise SpecError(f"build_lpn needs family 'lpn', got {spec.family!r}")
    layers, cin = _stages(spec, "lightweight", (1, 2, 2, 1))
    head = []
    for _ in range(2):
        cout = spec.head_channels
        g = math.gcd(cin, cout)
        head += [ConvTranspose2d(cin, cout, 4, stride=2, padding=1, groups=g),
                 Conv2d(cout, cout, 1), BatchNorm2d(cout), ReLU()]
        cin = cout
    final = Conv2d(cin, spec.num_joints, 1, bias=True)
    net = PoseNet(spec, _stem(spec.widths[0]), layers, Sequential(*head), final)
    return _init(net, rng, init_std)


def build_simple_baseline(spec: NetworkSpec, rng: Optional[np.random.Generator] = None,
                          init_std: float = 0.001) -> PoseNet:
    """ResNet backbone (expansion-4 bottlenecks) and three dense 4x4 stride-2 deconvs."""
    if spec.family != "simple_baseline":
        raise SpecError(f"build_simple_baseline needs family 'simple_baseline', got {spec.family!r}")
    layers, cin = _stages(spec, "standard", (1, 2, 2, 2))
    head = []
    for _ in range(3):
        cout = spec.head_channels
        head += [ConvTranspose2d(cin, cout, 4, stride=2, padding=1), BatchNorm2d(cout), ReLU()]
        cin = cout
    final = Conv2d(cin, spec.num_joints, 1, bias=True)
    net = PoseNet(spec, _stem(spec.widths[0]), layers, Sequential(*head), final)
    return _init(net, rng, init_std)


def _init(net, rng, init_std):
    if init_std is None:
        return net
    return init_gaussian(net, rng or np.random.default_rng(0), init_std)


def build_network(spec: NetworkSpec, rng=None, init_std=0.001) -> PoseNet:
    builder = build_lpn if spec.family == "lpn" else build_simple_baseline
    return builder(spec, rng, init_std)


# ------------------------------------------------------------------ costs

@dataclass
class CostReport:
    model: str
    input_size: tuple[int, int]
    rows: list[CostRow]

    @property
    def params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def flops(self) -> int:
        return sum(r.flops for r in self.rows)

    @property
    def params_m(self) -> float:
        return self.params / M_UNIT

    @property
    def flops_g(self) -> float:
        return self.flops / G_UNIT

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "params", "flops"])
        for r in self.rows:
            w.writerow([r.name, r.params, r.flops])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, model="", input_size=(0, 0)) -> "CostReport":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames != ["layer", "params", "flops"]:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        return cls(model, input_size, [CostRow(r["layer"], int(r["params"]), int(r["flops"])) for r in reader])


def cost_report(model: PoseNet, input_size: Optional[Sequence[int]] = None) -> CostReport:
    h, w = input_size or model.spec.input_size
    rows, _ = trace_costs(model, (3, h, w))
    return CostReport(model.spec.name, (h, w), rows)


def count_params(model: Module) -> int:
    return model.num_parameters()


def count_flops(model: PoseNet, input_size: Optional[Sequence[int]] = None) -> int:
    return cost_report(model, input_size).flops


def gc_param_total(model: Module) -> int:
    return sum(m.num_parameters() for _, m in model.modules() if isinstance(m, GCBlock))


@dataclass
class ComparisonRow:
    model: str
    input_size: tuple[int, int]
    params: int
    flops: int
    published: Optional[tuple[float, float]] = None

    @property
    def params_m(self):
        return self.params / M_UNIT

    @property
    def flops_g(self):
        return self.flops / G_UNIT

    def deviation(self):
        if self.published is None:
            return None
        p, f = self.published
        return self.params_m / p - 1.0, self.flops_g / f - 1.0


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow] = field(default_factory=list)

    HEADER = ("# params: all learnable scalars, M = 10^6; FLOPs: conv/deconv multiply-accumulates, "
              "G = 2^30; deconvs counted per output element")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "input_h", "input_w", "params", "flops", "params_M", "flops_G",
                    "published_params_M", "published_flops_G"])
        for r in self.rows:
            pub = r.published or ("", "")
            w.writerow([r.model, *r.input_size, r.params, r.flops, f"{r.params_m:.4f}", f"{r.flops_g:.4f}", *pub])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [self.HEADER]
        head = f"{'model':<20} {'input':>9} {'#Params':>9} {'FLOPs':>9} {'published':>16} {'deviation':>17}"
        lines += [head, "-" * len(head)]
        for r in self.rows:
            size = f"{r.input_size[0]}x{r.input_size[1]}"
            pub = dev = ""
            if r.published:
                pub = f"{r.published[0]:.1f}M/{r.published[1]:.4g}G"
                dp, df = r.deviation()
                dev = f"{dp:+.1%}/{df:+.1%}"
            lines.append(f"{r.model:<20} {size:>9} {r.params_m:>8.3f}M {r.flops_g:>8.4f}G {pub:>16} {dev:>17}")
        notes = self.notes()
        if notes:
            lines.append("")
            lines += notes
        return "\n".join(lines) + "\n"

    def notes(self) -> list[str]:
        out = []
        for r in self.rows:
            dev = r.deviation()
            if dev is None:
                continue
            dp, df = dev
            if abs(dp) > 0.01 or abs(df) > 0.005:
                out.append(f"note: {r.model} differs from the published {r.published[0]}M/{r.published[1]}G "
                           f"by {dp:+.2%} params and {df:+.2%} FLOPs; published params are rounded to 0.1M "
                           "and head widths/bias placement are not pinned down by the source")
        by_name = {r.model: r for r in self.rows}
        for r in self.rows:
            if r.model.startswith("LPN-"):
                depth = r.model.split("-")[1].split("+")[0]
                base = by_name.get(f"SimpleBaseline-{depth}")
                if base is not None:
                    out.append(f"ratio {r.model} / {base.model}: params {r.params / base.params:.3f}, "
                               f"FLOPs {r.flops / base.flops:.3f}")
        return out


def compare_table(specs: Sequence[NetworkSpec]) -> ComparisonTable:
    table = ComparisonTable()
    for spec in specs:
        rep = cost_report(build_network(spec, init_std=None))
        pub = PUBLISHED.get((spec.family, spec.depth, spec.use_gc)) if (
            spec.input_size == (256, 192) and spec.stage_blocks is None and spec.widths == (64, 128, 256, 512)
            and spec.head_channels == 256 and spec.num_joints == 17) else None
        table.rows.append(ComparisonRow(spec.name, spec.input_size, rep.params, rep.flops, pub))
    return table


def load_spec(path) -> NetworkSpec:
    return NetworkSpec.from_json(Path(path).read_text())
