"""Heatmap targets, keypoint decoding, flip averaging, box geometry and OKS.

Coordinates are zero-based with x = column and y = row. Heatmap arrays are
(K, h, w) or (1, K, h, w).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ShapeError

DEFAULT_BETA = 160.0
DEFAULT_SIGMA = 2.0
HEATMAP_STRIDE = 4
FRAMES = ("heatmap", "input", "image")


def coco_metadata() -> dict:
    return json.loads(resources.files("lpnkit").joinpath("data/coco_keypoints.json").read_text())


def coco_flip_pairs() -> list[tuple[int, int]]:
    return [tuple(p) for p in coco_metadata()["flip_pairs"]]


def coco_oks_constants() -> np.ndarray:
    # COCO publishes per-joint sigmas; its similarity uses k = 2 * sigma
    return 2.0 * np.asarray(coco_metadata()["oks_sigmas"])


def load_flip_pairs(path) -> list[tuple[int, int]]:
    """Read ``[[l, r], ...]`` or ``{"flip_pairs": [[l, r], ...]}`` from a JSON file."""
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = data["flip_pairs"]
    return [(int(a), int(b)) for a, b in data]


@dataclass
class KeypointSet:
    xy: np.ndarray
    confidence: np.ndarray
    frame: str = "heatmap"

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        self.confidence = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
        if self.frame not in FRAMES:
            raise ValueError(f"frame must be one of {FRAMES}, got {self.frame!r}")
        if len(self.xy) != len(self.confidence):
            raise ShapeError("one confidence per joint required")

    def __len__(self):
        return len(self.xy)

    @property
    def x(self):
        return self.xy[:, 0]

    @property
    def y(self):
        return self.xy[:, 1]

    def records(self) -> list[dict]:
        return [{"joint": k, "x": float(x), "y": float(y), "frame": self.frame, "confidence": float(c)}
                for k, ((x, y), c) in enumerate(zip(self.xy, self.confidence))]


def _maps(h) -> np.ndarray:
    h = np.asarray(h)
    if h.ndim == 4:
        if h.shape[0] != 1:
            raise ShapeError(f"decode one sample at a time, got batch of {h.shape[0]}")
        h = h[0]
    if h.ndim == 2:
        h = h[None]
    if h.ndim != 3 or h.shape[1] == 0 or h.shape[2] == 0:
        raise ShapeError(f"heatmaps must be (K, h, w), got shape {h.shape}")
    return h


# ------------------------------------------------------------------ targets

class GaussianTarget(NamedTuple):
    heatmap: np.ndarray
    off_map: bool


def render_gaussian(center, sigma: float = DEFAULT_SIGMA, size=(64, 48)) -> GaussianTarget:
    """Unnormalized Gaussian exp(-r^2 / 2 sigma^2) sampled on the integer grid.

    A center more than 3 sigma outside the map yields an all-zero map with
    ``off_map`` set.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    h, w = size
    cx, cy = float(center[0]), float(center[1])
    reach = 3 * sigma
    if cx < -reach or cy < -reach or cx > w - 1 + reach or cy > h - 1 + reach:
        return GaussianTarget(np.zeros((h, w)), True)
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    gx = np.exp(-((xs - cx) ** 2) / (2 * sigma ** 2))
    gy = np.exp(-((ys - cy) ** 2) / (2 * sigma ** 2))
    return GaussianTarget(np.outer(gy, gx), False)


def render_heatmaps(joints, sigma: float = DEFAULT_SIGMA, size=(64, 48)) -> tuple[np.ndarray, np.ndarray]:
    """Stack one target per joint; returns (maps (K, h, w), on-map flags (K,))."""
    maps, ok = [], []
    for xy in np.asarray(joints, dtype=np.float64).reshape(-1, 2):
        t = render_gaussian(xy, sigma, size)
        maps.append(t.heatmap)
        ok.append(not t.off_map)
    return np.stack(maps), np.asarray(ok)


# ------------------------------------------------------------------ decoding

def bilinear_sample(m: np.ndarray, x: float, y: float) -> float:
    h, w = m.shape
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0, y0 = int(np.floor(x)), int(np.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    top = m[y0, x0] * (1 - fx) + m[y0, x1] * fx
    bot = m[y1, x0] * (1 - fx) + m[y1, x1] * fx
    return float(top * (1 - fy) + bot * fy)


def argmax_decode(heatmaps, quarter_offset: bool = False) -> KeypointSet:
    """Integer location of each joint's maximum.

    Ties go to the smallest row-major index. With ``quarter_offset`` the
    location moves 0.25 px toward the larger neighbour along each axis.
    """
    maps = _maps(heatmaps)
    k, h, w = maps.shape
    flat = maps.reshape(k, -1)
    idx = flat.argmax(axis=1)
    conf = flat[np.arange(k), idx].astype(np.float64)
    ys, xs = np.divmod(idx, w)
    xy = np.stack([xs, ys], axis=1).astype(np.float64)
    if quarter_offset:
        for j in range(k):
            x, y = int(xs[j]), int(ys[j])
            m = maps[j]
            if 0 < x < w - 1:
                xy[j, 0] += 0.25 * np.sign(m[y, x + 1] - m[y, x - 1])
            if 0 < y < h - 1:
                xy[j, 1] += 0.25 * np.sign(m[y + 1, x] - m[y - 1, x])
    return KeypointSet(xy, conf, "heatmap")


def beta_soft_argmax(heatmaps, beta: float = DEFAULT_BETA) -> KeypointSet:
    """Expected grid coordinate under softmax(beta * H) over all positions.

    beta = 1 is plain soft-argmax. Computed in float64 with max subtraction.
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    maps = _maps(heatmaps).astype(np.float64)
    if not np.all(np.isfinite(maps)):
        raise ValueError("heatmap contains non-finite values")
    k, h, w = maps.shape
    z = beta * maps.reshape(k, -1)
    z -= z.max(axis=1, keepdims=True)
    s = np.exp(z)
    s /= s.sum(axis=1, keepdims=True)
    s = s.reshape(k, h, w)
    x = np.einsum("khw,w->k", s, np.arange(w, dtype=np.float64))
    y = np.einsum("khw,h->k", s, np.arange(h, dtype=np.float64))
    conf = [bilinear_sample(maps[j], x[j], y[j]) for j in range(k)]
    return KeypointSet(np.stack([x, y], axis=1), conf, "heatmap")


def soft_argmax(heatmaps) -> KeypointSet:
    return beta_soft_argmax(heatmaps, 1.0)


def decode(heatmaps, mode: str = "beta", beta: float = DEFAULT_BETA, quarter_offset=False) -> KeypointSet:
    if mode == "argmax":
        return argmax_decode(heatmaps, quarter_offset)
    if mode == "soft":
        return soft_argmax(heatmaps)
    if mode == "beta":
        return beta_soft_argmax(heatmaps, beta)
    raise ValueError(f"unknown decode mode {mode!r}")


# ------------------------------------------------------------------ flipping

def _check_pairs(pairs, k):
    for a, b in pairs:
        if not (0 <= a < k and 0 <= b < k) or a == b:
            raise ValueError(f"invalid flip pair ({a}, {b}) for {k} joints")


def flip_heatmaps(h: np.ndarray, flip_pairs) -> np.ndarray:
    """Mirror along width and swap left/right channels; works on (K,h,w) or (n,K,h,w)."""
    h = np.asarray(h)
    k = h.shape[-3]
    _check_pairs(flip_pairs, k)
    out = h[..., ::-1].copy()
    for a, b in flip_pairs:
        out[..., [a, b], :, :] = out[..., [b, a], :, :]
    return out


def flip_average(h: np.ndarray, h_flipped: np.ndarray, flip_pairs) -> np.ndarray:
    """Average ``h`` with the heatmaps predicted on the mirrored image, mapped back."""
    h, h_flipped = np.asarray(h), np.asarray(h_flipped)
    if h.shape != h_flipped.shape:
        raise ShapeError(f"heatmap shapes differ: {h.shape} vs {h_flipped.shape}")
    return 0.5 * (h + flip_heatmaps(h_flipped, flip_pairs))


def flip_test(predict: Callable[[np.ndarray], np.ndarray], image: np.ndarray, flip_pairs) -> np.ndarray:
    """Heatmaps of ``image`` averaged with those of its horizontal mirror (two forward passes)."""
    image = np.asarray(image)
    return flip_average(predict(image), predict(np.ascontiguousarray(image[..., ::-1])), flip_pairs)


def mirror_keypoints(kps: KeypointSet, width: int, flip_pairs) -> KeypointSet:
    xy = kps.xy.copy()
    conf = kps.confidence.copy()
    xy[:, 0] = (width - 1) - xy[:, 0]
    for a, b in flip_pairs:
        xy[[a, b]] = xy[[b, a]]
        conf[[a, b]] = conf[[b, a]]
    return KeypointSet(xy, conf, kps.frame)


# ------------------------------------------------------------------ geometry

def _rot(deg):
    t = np.deg2rad(deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class BoxTransform:
    """Affine from original-image coordinates to the network input crop.

    The padded box (``center``, ``scale`` = its width/height in pixels) is
    rotated by ``rotation`` degrees about its center and stretched onto the
    ``output_size`` = (h, w) rectangle.
    """

    center: tuple[float, float]
    scale: tuple[float, float]
    rotation: float = 0.0
    output_size: tuple[int, int] = (256, 192)

    @property
    def matrix3(self) -> np.ndarray:
        cx, cy = self.center
        sw, sh = self.scale
        oh, ow = self.output_size
        to_origin = np.array([[1.0, 0, -cx], [0, 1.0, -cy], [0, 0, 1.0]])
        stretch = np.diag([ow / sw, oh / sh, 1.0])
        to_out = np.array([[1.0, 0, ow / 2], [0, 1.0, oh / 2], [0, 0, 1.0]])
        return to_out @ stretch @ _rot(self.rotation) @ to_origin

    @property
    def matrix(self) -> np.ndarray:
        return self.matrix3[:2]

    @property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.matrix3)[:2]

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return pts @ self.matrix[:, :2].T + self.matrix[:, 2]

    def apply_inverse(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        inv = self.inverse
        return pts @ inv[:, :2].T + inv[:, 2]


def box_to_input(box, aspect: float = 0.75, output_size=(256, 192), rotation: float = 0.0) -> BoxTransform:
    """Pad an (x, y, w, h) box about its center to width:height = ``aspect`` and map it to the input.

    The default aspect 3:4 matches a 256x192 (h x w) input.
    """
    x, y, w, h = (float(v) for v in box)
    if not (w > 0 and h > 0):
        raise ValueError(f"degenerate box {box}")
    cx, cy = x + w / 2, y + h / 2
    if w > aspect * h:
        h = w / aspect
    else:
        w = h * aspect
    return BoxTransform((cx, cy), (w, h), rotation, tuple(output_size))


def box_from_center(cx, cy, w, h):
    return cx - w / 2, cy - h / 2, w, h


def heatmap_to_input(kps: KeypointSet, stride: int = HEATMAP_STRIDE) -> KeypointSet:
    if kps.frame != "heatmap":
        raise ValueError(f"expected heatmap-frame keypoints, got {kps.frame!r}")
    return KeypointSet(kps.xy * stride, kps.confidence, "input")


def to_image(kps: KeypointSet, transform: BoxTransform, stride: int = HEATMAP_STRIDE) -> KeypointSet:
    """Map heatmap- or input-frame keypoints back to original-image coordinates."""
    if kps.frame == "heatmap":
        kps = heatmap_to_input(kps, stride)
    if kps.frame != "input":
        raise ValueError(f"cannot map {kps.frame!r} keypoints to the image")
    return KeypointSet(transform.apply_inverse(kps.xy), kps.confidence, "image")


# ------------------------------------------------------------------ scoring

def oks(pred: KeypointSet, gt: KeypointSet, area: float, per_joint_k: Sequence[float],
        visible: Optional[Sequence[bool]] = None) -> float:
    """Mean over labeled joints of exp(-d^2 / (2 * area * k^2))."""
    if pred.frame != gt.frame:
        raise ValueError(f"frames differ: {pred.frame!r} vs {gt.frame!r}")
    if not area > 0:
        raise ValueError(f"area must be positive, got {area}")
    k = np.asarray(per_joint_k, dtype=np.float64)
    if len(k) != len(gt) or len(pred) != len(gt):
        raise ShapeError("prediction, ground truth and per-joint constants need equal joint counts")
    mask = np.ones(len(gt), bool) if visible is None else np.asarray(visible, bool)
    if not mask.any():
        raise ValueError("no labeled joints")
    d2 = ((pred.xy - gt.xy) ** 2).sum(axis=1)
    return float(np.exp(-d2 / (2 * area * k ** 2))[mask].mean())
