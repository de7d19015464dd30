"""Synthetic keypoint data: coloured blobs on a dark canvas, one per joint."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..posecodec import DEFAULT_SIGMA, HEATMAP_STRIDE, render_heatmaps

# one RGB colour per joint, cycled when there are more joints
PALETTE = np.array([
    [1.0, 0.2, 0.2], [0.2, 1.0, 0.2], [0.2, 0.4, 1.0], [1.0, 1.0, 0.2],
    [1.0, 0.2, 1.0], [0.2, 1.0, 1.0], [1.0, 0.6, 0.2], [0.6, 0.2, 1.0],
], dtype=np.float32)
BLOB_RADIUS = 1.5


@dataclass
class ToyDataset:
    images: np.ndarray       # (n, 3, H, W) float32
    joints: np.ndarray       # (n, K, 2) input-pixel (x, y)
    heatmaps: np.ndarray     # (n, K, H/4, W/4) float32
    visible: np.ndarray      # (n, K) bool
    flip_pairs: list = field(default_factory=list)
    sigma: float = DEFAULT_SIGMA

    def __len__(self):
        return len(self.images)

    @property
    def image_size(self):
        return self.images.shape[2:]

    @property
    def num_joints(self):
        return self.joints.shape[1]

    def subset(self, idx) -> "ToyDataset":
        return ToyDataset(self.images[idx], self.joints[idx], self.heatmaps[idx], self.visible[idx],
                          self.flip_pairs, self.sigma)

    def split(self, n_val: int) -> tuple["ToyDataset", "ToyDataset"]:
        n = len(self)
        return self.subset(slice(0, n - n_val)), self.subset(slice(n - n_val, n))


def default_flip_pairs(num_joints: int) -> list[tuple[int, int]]:
    return [(i, i + 1) for i in range(0, num_joints - 1, 2)]


def heatmap_to_pixel(hm_xy, stride=HEATMAP_STRIDE):
    """Centre of the input-pixel block covered by a heatmap cell."""
    return stride * np.asarray(hm_xy, dtype=np.float64) + (stride - 1) / 2


def pixel_to_heatmap(xy, stride=HEATMAP_STRIDE):
    return (np.asarray(xy, dtype=np.float64) - (stride - 1) / 2) / stride


def draw_blobs(joints, size, visible=None) -> np.ndarray:
    """(3, H, W) image with a Gaussian blob of the joint's colour at each joint."""
    h, w = size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
    img = np.zeros((3, h, w), np.float32)
    for k, (x, y) in enumerate(np.asarray(joints, np.float32)):
        if visible is not None and not visible[k]:
            continue
        blob = np.exp(-((xs - x) ** 2 + (ys - y) ** 2) / (2 * BLOB_RADIUS ** 2))
        img += PALETTE[k % len(PALETTE), :, None, None] * blob
    return img


def make_toy_dataset(n: int, image_size=(64, 48), num_joints: int = 4, seed: int = 0,
                     sigma: float = DEFAULT_SIGMA, noise: float = 0.05) -> ToyDataset:
    """Joints sit on heatmap cells drawn uniformly, so each target peaks at exactly 1."""
    h, w = image_size
    hh, hw = h // HEATMAP_STRIDE, w // HEATMAP_STRIDE
    rng = np.random.default_rng(seed)
    cells = np.stack([rng.integers(0, hw, (n, num_joints)), rng.integers(0, hh, (n, num_joints))], axis=-1)
    joints = heatmap_to_pixel(cells)
    images = np.empty((n, 3, h, w), np.float32)
    heatmaps = np.empty((n, num_joints, hh, hw), np.float32)
    for i in range(n):
        images[i] = draw_blobs(joints[i], (h, w))
        heatmaps[i] = render_heatmaps(cells[i], sigma, (hh, hw))[0]
    images += noise * rng.standard_normal(images.shape).astype(np.float32)
    return ToyDataset(images, joints, heatmaps, np.ones((n, num_joints), bool),
                      default_flip_pairs(num_joints), sigma)


def augment_matrix(size, rotation=0.0, scale=1.0, flip=False) -> np.ndarray:
    """3x3 affine: scale and rotate about the image centre, then optionally mirror."""
    h, w = size
    cx, cy = (w - 1) / 2, (h - 1) / 2
    t = np.deg2rad(rotation)
    c, s = scale * np.cos(t), scale * np.sin(t)
    m = np.array([[c, -s, cx - c * cx + s * cy],
                  [s, c, cy - s * cx - c * cy],
                  [0.0, 0.0, 1.0]])
    if flip:
        m = np.array([[-1.0, 0, w - 1], [0, 1.0, 0], [0, 0, 1.0]]) @ m
    return m


def warp_image(image: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Resample (C, H, W) so that output pixel q takes the input value at m^-1 q (bilinear, zero fill)."""
    h, w = image.shape[1:]
    inv = np.linalg.inv(m)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    return np.stack([ndimage.map_coordinates(ch, [sy, sx], order=1, mode="constant", cval=0.0)
                     for ch in image]).astype(image.dtype)


def augment(image, joints, config, rng: np.random.Generator, flip_pairs=()):
    """Random rotation, scale and flip applied to pixels and joints alike.

    Returns (image, joints, matrix). Flipping also swaps paired joints so the
    channel order keeps meaning left/right.
    """
    rot = rng.uniform(-config.rotation, config.rotation)
    scale = rng.uniform(1 - config.scale, 1 + config.scale)
    flip = rng.random() < config.flip_prob
    return apply_augment(image, joints, rot, scale, flip, flip_pairs)


def apply_augment(image, joints, rotation=0.0, scale=1.0, flip=False, flip_pairs=()):
    image = np.asarray(image)
    m = augment_matrix(image.shape[1:], rotation, scale, flip)
    joints = np.asarray(joints, np.float64)
    out = joints @ m[:2, :2].T + m[:2, 2]
    if flip:
        for a, b in flip_pairs:
            out[[a, b]] = out[[b, a]]
    if rotation == 0 and scale == 1 and not flip:
        return image.copy(), out, m
    return warp_image(image, m), out, m


def targets_for(joints, image_size, sigma=DEFAULT_SIGMA):
    """Heatmaps and visibility for input-pixel joints."""
    h, w = image_size
    maps, ok = render_heatmaps(pixel_to_heatmap(joints), sigma, (h // HEATMAP_STRIDE, w // HEATMAP_STRIDE))
    return maps.astype(np.float32), ok
