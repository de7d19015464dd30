import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lpnkit.errors import ShapeError
from lpnkit.posecodec import (KeypointSet, argmax_decode, beta_soft_argmax, bilinear_sample, box_to_input,
                              coco_flip_pairs, coco_metadata, coco_oks_constants, decode, flip_average,
                              flip_heatmaps, flip_test, load_flip_pairs, mirror_keypoints, oks, render_gaussian,
                              render_heatmaps, soft_argmax, to_image)

maps = arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(2, 9), st.integers(2, 9)),
              elements=st.floats(-5, 5, allow_nan=False))


def brute_force_argmax(m):
    best, pos = -np.inf, None
    for y in range(m.shape[0]):
        for x in range(m.shape[1]):
            if m[y, x] > best:
                best, pos = m[y, x], (x, y)
    return pos


def test_gaussian_peak_and_falloff():
    h = render_gaussian((10, 20), 3.0, (64, 48)).heatmap
    assert h[20, 10] == 1.0
    # sigma * sqrt(2) away along a diagonal of (sigma, sigma) with sigma = 1
    h1 = render_gaussian((10, 20), 1.0, (64, 48)).heatmap
    assert h1[21, 11] == pytest.approx(np.exp(-1))
    assert h.shape == (64, 48) and h.max() <= 1 and h.min() >= 0


def test_gaussian_subpixel_center_peaks_at_nearest_pixel():
    h = render_gaussian((10.3, 20.7), 2.0, (64, 48)).heatmap
    assert brute_force_argmax(h) == (10, 21)


def test_gaussian_off_map_flag():
    t = render_gaussian((-7, 5), 2.0, (16, 12))
    assert t.off_map and not t.heatmap.any()
    t = render_gaussian((-5.9, 5), 2.0, (16, 12))
    assert not t.off_map and t.heatmap.any()
    with pytest.raises(ValueError):
        render_gaussian((1, 1), 0.0)


@given(st.integers(3, 12), st.integers(3, 12), st.integers(-3, 3), st.integers(-3, 3))
def test_gaussian_symmetric_about_integer_center(cx, cy, dx, dy):
    h = render_gaussian((cx, cy), 1.7, (16, 16)).heatmap
    assert h[cy + dy, cx + dx] == pytest.approx(h[cy - dy, cx - dx], abs=1e-15)


def test_argmax_examples():
    h = np.zeros((1, 12, 9))
    h[0, 7, 5] = 1
    k = argmax_decode(h)
    assert tuple(k.xy[0]) == (5, 7) and k.confidence[0] == 1.0 and k.frame == "heatmap"
    assert tuple(argmax_decode(np.ones((1, 4, 4))).xy[0]) == (0, 0)
    g = render_gaussian((10.3, 20.7), 2.0, (64, 48)).heatmap
    k = argmax_decode(g)
    assert tuple(k.xy[0]) == (10, 21)
    assert np.hypot(*(k.xy[0] - (10.3, 20.7))) == pytest.approx(np.hypot(0.3, 0.3))


@given(maps)
def test_argmax_agrees_with_brute_force(h):
    k = argmax_decode(h)
    for j in range(h.shape[0]):
        assert tuple(k.xy[j]) == brute_force_argmax(h[j])
        assert k.confidence[j] == h[j].max()


def test_quarter_offset_moves_toward_larger_neighbour():
    g = render_gaussian((10.3, 20.7), 2.0, (64, 48)).heatmap
    k = argmax_decode(g, quarter_offset=True)
    np.testing.assert_allclose(k.xy[0], (10.25, 20.75))


def test_beta_soft_argmax_examples():
    assert tuple(beta_soft_argmax(np.ones((1, 7, 5))).xy[0]) == pytest.approx((2.0, 3.0))
    h = np.zeros((1, 12, 9))
    h[0, 5, 7] = 1
    np.testing.assert_allclose(beta_soft_argmax(h, 160).xy[0], (7.0, 5.0), atol=1e-6)
    with pytest.raises(ValueError):
        beta_soft_argmax(h, 0)
    h[0, 0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        beta_soft_argmax(h)


def naive_beta_soft_argmax(m, beta):
    z = beta * m - (beta * m).max()
    s = np.exp(z) / np.exp(z).sum()
    rows, cols = np.indices(m.shape)
    return (s * cols).sum(), (s * rows).sum()


@given(maps, st.floats(0.5, 300))
def test_beta_soft_argmax_matches_formula_and_stays_in_grid(h, beta):
    k = beta_soft_argmax(h, beta)
    for j in range(h.shape[0]):
        np.testing.assert_allclose(k.xy[j], naive_beta_soft_argmax(h[j], beta), atol=1e-9)
    assert (k.x >= -1e-12).all() and (k.x <= h.shape[2] - 1 + 1e-12).all()
    assert (k.y >= -1e-12).all() and (k.y <= h.shape[1] - 1 + 1e-12).all()


@settings(max_examples=50)
@given(maps, st.floats(-10, 10))
def test_beta_soft_argmax_shift_invariant_and_mirror_equivariant(h, c):
    a = beta_soft_argmax(h, 3.0)
    np.testing.assert_allclose(beta_soft_argmax(h + c, 3.0).xy, a.xy, atol=1e-9)
    m = beta_soft_argmax(h[:, :, ::-1], 3.0)
    np.testing.assert_allclose(m.x, h.shape[2] - 1 - a.x, atol=1e-9)


def test_large_beta_recovers_argmax():
    rng = np.random.default_rng(0)
    for _ in range(50):
        h = rng.random((1, 16, 12))
        flat = np.sort(h.ravel())
        if flat[-1] - flat[-2] < 0.02:
            continue
        np.testing.assert_allclose(beta_soft_argmax(h, 1e3).xy, argmax_decode(h).xy, atol=1e-3)


def test_confidence_is_bilinear_sample_at_decoded_point():
    g = render_gaussian((10.5, 20.25), 2.0, (64, 48)).heatmap
    k = soft_argmax(g)
    assert k.confidence[0] == pytest.approx(bilinear_sample(g, *k.xy[0]))
    m = np.array([[0.0, 1.0], [2.0, 3.0]])
    assert bilinear_sample(m, 0.5, 0.5) == pytest.approx(1.5)
    assert bilinear_sample(m, 5, -1) == 1.0


def test_decode_dispatch_and_shapes():
    h = np.zeros((1, 2, 4, 4))
    assert len(decode(h, "soft")) == 2
    with pytest.raises(ValueError):
        decode(h, "median")
    with pytest.raises(ShapeError):
        decode(np.zeros((2, 2, 4, 4)))
    with pytest.raises(ShapeError):
        decode(np.zeros((1, 0, 4)))


def test_flip_average_examples(rng):
    pairs = [(0, 1)]
    h = rng.random((2, 5, 6))
    assert np.allclose(flip_average(h, flip_heatmaps(h, pairs), pairs), h)
    np.testing.assert_allclose(flip_average(h, np.zeros_like(h), pairs), h / 2)
    # a left-wrist peak in the flipped prediction lands in the right-wrist channel, unmirrored
    flipped = np.zeros((17, 8, 6))
    lw, rw = 9, 10
    flipped[lw, 3, 6 - 1 - 4] = 1
    out = flip_average(np.zeros_like(flipped), flipped, coco_flip_pairs())
    assert out[rw, 3, 4] == 0.5 and out.sum() == 0.5
    with pytest.raises(ShapeError):
        flip_average(h, h[:, :, :5], pairs)
    with pytest.raises(ValueError):
        flip_average(h, h, [(0, 2)])


def test_flip_test_calls_model_twice_and_is_mirror_consistent(rng):
    calls = []

    def model(img):
        calls.append(img)
        return img[:, :2] ** 2

    img = rng.random((1, 3, 5, 4))
    out = flip_test(model, img, [(0, 1)])
    assert len(calls) == 2
    mirrored = flip_test(model, img[..., ::-1], [(0, 1)])
    np.testing.assert_allclose(mirrored, flip_heatmaps(out, [(0, 1)]))


def test_mirror_keypoints_swaps_pairs():
    k = KeypointSet([[1, 2], [3, 4]], [0.1, 0.2])
    m = mirror_keypoints(k, 10, [(0, 1)])
    np.testing.assert_allclose(m.xy, [[6, 4], [8, 2]])
    np.testing.assert_allclose(m.confidence, [0.2, 0.1])


def test_box_already_at_aspect_is_identity():
    t = box_to_input((0, 0, 192, 256))
    pts = np.array([[0, 0], [192, 256], [50.5, 17.25]])
    np.testing.assert_allclose(t.apply(pts), pts, atol=1e-12)


def test_square_box_is_padded_in_height():
    t = box_to_input((0, 0, 256, 256))
    assert t.scale == pytest.approx((256, 1024 / 3))
    # hand-computed: x' = 0.75 x, y' = 0.75 (y - 128) + 128
    np.testing.assert_allclose(t.apply([[0, 0], [256, 256], [128, 128]]), [[0, 32], [192, 224], [96, 128]])


def test_box_forward_inverse_round_trip(rng):
    t = box_to_input((13, -4, 70, 33), rotation=25)
    corners = np.array([[0, 0], [1, 0], [0, 1], [1, 1]])
    np.testing.assert_allclose(t.apply_inverse(t.apply(corners)), corners, atol=1e-9)
    pts = rng.uniform(0, 256, (100, 2))
    assert np.abs(t.apply(t.apply_inverse(pts)) - pts).max() < 1e-6


def test_heatmap_to_image_uses_stride_four():
    t = box_to_input((100, 50, 96, 128))
    k = KeypointSet([[8, 10]], [1.0], "heatmap")
    img = to_image(k, t)
    assert img.frame == "image"
    np.testing.assert_allclose(img.xy, [[100 + 32 * 0.5, 50 + 40 * 0.5]])
    with pytest.raises(ValueError):
        to_image(img, t)
    with pytest.raises(ValueError):
        box_to_input((0, 0, 0, 10))


def test_oks_examples():
    gt = KeypointSet([[10, 10], [20, 20]], [1, 1], "image")
    assert oks(gt, gt, 100.0, [0.5, 0.5]) == 1.0
    one = KeypointSet([[13, 14]], [1], "image")
    ref = KeypointSet([[10, 10]], [1], "image")
    assert oks(one, ref, 50.0, [0.3]) == pytest.approx(np.exp(-25 / (2 * 50 * 0.09)))
    far = KeypointSet([[16, 18]], [1], "image")
    assert oks(far, ref, 200.0, [0.3]) == pytest.approx(oks(one, ref, 50.0, [0.3]))
    assert oks(one, ref, 50.0, [0.3], visible=[True]) == oks(one, ref, 50.0, [0.3])
    with pytest.raises(ValueError, match="labeled"):
        oks(gt, gt, 1.0, [1, 1], visible=[False, False])
    with pytest.raises(ValueError):
        oks(gt, KeypointSet(gt.xy, gt.confidence, "heatmap"), 1.0, [1, 1])
    with pytest.raises(ValueError):
        oks(gt, gt, 0.0, [1, 1])


def test_coco_metadata(tmp_path):
    meta = coco_metadata()
    assert len(meta["joints"]) == 17 and len(coco_oks_constants()) == 17
    pairs = coco_flip_pairs()
    assert len(pairs) == 8 and all(meta["joints"][a].replace("left", "right") == meta["joints"][b]
                                   for a, b in pairs)
    p = tmp_path / "pairs.json"
    p.write_text(json.dumps({"flip_pairs": [[0, 1]]}))
    assert load_flip_pairs(p) == [(0, 1)]


def test_render_heatmaps_stacks_and_flags():
    h, ok = render_heatmaps([[1, 1], [100, 100]], 2.0, (8, 8))
    assert h.shape == (2, 8, 8) and ok.tolist() == [True, False]


def test_keypoint_set_validation():
    with pytest.raises(ValueError):
        KeypointSet([[0, 0]], [1], "world")
    with pytest.raises(ShapeError):
        KeypointSet([[0, 0]], [1, 2])
    rec = KeypointSet([[1, 2]], [0.5], "input").records()
    assert rec == [{"joint": 0, "x": 1.0, "y": 2.0, "frame": "input", "confidence": 0.5}]
