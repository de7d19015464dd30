import numpy as np
import pytest

from lpnkit import autodiff as ad
from lpnkit.blocks import (Bottleneck, BottleneckSpec, GCBlock, GCSpec, analytic_params, build_bottleneck,
                           build_gc_block, gc_params)
from lpnkit.errors import SpecError
from lpnkit.layers import Conv2d, find, init_gaussian


def conv_weights(module):
    return sum(m.weight.data.size for _, m in find(module, Conv2d))


@pytest.mark.parametrize("m", [64, 128, 256, 512])
def test_closed_forms(m):
    std = BottleneckSpec(m, "standard")
    light = BottleneckSpec(m, "lightweight")
    assert analytic_params(std) == 17 * m * m
    assert analytic_params(light) == 2 * m * m + 9 * m


def ratio(m):
    return analytic_params(BottleneckSpec(m, "lightweight")) / analytic_params(BottleneckSpec(m, "standard"))


@pytest.mark.parametrize("m", [64, 128, 256, 512, 1024, 4096])
def test_ratio_gap_is_nine_over_seventeen_m(m):
    assert ratio(m) - 2 / 17 == pytest.approx(9 / (17 * m), rel=1e-9)


def test_ratio_within_1e3_from_m_530():
    # 9 / (17 M) < 1e-3 exactly when M >= 530; at M = 512 the gap is 1.034e-3
    assert ratio(529) - 2 / 17 > 1e-3
    assert all(ratio(m) - 2 / 17 < 1e-3 for m in (530, 1024, 2048, 4096))


@pytest.mark.parametrize("kind", ["standard", "lightweight"])
def test_built_block_matches_formula(kind):
    spec = BottleneckSpec(32, kind)
    block = build_bottleneck(spec)
    main = sum(c.weight.data.size for c in block.main_convs())
    assert main == analytic_params(spec)
    assert block.downsample is None


def test_projection_when_shape_changes():
    spec = BottleneckSpec(16, "lightweight", stride=2, in_channels=8)
    assert spec.needs_projection
    block = Bottleneck(spec)
    out = block(np.random.default_rng(0).standard_normal((2, 8, 10, 6)).astype(np.float32))
    assert out.shape == (2, 16, 5, 3)
    assert block.conv2.groups == 16 and block.conv2.stride == (2, 2)


def test_gc_param_count():
    assert gc_params(GCSpec(512)) == 33_344
    assert build_gc_block(GCSpec(512)).num_parameters() == 33_344
    assert GCSpec(8).hidden == 1


def test_gc_surcharge_is_exactly_the_gc_blocks():
    plain = Bottleneck(BottleneckSpec(64, "lightweight"))
    with_gc = Bottleneck(BottleneckSpec(64, "lightweight", use_gc=True))
    assert with_gc.num_parameters() - plain.num_parameters() == gc_params(GCSpec(64))


def test_gc_with_zero_output_conv_is_identity(rng):
    gc = GCBlock(GCSpec(16, 4))
    init_gaussian(gc, rng, 0.5)
    gc.transform[3].weight.data[...] = 0
    x = rng.standard_normal((2, 16, 5, 4)).astype(np.float32)
    np.testing.assert_array_equal(gc(x).data, x)


def test_gc_adds_the_same_vector_everywhere(rng):
    gc = init_gaussian(GCBlock(GCSpec(8, 2)), rng, 0.5)
    x = rng.standard_normal((1, 8, 6, 5))
    gc.astype(np.float64)
    delta = gc(x).data - x
    np.testing.assert_allclose(delta, np.broadcast_to(delta[:, :, :1, :1], delta.shape), atol=1e-12)


def test_gc_context_is_attention_weighted_sum(rng):
    gc = init_gaussian(GCBlock(GCSpec(4, 2)), rng, 0.5).astype(np.float64)
    x = rng.standard_normal((1, 4, 3, 3))
    logits = np.einsum("c,chw->hw", gc.conv_mask.weight.data[0, :, 0, 0], x[0])
    attn = np.exp(logits - logits.max())
    attn /= attn.sum()
    np.testing.assert_allclose(gc.context(x).data[0, :, 0, 0], (x[0] * attn).sum(axis=(1, 2)))


def test_block_output_is_nonnegative(rng):
    block = init_gaussian(Bottleneck(BottleneckSpec(8, "lightweight", use_gc=True)), rng, 0.3)
    with ad.no_grad():
        assert (block(rng.standard_normal((1, 8, 4, 4))).data >= 0).all()


@pytest.mark.parametrize("kw", [dict(kind="mobile"), dict(kind="lightweight", expansion=4), dict(stride=3),
                                dict(hidden_dim=0)])
def test_bad_specs_rejected(kw):
    args = dict(hidden_dim=8)
    args.update(kw)
    with pytest.raises(SpecError):
        BottleneckSpec(**args)
    with pytest.raises(SpecError):
        GCSpec(0)
