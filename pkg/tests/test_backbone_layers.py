import pytest
import torch

from promptseg.backbone import FPN_STRIDES, Backbone, encode_image
from promptseg.errors import ConfigError, ContractError, InputError
from promptseg.layers import Attention, TwoWayTransformer, sine_position_encoding


@pytest.fixture
def bb():
    torch.manual_seed(0)
    return Backbone(16, 2, 32, blocks_per_stage=2)


@pytest.mark.parametrize("size", [32, 64, 128])
def test_pyramid_shapes(bb, size):
    out = bb(torch.rand(2, 3, size, size))
    assert out.top.shape == (2, 16, size // 16, size // 16)
    for level, stride in zip(out.fpn_levels, FPN_STRIDES):
        assert level.shape == (2, 16, size // stride, size // stride)
    assert out.top is out.fpn_levels[-1]
    assert out.input_resolution == (size, size)


def test_unbatched_input(bb):
    assert bb(torch.rand(3, 64, 64)).top.shape == (1, 16, 4, 4)


def test_errors(bb):
    with pytest.raises(ConfigError):
        bb(torch.rand(1, 3, 40, 40))
    with pytest.raises(InputError):
        x = torch.rand(1, 3, 64, 64)
        x[0, 0, 0, 0] = float("nan")
        bb(x)
    with pytest.raises(ContractError):
        encode_image(torch.rand(1, 1, 64, 64), bb)


def test_attention_sites(bb):
    sites = bb.attention_sites()
    assert len(bb.blocks) == 4 and len(sites) == 8
    assert {s for _, s, _ in sites} == {"qkv", "out"}


def test_features_carry_image_content(bb):
    a = bb(torch.zeros(1, 3, 64, 64)).fpn_levels[0]
    b = bb(torch.full((1, 3, 64, 64), 0.6)).fpn_levels[0]
    assert (a - b).abs().mean() > 0.1 * a.abs().mean()


def test_position_encoding():
    pe = sine_position_encoding(4, 6, 16)
    assert pe.shape == (24, 16)
    assert torch.allclose(pe[:, :4].square() + pe[:, 4:8].square(), torch.ones(24, 4))
    with pytest.raises(ContractError):
        sine_position_encoding(4, 4, 6)


def test_attention_rows_sum_to_one():
    torch.manual_seed(1)
    attn = Attention(16, 2)
    _, w = attn(torch.randn(2, 5, 16), torch.randn(2, 7, 16), torch.randn(2, 7, 16), return_weights=True)
    assert w.shape == (2, 2, 5, 7)
    assert torch.allclose(w.sum(-1), torch.ones(2, 2, 5), atol=1e-6)
    with pytest.raises(ContractError):
        attn(torch.randn(1, 5, 16), torch.randn(1, 7, 16), torch.randn(1, 6, 16))


@pytest.mark.parametrize("n,hw", [(1, (2, 2)), (12, (4, 4)), (3, (2, 6))])
def test_two_way_preserves_shapes(n, hw):
    torch.manual_seed(2)
    tw = TwoWayTransformer(16, 2, 32)
    img = torch.randn(2, 16, *hw)
    q, k = tw(img, sine_position_encoding(*hw, 16), torch.randn(2, n, 16))
    assert q.shape == (2, n, 16) and k.shape == (2, hw[0] * hw[1], 16)


def test_two_way_key_permutation_equivariance():
    torch.manual_seed(3)
    tw = TwoWayTransformer(16, 2, 32).double()
    h = w = 4
    img = torch.randn(1, 16, h, w, dtype=torch.float64)
    pe = sine_position_encoding(h, w, 16, torch.float64)
    tokens = torch.randn(1, 5, 16, dtype=torch.float64)
    q, k = tw(img, pe, tokens)

    perm = torch.randperm(h * w)
    flat = img.flatten(2)[:, :, perm]
    q2, k2 = tw(flat.reshape(1, 16, h, w), pe[perm], tokens)
    assert torch.allclose(q, q2, atol=1e-10)
    assert torch.allclose(k[:, perm], k2, atol=1e-10)
