import pytest
import torch

from fdcheck import relative_error
from promptseg.config import ModelConfig
from promptseg.errors import ContractError, InputError
from promptseg.losses import spg_loss
from promptseg.model import PromptSegmenter
from promptseg.spg import DenseHead, SelfPromptGenerator, dense_head, generate_prompts


@pytest.fixture
def gen():
    torch.manual_seed(0)
    return SelfPromptGenerator(16, 2, 32, num_sparse=2, num_mask_tokens=4)


def test_shapes(gen):
    e = torch.randn(3, 16, 4, 4)
    out = gen(e)
    assert out.p_pos.shape == out.p_neg.shape == (3, 1, 16, 16)
    assert out.s_pos.shape == out.s_neg.shape == (3, 2, 16)
    assert out.t_prop.shape == (3, 4, 16)
    assert gen.num_queries == 12


def test_unbatched_and_deterministic(gen):
    e = torch.randn(16, 4, 4)
    a, b = gen(e), gen(e)
    assert torch.equal(a.p_pos, b.p_pos) and a.p_pos.shape == (1, 1, 16, 16)


def test_errors(gen):
    with pytest.raises(InputError):
        gen(torch.full((1, 16, 4, 4), float("nan")))
    with pytest.raises(ContractError):
        gen(torch.randn(1, 8, 4, 4))
    with pytest.raises(ContractError):
        generate_prompts(torch.randn(1, 16, 4, 4), gen.queries[:5], gen)


def test_dense_head_zero_projection():
    head = DenseHead(16)
    feats = head.upscale(torch.randn(1, 16, 4, 4))
    assert feats.shape == (1, 16, 16, 16)
    out = head(torch.zeros(1, head.up_dim), feats)
    assert torch.count_nonzero(out) == 0


def test_dense_head_constant_preservation():
    head = DenseHead(16)
    with torch.no_grad():
        head.conv.weight.fill_(1.0 / (16 * 9))
        head.conv.bias.zero_()
    x = torch.full((1, 16, 4, 4), 0.7)
    up = head.upscale(x)
    assert torch.allclose(up, up.flatten()[0].expand_as(up), atol=1e-7)


def test_dense_head_function_matches_module(gen):
    keys = torch.randn(1, 16, 4, 4)
    tok = torch.randn(1, 16)
    a = dense_head(gen.dense_head, gen.hyper_pos, tok, keys)
    b = gen.dense_head(gen.hyper_pos(tok), gen.dense_head.upscale(keys))
    assert torch.equal(a, b)


def test_every_spg_parameter_gets_gradient(gen):
    torch.manual_seed(1)
    e = torch.randn(2, 16, 4, 4)
    y = (torch.rand(2, 1, 16, 16) > 0.5).float()
    out = gen(e)
    loss = spg_loss(out.p_pos, out.p_neg, y)
    loss.backward()
    used = {"queries", "transformer", "dense_head", "hyper_pos", "hyper_neg"}
    for name, p in gen.named_parameters():
        if name.split(".")[0] in used:
            assert p.grad is not None and p.grad.abs().max() > 1e-12, name


def test_gradient_reaches_spg_through_frozen_encoder_without_spg_loss():
    cfg = ModelConfig()
    cfg.loss.spg = 0.0
    model = PromptSegmenter(cfg)
    x = torch.rand(1, 3, 64, 64)
    y = (torch.rand(1, 1, 64, 64) > 0.5).float()
    model.losses(model(x), y).total.backward()
    g = model.spg.hyper_pos.layers[-1].weight.grad
    assert g is not None and g.abs().max() > 0
    assert all(p.grad is None for p in model.prompt_encoder.parameters())


def test_gradient_check_dense_logits():
    torch.manual_seed(2)
    gen = SelfPromptGenerator(8, 2, 16, 1, 2).double()
    g = torch.Generator().manual_seed(2)
    w = torch.randn(1, 1, 8, 8, generator=g, dtype=torch.float64)
    for _ in range(3):
        e = torch.randn(1, 8, 2, 2, generator=g, dtype=torch.float64)
        assert relative_error(lambda x: (gen(x).p_pos * w).sum(), [e]) <= 1e-4
