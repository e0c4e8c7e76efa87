"""The full prompt-conditioned segmenter."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .backbone import Backbone, ImageEmbedding
from .config import PROTOCOLS, ModelConfig
from .decoder import LateralInhibition, MaskDecoder, RefinementHead, refine
from .errors import ConfigError
from .losses import LossBreakdown, mask_loss, resize_target, bce_logits, spg_loss, total_loss
from .lora import inject_lora, param_group
from .prompt_encoder import EncodedPrompts, PromptEncoder, empty_sparse
from .psg import GatedCondition, PromptSpaceGate
from .spg import SelfPromptGenerator, SelfPrompts

FROZEN_GROUPS = ("backbone", "prompt_encoder")


@dataclass
class Prediction:
    coarse: torch.Tensor  # M_c
    refined: torch.Tensor  # M (same object as coarse when refinement is off)
    per_token_masks: torch.Tensor
    iou_pred: torch.Tensor
    embedding: ImageEmbedding
    prompts: SelfPrompts | None = None
    encoded: EncodedPrompts | None = None
    condition: GatedCondition | None = None
    lateral_logits: torch.Tensor | None = None


def _ungated(z_pos: torch.Tensor) -> GatedCondition:
    half = z_pos.new_full((z_pos.shape[0], 1, *z_pos.shape[2:]), 0.5)
    return GatedCondition(half, z_pos, z_pos, torch.zeros_like(half))


class PromptSegmenter(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        c = cfg.embed_dim
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.backbone = Backbone(c, cfg.num_heads, cfg.mlp_dim, cfg.blocks_per_stage)
            self.prompt_encoder = PromptEncoder(c)
            self.decoder = MaskDecoder(c, cfg.num_heads, cfg.mlp_dim, cfg.num_mask_tokens)
            t = cfg.toggles
            self.spg = (SelfPromptGenerator(c, cfg.num_heads, cfg.mlp_dim, cfg.num_sparse, cfg.num_mask_tokens)
                        if t.spg else None)
            self.psg = PromptSpaceGate(c, cfg.psg_variant) if t.psg and cfg.psg_variant != "none" else None
            self.lateral = LateralInhibition(c) if t.lateral else None
            self.refine = RefinementHead(c) if t.refine else None
        self.backbone.requires_grad_(False)
        self.prompt_encoder.requires_grad_(False)
        inject_lora(self.backbone, cfg.lora.strategy, cfg.lora.rank, cfg.lora.scale_alpha, seed=cfg.seed)

    def provenance(self) -> dict[str, str]:
        """Init provenance per parameter group: frozen-random or scratch."""
        tags = {}
        for name, _ in self.named_parameters():
            group = param_group(name)
            tags[group] = "frozen-random" if group in FROZEN_GROUPS else "scratch"
        return tags

    def frozen_state(self) -> dict[str, torch.Tensor]:
        return {n: p for n, p in self.named_parameters() if param_group(n) in FROZEN_GROUPS}

    def forward(self, image: torch.Tensor, protocol: str = "intrinsic") -> Prediction:
        if protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {protocol!r}")
        emb = self.backbone(image)
        e = emb.top
        b, c, h, w = e.shape
        prompts = encoded = cond = None
        if protocol == "intrinsic" and self.spg is not None:
            prompts = self.spg(e)
            encoded = self.prompt_encoder(prompts.p_pos, prompts.p_neg, prompts.s_pos, prompts.s_neg)
            cond = self.psg(encoded.z_pos, encoded.z_neg) if self.psg is not None else _ungated(encoded.z_pos)
            dense = cond.z_out
            sparse = torch.cat([encoded.u_pos, encoded.u_neg], dim=1)
            mask_tokens = prompts.t_prop if self.cfg.mask_tokens == "propagated" else None
        else:
            dense = self.prompt_encoder.null_dense(h, w, e)
            sparse = empty_sparse(b, c, e)
            mask_tokens = None
        features = emb.fpn_levels
        out = self.decoder(e, dense, sparse, mask_tokens, high_res=(features[0], features[1]))

        lateral_logits = None
        if self.lateral is not None:
            features, lateral_logits = self.lateral(features, out.coarse)
        refined = out.coarse
        if self.refine is not None:
            refined = refine(self.refine, out.coarse, dense, features[0])
        return Prediction(out.coarse, refined, out.per_token_masks, out.iou_pred, emb,
                          prompts, encoded, cond, lateral_logits)

    def losses(self, pred: Prediction, y: torch.Tensor) -> LossBreakdown:
        lw = self.cfg.loss
        components = {}
        l_spg = pred.coarse.new_zeros(())
        if pred.prompts is not None:
            l_spg = spg_loss(pred.prompts.p_pos, pred.prompts.p_neg, y)
        l_c, components["coarse"] = mask_loss(pred.coarse, y)
        l_r = None
        if self.refine is not None and lw.refined > 0:
            l_r, components["refined"] = mask_loss(pred.refined, y)
        l_lat = None
        if pred.lateral_logits is not None:
            l_lat = bce_logits(pred.lateral_logits, resize_target(y.to(pred.coarse.dtype),
                                                                  pred.lateral_logits.shape[-2:]))
        return total_loss(l_spg, l_c, l_r, lw.spg, lw.coarse, lw.refined,
                          refine_enabled=self.refine is not None,
                          l_lateral=l_lat, lambda_lat=lw.lateral, components=components)
