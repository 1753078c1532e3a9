"""End-to-end referring segmentation model.

reference -> encoder -> F_r
frames -> backbone (+ early fusion with F_r) -> four scales
(F_r, scales) -> MTA -> initial queries [T, N, C]
(queries, scales) -> visual transformer -> P [T, N, C], pixel maps
P -> MTI -> (P', Q') -> segmentation head
"""

from __future__ import annotations

import numpy as np

from . import nn
from . import tensors as T
from .backbone import Backbone, EarlyFusion, ScaleProjection
from .config import Config
from .heads import Prediction, SegHead
from .mta import MTA
from .mti import MTI
from .ref_encoders import build_encoder
from .transformer import VisualTransformer, run_video

PIXEL_MEAN = 0.45
PIXEL_STD = 0.25


def normalize_frames(frames_u8) -> T.Tensor:
    """uint8 [T, H, W, 3] -> standardised float tensor."""
    x = np.asarray(frames_u8, dtype=np.float64) / 255.0
    return T.Tensor((x - PIXEL_MEAN) / PIXEL_STD)


class ReferringSegmenter(nn.Module):
    def __init__(self, cfg: Config, seed: int | None = None):
        rng = np.random.default_rng(cfg["train.seed"] if seed is None else seed)
        dim, heads, ffn = cfg["model.dim"], cfg["model.heads"], cfg["model.ffn_dim"]
        chans = tuple(cfg["backbone.channels"])
        self.encoder = build_encoder(cfg, rng)
        self.backbone = Backbone(rng, chans, cfg["backbone.stem_channels"], cfg["backbone.stem_stride"])
        self.fusion = EarlyFusion(rng, chans, dim, cfg["backbone.fusion_dim"])
        self.projection = ScaleProjection(rng, chans, dim)
        self.mta = MTA(rng, dim, heads, ffn, cfg["mta.num_blocks"], cfg["model.num_queries"],
                       max_frames=cfg["model.frames"], enabled=cfg["mta.enabled"])
        self.transformer = VisualTransformer(rng, dim, cfg["transformer.heads"], ffn,
                                             cfg["transformer.enc_layers"], cfg["transformer.dec_layers"])
        self.mti = MTI(rng, dim, heads, ffn, cfg["model.num_queries"], cfg["mti.enc_blocks"],
                       cfg["mti.dec_blocks"], cfg["mti.window"], cfg["mti.cross_query"],
                       cfg["mti.temporal_keys"], max_frames=cfg["model.frames"],
                       enabled=cfg["mti.enabled"])
        self.head = SegHead(rng, dim)
        self.early_fusion = cfg["backbone.early_fusion"]
        self.config = cfg

    def backbone_parameter_names(self) -> set[str]:
        return {name for name, _ in self.named_parameters() if name.startswith("backbone.")}

    def features(self, frames, ref):
        """Four [T, H_i, W_i, C] scales for one clip, already fused with ``ref``."""
        stages = self.backbone(frames)
        if self.early_fusion:
            stages = self.fusion(stages, ref)
        return self.projection(stages)

    def forward(self, frames, reference, return_intermediates: bool = False):
        """frames: [T, H, W, 3] float tensor; reference: token ids or waveform."""
        ref = self.encoder(reference)
        scales = self.features(frames, ref)
        queries, fused = self.mta(ref, scales)
        frame_queries, enc = run_video(queries, scales, self.transformer)
        interacted, video_queries = self.mti(frame_queries)
        pred = self.head(interacted, video_queries, enc["pixel_map"])
        if return_intermediates:
            return pred, {"ref": ref, "scales": scales, "fused": fused, "queries": queries,
                          "frame_queries": frame_queries, "interacted": interacted,
                          "video_queries": video_queries, "encoded": enc}
        return pred

    __call__ = forward


def micro_config(**overrides) -> Config:
    """A model small enough (< 2k parameters) for exhaustive finite differences."""
    base = dict(
        model__dim=4, model__ffn_dim=2, model__heads=1, model__num_queries=2,
        model__frames=2, model__image_size=8,
        backbone__stem_stride=1, backbone__stem_channels=1, backbone__channels=[2, 2, 2],
        backbone__fusion_dim=1,
        text__embed_dim=2, text__heads=1, text__vocab=10, text__max_len=4,
        mta__num_blocks=1, transformer__enc_layers=1, transformer__dec_layers=1,
        transformer__heads=1, mti__enc_blocks=1, mti__dec_blocks=1,
    )
    base.update(overrides)
    return Config(**base)
