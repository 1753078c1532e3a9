"""Segmentation head: video-level class score, per-frame boxes and mask logits."""

from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

from . import nn
from . import tensors as T
from .tensors import Tensor

PRIOR = 0.01  # initial referred-ness probability of every query


@dataclass
class Prediction:
    class_logits: Tensor  # [N]
    boxes: Tensor  # [T, N, 4], normalised (cx, cy, w, h)
    mask_logits: Tensor  # [T, N, h, w] at the pixel-map stride

    @property
    def num_queries(self) -> int:
        return self.class_logits.shape[0]

    def best_query(self) -> int:
        return int(np.argmax(self.class_logits.data))


class SegHead(nn.Module):
    def __init__(self, rng, dim: int = 256):
        self.norm_fused = nn.LayerNorm(dim)
        self.cls = nn.Linear(rng, dim, 1)
        self.cls.bias.data[...] = -math.log((1 - PRIOR) / PRIOR)
        self.box = [nn.Linear(rng, dim, dim), nn.Linear(rng, dim, dim), nn.Linear(rng, dim, 4)]
        self.mask = nn.Linear(rng, dim, dim)

    def __call__(self, interacted, video_queries, pixel_map) -> Prediction:
        return seg_head(interacted, video_queries, pixel_map, self)


def seg_head(interacted, video_queries, pixel_map, head: SegHead) -> Prediction:
    """interacted [T, N, C], video_queries [N, C], pixel_map [T, h, w, C]."""
    n, c = video_queries.shape
    t, h, w, _ = pixel_map.shape
    class_logits = head.cls(video_queries).reshape(n)
    fused = head.norm_fused(interacted + video_queries.reshape(1, n, c))
    b = T.relu(head.box[0](fused))
    b = T.relu(head.box[1](b))
    boxes = T.sigmoid(head.box[2](b))
    pix = pixel_map.reshape(t, h * w, c).swapaxes(-1, -2)
    masks = T.matmul(head.mask(fused) * (1.0 / math.sqrt(c)), pix).reshape(t, n, h, w)
    return Prediction(class_logits, boxes, masks)
