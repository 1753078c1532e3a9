"""Toy visual backbone: three conv stages, early reference fusion, projection to
four 256-channel scales (strides 4, 8, 16, 32 at the default stem)."""

from __future__ import annotations

import numpy as np

from . import nn
from . import tensors as T
from .errors import InputError


class _Stage(nn.Module):
    def __init__(self, rng, c_in: int, c_out: int, stride: int):
        self.conv1 = nn.Conv2d(rng, c_in, c_out, 3, stride)
        self.norm1 = nn.LayerNorm(c_out)
        self.conv2 = nn.Conv2d(rng, c_out, c_out, 3)
        self.norm2 = nn.LayerNorm(c_out)

    def __call__(self, x):
        x = T.relu(self.norm1(self.conv1(x)))
        return T.relu(self.norm2(self.conv2(x)))


class Backbone(nn.Module):
    def __init__(self, rng, channels=(32, 64, 128), stem_channels: int = 16, stem_stride: int = 4):
        if stem_stride not in (1, 2, 4):
            raise InputError("stem stride must be 1, 2 or 4")
        s1, s2 = {1: (1, 1), 2: (2, 1), 4: (2, 2)}[stem_stride]
        self.stem1 = nn.Conv2d(rng, 3, stem_channels, 3, s1)
        self.stem2 = nn.Conv2d(rng, stem_channels, channels[0], 3, s2)
        self.stages = [
            _Stage(rng, channels[0], channels[0], 1),
            _Stage(rng, channels[0], channels[1], 2),
            _Stage(rng, channels[1], channels[2], 2),
        ]
        self.stem_stride = stem_stride

    def __call__(self, frames):
        return extract_features(frames, self)


def extract_features(frames, net: Backbone) -> list:
    """[..., H, W, 3] -> three stage maps at strides (4, 8, 16) x stem/4."""
    frames = T.as_tensor(frames)
    h, w = frames.shape[-3], frames.shape[-2]
    unit = 8 * net.stem_stride
    if frames.shape[-1] != 3 or h % unit or w % unit:
        raise InputError(f"frames must be [..., H, W, 3] with H, W divisible by {unit}; got {frames.shape}")
    x = T.relu(net.stem2(T.relu(net.stem1(frames))))
    feats = []
    for stage in net.stages:
        x = stage(x)
        feats.append(x)
    return feats


class EarlyFusion(nn.Module):
    """Single-head pixel -> reference-token cross-attention per stage, residual.

    The output projections start at zero, so a fresh module is the identity.
    """

    def __init__(self, rng, channels=(32, 64, 128), ref_dim: int = 256, fusion_dim: int = 64):
        self.norms = [nn.LayerNorm(c) for c in channels]
        self.q = [nn.Linear(rng, c, fusion_dim) for c in channels]
        self.k = [nn.Linear(rng, ref_dim, fusion_dim) for _ in channels]
        self.v = [nn.Linear(rng, ref_dim, fusion_dim) for _ in channels]
        self.out = [nn.Linear(rng, fusion_dim, c, zero=True) for c in channels]

    def __call__(self, feats, ref):
        return early_fuse(feats, ref, self)


def early_fuse(feats, ref, fuse: EarlyFusion) -> list:
    fused = []
    for i, x in enumerate(feats):
        lead, (h, w, c) = x.shape[:-3], x.shape[-3:]
        pix = x.reshape(lead + (h * w, c))
        upd = T.multi_head_attention(fuse.q[i](fuse.norms[i](pix)), fuse.k[i](ref), fuse.v[i](ref), 1)
        fused.append(x + fuse.out[i](upd).reshape(x.shape))
    return fused


class ScaleProjection(nn.Module):
    """1x1 convs to ``dim`` on stages 2-4, plus a stride-2 3x3 conv for scale 5."""

    def __init__(self, rng, channels=(32, 64, 128), dim: int = 256):
        self.lateral = [nn.Conv2d(rng, c, dim, 1) for c in channels]
        self.extra = nn.Conv2d(rng, channels[-1], dim, 3, 2)

    def identity_init(self) -> None:
        """Lateral convs copy the stage channels into the first output channels."""
        for conv in self.lateral:
            k = conv.kernel.data
            k[...] = 0
            c = min(k.shape[2], k.shape[3])
            k[0, 0, np.arange(c), np.arange(c)] = 1
            conv.bias.data[...] = 0

    def __call__(self, feats):
        return project_scales(feats, self)


def project_scales(feats, proj: ScaleProjection) -> list:
    """Three fused stages -> four ``dim``-channel scales, finest first."""
    scales = [conv(f) for conv, f in zip(proj.lateral, feats)]
    scales.append(proj.extra(feats[-1]))
    return scales
