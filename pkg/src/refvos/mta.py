"""Multi-scale temporal aggregation.

Reference tokens query the frame-concatenated visual features of each scale in
turn (scale 2 first), so the class token arrives at the decoder already
conditioned on the whole clip.  The class token is then replicated into the
T x N initial object queries.
"""

from __future__ import annotations

import numpy as np

from . import nn
from . import tensors as T
from .errors import InputError
from .tensors import Tensor

NUM_SCALES = 4


class ScaleBankEmbedding(nn.Module):
    """Fixed 2-D sine position plus learned frame and scale embeddings."""

    def __init__(self, rng, dim: int, max_frames: int = 8):
        self.frame = nn.param(rng.normal(0, 0.02, (max_frames, dim)))
        self.scale = nn.param(rng.normal(0, 0.02, (NUM_SCALES, dim)))
        self.dim = dim
        self._sine: dict = {}

    def sine(self, h: int, w: int) -> np.ndarray:
        key = (h, w, np.dtype(T.get_dtype()).name)
        if key not in self._sine:
            self._sine[key] = nn.sine_position_2d(h, w, self.dim).astype(T.get_dtype())
        return self._sine[key]


def temporal_concat(scales, emb: ScaleBankEmbedding | None = None) -> list[Tensor]:
    """Per scale, stack the T frames' tokens in frame order: [T*H*W, C].

    ``scales`` holds four [T, H_i, W_i, C] maps.  Token ``t*H*W + y*W + x`` is
    frame t at (y, x).
    """
    if len(scales) != NUM_SCALES:
        raise InputError(f"expected {NUM_SCALES} scales, got {len(scales)}")
    banks = []
    for i, s in enumerate(scales):
        if s.ndim != 4:
            raise InputError(f"scale {i + 2} must be [T, H, W, C], got {s.shape}")
        t, h, w, c = s.shape
        tok = s.reshape(t, h * w, c)
        if emb is not None:
            if t > emb.frame.shape[0]:
                raise InputError(f"{t} frames exceed the {emb.frame.shape[0]} frame embeddings")
            pos = emb.sine(h, w)[None] + emb.frame[:t].reshape(t, 1, c) + emb.scale[i]
            tok = tok + pos
        banks.append(tok.reshape(t * h * w, c))
    return banks


def concat_frames(per_frame) -> list[Tensor]:
    """Same as :func:`temporal_concat` for a list of per-frame scale lists.

    Frames must agree on every scale's extents.
    """
    first = [f.shape for f in per_frame[0]]
    for j, frame in enumerate(per_frame):
        if [f.shape for f in frame] != first:
            raise InputError(f"frame {j} scale extents {[f.shape for f in frame]} differ from {first}")
    return temporal_concat([T.stack([frame[i] for frame in per_frame]) for i in range(len(first))])


class MTABlock(nn.Module):
    """Pre-norm cross-attention (tokens -> bank) followed by a pre-norm FFN."""

    def __init__(self, rng, dim: int, heads: int, ffn_dim: int):
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(dim)
        self.attn = nn.Attention(rng, dim, heads)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = nn.FeedForward(rng, dim, ffn_dim)

    def zero_residuals(self) -> None:
        self.attn.out.zero_()
        self.ffn.fc2.zero_()

    def __call__(self, tokens, bank):
        kv = self.norm_kv(bank)
        tokens = tokens + self.attn(self.norm_q(tokens), kv, kv)
        return tokens + self.ffn(self.norm_ffn(tokens))


class MTA(nn.Module):
    def __init__(self, rng, dim: int = 256, heads: int = 8, ffn_dim: int = 512,
                 num_blocks: int = 1, num_queries: int = 5, max_frames: int = 8,
                 enabled: bool = True):
        self.embed = ScaleBankEmbedding(rng, dim, max_frames)
        self.blocks = [[MTABlock(rng, dim, heads, ffn_dim) for _ in range(NUM_SCALES)]
                       for _ in range(num_blocks)]
        self.query_embed = nn.param(rng.normal(0, 0.5, (num_queries, dim)))
        self.time_embed = nn.param(rng.normal(0, 0.02, (max_frames, dim)))
        self.enabled = enabled

    def zero_residuals(self) -> None:
        for cascade in self.blocks:
            for block in cascade:
                block.zero_residuals()

    def __call__(self, ref, scales):
        """ref: [L+1, C]; scales: four [T, H_i, W_i, C] -> queries [T, N, C], F_f."""
        t = scales[0].shape[0]
        fused = ref
        if self.enabled:
            fused = mta_forward(ref, temporal_concat(scales, self.embed), self.blocks)
        return make_queries(fused, t, self.query_embed, self.time_embed), fused


def mta_forward(ref, banks, blocks) -> Tensor:
    """Chain the reference tokens through one block per scale, ascending.

    ``blocks`` is a list of cascades; each cascade holds one block per scale.
    """
    if len(banks) != NUM_SCALES:
        raise InputError(f"expected {NUM_SCALES} banks, got {len(banks)}")
    tokens = ref
    for cascade in blocks:
        for block, bank in zip(cascade, banks):
            tokens = block(tokens, bank)
    return tokens


def make_queries(fused, frames: int, query_embed, time_embed) -> Tensor:
    """queries[t, n] = fused[0] + query_embed[n] + time_embed[t]."""
    n, c = query_embed.shape
    if frames < 1 or n < 1:
        raise InputError("need at least one frame and one query")
    cls = fused[0].reshape(1, 1, c)
    return cls + query_embed.reshape(1, n, c) + time_embed[:frames].reshape(frames, 1, c)
