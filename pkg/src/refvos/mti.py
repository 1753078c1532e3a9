"""Multi-object temporal interaction.

The encoder lets per-frame object queries talk across time with shifted-window
attention along the frame axis; the decoder distils them into N video-level
queries that see every frame at once.
"""

from __future__ import annotations

import numpy as np

from . import nn
from . import tensors as T

BLOCKED = -1e9


def window_ids(frames: int, window: int, shift: int) -> np.ndarray:
    """Window index of each frame; shifting by s opens a short first window of s frames."""
    window = max(1, min(window, frames))
    return (np.arange(frames) - shift) // window


def window_mask(frames: int, queries: int, window: int, shift: int = 0,
                cross_query: bool = True) -> np.ndarray:
    """Additive [T*N, T*N] mask over tokens laid out frame-major (token = t*N + n)."""
    wid = np.repeat(window_ids(frames, window, shift), queries)
    allowed = wid[:, None] == wid[None, :]
    if not cross_query:
        qid = np.tile(np.arange(queries), frames)
        allowed &= qid[:, None] == qid[None, :]
    return np.where(allowed, 0.0, BLOCKED).astype(T.get_dtype())


class MTIEncoderBlock(nn.Module):
    def __init__(self, rng, dim, heads, ffn_dim, shift: int):
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.Attention(rng, dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.FeedForward(rng, dim, ffn_dim)
        self.shift = shift

    def zero_residuals(self) -> None:
        self.attn.out.zero_()
        self.ffn.fc2.zero_()

    def __call__(self, x, pos, mask):
        h = self.norm1(x)
        qk = h + pos
        x = x + self.attn(qk, qk, h, mask)
        return x + self.ffn(self.norm2(x))


class MTIDecoderBlock(nn.Module):
    def __init__(self, rng, dim, heads, ffn_dim):
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = nn.Attention(rng, dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.norm_mem = nn.LayerNorm(dim)
        self.cross_attn = nn.Attention(rng, dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.ffn = nn.FeedForward(rng, dim, ffn_dim)

    def zero_residuals(self) -> None:
        self.self_attn.out.zero_()
        self.cross_attn.out.zero_()
        self.ffn.fc2.zero_()

    def __call__(self, q, memory, key_pos):
        h = self.norm1(q)
        q = q + self.self_attn(h, h, h)
        mem = self.norm_mem(memory)
        keys = mem + key_pos if key_pos is not None else mem
        q = q + self.cross_attn(self.norm2(q), keys, mem)
        return q + self.ffn(self.norm3(q))


class MTI(nn.Module):
    def __init__(self, rng, dim=256, heads=8, ffn_dim=512, num_queries=5, enc_blocks=3,
                 dec_blocks=3, window=2, cross_query=True, temporal_keys=True,
                 max_frames=8, enabled=True):
        self.time_embed = nn.param(rng.normal(0, 0.02, (max_frames, dim)))
        shift = max(window // 2, 1)
        self.encoder = [MTIEncoderBlock(rng, dim, heads, ffn_dim, shift if i % 2 else 0)
                        for i in range(enc_blocks)]
        self.video_queries = nn.param(rng.normal(0, 0.02, (num_queries, dim)))
        self.decoder = [MTIDecoderBlock(rng, dim, heads, ffn_dim) for _ in range(dec_blocks)]
        self.window = window
        self.cross_query = cross_query
        self.temporal_keys = temporal_keys
        self.enabled = enabled

    def zero_residuals(self) -> None:
        for block in self.encoder + self.decoder:
            block.zero_residuals()

    def encode(self, frame_queries):
        return mti_encode(frame_queries, self)

    def decode(self, interacted):
        return mti_decode(self.video_queries, interacted, self)

    def __call__(self, frame_queries):
        """P [T, N, C] -> (P' [T, N, C], Q' [N, C]); identity on (P, Q) when disabled."""
        if not self.enabled:
            return frame_queries, self.video_queries
        interacted = mti_encode(frame_queries, self)
        return interacted, mti_decode(self.video_queries, interacted, self)


def mti_encode(frame_queries, net: MTI):
    t, n, c = frame_queries.shape
    x = frame_queries.reshape(t * n, c)
    pos = net.time_embed[np.repeat(np.arange(t), n)]
    for block in net.encoder:
        mask = window_mask(t, n, net.window, block.shift, net.cross_query)
        x = block(x, pos, mask)
    return x.reshape(t, n, c)


def mti_decode(video_queries, interacted, net: MTI):
    t, n, c = interacted.shape
    memory = interacted.reshape(t * n, c)
    key_pos = net.time_embed[np.repeat(np.arange(t), n)] if net.temporal_keys else None
    q = video_queries
    for block in net.decoder:
        q = block(q, memory, key_pos)
    return q
