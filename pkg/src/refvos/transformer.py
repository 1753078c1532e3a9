"""Frame-independent visual encoder-decoder.

All T frames run as one batch, but no op mixes the frame axis: frame t's
decoded queries depend only on frame t's features and its initial queries.
"""

from __future__ import annotations

import numpy as np

from . import nn
from . import tensors as T


class EncoderLayer(nn.Module):
    def __init__(self, rng, dim, heads, ffn_dim):
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.Attention(rng, dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.FeedForward(rng, dim, ffn_dim)

    def __call__(self, x, pos):
        h = self.norm1(x)
        qk = h + pos
        x = x + self.attn(qk, qk, h)
        return x + self.ffn(self.norm2(x))


class DecoderLayer(nn.Module):
    def __init__(self, rng, dim, heads, ffn_dim):
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = nn.Attention(rng, dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.cross_attn = nn.Attention(rng, dim, heads)
        self.norm3 = nn.LayerNorm(dim)
        self.ffn = nn.FeedForward(rng, dim, ffn_dim)

    def __call__(self, q, memory, pos):
        h = self.norm1(q)
        q = q + self.self_attn(h, h, h)
        q = q + self.cross_attn(self.norm2(q), memory + pos, memory)
        return q + self.ffn(self.norm3(q))


class VisualTransformer(nn.Module):
    def __init__(self, rng, dim=256, heads=8, ffn_dim=512, enc_layers=4, dec_layers=4):
        self.scale_embed = nn.param(rng.normal(0, 0.02, (4, dim)))
        self.encoder = [EncoderLayer(rng, dim, heads, ffn_dim) for _ in range(enc_layers)]
        self.decoder = [DecoderLayer(rng, dim, heads, ffn_dim) for _ in range(dec_layers)]
        self.dec_norm = nn.LayerNorm(dim)
        self.fpn_lateral = [nn.Conv2d(rng, dim, dim, 1) for _ in range(3)]
        self.pixel_norm = nn.LayerNorm(dim)
        self.pixel_proj = nn.Conv2d(rng, dim, dim, 1)
        self.dim = dim
        self._sine: dict = {}

    def positions(self, extents) -> np.ndarray:
        key = (tuple(extents), np.dtype(T.get_dtype()).name)
        if key not in self._sine:
            self._sine[key] = np.concatenate(
                [nn.sine_position_2d(h, w, self.dim) for h, w in extents]).astype(T.get_dtype())
        return self._sine[key]

    def encode(self, scales):
        return encode_frame(scales, self)

    def decode(self, queries, enc):
        return decode_frame(queries, enc, self)


def encode_frame(scales, net: VisualTransformer) -> dict:
    """Self-attention over the tokens of all four scales of each frame.

    scales: four [..., H_i, W_i, C] maps.  Returns the re-split per-scale maps,
    the flat token memory with its positions, and a stride-4 pixel-embedding
    map built by top-down 2x upsampling from scale 5.
    """
    lead = scales[0].shape[:-3]
    c = net.dim
    extents = [s.shape[-3:-1] for s in scales]
    counts = [h * w for h, w in extents]
    tokens = T.concat([s.reshape(lead + (n, c)) for s, n in zip(scales, counts)], axis=-2)
    scale_ids = np.repeat(np.arange(4), counts)
    pos = T.Tensor(net.positions(extents)) + net.scale_embed[scale_ids]
    x = tokens
    for layer in net.encoder:
        x = layer(x, pos)
    per_scale = []
    start = 0
    for (h, w), n in zip(extents, counts):
        per_scale.append(x[..., start:start + n, :].reshape(lead + (h, w, c)))
        start += n
    p = per_scale[3]
    for i in (2, 1, 0):
        p = net.fpn_lateral[i](per_scale[i]) + T.upsample2x(p)
    pixel_map = net.pixel_proj(T.relu(net.pixel_norm(p)))
    return {"memory": x, "pos": pos, "scales": per_scale, "pixel_map": pixel_map}


def decode_frame(queries, enc: dict, net: VisualTransformer):
    """queries [..., N, C] against one frame's (or a batch of frames') memory."""
    q = queries
    for layer in net.decoder:
        q = layer(q, enc["memory"], enc["pos"])
    return net.dec_norm(q)


def run_video(init_queries, scales, net: VisualTransformer):
    """P[t] = decode(init_queries[t], encode(frame t)) for every frame at once.

    init_queries: [T, N, C]; scales: four [T, H_i, W_i, C] maps.
    """
    enc = encode_frame(scales, net)
    return decode_frame(init_queries, enc, net), enc
