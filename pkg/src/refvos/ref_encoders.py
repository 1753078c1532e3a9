"""Reference encoders: text tokens or audio waveform -> [L+1, dim] features.

Both encoders end in the same contract: row 0 is a contextualised class token
and every row has the model width, so nothing downstream branches on modality.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import nn
from . import tensors as T
from .errors import InputError
from .tensors import Tensor

COLORS = ["red", "green", "blue", "yellow", "cyan", "magenta", "white", "orange"]
SHAPES = ["circle", "square", "triangle"]
MOTIONS = ["moving-left", "moving-right", "moving-up", "moving-down", "static"]
SPATIAL = ["leftmost", "rightmost", "topmost", "bottommost"]

_FILLER = [
    "<pad>", "<unk>", "the", "a", "an", "object", "thing", "shape", "one", "that",
    "which", "is", "of", "on", "in", "at", "to", "and", "with", "near",
    "left", "right", "top", "bottom", "middle", "center", "upper", "lower",
    "big", "small", "large", "tiny", "bright", "dark", "fast", "slow", "moving",
    "still", "going", "sliding", "side", "corner",
]

VOCAB: list[str] = _FILLER + COLORS + SHAPES + MOTIONS + SPATIAL
VOCAB += [f"<extra{i}>" for i in range(64 - len(VOCAB))]
assert len(VOCAB) == 64 and len(set(VOCAB)) == 64
TOKEN_ID = {tok: i for i, tok in enumerate(VOCAB)}


def write_vocab(path) -> None:
    """One token per line; the id is the 0-based line number."""
    Path(path).write_text("\n".join(VOCAB) + "\n")


def read_vocab(path) -> list[str]:
    return Path(path).read_text().splitlines()


def tokenize(words, max_len: int = 12) -> np.ndarray:
    if isinstance(words, str):
        words = words.split()
    if not words:
        raise InputError("empty text reference")
    if len(words) > max_len:
        raise InputError(f"text reference longer than {max_len} tokens")
    try:
        return np.array([TOKEN_ID[w] for w in words], dtype=np.int64)
    except KeyError as exc:
        raise InputError(f"token {exc.args[0]!r} not in vocabulary") from None


def detokenize(ids) -> list[str]:
    return [VOCAB[int(i)] for i in ids]


class _TokenMixer(nn.Module):
    """One pre-norm self-attention + FFN layer; it lets the class token read the sequence."""

    def __init__(self, rng, dim: int, heads: int):
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.Attention(rng, dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(rng, dim, 2 * dim)
        self.fc2 = nn.Linear(rng, 2 * dim, dim)
        self.norm3 = nn.LayerNorm(dim)

    def __call__(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h)
        x = x + self.fc2(T.gelu(self.fc1(self.norm2(x))))
        return self.norm3(x)


class TextEncoder(nn.Module):
    modality = "text"

    def __init__(self, rng, dim: int = 256, embed_dim: int = 768, vocab: int = 64,
                 max_len: int = 12, heads: int = 8):
        self.tokens = nn.param(rng.normal(0, 0.02, (vocab, embed_dim)))
        self.positions = nn.param(rng.normal(0, 0.02, (max_len + 1, embed_dim)))
        self.cls = nn.param(rng.normal(0, 0.02, (1, embed_dim)))
        self.mixer = _TokenMixer(rng, embed_dim, heads)
        self.proj = nn.Linear(rng, embed_dim, dim)
        self.max_len = max_len

    def __call__(self, ids) -> Tensor:
        return encode_text(ids, self)


def encode_text(ids, enc: TextEncoder) -> Tensor:
    """Token ids -> [L+1, dim]; row 0 is the class token."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise InputError("text reference must be a non-empty 1-D token sequence")
    if ids.size > enc.max_len:
        raise InputError(f"text reference longer than {enc.max_len} tokens")
    if ids.min() < 0 or ids.max() >= enc.tokens.shape[0]:
        raise InputError(f"token ids must lie in [0, {enc.tokens.shape[0]})")
    x = T.concat([enc.cls, T.embedding(enc.tokens, ids)], axis=0)
    x = x + enc.positions[: ids.size + 1]
    return enc.proj(enc.mixer(x))


def stft_magnitude(wave, window: int = 256, hop: int = 128) -> np.ndarray:
    """|STFT| with a periodic Hann window, shape [frames, window // 2 + 1]."""
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1:
        raise InputError("waveform must be mono (1-D)")
    if wave.size < window:
        raise InputError(f"waveform of {wave.size} samples is shorter than one {window}-sample window")
    if not np.all(np.isfinite(wave)):
        raise InputError("waveform contains non-finite samples")
    n_frames = (wave.size - window) // hop + 1
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(window) / window)
    idx = np.arange(window)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.abs(np.fft.rfft(wave[idx] * hann, axis=1))


def stft_spectrogram(wave, window: int = 256, hop: int = 128) -> Tensor:
    """Log-compressed magnitude spectrogram ``log(1 + |X|)``."""
    return Tensor(np.log1p(stft_magnitude(wave, window, hop)))


class AudioEncoder(nn.Module):
    """Small conv stack over the spectrogram, per-frame 128-d features, class token."""

    modality = "audio"

    def __init__(self, rng, dim: int = 256, bins: int = 129, conv_channels: int = 8,
                 feat_dim: int = 128, heads: int = 4, max_frames: int = 64,
                 window: int = 256, hop: int = 128):
        self.conv1 = nn.Conv2d(rng, 1, conv_channels, 3)
        self.conv2 = nn.Conv2d(rng, conv_channels, conv_channels, 3)
        self.frame_proj = nn.Linear(rng, bins * conv_channels, feat_dim)
        self.cls = nn.param(rng.normal(0, 0.02, (1, feat_dim)))
        self.positions = nn.param(rng.normal(0, 0.02, (max_frames + 1, feat_dim)))
        self.mixer = _TokenMixer(rng, feat_dim, heads)
        self.proj = nn.Linear(rng, feat_dim, dim)
        self.window, self.hop = window, hop

    def __call__(self, wave) -> Tensor:
        spec = stft_spectrogram(wave, self.window, self.hop)
        return encode_audio(spec, self)


def encode_audio(spec: Tensor, enc: AudioEncoder) -> Tensor:
    """Spectrogram [frames, bins] -> [frames+1, dim]; row 0 is the class token."""
    spec = T.as_tensor(spec)
    n_frames, bins = spec.shape
    if n_frames + 1 > enc.positions.shape[0]:
        raise InputError(f"spectrogram has {n_frames} frames, encoder supports {enc.positions.shape[0] - 1}")
    h = T.relu(enc.conv1(spec.reshape(n_frames, bins, 1)))
    h = T.relu(enc.conv2(h))
    feats = T.relu(enc.frame_proj(h.reshape(n_frames, -1)))
    x = T.concat([enc.cls, feats], axis=0) + enc.positions[: n_frames + 1]
    return enc.proj(enc.mixer(x))


def build_encoder(cfg, rng):
    if cfg["model.modality"] == "text":
        return TextEncoder(rng, cfg["model.dim"], cfg["text.embed_dim"], cfg["text.vocab"],
                           cfg["text.max_len"], cfg["text.heads"])
    if cfg["model.modality"] == "audio":
        return AudioEncoder(rng, cfg["model.dim"], cfg["audio.window"] // 2 + 1,
                            cfg["audio.conv_channels"], cfg["audio.feat_dim"], cfg["audio.heads"],
                            window=cfg["audio.window"], hop=cfg["audio.hop"])
    raise InputError(f"unknown modality {cfg['model.modality']!r}")
