"""Procedural moving-shape clips with exact masks and referring signals.

A scene holds 2-4 coloured shapes moving on straight lines across a 64x64
canvas.  One of them is the referent.  Its text reference is ``color shape``,
followed by a motion word and then a spatial word when those are needed to
single it out.  The audio reference encodes the same words as pure tones on
STFT bin centres, plus white noise.
"""

from __future__ import annotations

import math
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io
from .errors import ContractError, InputError
from .ref_encoders import COLORS, MOTIONS, SHAPES, SPATIAL, tokenize

PALETTE = {
    "red": (220, 40, 40), "green": (40, 190, 60), "blue": (50, 80, 230),
    "yellow": (230, 220, 50), "cyan": (50, 210, 220), "magenta": (210, 60, 200),
    "white": (240, 240, 240), "orange": (240, 140, 30),
}
BACKGROUND = (24, 24, 28)
DIRECTIONS = {"moving-left": (-1, 0), "moving-right": (1, 0), "moving-up": (0, -1),
              "moving-down": (0, 1), "static": (0, 0)}

SAMPLE_RATE = 16000
AUDIO_WINDOW = 256
MAX_REGENERATIONS = 100


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    color: str
    x: float  # centre at frame 0, pixels
    y: float
    vx: float = 0.0  # pixels per frame
    vy: float = 0.0
    radius: float = 8.0

    def center(self, t: int) -> tuple[float, float]:
        return self.x + self.vx * t, self.y + self.vy * t

    @property
    def motion(self) -> str:
        if self.vx == 0 and self.vy == 0:
            return "static"
        if abs(self.vx) >= abs(self.vy):
            return "moving-right" if self.vx > 0 else "moving-left"
        return "moving-down" if self.vy > 0 else "moving-up"


@dataclass(frozen=True)
class SceneSpec:
    """Objects are listed back to front; ``referent`` indexes into them."""

    objects: tuple
    referent: int
    seed: int = 0
    size: int = 64

    def __post_init__(self):
        if not 0 <= self.referent < len(self.objects):
            raise InputError(f"referent {self.referent} out of range for {len(self.objects)} objects")
        for k, o in enumerate(self.objects):
            if o.shape not in SHAPES or o.color not in COLORS:
                raise InputError(f"object {k}: unknown shape/color {o.shape}/{o.color}")
            if not (o.radius <= o.x <= self.size - o.radius and o.radius <= o.y <= self.size - o.radius):
                raise InputError(f"object {k} is not fully inside the canvas at frame 0")


@dataclass
class SyntheticClip:
    frames: np.ndarray  # [T, H, W, 3] uint8
    masks: np.ndarray  # [T, H, W] bool
    text: list  # tokens
    audio: np.ndarray  # float waveform
    scene: SceneSpec | None = None
    regenerations: int = 0
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------- rasterising

def rasterize(obj: ObjectSpec, t: int, size: int = 64) -> np.ndarray:
    """Pixels whose centres lie inside the shape at frame ``t``."""
    cx, cy = obj.center(t)
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    dx, dy, r = xs - cx, ys - cy, obj.radius
    if obj.shape == "circle":
        return dx * dx + dy * dy <= r * r
    if obj.shape == "square":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    # isosceles triangle, apex up: (0, -r), (-r, r), (r, r)
    return (dy <= r) & (2 * dx - dy <= r) & (-2 * dx - dy <= r)


def render(scene: SceneSpec, frames: int = 5, rng=None):
    """Frames [T, S, S, 3] uint8 and the referent's visible masks [T, S, S]."""
    s = scene.size
    rng = np.random.default_rng(scene.seed) if rng is None else rng
    images = np.empty((frames, s, s, 3), dtype=np.uint8)
    masks = np.zeros((frames, s, s), dtype=bool)
    for t in range(frames):
        img = np.empty((s, s, 3))
        img[:] = BACKGROUND
        visible = np.zeros((s, s), dtype=bool)
        for k, obj in enumerate(scene.objects):
            m = rasterize(obj, t, s)
            img[m] = PALETTE[obj.color]
            if k == scene.referent:
                visible = m
            else:
                visible &= ~m
        img += rng.normal(0, 4, img.shape)
        images[t] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        masks[t] = visible
    return images, masks


# ---------------------------------------------------------------- references

def _spatial_key(word: str, obj: ObjectSpec) -> float:
    # larger is "more" leftmost/rightmost/...
    return {"leftmost": -obj.x, "rightmost": obj.x, "topmost": -obj.y, "bottommost": obj.y}[word]


def resolve_reference(tokens, scene: SceneSpec) -> list[int]:
    """Indices of the objects satisfying every content word of ``tokens``.

    Colour, shape and motion words filter; a spatial word then keeps the
    strict extremum (frame 0 centre) among the survivors.  Other tokens are
    ignored.
    """
    words = list(tokens)
    cand = list(range(len(scene.objects)))
    for w in words:
        if w in COLORS:
            cand = [k for k in cand if scene.objects[k].color == w]
        elif w in SHAPES:
            cand = [k for k in cand if scene.objects[k].shape == w]
        elif w in MOTIONS:
            cand = [k for k in cand if scene.objects[k].motion == w]
    for w in words:
        if w in SPATIAL and cand:
            keys = [_spatial_key(w, scene.objects[k]) for k in cand]
            best = max(keys)
            cand = [k for k, v in zip(cand, keys) if v == best]
    return cand


def describe(scene: SceneSpec) -> list[str] | None:
    """Shortest ``color shape [motion] [spatial]`` phrase naming only the referent."""
    ref = scene.objects[scene.referent]
    base = [ref.color, ref.shape]
    options = [base, base + [ref.motion]]
    options += [base + [w] for w in SPATIAL]
    options += [base + [ref.motion, w] for w in SPATIAL]
    for words in options:
        if resolve_reference(words, scene) == [scene.referent]:
            return words
    return None


def tone_bins(tokens) -> list[int]:
    """STFT bins that carry each content word of a reference."""
    words = list(tokens)
    color = next(w for w in words if w in COLORS)
    shape = next(w for w in words if w in SHAPES)
    bins = [8 + 3 * (COLORS.index(color) * 3 + SHAPES.index(shape))]
    bins += [84 + 3 * MOTIONS.index(w) for w in words if w in MOTIONS]
    bins += [102 + 3 * SPATIAL.index(w) for w in words if w in SPATIAL]
    return bins


def synthesize_audio(tokens, rng, samples: int = 1280, snr_db: float = 10.0) -> np.ndarray:
    """Sum of unit sines at the words' bin-centre frequencies plus white noise."""
    t = np.arange(samples) / SAMPLE_RATE
    wave = np.zeros(samples)
    for b in tone_bins(tokens):
        freq = b * SAMPLE_RATE / AUDIO_WINDOW
        wave += np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    power = np.mean(wave ** 2)
    noise = rng.normal(0, math.sqrt(power / 10 ** (snr_db / 10)), samples)
    return wave + noise


# ---------------------------------------------------------------- scenes

def sample_scene(rng, size: int = 64, frames: int = 5, static: bool = False,
                 seed: int = 0) -> SceneSpec:
    n = int(rng.integers(2, 5))
    objects = []
    for _ in range(n):
        r = float(rng.uniform(6, 12))
        x = float(rng.uniform(r, size - r))
        y = float(rng.uniform(r, size - r))
        motion = "static" if static else MOTIONS[int(rng.integers(len(MOTIONS)))]
        speed = float(rng.uniform(1.0, 2.5))
        dx, dy = DIRECTIONS[motion]
        objects.append(ObjectSpec(SHAPES[int(rng.integers(3))], COLORS[int(rng.integers(8))],
                                  x, y, dx * speed, dy * speed, r))
    referent = int(rng.integers(n))
    if n > 1 and rng.random() < 0.35:
        # force a same-looking distractor so disambiguation words get used
        other = (referent + 1 + int(rng.integers(n - 1))) % n
        objects[other] = replace(objects[other], shape=objects[referent].shape,
                                 color=objects[referent].color)
    return SceneSpec(tuple(objects), referent, seed, size)


def generate_clip(spec: SceneSpec, frames: int = 5, snr_db: float = 10.0,
                  samples: int = 1280) -> SyntheticClip:
    """Render ``spec``; raises ContractError if the referent is never visible or unnameable."""
    words = describe(spec)
    if words is None:
        raise ContractError("referent cannot be singled out by any reference phrase")
    rng = np.random.default_rng([spec.seed, 1])
    images, masks = render(spec, frames, rng)
    if not masks.any():
        raise ContractError("referent is fully occluded in every frame")
    audio = synthesize_audio(words, rng, samples, snr_db)
    return SyntheticClip(images, masks, words, audio, spec)


def random_clip(seed: int, frames: int = 5, size: int = 64, static: bool = False,
                snr_db: float = 10.0, samples: int = 1280) -> SyntheticClip:
    """Sample scenes from ``seed`` until one yields a valid clip.

    Rejections (unnameable referent, referent hidden in every frame) are
    counted in ``clip.regenerations``.
    """
    rng = np.random.default_rng(seed)
    for attempt in range(MAX_REGENERATIONS):
        spec = sample_scene(rng, size, frames, static, seed=seed * 1000 + attempt)
        try:
            clip = generate_clip(spec, frames, snr_db, samples)
        except ContractError:
            continue
        clip.regenerations = attempt
        return clip
    raise ContractError(f"seed {seed}: no valid scene after {MAX_REGENERATIONS} attempts")


# ---------------------------------------------------------------- pseudo video

def _centered(h: np.ndarray, size_y: int, size_x: int) -> np.ndarray:
    c = np.array([[1, 0, size_x / 2], [0, 1, size_y / 2], [0, 0, 1]])
    ci = np.array([[1, 0, -size_x / 2], [0, 1, -size_y / 2], [0, 0, 1]])
    return c @ h @ ci


def random_homography(rng, shape, max_rotation: float = 10.0, max_translation: float = 0.05,
                      scale_range=(0.95, 1.05), perspective: float = 1e-3) -> np.ndarray:
    """Affine (about the image centre) composed with a mild perspective term."""
    h, w = shape[:2]
    a = math.radians(rng.uniform(-max_rotation, max_rotation))
    s = rng.uniform(*scale_range)
    tx = rng.uniform(-max_translation, max_translation) * w
    ty = rng.uniform(-max_translation, max_translation) * h
    px, py = rng.uniform(-perspective, perspective, 2) / max(h, w) * 64
    m = np.array([[s * math.cos(a), -s * math.sin(a), tx],
                  [s * math.sin(a), s * math.cos(a), ty],
                  [px, py, 1.0]])
    return _centered(m, h, w)


def warp(image, hom: np.ndarray, nearest: bool = False) -> np.ndarray:
    """out(p) = image(hom^-1 p) at pixel centres; outside samples read 0."""
    img = np.asarray(image)
    h, w = img.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w] + 0.5
    pts = np.stack([xs.ravel(), ys.ravel(), np.ones(h * w)])
    src = np.linalg.solve(hom, pts)
    sx, sy = src[0] / src[2] - 0.5, src[1] / src[2] - 0.5  # back to index space
    flat = img.reshape(h * w, -1).astype(np.float64)
    if nearest:
        ix, iy = np.floor(sx + 0.5).astype(int), np.floor(sy + 0.5).astype(int)
        ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        out = np.zeros_like(flat)
        out[ok] = flat[iy[ok] * w + ix[ok]]
    else:
        x0, y0 = np.floor(sx).astype(int), np.floor(sy).astype(int)
        fx, fy = sx - x0, sy - y0
        out = np.zeros_like(flat)
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dx, wx in ((0, 1 - fx), (1, fx)):
                xx, yy = x0 + dx, y0 + dy
                ok = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
                out[ok] += (wx * wy)[ok, None] * flat[yy[ok] * w + xx[ok]]
    out = out.reshape(img.shape)
    if np.issubdtype(img.dtype, np.integer):
        return np.clip(np.rint(out), 0, 255).astype(img.dtype)
    if img.dtype == bool:
        return out > 0.5
    return out.astype(img.dtype)


def pseudo_video(image, mask, frames: int = 5, seed: int = 0, **ranges):
    """Warp one annotated image into a clip; ``ranges`` go to :func:`random_homography`.

    A transform that leaves less than half of the mask inside the frame is
    resampled.
    """
    rng = np.random.default_rng(seed)
    mask = np.asarray(mask).astype(bool)
    area = np.count_nonzero(mask)
    imgs, masks = [], []
    for _ in range(frames):
        for _attempt in range(MAX_REGENERATIONS):
            hom = random_homography(rng, mask.shape, **ranges)
            m = warp(mask, hom, nearest=True)
            if np.count_nonzero(m) * 2 >= area:
                break
        else:
            raise ContractError("could not find a warp keeping half of the mask in frame")
        imgs.append(warp(image, hom))
        masks.append(m)
    return np.stack(imgs), np.stack(masks)


def pseudo_clip(seed: int, frames: int = 5, size: int = 64, snr_db: float = 10.0,
                samples: int = 1280) -> SyntheticClip:
    """A static scene turned into a clip by random warps."""
    still = random_clip(seed, 1, size, static=True, snr_db=snr_db, samples=samples)
    imgs, masks = pseudo_video(still.frames[0], still.masks[0], frames, seed)
    return SyntheticClip(imgs, masks, still.text, still.audio, still.scene,
                         still.regenerations, {"pseudo": True})


# ---------------------------------------------------------------- on-disk dataset

TRAIN_SEED_BASE = 0
VAL_SEED_BASE = 1_000_000


def clip_seed(data_seed: int, split: str, index: int) -> int:
    base = VAL_SEED_BASE if split == "val" else TRAIN_SEED_BASE
    return base + data_seed * 10_000 + index


def write_clip(clip: SyntheticClip, directory) -> None:
    d = Path(directory)
    (d / "frames").mkdir(parents=True, exist_ok=True)
    (d / "masks").mkdir(exist_ok=True)
    for t, (img, m) in enumerate(zip(clip.frames, clip.masks)):
        io.write_ppm(d / "frames" / f"{t:03d}.ppm", img)
        io.write_pgm(d / "masks" / f"{t:03d}.pgm", m.astype(np.uint8) * 255)
    (d / "ref.txt").write_text("text\n" + " ".join(clip.text) + "\n")
    io.write_audio(d / "audio.raw", clip.audio)
    lines = [f"seed={clip.scene.seed}", f"size={clip.scene.size}", f"referent={clip.scene.referent}",
             f"regenerations={clip.regenerations}", f"pseudo={int(bool(clip.extra.get('pseudo')))}"]
    for k, o in enumerate(clip.scene.objects):
        lines.append(f"object{k}={o.shape},{o.color},{o.x!r},{o.y!r},{o.vx!r},{o.vy!r},{o.radius!r}")
    (d / "scene.txt").write_text("\n".join(lines) + "\n")


@dataclass
class ClipData:
    """A clip as read back from disk."""

    name: str
    frames: np.ndarray
    masks: np.ndarray
    tokens: np.ndarray
    audio: np.ndarray | None

    def reference(self, modality: str):
        if modality == "text":
            return self.tokens
        if self.audio is None:
            raise InputError(f"clip {self.name} has no audio.raw")
        return self.audio


def read_scene(path) -> SceneSpec:
    fields = dict(line.split("=", 1) for line in Path(path).read_text().splitlines() if "=" in line)
    objs = []
    k = 0
    while f"object{k}" in fields:
        shape, color, *nums = fields[f"object{k}"].split(",")
        x, y, vx, vy, r = map(float, nums)
        objs.append(ObjectSpec(shape, color, x, y, vx, vy, r))
        k += 1
    return SceneSpec(tuple(objs), int(fields["referent"]), int(fields["seed"]),
                     int(fields.get("size", 64)))


def read_clip(directory, frames: int | None = None) -> ClipData:
    d = Path(directory)
    if not d.is_dir():
        raise InputError(f"clip directory {d} does not exist")
    frame_files = sorted((d / "frames").glob("*.ppm"))
    if not frame_files:
        raise InputError(f"{d}: no frames found")
    if frames is not None and len(frame_files) != frames:
        raise InputError(f"{d}: expected {frames} frames, found {len(frame_files)}")
    imgs = np.stack([io.read_netpbm(f) for f in frame_files])
    mask_files = [d / "masks" / (f.stem + ".pgm") for f in frame_files]
    if all(m.exists() for m in mask_files):
        masks = np.stack([io.read_netpbm(m) > 127 for m in mask_files])
    else:
        masks = None
    ref = (d / "ref.txt")
    if not ref.exists():
        raise InputError(f"{d}: missing ref.txt")
    lines = ref.read_text().splitlines()
    tokens = tokenize(lines[1].split()) if len(lines) > 1 else None
    audio = io.read_audio(d / "audio.raw") if (d / "audio.raw").exists() else None
    return ClipData(d.name, imgs, masks, tokens, audio)


def list_clips(root, split: str) -> list[Path]:
    d = Path(root) / split
    if not d.is_dir():
        raise InputError(f"dataset split {d} does not exist")
    clips = sorted(p for p in d.iterdir() if p.is_dir())
    if not clips:
        raise InputError(f"dataset split {d} is empty")
    return clips


def dataset_build(cfg, root=None, force: bool = False, log=print) -> dict:
    """Write the train and val splits; returns clip counts per split."""
    root = Path(root if root is not None else cfg["data.root"])
    if root.exists() and any(root.iterdir()) and not force:
        raise InputError(f"{root} exists and is not empty (use --force to overwrite)")
    frames, size = cfg["data.frames"], cfg["data.image_size"]
    snr, samples = cfg["data.snr_db"], cfg["audio.samples"]
    counts = {}
    for split, n in ((cfg["data.train_split"], cfg["data.n_train"]), (cfg["data.val_split"], cfg["data.n_val"])):
        kind = "val" if split == cfg["data.val_split"] else "train"
        n_pseudo = int(round(n * cfg["data.pseudo_fraction"])) if kind == "train" else 0
        out = root / split
        if out.exists():
            for old in out.iterdir():
                if old.is_dir():
                    shutil.rmtree(old)
        for i in range(n):
            seed = clip_seed(cfg["data.seed"], kind, i)
            if i >= n - n_pseudo:
                clip = pseudo_clip(seed, frames, size, snr, samples)
            else:
                clip = random_clip(seed, frames, size, snr_db=snr, samples=samples)
            if resolve_reference(clip.text, clip.scene) != [clip.scene.referent]:
                raise ContractError(f"{split}/{i}: reference does not resolve uniquely")
            if clip.regenerations:
                log(f"clip={split}/{i:04d} regenerations={clip.regenerations}")
            write_clip(clip, out / f"{i:04d}")
        counts[split] = n
    return counts

