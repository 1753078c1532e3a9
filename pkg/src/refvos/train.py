"""Training loop, evaluation and inference on an on-disk dataset."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from . import tensors as T
from .config import Config
from .datagen import ClipData, list_clips, read_clip
from .errors import ContractError, InputError
from .losses import GroundTruth, LossWeights, match, total_loss, upsample_logits
from .metrics import clip_scores
from .model import ReferringSegmenter, normalize_frames
from .optim import AdamW, clip_grad_norm, step_decay

OVERLAY_COLOR = np.array([255, 0, 0], dtype=np.float64)


def load_split(cfg: Config, split: str, root=None) -> list[ClipData]:
    root = root if root is not None else cfg["data.root"]
    return [read_clip(d, cfg["model.frames"]) for d in list_clips(root, split)]


def build_optimizer(model: ReferringSegmenter, cfg: Config) -> AdamW:
    scale = cfg["optim.lr_scale"]
    frozen = cfg["model.modality"] == "audio" and cfg["audio.frozen"]
    backbone, rest = [], []
    for name, p in model.named_parameters():
        if frozen and name.startswith("encoder."):
            continue
        (backbone if name.startswith("backbone.") else rest).append(p)
    return AdamW({"backbone": (backbone, cfg["optim.lr_backbone"] * scale),
                  "rest": (rest, cfg["optim.lr"] * scale)},
                 cfg["optim.weight_decay"], (cfg["optim.beta1"], cfg["optim.beta2"]))


def clip_loss(model: ReferringSegmenter, clip: ClipData, weights: LossWeights, modality: str):
    if clip.masks is None:
        raise InputError(f"clip {clip.name} has no ground-truth masks")
    pred = model(normalize_frames(clip.frames), clip.reference(modality))
    gts = [GroundTruth.from_masks(clip.masks)]
    assignment = match(pred, gts, weights)
    return total_loss(pred, gts, assignment, weights)


@dataclass
class TrainResult:
    steps: int
    history: list  # per-step breakdown dicts
    seconds: float


def total_steps(cfg: Config, n_clips: int) -> int:
    if cfg["train.max_steps"] > 0:
        return cfg["train.max_steps"]
    per_epoch = math.ceil(n_clips / cfg["train.batch_size"])
    return cfg["train.epochs"] * per_epoch


def train(model: ReferringSegmenter, clips: list[ClipData], cfg: Config, log=print,
          steps: int | None = None) -> TrainResult:
    """Optimise ``model`` in place; one step = batch_size x accumulate clips."""
    if not clips:
        raise InputError("no training clips")
    n_steps = total_steps(cfg, len(clips)) if steps is None else steps
    weights = LossWeights.from_config(cfg)
    modality = cfg["model.modality"]
    opt = build_optimizer(model, cfg)
    rng = np.random.default_rng(cfg["train.seed"])
    per_step = cfg["train.batch_size"] * cfg["train.accumulate"]
    order: list[int] = []
    history = []
    start = time.perf_counter()
    for step in range(1, n_steps + 1):
        factor = step_decay(step - 1, n_steps, cfg["train.epochs"], cfg["train.lr_drops"])
        opt.set_lr_factor(factor)
        opt.zero_grad()
        sums: dict[str, float] = {}
        for _ in range(per_step):
            if not order:
                order = list(rng.permutation(len(clips)))
            clip = clips[order.pop()]
            loss, parts = clip_loss(model, clip, weights, modality)
            T.backward(loss * (1.0 / per_step))
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v / per_step
        gnorm = clip_grad_norm(opt.parameters(), cfg["optim.clip_norm"])
        opt.step()
        history.append(sums)
        if cfg["train.log_every"] > 0 and (step % cfg["train.log_every"] == 0 or step == n_steps):
            terms = " ".join(f"{k}={v:.6g}" for k, v in sums.items())
            log(f"step={step} lr_factor={factor:g} {terms} grad_norm={gnorm:.4g} "
                f"elapsed={time.perf_counter() - start:.1f}")
    return TrainResult(n_steps, history, time.perf_counter() - start)


def predict_masks(model: ReferringSegmenter, clip: ClipData, modality: str) -> np.ndarray:
    """Full-resolution binary masks [T, H, W] of the highest-scoring query."""
    with T.no_grad():
        pred = model(normalize_frames(clip.frames), clip.reference(modality))
        q = pred.best_query()
        h, w = clip.frames.shape[1:3]
        logits = upsample_logits(pred.mask_logits[:, q], h, w)
    return logits.data > 0


def evaluate(model, clips: list[ClipData], cfg: Config, bypass: bool = False) -> dict:
    """Per-clip and mean J, F, J&F.  ``bypass`` scores the ground truth against itself."""
    ratio = cfg["eval.boundary_ratio"]
    rows = []
    for clip in clips:
        if clip.masks is None:
            raise InputError(f"clip {clip.name} has no ground-truth masks")
        pred = clip.masks if bypass else predict_masks(model, clip, cfg["model.modality"])
        rows.append((clip.name, *clip_scores(pred, clip.masks, ratio)))
    arr = np.array([r[1:] for r in rows])
    j, f = float(arr[:, 0].mean()), float(arr[:, 1].mean())
    return {"clips": rows, "J": j, "F": f, "JF": (j + f) / 2}


def format_report(report: dict) -> str:
    lines = [f"{'clip':<12} {'J':>7} {'F':>7} {'J&F':>7}"]
    for name, j, f, jf in report["clips"]:
        lines.append(f"{name:<12} {j:7.4f} {f:7.4f} {jf:7.4f}")
    lines.append(f"{'mean':<12} {report['J']:7.4f} {report['F']:7.4f} {report['JF']:7.4f}")
    for name, j, f, jf in report["clips"]:
        lines.append(f"clip={name} J={j:.6f} F={f:.6f} JF={jf:.6f}")
    lines.append(f"J={report['J']:.6f} F={report['F']:.6f} JF={report['JF']:.6f}")
    return "\n".join(lines)


def overlay(frame, mask, alpha: float = 0.5) -> np.ndarray:
    """Alpha-blend a solid colour over masked pixels; others are copied unchanged."""
    out = np.array(frame, dtype=np.uint8, copy=True)
    m = np.asarray(mask, dtype=bool)
    blended = (1 - alpha) * out[m].astype(np.float64) + alpha * OVERLAY_COLOR
    out[m] = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
    return out


def infer(model, clip_dir, out_dir, cfg: Config) -> list[Path]:
    clip = read_clip(clip_dir, cfg["model.frames"])
    masks = predict_masks(model, clip, cfg["model.modality"])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for t, (frame, m) in enumerate(zip(clip.frames, masks)):
        mp, op = out / f"mask_{t:03d}.pgm", out / f"overlay_{t:03d}.ppm"
        io.write_pgm(mp, m.astype(np.uint8) * 255)
        io.write_ppm(op, overlay(frame, m))
        written += [mp, op]
    return written


def save_model(model, path, cfg: Config) -> None:
    path = Path(path)
    io.save_checkpoint(path, model.state_dict())
    cfg.save(path.with_suffix(".cfg"))


def load_model(path, cfg: Config) -> ReferringSegmenter:
    model = ReferringSegmenter(cfg)
    state = io.load_checkpoint(path)
    try:
        model.load_state_dict(state)
    except ContractError as exc:
        raise ContractError(f"checkpoint {path} does not fit the config: {exc}") from None
    return model
