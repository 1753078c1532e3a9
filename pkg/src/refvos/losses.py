"""Box geometry, focal/dice/GIoU losses, matching costs and the total loss."""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import tensors as T
from .errors import ContractError, NumericalError
from .heads import Prediction
from .matching import hungarian
from .tensors import Tensor

EPS = 1e-7


@dataclass
class LossWeights:
    cls: float = 2.0
    l1: float = 5.0
    giou: float = 2.0
    dice: float = 5.0
    focal: float = 2.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    @classmethod
    def from_config(cls, cfg) -> "LossWeights":
        return cls(cfg["loss.cls"], cfg["loss.l1"], cfg["loss.giou"], cfg["loss.dice"],
                   cfg["loss.focal"], cfg["loss.focal_alpha"], cfg["loss.focal_gamma"])

    def scaled(self, k: float) -> "LossWeights":
        return LossWeights(self.cls * k, self.l1 * k, self.giou * k, self.dice * k,
                           self.focal * k, self.focal_alpha, self.focal_gamma)


def mask_to_box(mask) -> np.ndarray:
    """Tight (cx, cy, w, h) of a binary [H, W] mask, normalised by the extents."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return np.zeros(4)
    x0, x1 = xs.min(), xs.max() + 1
    y0, y1 = ys.min(), ys.max() + 1
    return np.array([(x0 + x1) / 2 / w, (y0 + y1) / 2 / h, (x1 - x0) / w, (y1 - y0) / h])


@dataclass
class GroundTruth:
    """One referred object over a clip: masks [T, H, W], derived boxes and presence."""

    masks: np.ndarray
    boxes: np.ndarray
    present: np.ndarray

    @classmethod
    def from_masks(cls, masks) -> "GroundTruth":
        masks = np.asarray(masks) > 0
        boxes = np.stack([mask_to_box(m) for m in masks])
        return cls(masks, boxes, masks.reshape(len(masks), -1).any(axis=1))


def _xyxy(b):
    cx, cy, w, h = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h


def giou(a, b) -> Tensor:
    """Generalised IoU of (cx, cy, w, h) boxes, elementwise over leading axes."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    ax0, ay0, ax1, ay1 = _xyxy(a)
    bx0, by0, bx1, by1 = _xyxy(b)
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    iw = T.relu(T.minimum(ax1, bx1) - T.maximum(ax0, bx0))
    ih = T.relu(T.minimum(ay1, by1) - T.maximum(ay0, by0))
    inter = iw * ih
    union = area_a + area_b - inter
    iou = inter / (union + EPS)
    cw = T.maximum(ax1, bx1) - T.minimum(ax0, bx0)
    ch = T.maximum(ay1, by1) - T.minimum(ay0, by0)
    enclose = cw * ch
    return iou - (enclose - union) / (enclose + EPS)


def iou(a, b) -> np.ndarray:
    """Plain IoU on arrays, for reference and tests."""
    ax0, ay0, ax1, ay1 = _xyxy(np.asarray(a, float))
    bx0, by0, bx1, by1 = _xyxy(np.asarray(b, float))
    iw = np.clip(np.minimum(ax1, bx1) - np.maximum(ax0, bx0), 0, None)
    ih = np.clip(np.minimum(ay1, by1) - np.maximum(ay0, by0), 0, None)
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / (union + EPS)


def focal_elementwise(logits, targets, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    logits = T.as_tensor(logits)
    y = np.asarray(targets, dtype=logits.data.dtype)
    p = T.sigmoid(logits)
    ce = T.softplus(logits) - logits * y  # -log p_t, stable for large |logit|
    p_t = p * y + (1 - p) * (1 - y)
    alpha_t = alpha * y + (1 - alpha) * (1 - y)
    if gamma == 0:
        return ce * alpha_t
    return T.power(1 - p_t, gamma) * ce * alpha_t


def focal_loss(logits, targets, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Sigmoid focal loss, averaged over all elements."""
    return T.mean(focal_elementwise(logits, targets, alpha, gamma))


def dice_per_mask(mask_logits, gt) -> Tensor:
    """Soft Dice loss with +1 smoothing for each [..., H, W] mask."""
    p = T.sigmoid(mask_logits)
    g = np.asarray(gt, dtype=p.data.dtype)
    inter = T.sum_(p * g, axis=(-2, -1))
    return 1 - (2 * inter + 1) / (T.sum_(p, axis=(-2, -1)) + g.sum(axis=(-2, -1)) + 1)


def dice_loss(mask_logits, gt) -> Tensor:
    return T.mean(dice_per_mask(mask_logits, gt))


def upsample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """[n_out, n_in] bilinear interpolation weights (half-pixel centres, edge clamp)."""
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m


def upsample_logits(mask_logits, height: int, width: int):
    """Bilinear resize of [..., h, w] logits to [..., height, width]."""
    ml = T.as_tensor(mask_logits)
    h, w = ml.shape[-2:]
    if (h, w) == (height, width):
        return ml
    dt = ml.data.dtype
    rows = T.Tensor(upsample_matrix(h, height).astype(dt))
    cols = T.Tensor(upsample_matrix(w, width).T.astype(dt))
    return T.matmul(T.matmul(rows, ml), cols)


def downsample_mask(mask, h: int, w: int) -> np.ndarray:
    """Area-average a binary [..., H, W] mask to [..., h, w] and re-binarise at 0.5."""
    mask = np.asarray(mask, dtype=np.float64)
    big_h, big_w = mask.shape[-2:]
    fy, fx = big_h // h, big_w // w
    pooled = mask.reshape(mask.shape[:-2] + (h, fy, w, fx)).mean(axis=(-3, -1))
    return pooled >= 0.5


def _sigmoid(x):
    return 0.5 * (1 + np.tanh(0.5 * x))


def cost_matrix(pred: Prediction, gts, weights: LossWeights) -> np.ndarray:
    """[K, N] matching cost; evaluated without gradient tracking."""
    with T.no_grad():
        n = pred.num_queries
        cls_prob = _sigmoid(pred.class_logits.data.astype(np.float64))
        h, w = pred.mask_logits.shape[-2:]
        cost = np.zeros((len(gts), n))
        for k, gt in enumerate(gts):
            cost[k] = -weights.cls * cls_prob
            frames = np.nonzero(gt.present)[0]
            if frames.size == 0:
                continue
            small = downsample_mask(gt.masks[frames], h, w)
            for q in range(n):
                boxes = pred.boxes.data[frames, q].astype(np.float64)
                l1 = np.abs(boxes - gt.boxes[frames]).sum(axis=-1)
                g = giou(T.Tensor(boxes), T.Tensor(gt.boxes[frames])).data
                logits = T.Tensor(pred.mask_logits.data[frames, q])
                dice = dice_per_mask(logits, small).data
                focal = focal_elementwise(logits, small, weights.focal_alpha,
                                          weights.focal_gamma).data.mean(axis=(-2, -1))
                cost[k, q] += np.sum(weights.l1 * l1 + weights.giou * (1 - g)
                                     + weights.dice * dice + weights.focal * focal)
    return cost


def match(pred: Prediction, gts, weights: LossWeights) -> np.ndarray:
    """Query index assigned to each ground-truth object (minimum total cost)."""
    if len(gts) > pred.num_queries:
        raise ContractError(f"{len(gts)} objects but only {pred.num_queries} queries")
    return hungarian(cost_matrix(pred, gts, weights))


@contextmanager
def _term(name: str):
    try:
        yield
    except NumericalError as exc:
        raise NumericalError(f"non-finite value in loss term {name}: {exc}") from exc


def total_loss(pred: Prediction, gts, assignment, weights: LossWeights):
    """Weighted sum of class focal, box L1 + GIoU and mask Dice + focal terms.

    Box and mask terms average over the frames where the object is visible and
    over matched objects.  Returns the scalar loss and a dict of plain floats.
    """
    n = pred.num_queries
    dt = pred.class_logits.data.dtype
    targets = np.zeros(n, dtype=dt)
    targets[np.asarray(assignment)] = 1
    with _term("cls"):
        l_cls = focal_loss(pred.class_logits, targets, weights.focal_alpha, weights.focal_gamma)
    l1_terms, giou_terms, dice_terms, focal_terms = [], [], [], []
    for gt, q in zip(gts, assignment):
        frames = np.nonzero(gt.present)[0]
        if frames.size == 0:
            continue
        target_boxes = gt.boxes[frames].astype(dt)
        with _term("l1"):
            boxes = pred.boxes[frames, int(q)]
            l1_terms.append(T.mean(T.sum_(T.abs_(boxes - target_boxes), -1)))
        with _term("giou"):
            giou_terms.append(T.mean(1 - giou(boxes, target_boxes)))
        big_h, big_w = gt.masks.shape[-2:]
        target = gt.masks[frames]
        with _term("dice"):
            logits = upsample_logits(pred.mask_logits[frames, int(q)], big_h, big_w)
            dice_terms.append(dice_loss(logits, target))
        with _term("mask_focal"):
            focal_terms.append(focal_loss(logits, target, weights.focal_alpha, weights.focal_gamma))

    def avg(terms):
        if not terms:
            return None
        return terms[0] if len(terms) == 1 else T.mean(T.stack(terms))

    parts = {"cls": l_cls, "l1": avg(l1_terms), "giou": avg(giou_terms),
             "dice": avg(dice_terms), "mask_focal": avg(focal_terms)}
    lam = {"cls": weights.cls, "l1": weights.l1, "giou": weights.giou,
           "dice": weights.dice, "mask_focal": weights.focal}
    total = None
    for key, term in parts.items():
        if term is None:
            continue
        total = term * lam[key] if total is None else total + term * lam[key]
    breakdown = {k: (v.item() if v is not None else 0.0) for k, v in parts.items()}
    breakdown["total"] = total.item()
    for key, val in breakdown.items():
        if not np.isfinite(val):
            raise NumericalError(f"loss term {key} is {val}")
    return total, breakdown
