"""Region (J) and boundary (F) accuracy for binary masks, and their average."""

from __future__ import annotations

import math

import numpy as np

from .errors import InputError


def _pair(p, g):
    p = np.asarray(p).astype(bool)
    g = np.asarray(g).astype(bool)
    if p.shape != g.shape:
        raise InputError(f"mask shapes differ: {p.shape} vs {g.shape}")
    return p, g


def region_j(p, g) -> float:
    """Intersection over union; two empty masks score 1."""
    p, g = _pair(p, g)
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def boundary_map(mask) -> np.ndarray:
    """Foreground pixels with at least one 4-neighbour outside the mask.

    Pixels beyond the image border count as background, so a mask touching the
    border has its contour along the border.
    """
    m = np.pad(np.asarray(mask).astype(bool), 1)
    core = m[1:-1, 1:-1]
    interior = m[:-2, 1:-1] & m[2:, 1:-1] & m[1:-1, :-2] & m[1:-1, 2:]
    return core & ~interior


def dilate(mask, radius: int) -> np.ndarray:
    """Dilation by a (2r+1)x(2r+1) square, i.e. Chebyshev distance <= r."""
    out = np.asarray(mask).astype(bool)
    for axis in (0, 1):
        padded = np.pad(out, [(radius, radius) if a == axis else (0, 0) for a in (0, 1)])
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for k in range(2 * radius + 1):
            acc |= np.take(padded, np.arange(k, k + n), axis=axis)
        out = acc
    return out


def boundary_tolerance(shape, ratio: float = 0.008) -> int:
    h, w = shape[:2]
    return max(1, math.ceil(ratio * math.hypot(h, w)))


def boundary_f(p, g, tolerance: int | None = None, ratio: float = 0.008) -> float:
    """Contour F-measure with a Chebyshev matching radius of ``tolerance`` pixels."""
    p, g = _pair(p, g)
    if tolerance is None:
        tolerance = boundary_tolerance(p.shape, ratio)
    bp, bg = boundary_map(p), boundary_map(g)
    n_p, n_g = np.count_nonzero(bp), np.count_nonzero(bg)
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    precision = np.count_nonzero(bp & dilate(bg, tolerance)) / n_p
    recall = np.count_nonzero(bg & dilate(bp, tolerance)) / n_g
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def j_and_f(j_values, f_values) -> tuple[float, float, float]:
    j = np.asarray(j_values, dtype=np.float64)
    f = np.asarray(f_values, dtype=np.float64)
    if j.size == 0 or f.size == 0:
        raise InputError("need at least one frame to aggregate")
    if j.shape != f.shape:
        raise InputError(f"{j.size} J values but {f.size} F values")
    jm, fm = float(j.mean()), float(f.mean())
    return jm, fm, (jm + fm) / 2


def clip_scores(pred_masks, gt_masks, ratio: float = 0.008) -> tuple[float, float, float]:
    """Per-frame J and F over a [T, H, W] clip, aggregated."""
    js = [region_j(p, g) for p, g in zip(pred_masks, gt_masks)]
    fs = [boundary_f(p, g, ratio=ratio) for p, g in zip(pred_masks, gt_masks)]
    return j_and_f(js, fs)
