"""Fast gradient and oracle checks, runnable from the command line.

Each check returns ``(name, ok, detail)``.  The brute-force oracles here are
deliberately naive so they share no code with the implementations they check.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import tensors as T
from .losses import giou
from .matching import hungarian
from .metrics import boundary_f, boundary_map, region_j


def brute_force_boundary_f(p, g, tolerance: int) -> float:
    """All-pairs Chebyshev distances between contour pixels."""
    bp = np.argwhere(boundary_map(p))
    bg = np.argwhere(boundary_map(g))
    if len(bp) == 0 and len(bg) == 0:
        return 1.0
    if len(bp) == 0 or len(bg) == 0:
        return 0.0
    d = np.abs(bp[:, None, :] - bg[None, :, :]).max(axis=-1)
    precision = np.mean(d.min(axis=1) <= tolerance)
    recall = np.mean(d.min(axis=0) <= tolerance)
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def pixel_count_j(p, g) -> float:
    inter = union = 0
    for a, b in zip(np.ravel(p), np.ravel(g)):
        inter += bool(a) and bool(b)
        union += bool(a) or bool(b)
    return 1.0 if union == 0 else inter / union


def raster_giou(a, b, res: int = 1000) -> float:
    """GIoU of (cx, cy, w, h) boxes in the unit square from a res x res pixel grid."""
    c = (np.arange(res) + 0.5) / res
    xs, ys = np.meshgrid(c, c)

    def inside(box):
        cx, cy, w, h = box
        return (np.abs(xs - cx) <= w / 2) & (np.abs(ys - cy) <= h / 2)

    ma, mb = inside(a), inside(b)
    inter = np.count_nonzero(ma & mb)
    union = np.count_nonzero(ma | mb)
    x0 = min(a[0] - a[2] / 2, b[0] - b[2] / 2)
    x1 = max(a[0] + a[2] / 2, b[0] + b[2] / 2)
    y0 = min(a[1] - a[3] / 2, b[1] - b[3] / 2)
    y1 = max(a[1] + a[3] / 2, b[1] + b[3] / 2)
    hull = np.count_nonzero((xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1))
    return inter / union - (hull - union) / hull


def brute_force_cost(cost) -> float:
    cost = np.asarray(cost)
    k, n = cost.shape
    return min(cost[np.arange(k), list(perm)].sum() for perm in itertools.permutations(range(n), k))


def _away_from_zero(rng, shape):
    # keeps kinked ops (abs, relu, max, clip) away from their non-differentiable points
    return rng.choice([-1.0, 1.0], shape) * rng.uniform(0.2, 1.2, shape)


def op_cases(rng) -> dict:
    """name -> (scalar function, inputs) for every differentiable tensor op."""
    def leaf(shape, positive=False):
        data = rng.uniform(0.5, 2.0, shape) if positive else _away_from_zero(rng, shape)
        return T.Tensor(data, requires_grad=True)

    x, y, z = leaf((3, 4)), leaf((4, 5)), leaf((3, 4))
    pos = leaf((3, 4), positive=True)
    row = leaf((4,))
    g, b = T.Tensor(1 + rng.random(4), requires_grad=True), leaf((4,))
    img, ker, kb = leaf((6, 6, 2)), leaf((3, 3, 2, 3)), leaf((3,))
    bx = leaf((2, 3, 4))
    emb = leaf((7, 3))
    mask = np.where(rng.random((3, 3)) < 0.3, -1e9, 0.0)
    np.fill_diagonal(mask, 0.0)
    weights = T.Tensor(rng.normal(size=(3, 4)))
    gap = T.Tensor(np.where(np.abs(x.data - z.data) < 0.1, 0.5, 0.0))

    def s(t):
        # a generic scalarisation so every output element gets a distinct weight
        w = np.linspace(0.5, 1.5, t.data.size).reshape(t.shape)
        return T.sum_(t * T.Tensor(w))

    return {
        "add": (lambda: s(x + row), [x, row]),
        "sub": (lambda: s(x - z), [x, z]),
        "mul": (lambda: s(x * z), [x, z]),
        "div": (lambda: s(x / pos), [x, pos]),
        "neg": (lambda: s(-x), [x]),
        "power": (lambda: s(T.power(pos, 2.5)), [pos]),
        "exp": (lambda: s(T.exp(x)), [x]),
        "log": (lambda: s(T.log(pos)), [pos]),
        "abs": (lambda: s(T.abs_(x)), [x]),
        "relu": (lambda: s(T.relu(x)), [x]),
        "sigmoid": (lambda: s(T.sigmoid(x)), [x]),
        "tanh": (lambda: s(T.tanh(x)), [x]),
        "gelu": (lambda: s(T.gelu(x)), [x]),
        "softplus": (lambda: s(T.softplus(x)), [x]),
        "maximum": (lambda: s(T.maximum(x, z + gap)), [x, z]),
        "minimum": (lambda: s(T.minimum(x, z + gap)), [x, z]),
        "clip": (lambda: s(T.clip(x, -0.7, 0.7)), [x]),
        "sum": (lambda: s(T.sum_(bx, axis=1)) + T.sum_(bx) ** 2, [bx]),
        "mean": (lambda: s(T.mean(bx, axis=(0, 2), keepdims=True)), [bx]),
        "reshape": (lambda: s(T.reshape(x, (2, 6))), [x]),
        "transpose": (lambda: s(T.transpose(bx, (2, 0, 1))), [bx]),
        "getitem": (lambda: s(bx[1, ::2]) + s(bx[np.array([0, 0, 1]), 1]), [bx]),
        "concat": (lambda: s(T.concat([x, z], axis=1)), [x, z]),
        "stack": (lambda: s(T.stack([x, z], axis=0)), [x, z]),
        "broadcast_to": (lambda: s(T.broadcast_to(row, (3, 4))), [row]),
        "embedding": (lambda: s(T.embedding(emb, np.array([1, 4, 1, 6]))), [emb]),
        "matmul": (lambda: s(T.matmul(x, y)) + s(T.matmul(bx, y)), [x, y, bx]),
        "softmax": (lambda: T.sum_(T.softmax(x) * weights), [x]),
        "layer_norm": (lambda: s(T.layer_norm(x, g, b)) + T.sum_(T.layer_norm(x, g, b) ** 3), [x, g, b]),
        "conv2d": (lambda: s(T.conv2d(img, ker, kb, stride=2, padding=1)), [img, ker, kb]),
        "upsample2x": (lambda: s(T.upsample2x(img)), [img]),
        "attention": (lambda: s(T.multi_head_attention(x, z, pos, 2, mask=mask)), [x, z, pos]),
    }


def _op_gradients(rng):
    out = []
    for name, (f, inputs) in op_cases(rng).items():
        err = T.gradcheck(f, inputs)
        out.append((f"grad {name}", err < 1e-4, f"rel_err={err:.2e}"))
    return out


def run(seed: int = 0, trials: int = 200) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(seed)
    results = []
    with T.precision(64):
        results += _op_gradients(rng)
    worst = 0.0
    for _ in range(trials):
        k = int(rng.integers(1, 6))
        n = int(rng.integers(k, 6))
        c = rng.random((k, n))
        worst = max(worst, abs(c[np.arange(k), hungarian(c)].sum() - brute_force_cost(c)))
    results.append(("hungarian vs brute force", worst < 1e-12, f"max_gap={worst:.1e}"))
    ok_j = ok_f = True
    for _ in range(trials):
        p, q = rng.random((8, 8)) < 0.4, rng.random((8, 8)) < 0.4
        ok_j &= region_j(p, q) == pixel_count_j(p, q)
        ok_f &= boundary_f(p, q, 1) == brute_force_boundary_f(p, q, 1)
    results.append(("region_j vs pixel count", bool(ok_j), f"{trials} pairs"))
    results.append(("boundary_f vs all-pairs", bool(ok_f), f"{trials} pairs"))
    a, b = (0.25, 0.25, 0.5, 0.5), (0.75, 0.75, 0.5, 0.5)
    gap = abs(giou(np.array(a), np.array(b)).item() - raster_giou(a, b, 400))
    results.append(("giou vs raster", gap < 1e-2, f"gap={gap:.1e}"))
    return results
