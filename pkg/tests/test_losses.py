import math

import numpy as np
import pytest

from refvos import tensors as T
from refvos.errors import ContractError, NumericalError
from refvos.heads import Prediction, SegHead
from refvos.losses import (
    GroundTruth, LossWeights, cost_matrix, dice_loss, downsample_mask, focal_loss, giou, iou,
    mask_to_box, match, total_loss, upsample_logits, upsample_matrix,
)
from refvos.selfcheck import raster_giou
from refvos.tensors import Tensor

pytestmark = pytest.mark.usefixtures("f64")


# ---- geometry ---------------------------------------------------------------

def test_giou_identical_is_one():
    b = np.array([0.4, 0.5, 0.2, 0.3])
    assert giou(b, b).item() == pytest.approx(1.0, abs=1e-5)  # 1e-7 guards in the denominators


def test_giou_far_apart_tends_to_minus_one():
    a = np.array([0.0, 0.0, 1.0, 1.0])
    b = np.array([1000.0, 1000.0, 1.0, 1.0])
    assert giou(a, b).item() < -0.999


def test_giou_quarter_overlap_hand_value():
    a = (0.25, 0.25, 0.5, 0.5)
    b = (0.75, 0.75, 0.5, 0.5)
    # both boxes are 0.5 x 0.5 and touch only at the corner point (0.5, 0.5)
    expect = 0 - (1 - 0.5) / 1
    assert giou(np.array(a), np.array(b)).item() == pytest.approx(expect, abs=1e-6)
    assert raster_giou(a, b) == pytest.approx(expect, abs=1e-3)


def test_giou_overlapping_hand_value():
    # 0.5-wide boxes offset by 0.25 in both axes: overlap 0.25^2, union 0.4375, hull 0.75^2
    a, b = (0.375, 0.375, 0.5, 0.5), (0.625, 0.625, 0.5, 0.5)
    expect = (0.0625 / 0.4375) - (0.5625 - 0.4375) / 0.5625
    assert giou(np.array(a), np.array(b)).item() == pytest.approx(expect, abs=1e-6)
    assert raster_giou(a, b) == pytest.approx(expect, abs=1e-3)


def test_giou_matches_raster_oracle_random(rng):
    # off-grid edges leave about 2e-3 of rasterisation error at 1000^2
    for _ in range(10):
        a = np.concatenate([rng.uniform(0.3, 0.7, 2), rng.uniform(0.2, 0.5, 2)])
        b = np.concatenate([rng.uniform(0.3, 0.7, 2), rng.uniform(0.2, 0.5, 2)])
        assert giou(a, b).item() == pytest.approx(raster_giou(a, b), abs=5e-3)


def test_giou_never_exceeds_iou(rng):
    a = np.concatenate([rng.uniform(0, 1, (200, 2)), rng.uniform(0, 0.6, (200, 2))], axis=1)
    b = np.concatenate([rng.uniform(0, 1, (200, 2)), rng.uniform(0, 0.6, (200, 2))], axis=1)
    assert np.all(giou(a, b).data <= iou(a, b) + 1e-12)


def test_giou_degenerate_box_finite():
    z = np.array([0.5, 0.5, 0.0, 0.0])
    val = giou(z, z).item()
    assert np.isfinite(val) and abs(val) < 1e-6


def test_mask_to_box_tight():
    m = np.zeros((10, 20), bool)
    m[2:5, 4:12] = True
    np.testing.assert_allclose(mask_to_box(m), [8 / 20, 3.5 / 10, 8 / 20, 3 / 10])
    assert np.all(mask_to_box(np.zeros((4, 4))) == 0)


def test_ground_truth_presence():
    masks = np.zeros((3, 8, 8))
    masks[0, 1:3, 1:3] = 1
    masks[2, 4:, 4:] = 1
    gt = GroundTruth.from_masks(masks)
    assert gt.present.tolist() == [True, False, True]
    assert np.all(gt.boxes[1] == 0)


# ---- focal / dice -----------------------------------------------------------

def test_focal_saturated_positive_is_zero():
    assert focal_loss(Tensor(np.array([50.0])), np.array([1.0])).item() < 1e-20


def test_focal_zero_logit_positive():
    expected = -0.25 * 0.5 ** 2 * math.log(0.5)
    assert expected == pytest.approx(0.043322, abs=1e-6)
    assert focal_loss(Tensor(np.array([0.0])), np.array([1.0])).item() == pytest.approx(expected, rel=1e-12)


def test_focal_degenerates_to_half_bce(rng):
    x = rng.normal(size=20) * 3
    y = (rng.random(20) > 0.5).astype(float)
    p = 1 / (1 + np.exp(-x))
    bce = -(y * np.log(p) + (1 - y) * np.log(1 - p)).mean()
    assert focal_loss(Tensor(x), y, alpha=0.5, gamma=0.0).item() == pytest.approx(0.5 * bce, rel=1e-10)


def test_focal_extreme_logits_finite():
    val = focal_loss(Tensor(np.array([-800.0, 800.0])), np.array([1.0, 0.0])).item()
    assert np.isfinite(val) and val > 100


def test_dice_examples():
    assert dice_loss(Tensor(np.full((2, 2), 60.0)), np.ones((2, 2))).item() == pytest.approx(0.0, abs=1e-12)
    assert dice_loss(Tensor(np.full((2, 2), 60.0)), np.zeros((2, 2))).item() == pytest.approx(0.8, abs=1e-12)
    assert dice_loss(Tensor(np.full((2, 2), -60.0)), np.zeros((2, 2))).item() < 1e-12


# ---- resampling -------------------------------------------------------------

def test_upsample_rows_sum_to_one():
    m = upsample_matrix(16, 64)
    np.testing.assert_allclose(m.sum(axis=1), 1.0)
    assert np.allclose(upsample_matrix(5, 5), np.eye(5))


def test_upsample_constant_and_identity(rng):
    c = Tensor(np.full((2, 4, 4), 3.0))
    np.testing.assert_allclose(upsample_logits(c, 16, 16).data, 3.0)
    x = Tensor(rng.normal(size=(4, 4)))
    assert upsample_logits(x, 4, 4) is x


def test_downsample_mask_majority():
    m = np.zeros((8, 8), bool)
    m[:4, :4] = True
    m[4:6, 4:8] = True  # half of each lower-right 4x4 block
    out = downsample_mask(m, 2, 2)
    assert out.tolist() == [[True, False], [False, True]]


# ---- matching ---------------------------------------------------------------

def _prediction(rng, t=2, n=5, h=4, w=4, cls=None, boxes=None, masks=None):
    cls = rng.normal(size=n) if cls is None else cls
    boxes = rng.uniform(0.2, 0.8, (t, n, 4)) if boxes is None else boxes
    masks = rng.normal(size=(t, n, h, w)) if masks is None else masks
    return Prediction(Tensor(cls), Tensor(boxes), Tensor(masks))


def _square_gt(t=2, size=16):
    masks = np.zeros((t, size, size))
    masks[:, 4:12, 6:14] = 1
    return GroundTruth.from_masks(masks)


def test_match_single_object_is_argmin(rng):
    w = LossWeights()
    for _ in range(10):
        pred = _prediction(rng)
        gt = _square_gt()
        cost = cost_matrix(pred, [gt], w)
        assert cost.shape == (1, 5)
        assert match(pred, [gt], w).tolist() == [int(np.argmin(cost[0]))]


def test_match_prefers_the_accurate_query(rng):
    gt = _square_gt()
    boxes = rng.uniform(0.1, 0.9, (2, 5, 4))
    boxes[:, 3] = gt.boxes
    masks = np.full((2, 5, 4, 4), -5.0)
    masks[:, 3] = np.where(downsample_mask(gt.masks, 4, 4), 5.0, -5.0)
    pred = _prediction(rng, cls=np.zeros(5), boxes=boxes, masks=masks)
    assert match(pred, [gt], LossWeights()).tolist() == [3]


def test_match_rejects_too_many_objects(rng):
    pred = _prediction(rng, n=1)
    with pytest.raises(ContractError):
        match(pred, [_square_gt(), _square_gt()], LossWeights())


def test_absent_object_costs_only_class(rng):
    pred = _prediction(rng)
    gt = GroundTruth.from_masks(np.zeros((2, 16, 16)))
    cost = cost_matrix(pred, [gt], LossWeights())
    p = 1 / (1 + np.exp(-pred.class_logits.data))
    np.testing.assert_allclose(cost[0], -2.0 * p)


# ---- total loss -------------------------------------------------------------

def test_perfect_prediction_near_zero():
    gt = _square_gt(t=3)
    n = 5
    cls = np.full(n, -50.0)
    cls[2] = 50.0
    boxes = np.full((3, n, 4), 0.5)
    boxes[:, 2] = gt.boxes
    masks = np.full((3, n, 16, 16), -50.0)
    masks[:, 2] = np.where(gt.masks, 50.0, -50.0)
    pred = _prediction(None, cls=cls, boxes=boxes, masks=masks)
    total, parts = total_loss(pred, [gt], [2], LossWeights())
    assert total.item() < 1e-3
    assert set(parts) == {"cls", "l1", "giou", "dice", "mask_focal", "total"}


def _closed_form_loss(cls, boxes, mask_logits, gt_masks, gt_box, q, eps=1e-7):
    """Scalar re-derivation of the loss with plain numpy, one term at a time."""
    def sig(x):
        return 1 / (1 + np.exp(-x))

    def focal(x, y):
        p = sig(x)
        pt = np.where(y == 1, p, 1 - p)
        at = np.where(y == 1, 0.25, 0.75)
        return np.mean(-at * (1 - pt) ** 2 * np.log(pt))

    y = np.zeros(len(cls))
    y[q] = 1
    l_cls = focal(cls, y)
    l1s, gs, ds, fs = [], [], [], []
    for t in range(len(gt_masks)):
        b = boxes[t, q]
        l1s.append(np.abs(b - gt_box).sum())
        ax0, ay0, ax1, ay1 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
        bx0, by0, bx1, by1 = (gt_box[0] - gt_box[2] / 2, gt_box[1] - gt_box[3] / 2,
                              gt_box[0] + gt_box[2] / 2, gt_box[1] + gt_box[3] / 2)
        inter = max(0, min(ax1, bx1) - max(ax0, bx0)) * max(0, min(ay1, by1) - max(ay0, by0))
        union = b[2] * b[3] + gt_box[2] * gt_box[3] - inter
        hull = (max(ax1, bx1) - min(ax0, bx0)) * (max(ay1, by1) - min(ay0, by0))
        gs.append(1 - (inter / (union + eps) - (hull - union) / (hull + eps)))
        p = sig(mask_logits[t, q])
        g = gt_masks[t]
        ds.append(1 - (2 * (p * g).sum() + 1) / (p.sum() + g.sum() + 1))
        fs.append(focal(mask_logits[t, q], g))
    return 2 * l_cls + 5 * np.mean(l1s) + 2 * np.mean(gs) + 5 * np.mean(ds) + 2 * np.mean(fs)


def test_zero_prediction_matches_closed_form():
    masks = np.zeros((2, 4, 4))
    masks[:, 1:3, 0:2] = 1
    gt = GroundTruth.from_masks(masks)
    n = 3
    pred = _prediction(None, cls=np.zeros(n), boxes=np.full((2, n, 4), 0.5), masks=np.zeros((2, n, 4, 4)))
    total, _ = total_loss(pred, [gt], [1], LossWeights())
    ref = _closed_form_loss(np.zeros(n), np.full((2, n, 4), 0.5), np.zeros((2, n, 4, 4)),
                            masks, gt.boxes[0], 1)
    assert total.item() == pytest.approx(ref, rel=1e-10)


def test_random_prediction_matches_closed_form(rng):
    masks = np.zeros((2, 4, 4))
    masks[:, 1:4, 1:3] = 1
    gt = GroundTruth.from_masks(masks)
    cls, boxes, logits = rng.normal(size=4), rng.uniform(0.2, 0.8, (2, 4, 4)), rng.normal(size=(2, 4, 4, 4))
    total, _ = total_loss(_prediction(None, cls=cls, boxes=boxes, masks=logits), [gt], [0], LossWeights())
    assert total.item() == pytest.approx(_closed_form_loss(cls, boxes, logits, masks, gt.boxes[0], 0), rel=1e-10)


def test_doubling_weights_doubles_loss(rng):
    pred = _prediction(rng, h=16, w=16)
    gt = _square_gt()
    a, _ = total_loss(pred, [gt], [0], LossWeights())
    b, _ = total_loss(pred, [gt], [0], LossWeights().scaled(2))
    assert b.item() == pytest.approx(2 * a.item(), rel=1e-12)


def test_unmatched_query_permutation_invariance(rng):
    pred = _prediction(rng, h=16, w=16)
    gt = _square_gt()
    w = LossWeights()
    q = int(match(pred, [gt], w)[0])
    base, _ = total_loss(pred, [gt], [q], w)
    others = [i for i in range(5) if i != q]
    perm = list(range(5))
    for i, j in zip(others, others[::-1]):
        perm[i] = j
    shuffled = Prediction(Tensor(pred.class_logits.data[perm]), Tensor(pred.boxes.data[:, perm]),
                          Tensor(pred.mask_logits.data[:, perm]))
    assert int(match(shuffled, [gt], w)[0]) == q
    again, _ = total_loss(shuffled, [gt], [q], w)
    assert again.item() == pytest.approx(base.item(), rel=1e-12)


def test_absent_frames_skip_box_and_mask_terms(rng):
    masks = np.zeros((3, 16, 16))
    masks[0, 2:6, 2:6] = 1
    pred = _prediction(rng, t=3, h=16, w=16)
    full, _ = total_loss(pred, [GroundTruth.from_masks(masks)], [0], LossWeights())
    one, _ = total_loss(Prediction(pred.class_logits, Tensor(pred.boxes.data[:1]),
                                   Tensor(pred.mask_logits.data[:1])),
                        [GroundTruth.from_masks(masks[:1])], [0], LossWeights())
    assert full.item() == pytest.approx(one.item(), rel=1e-12)


def test_nan_names_the_term(rng):
    pred = _prediction(rng, h=16, w=16)
    pred.boxes.data[0, 0, 0] = np.nan
    with pytest.raises(NumericalError, match="l1|giou"):
        total_loss(pred, [_square_gt()], [0], LossWeights())


# ---- head -------------------------------------------------------------------

def test_head_shapes(rng):
    head = SegHead(np.random.default_rng(0), dim=32)
    out = head(Tensor(rng.normal(size=(5, 5, 32))), Tensor(rng.normal(size=(5, 32))),
               Tensor(rng.normal(size=(5, 16, 16, 32))))
    assert out.class_logits.shape == (5,)
    assert out.boxes.shape == (5, 5, 4) and np.all((out.boxes.data > 0) & (out.boxes.data < 1))
    assert out.mask_logits.shape == (5, 5, 16, 16)


def test_head_zero_query_gives_centre_boxes(rng):
    head = SegHead(np.random.default_rng(0), dim=16)
    for lin in head.box:
        lin.bias.data[...] = 0
    head.mask.bias.data[...] = 0
    out = head(Tensor(np.zeros((2, 3, 16))), Tensor(np.zeros((3, 16))), Tensor(rng.normal(size=(2, 4, 4, 16))))
    np.testing.assert_allclose(out.boxes.data, 0.5)
    np.testing.assert_allclose(out.mask_logits.data, 0.0)


def test_head_mask_bilinear_in_pixel_map(rng):
    head = SegHead(np.random.default_rng(0), dim=16)
    p, q, pix = rng.normal(size=(2, 3, 16)), rng.normal(size=(3, 16)), rng.normal(size=(2, 4, 4, 16))
    a = head(Tensor(p), Tensor(q), Tensor(pix)).mask_logits.data
    b = head(Tensor(p), Tensor(q), Tensor(2 * pix)).mask_logits.data
    np.testing.assert_allclose(b, 2 * a, rtol=1e-12)


def test_head_prior_bias():
    head = SegHead(np.random.default_rng(0), dim=8)
    out = head(Tensor(np.zeros((1, 2, 8))), Tensor(np.zeros((2, 8))), Tensor(np.zeros((1, 2, 2, 8))))
    np.testing.assert_allclose(1 / (1 + np.exp(-out.class_logits.data)), 0.01, rtol=1e-9)


def test_loss_gradient_reaches_head(rng):
    head = SegHead(np.random.default_rng(0), dim=8)
    pred = head(Tensor(rng.normal(size=(2, 3, 8))), Tensor(rng.normal(size=(3, 8))),
                Tensor(rng.normal(size=(2, 4, 4, 8))))
    masks = np.zeros((2, 16, 16))
    masks[:, 3:9, 2:7] = 1
    total, _ = total_loss(pred, [GroundTruth.from_masks(masks)], [1], LossWeights())
    T.backward(total)
    for name, p in head.named_parameters():
        assert p.grad is not None and np.all(np.isfinite(p.grad)), name
