"""How a prediction gets supervised.

Builds a hand-made prediction with three candidate queries, shows the matching
cost of each against the ground truth and the loss breakdown for the winner.
"""

import numpy as np

from refvos import tensors as T
from refvos.heads import Prediction
from refvos.losses import GroundTruth, LossWeights, cost_matrix, giou, match, total_loss

T.set_precision(64)
frames, size = 3, 16
gt_masks = np.zeros((frames, size, size), bool)
for t in range(frames):
    gt_masks[t, 4:10, 2 + 2 * t:8 + 2 * t] = True  # a 6x6 square moving right
gt = GroundTruth.from_masks(gt_masks)


def logits_for(masks, confidence):
    return np.where(masks, confidence, -confidence)


shifted = np.roll(gt_masks, 5, axis=2)
mask_logits = np.stack([logits_for(gt_masks, 4.0),   # right place, confident
                        logits_for(shifted, 4.0),    # wrong place
                        logits_for(gt_masks, 0.5)],  # right place, hesitant
                       axis=1)
boxes = np.stack([gt.boxes, np.roll(gt.boxes, 1, axis=1), gt.boxes], axis=1)
pred = Prediction(T.Tensor(np.array([1.0, 3.0, -1.0])), T.Tensor(np.clip(boxes, 0.01, 0.99)),
                  T.Tensor(mask_logits))

weights = LossWeights()
print("matching cost per query:", np.round(cost_matrix(pred, [gt], weights)[0], 3))
assignment = match(pred, [gt], weights)
print("matched query:", int(assignment[0]))
loss, parts = total_loss(pred, [gt], assignment, weights)
print("loss terms:", {k: round(v, 4) for k, v in parts.items()})

# GIoU keeps a useful signal even when boxes do not overlap.
a = np.array([0.3, 0.5, 0.2, 0.2])
for dx in (0.0, 0.1, 0.2, 0.4):
    b = a + np.array([dx, 0, 0, 0])
    print(f"box shifted by {dx:.1f}: GIoU={giou(a, b).item():+.3f}")
