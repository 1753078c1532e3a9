"""Analytic gradients against central finite differences.

Every differentiable primitive in ``refvos.tensors`` is checked in 64-bit
precision, then the whole micro model (under 2000 parameters) is checked on a
few representative parameters.
"""

import numpy as np

from refvos import selfcheck
from refvos import tensors as T
from refvos.losses import GroundTruth, LossWeights, match, total_loss
from refvos.model import ReferringSegmenter, micro_config, normalize_frames

with T.precision(64):
    print("per-op relative errors")
    for name, (f, inputs) in selfcheck.op_cases(np.random.default_rng(0)).items():
        print(f"  {name:<13} {T.gradcheck(f, inputs):.1e}")

    model = ReferringSegmenter(micro_config(), 0)
    print("micro model parameters:", sum(p.data.size for p in model.parameters()))
    rng = np.random.default_rng(1)
    frames = normalize_frames(rng.integers(0, 256, (2, 8, 8, 3)))
    gt_masks = np.zeros((2, 8, 8), bool)
    gt_masks[0, 2:5, 3:6] = gt_masks[1, 3:6, 3:6] = True  # a square drifting down
    gt = GroundTruth.from_masks(gt_masks)
    tokens = np.array([3, 7, 9])
    weights = LossWeights()
    assignment = match(model(frames, tokens), [gt], weights)

    def loss():
        return total_loss(model(frames, tokens), [gt], assignment, weights)[0]

    params = dict(model.named_parameters())
    for name in ("head.cls.weight", "mti.video_queries", "backbone.stem1.kernel"):
        err = T.gradcheck(loss, [params[name]], eps=1e-7, floor=1e-6)
        print(f"  {name:<24} {err:.1e}")
