"""
Losses and the evaluation suite
===============================

Training combines BCE with a smoothed soft-IoU term at every decoder
level, plus BCE on erosion-derived boundaries.  Evaluation reports the
standard saliency bundle: PR curve, maxF/mF, weighted F, MAE, structure
measure and enhanced-alignment measure.
"""

import numpy as np

from cracenet import (
    Tensor,
    bce_loss,
    evaluate_pairs,
    f_beta,
    iou_loss,
    make_edge_gt,
    pr_curve,
    total_loss_rgb,
)

rng = np.random.default_rng(3)

# %%
# The pixel losses at a glance.  Ground truth is a filled disk.

yy, xx = np.mgrid[:32, :32]
gt = (((yy - 14.0) ** 2 + (xx - 18.0) ** 2) <= 81.0).astype(float)
uniform = Tensor(np.full((32, 32), 0.5))
print("BCE at P=0.5 everywhere:", bce_loss(uniform, gt).item(), "= ln 2")
print("IoU loss, empty prediction:", iou_loss(Tensor(np.zeros((32, 32))), np.ones((32, 32))).item())
print("IoU loss, perfect prediction:", iou_loss(Tensor(gt), gt).item())
print("combined total at L_S=0.8, L_E=0.4:", total_loss_rgb(Tensor(0.8), Tensor(0.4)).item())

# %%
# A noisy-but-decent prediction and its scorecard.

pred = np.clip(gt * 0.85 + rng.normal(0.08, 0.1, gt.shape), 0, 1)
report = evaluate_pairs([pred], [gt])
for key, value in report.as_dict().items():
    print(f"{key:>5s}: {value:.4f}")

# %%
# maxF picks the best of 256 binarization thresholds; the fixed point of
# the F-measure is precision = recall.

precision, recall = pr_curve([pred], [gt])
curve = f_beta(precision, recall)
best = int(np.argmax(curve))
print(f"best threshold index {best} -> F {curve[best]:.4f} "
      f"(P {precision[best]:.4f}, R {recall[best]:.4f})")
print("F at P=R=0.9:", f_beta(0.9, 0.9))

# %%
# Boundary supervision targets come straight from the ground truth.

edge = make_edge_gt(gt, radius=1)
print("boundary pixels:", int(edge.sum()), "of", int(gt.sum()), "foreground")
