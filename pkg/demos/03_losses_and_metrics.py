"""
Cross-entropy, Lovász-Softmax and mIoU
======================================

Training minimises cross-entropy plus the Lovász-Softmax loss, a convex
surrogate of 1 - IoU. At one-hot predictions the surrogate equals the
IoU loss exactly, which this script checks on a small example before
showing how the confusion matrix turns predictions into mIoU.
"""
import numpy as np

from pointplane.autodiff import Tensor, softmax_rows
from pointplane.losses import LossConfig, cross_entropy, lovasz_softmax, total_loss
from pointplane.metrics import ConfusionMatrix

cfg = LossConfig(ignore_index=-1)

# Five points, two classes. The prediction gets one class-1 point wrong.
labels = np.array([0, 0, 1, 1, 1])
pred = np.array([0, 0, 1, 1, 0])
onehot = np.eye(2)[pred]
lovasz = float(lovasz_softmax(onehot, labels, cfg).data)
# IoU(class 0) = 2/3 and IoU(class 1) = 2/3, so the mean IoU loss is 1/3.
print(f"Lovasz at a one-hot prediction: {lovasz:.6f}  (1 - mean IoU = {1 - 2 / 3:.6f})")

# Away from the vertices the loss is smooth and has a gradient.
logits = Tensor(np.random.default_rng(0).standard_normal((5, 2)), requires_grad=True)
loss = total_loss(logits, labels, cfg)
loss.backward()
ce = float(cross_entropy(logits.data, labels, cfg).data)
ls = float(lovasz_softmax(softmax_rows(logits.data), labels, cfg).data)
print(f"CE {ce:.4f} + Lovasz {ls:.4f} = {float(loss.data):.4f}")
print("gradient wrt logits:\n", np.round(logits.grad, 4))

# mIoU is the mean over classes of TP / (TP + FP + FN). Classes that never
# occur in either labels or predictions are left out of the mean, and the
# ignore class is never scored.
cm = ConfusionMatrix(3, ignore_index=0)
cm.update(np.array([1, 1, 2, 2, 1, 0]), np.array([1, 1, 2, 1, 0, 2]))
print(cm.table(["unlabeled", "car", "road"]))
