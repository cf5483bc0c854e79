"""Region and boundary metrics on a toy mask pair."""

import numpy as np

from patchrefine.metrics import boundary_band, contour, iou, mae, mba, miou, patch_miou

gt = np.zeros((32, 32), np.uint8)
gt[8:24, 8:24] = 1

pred = np.zeros_like(gt)
pred[9:25, 8:24] = 1  # one row too low

print("IoU          %.3f" % iou(pred, gt))
print("mBA (d=15)   %.3f" % mba(pred, gt))
print("mBA (d=1)    %.3f" % mba(pred, gt, 1))
print("patch-mIoU   %.3f" % patch_miou(pred, gt, 16))

# contour pixels touch background; the band grows inward from there
print("contour pixels", int(contour(gt).sum()))
for d in (0, 1, 2, 15):
    print("band d=%-2d" % d, int(boundary_band(gt, d).sum()), "pixels")

# empty against empty counts as a perfect match
empty = np.zeros((8, 8), np.uint8)
print("empty vs empty IoU", iou(empty, empty))

# dataset mIoU is the mean of per-image IoUs
print("mIoU over two images %.3f" % miou([(pred, gt), (gt, gt)]))
print("MAE of a soft map    %.3f" % mae(np.clip(gt * 0.9 + 0.05, 0, 1), gt))
