"""Tensor shapes through the refiner and why patch size does not change memory."""

import torch

from patchrefine.network import (
    NetworkConfig,
    PatchRefineNet,
    activation_elements,
    activation_trace,
    merge_batch,
    shape_trace,
    split_batch,
)

cfg = NetworkConfig()  # 512 px input, 64 px patches
model = PatchRefineNet(cfg).eval()
for name, shape in shape_trace(model).items():
    print("%-12s %s" % (name, shape))

# the local decoder folds the patch grid into the batch axis
x = torch.arange(2 * 3 * 8 * 8, dtype=torch.float32).reshape(2, 3, 8, 8)
patches = split_batch(x, 2)
print("split", tuple(x.shape), "->", tuple(patches.shape), "round trip", torch.equal(merge_batch(patches, 2), x))

# same element count for every patch size: patches are rearranged, not copied
x = torch.rand(1, 1, 512, 512)
for p in (64, 128, 256, 512):
    m = PatchRefineNet(NetworkConfig(patch_size=p)).eval()
    print("P=%3d local decoder activations %d" % (p, activation_elements(activation_trace(m, x, "local"))))

# with the input-residual head a fresh model returns its input, up to the 1e-3 clamp
small = PatchRefineNet(NetworkConfig(input_side=64, patch_size=16, width_scale=0.25, encoder_blocks=(1, 1, 1, 1)))
scores = torch.rand(64, 64).numpy()
final, pred = small.refine(scores)
print("untrained refine max |final - input| %.2e" % abs(final - scores).max())
