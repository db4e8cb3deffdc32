"""CutMix box geometry on the synthetic blobs, rendered as ASCII.

Draws a few mixing plans at alpha = 0.2, pastes one class's image into
another, and prints the raw lambda next to the effective lambda recomputed
from the clipped integer box. The mixed label follows lambda_eff.
"""

import numpy as np

from fecil.datasets import synth_gaussians
from fecil.mixing import cutmix_apply, mixed_target, plan_mix

RAMP = " .:-=+*#%@"


def render(img):
    g = np.clip(img[:, :, 0], 0.0, 1.0)
    idx = np.minimum((g * len(RAMP)).astype(int), len(RAMP) - 1)
    return ["".join(RAMP[i] for i in row) for row in idx]


train, _ = synth_gaussians(num_classes=10, per_class=4, image_side=16, seed=7)
img_a = train.images[np.flatnonzero(train.labels == 0)[0]]
img_b = train.images[np.flatnonzero(train.labels == 5)[0]]

rng = np.random.default_rng(3)
for trial in range(3):
    plan = plan_mix(16, 16, alpha=0.2, rng=rng, source_j=1)
    mixed, lam_eff = cutmix_apply(img_a, img_b, plan.box)
    target = mixed_target(0, 5, lam_eff, num_classes=10)
    print(f"plan {trial}: lambda_raw={plan.lambda_raw:.3f}  "
          f"lambda_eff={lam_eff:.4f}  target[0]={target[0]:.4f} target[5]={target[5]:.4f}")
    left, right = render(img_a), render(mixed)
    print("  class 0           -> mixed")
    for la, lb in zip(left, right):
        print(f"  {la}  {lb}")
    print()
