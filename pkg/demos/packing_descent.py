"""
Packing ten noisy point clouds by plain gradient descent
========================================================

Ten clouds of 60 points each live in 3-D. Every cloud is one "sub-manifold":
its centroid and RMS spread define a ball, and balls that overlap repel.
Descending the log packing loss directly on the points pulls each cloud
together and pushes the clouds apart until no two balls touch.
"""

# %%
import numpy as np

from clamp import batch_loss_gradient, center_and_normalize

rng = np.random.default_rng(0)
z = 0.1 * rng.standard_normal((10, 1, 3)) + 0.3 * rng.standard_normal((10, 60, 3))

# %%
# The gradient is taken with respect to the raw points, through centering,
# projection onto the unit sphere, centroids and radii.
report = batch_loss_gradient(center_and_normalize(z), r_s=3.0)
print(f"start: energy {report.overlap_energy:.3f}, mean radius {report.radii.mean():.3f}, "
      f"neighbors per cloud {report.per_manifold_neighbors.mean():.1f}")

step = 0
while not report.absorbing:
    z -= 0.01 * report.grad_raw
    report = batch_loss_gradient(center_and_normalize(z), r_s=3.0)
    step += 1
    if step % 100 == 0:
        print(f"step {step:4d}: log loss {report.log_loss:7.3f}, mean radius {report.radii.mean():.3f}")

# %%
# Once the energy is exactly zero the gradient vanishes and the configuration
# is frozen: an absorbing state.
print(f"absorbed after {step} steps; mean radius {report.radii.mean():.3f}")
