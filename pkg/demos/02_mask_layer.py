"""
The masking output layer
========================

The generator emits two non-negative raw spectra. The mask layer turns them
into a soft ratio mask and applies it to the mixture, so the two estimates
always add back up to the mixture magnitude.
"""

# %%
import numpy as np

from svsgan import gan, mask, synth
from svsgan.neural import Batch, grad_check

pair = mask.mask_layer_forward([3.0, 0.0, 1.0], [1.0, 0.0, 1.0], [8.0, 4.0, 2.0])
print("mask:", pair.mask)
print("vocal estimate:", pair.y1_hat, " music estimate:", pair.y2_hat)

# %%
# Silent raw outputs fall back to an even split through the eps floor.
# Scaling both raw outputs leaves the mask (almost) unchanged.
print("mask at raw 2x:", mask.soft_mask([6.0, 0.0, 2.0], [2.0, 0.0, 2.0]))

# %%
# Gradients through generator + mask + joint MSE against central differences.
# Frames come from a synthetic clip at a 64-point STFT (33 bins).
z, y1, y2 = synth.spectrogram_frames(seed=0)
g = gan.init_generator(33, (64, 64), seed=0, dtype=np.float64)
err = grad_check(g, "mask_mse", Batch(z, np.hstack([y1, y2])), n_coords=200)
print(f"max relative gradient error: {err:.2e}")
