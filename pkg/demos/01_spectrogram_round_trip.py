"""
Spectrogram analysis and resynthesis
====================================

A periodic Hann window at 75% overlap sums to a constant, so weighted
overlap-add inverts the STFT exactly. This script checks that on a chirp and
looks at where its energy lands.
"""

# %%
# A one-second linear chirp from 200 Hz to 4 kHz
import numpy as np

from svsgan import dsp

rate = dsp.DEFAULT_RATE
t = np.arange(rate) / rate
x = 0.5 * np.sin(2 * np.pi * (200 * t + 1900 * t ** 2))

spec = dsp.stft(x)
print("frames x bins:", spec.frames.shape)

# %%
# The strongest bin per frame walks up the spectrum with the chirp
peak_hz = spec.magnitude().argmax(axis=1) * rate / dsp.FRAME_SIZE
print("peak frequency, every 10th frame (Hz):", np.round(peak_hz[::10]).astype(int))

# %%
# Inverse transform: error is at the level of float64 rounding
y = dsp.istft(spec).samples
print("max |istft(stft(x)) - x| =", np.max(np.abs(y - x)))

# %%
# Dropping the phase is not harmless: magnitude alone does not resynthesise x
y_mag = dsp.istft(spec.with_frames(spec.magnitude())).samples
print("max error with zero phase =", round(float(np.max(np.abs(y_mag - x))), 3))
