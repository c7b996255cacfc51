"""Singing voice separation with masked dense networks and adversarial fine-tuning.

Modules
-------
dsp       WAV I/O, resampling, STFT/ISTFT
neural    dense networks, backpropagation, Adam, gradient checking, checkpoints
mask      soft/binary masks and the masking output layer
gan       adversarial losses, pretraining and adversarial training loops
bsseval   SDR/SIR/SAR via least-squares projections
pipeline  datasets, features, separation, run directories
synth     synthetic disjoint-band dataset
"""
from . import bsseval, dsp, gan, mask, neural, pipeline, synth
from .dsp import AudioClip, Spectrogram, istft, read_wav, stft, write_wav
from .gan import TrainingSchedule, Variant
from .neural import DenseNet, grad_check, init_network
from .pipeline import RunConfig

__version__ = "0.1.0"
