"""Synthetic two-source dataset with disjoint frequency bands.

Each clip has a "vocal" made of a vibrato harmonic tone in the 150-1800 Hz
band and a "music" part made of a few amplitude-modulated partials in the
2.5-7 kHz band. Both get a little white noise, so neither the learned mask
nor the ideal binary mask can separate them perfectly.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .dsp import DEFAULT_RATE, AudioClip, stft, write_wav
from .neural import make_rng

VOCAL_BAND = (150.0, 1800.0)
MUSIC_BAND = (2500.0, 7000.0)
NOISE_LEVEL = 0.003


def _envelope(rng, t, rate_hz=(0.5, 3.0), depth=(0.2, 0.6)):
    f = rng.uniform(*rate_hz)
    d = rng.uniform(*depth)
    return 1.0 - d * (0.5 + 0.5 * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)))


def synth_vocal(rng, n, rate):
    t = np.arange(n) / rate
    f0 = rng.uniform(150.0, 320.0)
    vib = 1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(4.0, 6.0) * t)
    phase = 2 * np.pi * np.cumsum(f0 * vib) / rate
    x = np.zeros(n)
    for h in range(1, int(VOCAL_BAND[1] // (f0 * 1.02)) + 1):
        x += rng.uniform(0.3, 1.0) / h * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    return x * _envelope(rng, t)


def synth_music(rng, n, rate):
    t = np.arange(n) / rate
    x = np.zeros(n)
    for _ in range(rng.integers(3, 7)):
        f = rng.uniform(MUSIC_BAND[0] + 50.0, MUSIC_BAND[1] - 50.0)
        x += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) \
            * _envelope(rng, t, (2.0, 8.0), (0.3, 0.9))
    return x


def _normalise(x, rms):
    return x * (rms / np.sqrt(np.mean(x ** 2)))


def make_clip(seed: int, duration: float = 1.0, rate: int = DEFAULT_RATE):
    """Return ``(vocal, music)`` arrays for one clip."""
    rng = make_rng(seed)
    n = int(round(duration * rate))
    vocal = _normalise(synth_vocal(rng, n, rate), rng.uniform(0.1, 0.2))
    music = _normalise(synth_music(rng, n, rate), rng.uniform(0.1, 0.2))
    vocal += NOISE_LEVEL * rng.standard_normal(n)
    music += NOISE_LEVEL * rng.standard_normal(n)
    return vocal, music


def write_dataset(out_dir, n_clips: int = 64, duration: float = 1.0,
                  rate: int = DEFAULT_RATE, seed: int = 0) -> list[Path]:
    """Write stereo WAVs (music left, vocal right) named ``synth_000.wav`` ..."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n_clips):
        vocal, music = make_clip(seed * 100003 + i, duration, rate)
        path = out_dir / f"synth_{i:03d}.wav"
        write_wav(path, AudioClip(np.stack([music, vocal], axis=1), rate))
        paths.append(path)
    return paths


def spectrogram_frames(seed: int, rows: int = 16, frame_size: int = 64, hop: int = 16):
    """Normalised ``(z, y1, y2)`` magnitude rows drawn from one synthetic clip.

    The mixture and the targets use the dataset gain of 0.5 and share one
    scale (the 99.9th percentile of the mixture magnitudes), so rows look like
    training frames at a small frame size. Used for gradient checks.
    """
    vocal, music = make_clip(seed)
    mags = [stft(x, frame_size, hop).magnitude()
            for x in (0.5 * (vocal + music), 0.5 * vocal, 0.5 * music)]
    scale = np.percentile(mags[0], 99.9)
    idx = np.random.default_rng(seed).choice(len(mags[0]), rows, replace=False)
    return tuple(m[idx] / scale for m in mags)
