"""Waveform I/O, resampling and the STFT front-end.

All time-frequency processing in the package goes through :func:`stft` and
:func:`istft`. Defaults are a 1024-point periodic Hann window with a hop of
256 samples, working at 22,050 Hz.

Framing convention
------------------
The signal is reflect-padded by ``frame_size // 2`` samples at both ends so
that frame ``t`` is centred on sample ``t * hop``. The tail is then
zero-padded so that the number of frames is::

    T = ceil(n / hop) + 1

which guarantees every input sample is covered by ``frame_size / hop``
frames. :func:`istft` undoes this exactly (weighted overlap-add with
window-squared normalisation) and trims back to the original length.
"""
from __future__ import annotations

import math
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import (FormatError, NumericalError, ParameterError,
                     ShapeError, UnsupportedFormatError)

DEFAULT_RATE = 22050
FRAME_SIZE = 1024
HOP = 256

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE

_RESAMPLE_TAPS_PER_PHASE = 64
_KAISER_BETA = 8.6


@dataclass
class AudioClip:
    """A sampled waveform.

    ``samples`` has shape ``(n,)`` for mono or ``(n, 2)`` for stereo.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim not in (1, 2):
            raise ShapeError(f"samples must be 1-D or 2-D, got {self.samples.ndim}-D")
        if self.samples.ndim == 2 and self.samples.shape[1] not in (1, 2):
            raise ShapeError(f"only 1 or 2 channels supported, got {self.samples.shape[1]}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ParameterError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise ParameterError("samples must be finite")

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def channel(self, index: int) -> "AudioClip":
        if self.samples.ndim == 1:
            if index != 0:
                raise ShapeError(f"mono clip has no channel {index}")
            return AudioClip(self.samples.copy(), self.sample_rate)
        return AudioClip(self.samples[:, index].copy(), self.sample_rate)


@dataclass
class Spectrogram:
    """Complex one-sided STFT frames, shape ``(T, frame_size // 2 + 1)``.

    ``length`` is the number of samples in the analysed signal; :func:`istft`
    uses it to trim the reconstruction.
    """

    frames: np.ndarray
    frame_size: int = FRAME_SIZE
    hop: int = HOP
    sample_rate: int = DEFAULT_RATE
    length: int | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.complex128)
        if self.frames.ndim != 2 or self.frames.shape[1] != self.frame_size // 2 + 1:
            raise ShapeError(
                f"frames must be (T, {self.frame_size // 2 + 1}), got {self.frames.shape}")

    @property
    def n_bins(self) -> int:
        return self.frames.shape[1]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.frames)

    def phase(self) -> np.ndarray:
        ph = np.angle(self.frames)
        # np.angle can return -pi; keep phases in (-pi, pi]
        ph[ph <= -np.pi] = np.pi
        return ph

    def with_frames(self, frames: np.ndarray) -> "Spectrogram":
        return Spectrogram(frames, self.frame_size, self.hop, self.sample_rate, self.length)


def magnitude_phase(spec: Spectrogram) -> tuple[np.ndarray, np.ndarray]:
    """Split complex frames into magnitudes (>= 0) and phases in (-pi, pi]."""
    return spec.magnitude(), spec.phase()


def from_polar(magnitude: np.ndarray, phase: np.ndarray) -> np.ndarray:
    """Inverse of :func:`magnitude_phase` on the frame matrix."""
    magnitude = np.asarray(magnitude, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if magnitude.shape != phase.shape:
        raise ShapeError(f"magnitude {magnitude.shape} vs phase {phase.shape}")
    return magnitude * np.exp(1j * phase)


# --------------------------------------------------------------------------
# WAV I/O
# --------------------------------------------------------------------------

def read_wav(path) -> AudioClip:
    """Read a RIFF/WAVE file holding PCM16 or float32 samples.

    Integer samples are scaled by 1/32768, so the result lies in [-1, 1).

    Raises
    ------
    FormatError
        If the RIFF structure is malformed or truncated.
    UnsupportedFormatError
        If the encoding is anything other than 16-bit PCM or 32-bit float,
        or the file has more than two channels.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise FormatError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 40:
                    raise FormatError(f"{path}: truncated extensible fmt chunk")
                (sub,) = struct.unpack_from("<H", body, 24)
                fmt = (sub,) + fmt[1:]
        elif chunk_id == b"data":
            # tolerate writers that leave a short final chunk
            payload = body
        pos += 8 + size + (size & 1)

    if fmt is None or payload is None:
        raise FormatError(f"{path}: missing {'fmt' if fmt is None else 'data'} chunk")

    audio_format, channels, rate, _, block_align, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"{path}: {channels} channels (only 1 or 2 supported)")
    if audio_format == _WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif audio_format == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedFormatError(
            f"{path}: format tag {audio_format:#06x} with {bits} bits is not supported")
    if rate <= 0:
        raise FormatError(f"{path}: sample rate {rate}")

    n = len(payload) // (dtype.itemsize * channels)
    samples = np.frombuffer(payload[:n * dtype.itemsize * channels], dtype=dtype)
    samples = samples.astype(np.float64) * scale
    if channels == 2:
        samples = samples.reshape(n, 2)
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip) -> None:
    """Write ``clip`` as 16-bit PCM, clipping to the representable range."""
    codes = np.round(np.asarray(clip.samples) * 32768.0)
    codes = np.clip(codes, -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(clip.channels)
        fh.setsampwidth(2)
        fh.setframerate(clip.sample_rate)
        fh.writeframes(codes.tobytes())


# --------------------------------------------------------------------------
# Resampling
# --------------------------------------------------------------------------

def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Polyphase windowed-sinc resampling to ``target_rate``.

    The anti-aliasing filter is a Kaiser-windowed sinc with 64 taps per
    polyphase branch.
    """
    if target_rate <= 0 or int(target_rate) != target_rate:
        raise ParameterError(f"target_rate must be a positive integer, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate)

    g = math.gcd(clip.sample_rate, target_rate)
    up, down = target_rate // g, clip.sample_rate // g
    max_rate = max(up, down)
    taps = signal.firwin(_RESAMPLE_TAPS_PER_PHASE * max_rate + 1, 1.0 / max_rate,
                         window=("kaiser", _KAISER_BETA))
    if len(clip) == 0:
        out = np.zeros((0,) + clip.samples.shape[1:])
    else:
        out = signal.resample_poly(clip.samples, up, down, axis=0, window=taps)
    return AudioClip(out, target_rate)


# --------------------------------------------------------------------------
# STFT / ISTFT
# --------------------------------------------------------------------------

def hann(frame_size: int) -> np.ndarray:
    """Periodic Hann window."""
    return signal.get_window("hann", frame_size, fftbins=True)


def _check_params(frame_size: int, hop: int):
    if frame_size <= 0 or frame_size & (frame_size - 1):
        raise ParameterError(f"frame_size must be a power of two, got {frame_size}")
    if hop <= 0 or hop > frame_size:
        raise ParameterError(f"hop must be in [1, frame_size], got {hop}")
    if frame_size % hop:
        raise ParameterError(f"hop {hop} must divide frame_size {frame_size}")


def n_frames(length: int, hop: int = HOP) -> int:
    return -(-length // hop) + 1


def _pad(x: np.ndarray, frame_size: int, hop: int) -> np.ndarray:
    half = frame_size // 2
    mode = "reflect" if len(x) > 1 else "constant"
    padded = np.pad(x, half, mode=mode)
    total = (n_frames(len(x), hop) - 1) * hop + frame_size
    return np.pad(padded, (0, total - len(padded)))


def stft(clip, frame_size: int = FRAME_SIZE, hop: int = HOP,
         sample_rate: int | None = None) -> Spectrogram:
    """Short-time Fourier transform of a mono signal.

    Parameters
    ----------
    clip : AudioClip or array_like
        Mono waveform. A bare array is taken to be at ``sample_rate``
        (default 22,050 Hz).
    frame_size : int
        Window length, a power of two.
    hop : int
        Frame advance; must divide ``frame_size``.

    Returns
    -------
    Spectrogram
        ``n_frames(len(x), hop)`` frames of ``frame_size // 2 + 1`` bins.
    """
    _check_params(frame_size, hop)
    if isinstance(clip, AudioClip):
        if clip.channels != 1:
            raise ShapeError("stft expects a mono clip")
        x = clip.samples.reshape(-1)
        rate = clip.sample_rate
    else:
        x = np.asarray(clip, dtype=np.float64)
        if x.ndim != 1:
            raise ShapeError("stft expects a 1-D signal")
        rate = sample_rate or DEFAULT_RATE

    padded = _pad(x, frame_size, hop)
    frames = np.lib.stride_tricks.sliding_window_view(padded, frame_size)[::hop]
    spec = np.fft.rfft(frames * hann(frame_size), axis=1)
    return Spectrogram(spec, frame_size, hop, rate, len(x))


def istft(spec: Spectrogram, length: int | None = None) -> AudioClip:
    """Weighted overlap-add inverse of :func:`stft`.

    Each inverse-FFT frame is multiplied by the analysis window, overlap-added
    and divided by the overlap-added squared window. For an unmodified
    spectrogram this reconstructs the input to rounding error.
    """
    frame_size, hop = spec.frame_size, spec.hop
    _check_params(frame_size, hop)
    n_out = length if length is not None else spec.length
    if n_out is None:
        n_out = max(spec.n_frames - 1, 0) * hop

    win = hann(frame_size)
    frames = np.fft.irfft(spec.frames, n=frame_size, axis=1) * win
    total = max(spec.n_frames - 1, 0) * hop + frame_size
    out = np.zeros(total)
    norm = np.zeros(total)
    for t in range(spec.n_frames):
        out[t * hop:t * hop + frame_size] += frames[t]
        norm[t * hop:t * hop + frame_size] += win ** 2

    half = frame_size // 2
    out = out[half:half + n_out]
    norm = norm[half:half + n_out]
    if len(out) < n_out:
        raise ShapeError(f"spectrogram too short for {n_out} samples")
    if n_out and norm.min() <= 1e-10:
        raise NumericalError("overlap-add normaliser vanished; hop too large for the window")
    return AudioClip(out / norm if n_out else out, spec.sample_rate)


def frame_energy(spec: Spectrogram) -> np.ndarray:
    """Per-frame energy of the windowed signal, recovered from the spectrum.

    Uses Parseval's relation for a one-sided real FFT, so it equals
    ``sum((window * frame) ** 2)`` for each analysis frame.
    """
    power = np.abs(spec.frames) ** 2
    weights = np.full(spec.n_bins, 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    return power @ weights / spec.frame_size


# --------------------------------------------------------------------------
# Debug dump
# --------------------------------------------------------------------------

_SPEC_MAGIC = b"SPEC"
_SPEC_VERSION = 1


def write_spectrogram(path, spec: Spectrogram) -> None:
    """Dump frames as ``SPEC`` v1: header then interleaved (re, im) float32."""
    t, f = spec.frames.shape
    header = _SPEC_MAGIC + struct.pack("<5I", _SPEC_VERSION, t, f, spec.frame_size, spec.hop)
    body = np.empty((t, f, 2), dtype="<f4")
    body[..., 0] = spec.frames.real
    body[..., 1] = spec.frames.imag
    Path(path).write_bytes(header + body.tobytes())


def read_spectrogram(path, sample_rate: int = DEFAULT_RATE) -> Spectrogram:
    data = Path(path).read_bytes()
    if len(data) < 24 or data[:4] != _SPEC_MAGIC:
        raise FormatError(f"{path}: not a SPEC dump")
    version, t, f, frame_size, hop = struct.unpack_from("<5I", data, 4)
    if version != _SPEC_VERSION:
        raise UnsupportedFormatError(f"{path}: SPEC version {version}")
    if len(data) != 24 + t * f * 8:
        raise FormatError(f"{path}: expected {t * f * 8} payload bytes, got {len(data) - 24}")
    body = np.frombuffer(data, dtype="<f4", offset=24).reshape(t, f, 2)
    frames = body[..., 0].astype(np.float64) + 1j * body[..., 1].astype(np.float64)
    return Spectrogram(frames, frame_size, hop, sample_rate)
