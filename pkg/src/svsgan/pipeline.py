"""Dataset ingestion, features, separation and run management.

Datasets follow the MIR-1K / iKala layout: a directory of stereo WAV files,
one source per channel (music on channel 0 and vocal on channel 1 unless
configured otherwise). The mixture is synthesised as ``0.5 * (vocal +
music)``.

A trained run lives in a directory::

    RUN_DIR/
        manifest.json         config, seeds, scale, CRC32 of every file below
        generator.svsg
        discriminator.svsg    (absent for pretrain-only runs)
        pretrain_loss.csv
        diagnostics.csv       (adversarial phase)
"""
from __future__ import annotations

import csv
import json
import logging
import math
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import bsseval, dsp, gan, mask
from .errors import CheckpointError, IngestError, IntegrityError, ParameterError
from .neural import DenseNet, load_checkpoint, make_rng, save_checkpoint

logger = logging.getLogger(__name__)

MIXTURE_GAIN = 0.5
SCALE_PERCENTILE = 99.9
MANIFEST = "manifest.json"
HELDOUT_FRAMES = 1024


@dataclass
class RunConfig:
    sample_rate: int = dsp.DEFAULT_RATE
    frame_size: int = dsp.FRAME_SIZE
    hop: int = dsp.HOP
    variant: str = "VBM"
    schedule: gan.TrainingSchedule = field(default_factory=gan.TrainingSchedule)
    # global magnitude normaliser; computed from the training split when None
    scale: float | None = None
    split_seed: int = 0
    train_fraction: float = 0.25
    vocal_channel: int = 1
    generator_hidden: tuple = gan.GENERATOR_HIDDEN
    discriminator_hidden: tuple = gan.DISCRIMINATOR_HIDDEN
    generator_seed: int = 0
    discriminator_seed: int = 1
    bss_filter_len: int = bsseval.DEFAULT_FILTER_LEN

    def __post_init__(self):
        if isinstance(self.schedule, dict):
            self.schedule = gan.TrainingSchedule(**self.schedule)
        self.variant = gan.Variant.parse(self.variant).value
        self.generator_hidden = tuple(self.generator_hidden)
        self.discriminator_hidden = tuple(self.discriminator_hidden)
        if min(self.sample_rate, self.frame_size, self.hop) <= 0:
            raise ParameterError("sample_rate, frame_size and hop must be positive")
        if not 0 < self.train_fraction < 1:
            raise ParameterError("train_fraction must lie in (0, 1)")
        if self.scale is not None and self.scale <= 0:
            raise ParameterError("scale must be positive")
        if self.vocal_channel not in (0, 1):
            raise ParameterError("vocal_channel must be 0 or 1")

    @property
    def n_bins(self) -> int:
        return self.frame_size // 2 + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["generator_hidden"] = list(self.generator_hidden)
        d["discriminator_hidden"] = list(self.discriminator_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ClipRecord:
    id: str
    vocal: dsp.AudioClip
    music: dsp.AudioClip
    mixture: dsp.AudioClip

    @classmethod
    def from_sources(cls, clip_id, vocal, music, sample_rate) -> "ClipRecord":
        vocal = np.asarray(vocal, dtype=np.float64)
        music = np.asarray(music, dtype=np.float64)
        return cls(clip_id, dsp.AudioClip(vocal, sample_rate), dsp.AudioClip(music, sample_rate),
                   dsp.AudioClip(MIXTURE_GAIN * (vocal + music), sample_rate))

    @property
    def duration(self) -> float:
        return self.mixture.duration

    def references(self):
        """Source contributions as they appear in the mixture (gain applied)."""
        return [MIXTURE_GAIN * self.vocal.samples, MIXTURE_GAIN * self.music.samples]


def ingest(directory, vocal_channel: int = 1, sample_rate: int = dsp.DEFAULT_RATE):
    """Load every ``*.wav`` in ``directory`` (sorted by name) as a ClipRecord."""
    paths = sorted(Path(directory).glob("*.wav"))
    if not paths:
        logger.warning("no WAV files found in %s", directory)
    records = []
    for path in paths:
        clip = dsp.read_wav(path)
        if clip.channels != 2:
            raise IngestError(f"{path}: expected a stereo file (vocal/music channels), "
                              f"got {clip.channels} channel(s)")
        clip = dsp.resample(clip, sample_rate)
        vocal = clip.samples[:, vocal_channel]
        music = clip.samples[:, 1 - vocal_channel]
        records.append(ClipRecord.from_sources(path.stem, vocal, music, sample_rate))
    return records


def split(clips, fraction: float = 0.25, seed: int = 0):
    """Seeded clip-level shuffle, first ``ceil(fraction * N)`` clips go to training."""
    if not 0 < fraction < 1:
        raise ParameterError("fraction must lie in (0, 1)")
    clips = list(clips)
    order = make_rng(seed).permutation(len(clips))
    n_train = math.ceil(fraction * len(clips))
    train = [clips[i] for i in order[:n_train]]
    test = [clips[i] for i in order[n_train:]]
    return train, test


@dataclass
class FrameTriple:
    z: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    clip_id: str
    frame_index: int


@dataclass
class FrameSet:
    """Stacked, index-aligned magnitude frames: mixture ``z``, vocal ``y1``, music ``y2``."""

    z: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    clip_ids: list = field(default_factory=list)
    frame_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self):
        return len(self.z)

    def __iter__(self):
        for k in range(len(self)):
            yield FrameTriple(self.z[k], self.y1[k], self.y2[k], self.clip_ids[k],
                              int(self.frame_index[k]))

    @classmethod
    def concat(cls, sets) -> "FrameSet":
        sets = list(sets)
        return cls(np.concatenate([s.z for s in sets]),
                   np.concatenate([s.y1 for s in sets]),
                   np.concatenate([s.y2 for s in sets]),
                   sum((s.clip_ids for s in sets), []),
                   np.concatenate([s.frame_index for s in sets]))

    def subset(self, idx) -> "FrameSet":
        idx = np.asarray(idx)
        return FrameSet(self.z[idx], self.y1[idx], self.y2[idx],
                        [self.clip_ids[i] for i in idx], self.frame_index[idx])


def _spec(clip: dsp.AudioClip, config: RunConfig) -> dsp.Spectrogram:
    return dsp.stft(clip, config.frame_size, config.hop)


def compute_scale(clips, config: RunConfig) -> float:
    """99.9th percentile of the mixture magnitudes over ``clips``."""
    mags = np.concatenate([_spec(c.mixture, config).magnitude().ravel() for c in clips])
    value = float(np.percentile(mags, SCALE_PERCENTILE))
    return value if value > 0 else 1.0


def featurize(clip: ClipRecord, scale: float, config: RunConfig,
              dtype=np.float32) -> FrameSet:
    """Normalised magnitude frames of mixture, vocal and music for one clip."""
    if scale <= 0:
        raise ParameterError("scale must be positive")
    z = _spec(clip.mixture, config).magnitude() / scale
    # the sources enter the mixture with MIXTURE_GAIN, so the targets do too
    y1 = _spec(clip.vocal, config).magnitude() * MIXTURE_GAIN / scale
    y2 = _spec(clip.music, config).magnitude() * MIXTURE_GAIN / scale
    n = len(z)
    return FrameSet(z.astype(dtype), y1.astype(dtype), y2.astype(dtype),
                    [clip.id] * n, np.arange(n))


def featurize_all(clips, scale: float, config: RunConfig) -> FrameSet:
    return FrameSet.concat(featurize(c, scale, config) for c in clips)


def _resynthesise(mix_spec: dsp.Spectrogram, vocal_mag: np.ndarray):
    """Vocal/background waveforms from a vocal magnitude estimate and the mixture phase."""
    z = mix_spec.magnitude()
    phase = np.exp(1j * mix_spec.phase())
    vocal = dsp.istft(mix_spec.with_frames(vocal_mag * phase))
    music = dsp.istft(mix_spec.with_frames((z - vocal_mag) * phase))
    return vocal, music


def separate(g: DenseNet, mixture: dsp.AudioClip, config: RunConfig, scale: float | None = None,
             batch_size: int = 2048):
    """Split a mono mixture into (vocal, background) with a trained generator."""
    scale = scale if scale is not None else config.scale
    if scale is None:
        raise ParameterError("no normalisation scale given")
    if g.input_dim != config.n_bins or g.output_dim != 2 * config.n_bins:
        raise CheckpointError(
            f"generator maps {g.input_dim}->{g.output_dim}, expected "
            f"{config.n_bins}->{2 * config.n_bins} for frame size {config.frame_size}")
    if mixture.channels == 2:
        mixture = dsp.AudioClip(MIXTURE_GAIN * mixture.samples.sum(axis=1), mixture.sample_rate)
    if mixture.sample_rate != config.sample_rate:
        mixture = dsp.resample(mixture, config.sample_rate)

    spec = _spec(mixture, config)
    z = spec.magnitude()
    masks = []
    zn = (z / scale).astype(g.dtype)
    for i in range(0, len(zn), batch_size):
        masks.append(mask.generator_separate(g, zn[i:i + batch_size]).mask)
    m = np.concatenate(masks).astype(np.float64) if masks else np.zeros_like(z)
    return _resynthesise(spec, m * z)


def oracle_separate(clip: ClipRecord, config: RunConfig, kind: str = "ibm"):
    """Separate with a mask computed from the clean sources.

    ``kind="ibm"`` uses the ideal binary mask; ``kind="soft"`` uses the soft
    ratio mask of the clean magnitudes.
    """
    spec = _spec(clip.mixture, config)
    v = _spec(clip.vocal, config).magnitude()
    mu = _spec(clip.music, config).magnitude()
    if kind == "ibm":
        m = mask.ideal_binary_mask(v, mu)
    elif kind == "soft":
        m = mask.soft_mask(v, mu)
    else:
        raise ParameterError(f"unknown oracle mask {kind!r}")
    return _resynthesise(spec, m * spec.magnitude())


def score_clip(clip: ClipRecord, vocal: dsp.AudioClip, music: dsp.AudioClip,
               filter_len: int) -> bsseval.SeparationScores:
    return bsseval.evaluate_clip([vocal.samples, music.samples], clip.references(),
                                 filter_len, clip.id, clip.mixture.sample_rate)


def evaluate(g: DenseNet, clips, config: RunConfig, scale: float | None = None,
             filter_len: int | None = None) -> bsseval.SeparationScores:
    filter_len = filter_len or config.bss_filter_len
    result = bsseval.SeparationScores()
    for clip in clips:
        vocal, music = separate(g, clip.mixture, config, scale)
        result = result.extend(score_clip(clip, vocal, music, filter_len))
    return result


def evaluate_oracle(clips, config: RunConfig, kind: str = "ibm",
                    filter_len: int | None = None) -> bsseval.SeparationScores:
    filter_len = filter_len or config.bss_filter_len
    result = bsseval.SeparationScores()
    for clip in clips:
        vocal, music = oracle_separate(clip, config, kind)
        result = result.extend(score_clip(clip, vocal, music, filter_len))
    return result


# --------------------------------------------------------------------------
# Run directories
# --------------------------------------------------------------------------

def _crc(path: Path) -> str:
    return f"{zlib.crc32(path.read_bytes()):08x}"


def save_manifest(run_dir, config: RunConfig, phase: str, files=(), extra=None) -> dict:
    """Write ``manifest.json`` recording config, seeds and CRC32 of ``files``."""
    run_dir = Path(run_dir)
    manifest = {
        "config": config.to_dict(),
        "phase": phase,
        "seeds": {
            "split": config.split_seed,
            "schedule": config.schedule.seed,
            "generator_init": config.generator_seed,
            "discriminator_init": config.discriminator_seed,
        },
        "checksums": {name: _crc(run_dir / name) for name in files},
    }
    if extra:
        manifest.update(extra)
    (run_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_manifest(run_dir) -> dict:
    """Read and verify a run manifest; ``manifest["config"]`` is a RunConfig."""
    path = Path(run_dir) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {run_dir}; is this a training run directory?")
    manifest = json.loads(path.read_text())
    for name, crc in manifest.get("checksums", {}).items():
        target = Path(run_dir) / name
        if not target.is_file():
            raise FileNotFoundError(f"{target} listed in manifest but missing")
        if _crc(target) != crc:
            raise IntegrityError(f"{target}: checksum {_crc(target)} != manifest {crc}")
    manifest["config"] = RunConfig.from_dict(manifest["config"])
    return manifest


def load_generator(run_dir):
    manifest = load_manifest(run_dir)
    return load_checkpoint(Path(run_dir) / "generator.svsg"), manifest["config"]


def heldout_frames(test_clips, config: RunConfig, limit: int = HELDOUT_FRAMES) -> FrameSet:
    """Seeded subset of held-out frames for measuring discriminator accuracy."""
    held = featurize_all(test_clips, config.scale, config)
    pick = make_rng(config.split_seed + 7).choice(len(held), min(len(held), limit),
                                                  replace=False)
    return held.subset(np.sort(pick))


def _write_curve(path, curve):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "joint_mse"])
        for epoch, value in enumerate(curve):
            writer.writerow([epoch, f"{value:.8g}"])


def train(clips, config: RunConfig, out_dir, pretrain_only: bool = False, log=None):
    """Full two-phase training on ``clips``, writing a run directory.

    Returns the pretrained and (unless ``pretrain_only``) adversarially
    fine-tuned generators plus the split used.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_clips, test_clips = split(clips, config.train_fraction, config.split_seed)
    if not train_clips:
        raise ParameterError("no training clips")
    if config.scale is None:
        config.scale = compute_scale(train_clips, config)
    frames = featurize_all(train_clips, config.scale, config)

    g = gan.init_generator(config.n_bins, config.generator_hidden, config.generator_seed)
    g, curve = gan.pretrain(g, frames, config.schedule, log=log)
    save_checkpoint(out_dir / "generator.svsg", g)
    _write_curve(out_dir / "pretrain_loss.csv", curve)
    files = ["generator.svsg", "pretrain_loss.csv"]
    split_info = {"train_ids": [c.id for c in train_clips], "test_ids": [c.id for c in test_clips]}
    save_manifest(out_dir, config, "pretrained", files, split_info)
    result = {"pretrained": g, "train": train_clips, "test": test_clips, "curve": curve}
    if pretrain_only:
        return result

    d = gan.init_discriminator(config.variant, config.n_bins, config.discriminator_hidden,
                               config.discriminator_seed)
    heldout = heldout_frames(test_clips, config) if test_clips else frames
    g_adv, d, diags = gan.adversarial_train(g, d, config.variant, frames, config.schedule,
                                            heldout=heldout, log=log)
    save_checkpoint(out_dir / "generator.svsg", g_adv)
    save_checkpoint(out_dir / "pretrained_generator.svsg", g)
    save_checkpoint(out_dir / "discriminator.svsg", d)
    gan.write_diagnostics(out_dir / "diagnostics.csv", diags)
    files += ["pretrained_generator.svsg", "discriminator.svsg", "diagnostics.csv"]
    save_manifest(out_dir, config, "adversarial", files, split_info)
    result.update(generator=g_adv, discriminator=d, diagnostics=diags)
    return result


def peak_safe(clip: dsp.AudioClip) -> dsp.AudioClip:
    """Scale down a clip that would clip on export; leave it alone otherwise."""
    peak = float(np.max(np.abs(clip.samples))) if len(clip) else 0.0
    if peak <= 1.0:
        return clip
    gain = 1.0 / peak
    logger.info("peak-normalising output by gain %.4f", gain)
    return dsp.AudioClip(clip.samples * gain, clip.sample_rate)
