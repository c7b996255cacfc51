import json
import logging

import numpy as np
import pytest

from svsgan import dsp, gan, pipeline
from svsgan.errors import CheckpointError, IngestError, IntegrityError, ParameterError
from svsgan.pipeline import ClipRecord, RunConfig

from conftest import SMALL_FRAME, small_config, synthetic_clips

RATE = dsp.DEFAULT_RATE


def tone(freq, n=RATE, rate=RATE, amp=0.3):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / rate)


# -- config ----------------------------------------------------------------

def test_run_config_json_round_trip(tmp_path):
    cfg = small_config(variant="vm", scale=0.25,
                       schedule=gan.TrainingSchedule(pretrain_epochs=3, batch_size=8))
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = RunConfig.from_json(path)
    assert back == cfg and back.variant == "VM"


@pytest.mark.parametrize("bad", [dict(hop=0), dict(train_fraction=1.0), dict(scale=-1.0),
                                 dict(vocal_channel=2), dict(variant="VX")])
def test_run_config_validation(bad):
    with pytest.raises(ValueError):
        RunConfig(**bad)


def test_run_config_rejects_unknown_fields():
    with pytest.raises(ParameterError):
        RunConfig.from_dict({"frame_sise": 512})


# -- ingest ----------------------------------------------------------------

def test_ingest_channel_layout(tmp_path):
    music, vocal = tone(3000, 800), tone(300, 800)
    dsp.write_wav(tmp_path / "b.wav", dsp.AudioClip(np.stack([music, vocal], 1), RATE))
    dsp.write_wav(tmp_path / "a.wav", dsp.AudioClip(np.stack([music, -vocal], 1), RATE))
    clips = pipeline.ingest(tmp_path)
    assert [c.id for c in clips] == ["a", "b"]
    clip = clips[1]
    assert len(clip.vocal) == len(clip.music) == len(clip.mixture) == 800
    np.testing.assert_allclose(clip.vocal.samples, vocal, atol=1 / 32768)
    np.testing.assert_allclose(clip.mixture.samples,
                               0.5 * (clip.vocal.samples + clip.music.samples))
    swapped = pipeline.ingest(tmp_path, vocal_channel=0)[1]
    np.testing.assert_array_equal(swapped.vocal.samples, clip.music.samples)


def test_ingest_rejects_mono(tmp_path):
    dsp.write_wav(tmp_path / "solo.wav", dsp.AudioClip(tone(440, 100), RATE))
    with pytest.raises(IngestError, match="solo.wav"):
        pipeline.ingest(tmp_path)


def test_ingest_empty_directory_warns(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        assert pipeline.ingest(tmp_path) == []
    assert "no WAV files" in caplog.text


def test_ingest_resamples(tmp_path):
    x = np.stack([tone(1000, 44100, 44100), tone(200, 44100, 44100)], 1)
    dsp.write_wav(tmp_path / "hi.wav", dsp.AudioClip(x, 44100))
    clip = pipeline.ingest(tmp_path)[0]
    assert clip.mixture.sample_rate == RATE and len(clip.mixture) == RATE


# -- split -----------------------------------------------------------------

def test_split_sizes_and_partition():
    train, test = pipeline.split(range(1000), 0.25, seed=3)
    assert (len(train), len(test)) == (250, 750)
    assert set(train).isdisjoint(test) and set(train) | set(test) == set(range(1000))
    assert pipeline.split(range(1000), 0.25, seed=3) == (train, test)
    assert pipeline.split(range(1000), 0.25, seed=4) != (train, test)
    assert tuple(map(len, pipeline.split(["a", "b"], 0.25))) == (1, 1)


def test_split_rejects_bad_fraction():
    with pytest.raises(ParameterError):
        pipeline.split(range(4), 0.0)


# -- features --------------------------------------------------------------

def test_featurize_alignment_and_linearity():
    cfg = small_config()
    clip = synthetic_clips(1, 0.3)[0]
    fs = pipeline.featurize(clip, 1.0, cfg)
    assert fs.z.shape == fs.y1.shape == fs.y2.shape == (dsp.n_frames(len(clip.mixture), 16), 33)
    assert fs.clip_ids == [clip.id] * len(fs) and fs.frame_index.tolist() == list(range(len(fs)))

    loud = ClipRecord.from_sources("x", 2 * clip.vocal.samples, 2 * clip.music.samples, RATE)
    fl = pipeline.featurize(loud, 1.0, cfg)
    np.testing.assert_allclose(fl.z, 2 * fs.z, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(pipeline.featurize(clip, 4.0, cfg).y2, fs.y2 / 4, rtol=1e-6)

    silent = ClipRecord.from_sources("s", np.zeros(500), np.zeros(500), RATE)
    assert not np.any(pipeline.featurize(silent, 1.0, cfg).z)
    triple = next(iter(fs))
    assert triple.clip_id == clip.id and triple.frame_index == 0


def test_featurize_rejects_bad_scale():
    with pytest.raises(ParameterError):
        pipeline.featurize(synthetic_clips(1, 0.1)[0], 0.0, small_config())


# -- separation ------------------------------------------------------------

def test_ibm_on_disjoint_sinusoids():
    clip = ClipRecord.from_sources("t", tone(440), tone(5000), RATE)
    vocal, music = pipeline.oracle_separate(clip, RunConfig(), "ibm")
    scores = pipeline.score_clip(clip, vocal, music, filter_len=64)
    assert np.all(scores.sdr >= 30), scores.sdr


def test_soft_oracle_conserves_mixture():
    clip = synthetic_clips(1, 0.5)[0]
    vocal, music = pipeline.oracle_separate(clip, small_config(), "soft")
    assert np.max(np.abs(vocal.samples + music.samples - clip.mixture.samples)) < 1e-3
    with pytest.raises(ParameterError):
        pipeline.oracle_separate(clip, small_config(), "wiener")


def test_separate_conserves_and_keeps_length():
    cfg = small_config(scale=0.05)
    g = gan.init_generator(33, (16,), seed=0)
    clip = synthetic_clips(1, 0.7)[0]
    vocal, music = pipeline.separate(g, clip.mixture, cfg)
    assert len(vocal) == len(music) == len(clip.mixture)
    assert np.max(np.abs(vocal.samples + music.samples - clip.mixture.samples)) < 1e-3


def test_separate_zero_input():
    cfg = small_config(scale=1.0)
    g = gan.init_generator(33, (16,), seed=0)
    vocal, music = pipeline.separate(g, dsp.AudioClip(np.zeros(1000), RATE), cfg)
    assert not np.any(vocal.samples) and not np.any(music.samples)


def test_separate_width_mismatch():
    g = gan.init_generator(65, (8,), seed=0)
    with pytest.raises(CheckpointError):
        pipeline.separate(g, dsp.AudioClip(np.zeros(100), RATE), small_config(scale=1.0))


def test_peak_safe():
    quiet = dsp.AudioClip(np.array([0.5, -0.2]), RATE)
    assert pipeline.peak_safe(quiet) is quiet
    loud = pipeline.peak_safe(dsp.AudioClip(np.array([2.0, -1.0]), RATE))
    np.testing.assert_allclose(loud.samples, [1.0, -0.5])


# -- run directories -------------------------------------------------------

@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = small_config(generator_hidden=(16,), discriminator_hidden=(16,),
                       schedule=gan.TrainingSchedule(pretrain_epochs=2, adversarial_epochs=1,
                                                     batch_size=64))
    result = pipeline.train(synthetic_clips(4, 0.3), cfg, out)
    return out, result


def test_train_writes_run_directory(run_dir):
    out, result = run_dir
    names = {p.name for p in out.iterdir()}
    assert names == {"manifest.json", "generator.svsg", "pretrained_generator.svsg",
                     "discriminator.svsg", "pretrain_loss.csv", "diagnostics.csv"}
    manifest = pipeline.load_manifest(out)
    assert manifest["phase"] == "adversarial"
    assert len(manifest["train_ids"]) == 1 and len(manifest["test_ids"]) == 3
    assert manifest["config"].scale > 0 and manifest["config"].n_bins == SMALL_FRAME // 2 + 1
    g, cfg = pipeline.load_generator(out)
    for p, q in zip(g.params(), result["generator"].params()):
        np.testing.assert_array_equal(p, q)


def test_manifest_round_trip(run_dir, tmp_path):
    out, _ = run_dir
    manifest = pipeline.load_manifest(out)
    extra = {k: manifest[k] for k in ("train_ids", "test_ids")}
    (tmp_path / "generator.svsg").write_bytes((out / "generator.svsg").read_bytes())
    pipeline.save_manifest(tmp_path, manifest["config"], manifest["phase"],
                           ["generator.svsg"], extra)
    again = pipeline.load_manifest(tmp_path)
    assert again["config"] == manifest["config"]
    assert again["seeds"] == manifest["seeds"] and again["train_ids"] == manifest["train_ids"]


def test_tampered_checkpoint_is_rejected(run_dir, tmp_path):
    out, _ = run_dir
    for p in out.iterdir():
        (tmp_path / p.name).write_bytes(p.read_bytes())
    raw = bytearray((tmp_path / "discriminator.svsg").read_bytes())
    raw[40] ^= 0x01
    (tmp_path / "discriminator.svsg").write_bytes(bytes(raw))
    with pytest.raises(IntegrityError):
        pipeline.load_manifest(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError, match="manifest.json"):
        pipeline.load_manifest(tmp_path)


def test_pretrain_only_run(tmp_path):
    cfg = small_config(generator_hidden=(8,),
                       schedule=gan.TrainingSchedule(pretrain_epochs=1, batch_size=64))
    result = pipeline.train(synthetic_clips(2, 0.2), cfg, tmp_path, pretrain_only=True)
    assert "generator" not in result
    assert pipeline.load_manifest(tmp_path)["phase"] == "pretrained"
    assert not (tmp_path / "discriminator.svsg").exists()


def test_training_is_reproducible(tmp_path):
    cfg = dict(generator_hidden=(8,), discriminator_hidden=(8,),
               schedule=gan.TrainingSchedule(pretrain_epochs=1, adversarial_epochs=1,
                                             batch_size=64))
    clips = synthetic_clips(4, 0.2)
    pipeline.train(clips, small_config(**cfg), tmp_path / "a")
    pipeline.train(clips, small_config(**cfg), tmp_path / "b")
    for name in ("generator.svsg", "discriminator.svsg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
