import pytest

from svsgan import dsp, pipeline, synth
from svsgan.pipeline import ClipRecord, RunConfig

# 64-point frames give 33 bins, the width of the small gradient-check generator
SMALL_FRAME, SMALL_HOP = 64, 16


spectrogram_frames = synth.spectrogram_frames


@pytest.fixture
def frames():
    return spectrogram_frames


def small_config(**overrides):
    base = dict(frame_size=SMALL_FRAME, hop=SMALL_HOP, generator_hidden=(64, 64),
                discriminator_hidden=(32, 32))
    base.update(overrides)
    return RunConfig(**base)


def synthetic_clips(n: int, duration: float = 1.0, offset: int = 0):
    return [ClipRecord.from_sources(f"clip{i:03d}", *synth.make_clip(offset + i, duration),
                                    dsp.DEFAULT_RATE)
            for i in range(n)]


@pytest.fixture(scope="session")
def small_frames():
    """Training frames from two 0.5 s synthetic clips at 33 bins."""
    cfg = small_config()
    clips = synthetic_clips(2, 0.5)
    scale = pipeline.compute_scale(clips, cfg)
    return pipeline.featurize_all(clips, scale, cfg)


# -- acceptance report -----------------------------------------------------

ACCEPTANCE: list[str] = []


def report(criterion: int, ok: bool, detail: str) -> bool:
    """Record one acceptance line; the terminal summary prints them all."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
