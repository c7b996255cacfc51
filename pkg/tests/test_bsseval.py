import json

import numpy as np
import pytest

from svsgan import bsseval
from svsgan.bsseval import Decomposition, SeparationScores, decompose, scores
from svsgan.errors import NumericalError, ParameterError, ShapeError


def shifted_basis(references, filter_len):
    """Columns: every reference delayed by 0..L-1, zero-padded to n + L - 1."""
    n = len(references[0])
    cols = []
    for s in references:
        for k in range(filter_len):
            c = np.zeros(n + filter_len - 1)
            c[k:k + n] = s
            cols.append(c)
    return np.array(cols).T


def dense_decompose(estimate, references, target, filter_len):
    """Brute-force least-squares oracle."""
    padded = np.pad(estimate, (0, filter_len - 1))
    own = shifted_basis([references[target]], filter_len)
    every = shifted_basis(references, filter_len)
    s_target = own @ np.linalg.lstsq(own, padded, rcond=None)[0]
    s_all = every @ np.linalg.lstsq(every, padded, rcond=None)[0]
    return s_target, s_all - s_target, padded - s_all


def test_perfect_estimate():
    rng = np.random.default_rng(0)
    refs = [rng.standard_normal(200), rng.standard_normal(200)]
    d = decompose(refs[0], refs, 0, filter_len=8)
    assert np.linalg.norm(d.e_interf) <= 1e-8 and np.linalg.norm(d.e_artif) <= 1e-8
    assert scores(d) == (100.0, 100.0, 100.0)


def test_wrong_source_goes_to_interference():
    n, L = 300, 8
    a, b = np.zeros(n), np.zeros(n)
    rng = np.random.default_rng(1)
    a[:100] = rng.standard_normal(100)
    b[150:250] = rng.standard_normal(100)  # gap > L: every shift is orthogonal
    d = decompose(b, [a, b], target=0, filter_len=L)
    assert np.linalg.norm(d.s_target) < 1e-8
    np.testing.assert_allclose(d.e_interf, np.pad(b, (0, L - 1)), atol=1e-8)
    assert scores(d)[0] == -100.0


@pytest.mark.parametrize("seed,n,L", [(0, 64, 8), (1, 64, 1), (2, 256, 16), (3, 100, 5)])
def test_matches_dense_least_squares(seed, n, L):
    rng = np.random.default_rng(seed)
    refs = [rng.standard_normal(n), rng.standard_normal(n)]
    est = 0.7 * refs[1] + 0.2 * np.roll(refs[0], 2) + 0.1 * rng.standard_normal(n)
    for target in (0, 1):
        d = decompose(est, refs, target, filter_len=L)
        for got, want in zip((d.s_target, d.e_interf, d.e_artif),
                             dense_decompose(est, refs, target, L)):
            assert np.max(np.abs(got - want)) < 1e-8


def test_exact_additive_decomposition():
    rng = np.random.default_rng(4)
    refs = [rng.standard_normal(500), rng.standard_normal(500)]
    est = rng.standard_normal(500)
    d = decompose(est, refs, 1, filter_len=32)
    total = d.s_target + d.e_interf + d.e_artif
    assert np.max(np.abs(total - np.pad(est, (0, 31)))) < 1e-8


def test_score_arithmetic():
    # energies 100, 1, 0 on orthogonal supports
    s = np.zeros(4)
    s[0] = 10.0
    e = np.zeros(4)
    e[1] = 1.0
    sdr, sir, sar = scores(Decomposition(s, e, np.zeros(4)))
    assert sdr == pytest.approx(20.0) and sir == pytest.approx(20.0) and sar == 100.0


def test_orthogonal_artifact_at_ratio_ten():
    rng = np.random.default_rng(5)
    n, L = 400, 16
    refs = [rng.standard_normal(n), rng.standard_normal(n)]
    # artifact orthogonal to every delayed copy of both references, within the first n samples
    basis = shifted_basis(refs, L)[:n]
    q, _ = np.linalg.qr(basis)
    noise = rng.standard_normal(n)
    noise -= q @ (q.T @ noise)
    # keep it orthogonal after zero-padding too: only the first n samples are non-zero
    noise *= np.sqrt(np.sum(refs[0] ** 2) / (10 * np.sum(noise ** 2)))
    d = decompose(refs[0] + noise, refs, 0, filter_len=L)
    sdr, sir, sar = scores(d)
    assert sdr == pytest.approx(10.0, abs=0.01)
    assert sir == 100.0


def test_projection_idempotent():
    rng = np.random.default_rng(6)
    refs = [rng.standard_normal(300), rng.standard_normal(300)]
    d = decompose(rng.standard_normal(300) + refs[0], refs, 0, filter_len=8)
    # s_target is n + L - 1 long; padded references span the same shifts at that length
    padded = [np.pad(r, (0, 7)) for r in refs]
    again = decompose(d.s_target, padded, 0, filter_len=8)
    np.testing.assert_allclose(again.s_target[:307], d.s_target, atol=1e-8)
    assert np.linalg.norm(again.e_interf) < 1e-8 and np.linalg.norm(again.e_artif) < 1e-8


def test_noise_lowers_sdr_and_sar_only():
    rng = np.random.default_rng(7)
    n, L = 400, 8
    refs = [rng.standard_normal(n), rng.standard_normal(n)]
    q, _ = np.linalg.qr(shifted_basis(refs, L)[:n])
    noise = rng.standard_normal(n)
    noise -= q @ (q.T @ noise)
    previous = (100.0, 100.0, 100.0)
    for level in (0.01, 0.1, 1.0):
        sdr, sir, sar = scores(decompose(refs[0] + level * noise, refs, 0, filter_len=L))
        assert sdr < previous[0] and sar < previous[2] and sir == 100.0
        previous = (sdr, sir, sar)


@pytest.mark.parametrize("gain", [1e-3, 0.5, 7.0, 1e3])
def test_scale_invariance(gain):
    rng = np.random.default_rng(8)
    refs = [rng.standard_normal(256), rng.standard_normal(256)]
    est = refs[0] + 0.3 * refs[1] + 0.2 * rng.standard_normal(256)
    base = scores(decompose(est, refs, 0, filter_len=4))
    np.testing.assert_allclose(scores(decompose(gain * est, refs, 0, filter_len=4)), base,
                               atol=1e-9)


def test_errors():
    with pytest.raises(ShapeError):
        decompose(np.ones(10), [np.ones(10), np.ones(9)])
    with pytest.raises(ShapeError):
        decompose(np.ones(10), [np.ones(10)], filter_len=0)
    with pytest.raises(NumericalError):
        decompose(np.ones(10), [np.zeros(10), np.zeros(10)], filter_len=2)


# -- clip scores and aggregation ------------------------------------------

def test_evaluate_clip_perfect_and_swapped():
    rng = np.random.default_rng(9)
    t = np.arange(2000)
    vocal = np.sin(2 * np.pi * 0.01 * t) * rng.uniform(0.5, 1, 2000)
    music = np.sin(2 * np.pi * 0.3 * t) * rng.uniform(0.5, 1, 2000)
    perfect = bsseval.evaluate_clip([vocal, music], [vocal, music], filter_len=8)
    assert np.all(perfect.sdr == 100.0)
    swapped = bsseval.evaluate_clip([music, vocal], [vocal, music], filter_len=8)
    assert swapped.sdr[0, 0] < -20


def test_weighted_mean_example():
    s = SeparationScores(["a", "b"], np.array([[4.0, 0.0], [8.0, 0.0]]), np.zeros((2, 2)),
                         np.zeros((2, 2)), np.array([1.0, 3.0]))
    assert s.aggregate()["vocal"]["sdr"] == pytest.approx(7.0)
    assert s.aggregate("median")["vocal"]["sdr"] == pytest.approx(6.0)
    with pytest.raises(ParameterError):
        s.aggregate("mode")


def test_score_files(tmp_path):
    rng = np.random.default_rng(10)
    refs = [rng.standard_normal(500), rng.standard_normal(500)]
    res = bsseval.evaluate_clip([refs[0] + 0.1 * refs[1], refs[1]], refs, 4, "x", 250)
    res = res.extend(bsseval.evaluate_clip(refs, refs, 4, "y", 250))
    bsseval.write_scores_csv(tmp_path / "s.csv", res)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "clip_id,source,sdr,sir,sar,duration_s"
    assert len(lines) == 5 and lines[1].startswith("x,vocal,")
    bsseval.write_summary_json(tmp_path / "s.json", res)
    summary = json.loads((tmp_path / "s.json").read_text())
    assert summary["n_clips"] == 2 and summary["total_duration_s"] == pytest.approx(4.0)
    assert set(summary["scores"]) == {"vocal", "music"}
