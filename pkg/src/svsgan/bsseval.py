"""SDR / SIR / SAR by least-squares projection (BSS-Eval ``bss_eval_sources``).

Each estimate is decomposed as::

    estimate = s_target + e_interf + e_artif

where ``s_target`` is the projection of the estimate onto the span of the
true source delayed by 0..L-1 samples, ``s_target + e_interf`` is the
projection onto the delayed copies of *all* sources, and ``e_artif`` is what
is left. Signals are zero-padded by ``L - 1`` samples so that every delayed
copy fits; the Gram matrix of the delayed copies is then block Toeplitz and
is assembled from FFT cross-correlations.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, signal

from .errors import NumericalError, ParameterError, ShapeError

DB_CAP = 100.0
RIDGE = 1e-12
DEFAULT_FILTER_LEN = 512


@dataclass
class Decomposition:
    s_target: np.ndarray
    e_interf: np.ndarray
    e_artif: np.ndarray


def _xcorr(a, b, max_lag):
    """``r[k] = sum_t a[t + k] * b[t]`` for ``k = -(max_lag-1) .. max_lag-1``."""
    full = signal.correlate(a, b, mode="full", method="auto")
    mid = len(b) - 1
    return full[mid - max_lag + 1:mid + max_lag]


def _gram(references, filter_len):
    """Block-Toeplitz Gram matrix of the delayed references."""
    n_src = len(references)
    lag0 = filter_len - 1
    blocks = [[None] * n_src for _ in range(n_src)]
    for i in range(n_src):
        for j in range(i, n_src):
            # G_ij[a, b] = sum_t s_i[t] s_j[t + a - b] = r[lag0 + a - b]
            r = _xcorr(references[j], references[i], filter_len)
            block = linalg.toeplitz(r[lag0:], r[lag0::-1])
            blocks[i][j] = block
            blocks[j][i] = block.T
    return np.block(blocks)


def _cross(references, estimate, filter_len):
    """Inner products of each delayed reference with the (padded) estimate."""
    lag0 = filter_len - 1
    # <s_j delayed by a, e> = sum_t s_j[t] e[t + a]
    return np.concatenate([_xcorr(estimate, s, filter_len)[lag0:] for s in references])


def _project(references, coeffs, filter_len, n_out):
    out = np.zeros(n_out)
    for j, s in enumerate(references):
        h = coeffs[j * filter_len:(j + 1) * filter_len]
        out += signal.fftconvolve(s, h)[:n_out]
    return out


def _solve(gram, rhs):
    dim = gram.shape[0]
    scale = np.trace(gram) / dim
    if not np.isfinite(scale) or scale <= 0:
        raise NumericalError("reference sources have no energy")
    reg = gram + RIDGE * scale * np.eye(dim)
    try:
        cho = linalg.cho_factor(reg, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("Gram matrix is singular beyond the ridge") from exc
    return linalg.cho_solve(cho, rhs)


def decompose(estimate, references, target: int = 0,
              filter_len: int = DEFAULT_FILTER_LEN) -> Decomposition:
    """Split ``estimate`` into target, interference and artifact parts.

    Parameters
    ----------
    estimate : array_like, shape (n,)
    references : sequence of array_like, each shape (n,)
        All true sources.
    target : int
        Index into ``references`` of the source ``estimate`` is meant to be.
    filter_len : int
        Number of delays L (the allowed distortion filter length).

    Returns
    -------
    Decomposition
        Components of length ``n + L - 1`` (the zero-padded estimate).
    """
    estimate = np.asarray(estimate, dtype=np.float64)
    refs = [np.asarray(r, dtype=np.float64) for r in references]
    if filter_len < 1:
        raise ShapeError("filter_len must be >= 1")
    if any(r.shape != estimate.shape for r in refs) or estimate.ndim != 1:
        raise ShapeError("estimate and references must be 1-D and equally long")
    n = len(estimate)
    n_out = n + filter_len - 1
    padded = np.pad(estimate, (0, filter_len - 1))

    gram = _gram(refs, filter_len)
    cross = _cross(refs, estimate, filter_len)

    sl = slice(target * filter_len, (target + 1) * filter_len)
    own = _solve(gram[sl, sl], cross[sl])
    s_target = _project([refs[target]], own, filter_len, n_out)
    every = _solve(gram, cross)
    s_all = _project(refs, every, filter_len, n_out)
    return Decomposition(s_target, s_all - s_target, padded - s_all)


def _db(num, den):
    if den <= 0:
        return DB_CAP
    if num <= 0:
        return -DB_CAP
    return float(np.clip(10 * np.log10(num / den), -DB_CAP, DB_CAP))


def scores(d: Decomposition) -> tuple[float, float, float]:
    """``(sdr, sir, sar)`` in dB, capped to +/-100."""
    target = np.sum(d.s_target ** 2)
    sdr = _db(target, np.sum((d.e_interf + d.e_artif) ** 2))
    sir = _db(target, np.sum(d.e_interf ** 2))
    sar = _db(np.sum((d.s_target + d.e_interf) ** 2), np.sum(d.e_artif ** 2))
    return sdr, sir, sar


SOURCE_NAMES = ("vocal", "music")


@dataclass
class SeparationScores:
    """Per-source scores for a set of clips, with aggregation helpers.

    ``sdr``, ``sir`` and ``sar`` have shape ``(n_clips, n_sources)``.
    """

    clip_ids: list = field(default_factory=list)
    sdr: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    sir: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    sar: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    durations: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def extend(self, other: "SeparationScores") -> "SeparationScores":
        return SeparationScores(
            self.clip_ids + other.clip_ids,
            np.concatenate([self.sdr, other.sdr]),
            np.concatenate([self.sir, other.sir]),
            np.concatenate([self.sar, other.sar]),
            np.concatenate([self.durations, other.durations]),
        )

    def aggregate(self, how: str = "weighted-mean") -> dict:
        """Summary per source: duration-weighted mean (default) or median."""
        out = {}
        for k, name in enumerate(SOURCE_NAMES[:self.sdr.shape[1]]):
            out[name] = {}
            for metric in ("sdr", "sir", "sar"):
                values = getattr(self, metric)[:, k]
                if how == "weighted-mean":
                    value = weighted_mean(values, self.durations)
                elif how == "median":
                    value = float(np.median(values))
                else:
                    raise ParameterError(f"unknown aggregation {how!r}")
                out[name][metric] = value
        return out


def weighted_mean(values, weights) -> float:
    return float(np.average(np.asarray(values, float), weights=np.asarray(weights, float)))


def evaluate_clip(estimates, references, filter_len: int = DEFAULT_FILTER_LEN,
                  clip_id: str = "", sample_rate: int | None = None) -> SeparationScores:
    """Score index-aligned estimates (vocal, background) against references.

    No permutation search is done: estimate ``k`` is always compared with
    reference ``k``.
    """
    if len(estimates) != len(references):
        raise ShapeError("need one estimate per reference")
    rows = [scores(decompose(est, references, k, filter_len)) for k, est in enumerate(estimates)]
    arr = np.array(rows).T  # (3, n_src)
    n = len(np.asarray(references[0]))
    duration = n / sample_rate if sample_rate else float(n)
    return SeparationScores([clip_id], arr[0][None], arr[1][None], arr[2][None],
                            np.array([duration]))


def write_scores_csv(path, result: SeparationScores) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip_id", "source", "sdr", "sir", "sar", "duration_s"])
        for i, clip_id in enumerate(result.clip_ids):
            for k in range(result.sdr.shape[1]):
                writer.writerow([clip_id, SOURCE_NAMES[k], f"{result.sdr[i, k]:.6f}",
                                 f"{result.sir[i, k]:.6f}", f"{result.sar[i, k]:.6f}",
                                 f"{result.durations[i]:.6f}"])


def write_summary_json(path, result: SeparationScores, how: str = "weighted-mean") -> None:
    summary = {"aggregate": how, "n_clips": len(result.clip_ids),
               "total_duration_s": float(np.sum(result.durations)),
               "scores": result.aggregate(how)}
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)
