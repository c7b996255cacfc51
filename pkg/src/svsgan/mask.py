"""Time-frequency masks and the masking output layer.

The generator emits two raw magnitude estimates per frame, ``y1_raw`` (vocal)
and ``y2_raw`` (background). Rather than using them directly, the masking
layer turns them into a soft ratio mask and applies it to the mixture
magnitude ``z``::

    m      = (|y1_raw| + eps/2) / (|y1_raw| + |y2_raw| + eps)
    y1_hat = m * z
    y2_hat = (1 - m) * z

so the two estimates always partition the mixture. ``eps`` keeps silent bins
well defined (they get ``m = 0.5``).

Every function here works on a single ``(F,)`` vector or on a ``(B, F)``
batch of frames.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .neural import Batch, DenseNet, backward, forward, register_loss, widen

MASK_EPS = 1e-8


def _same_shape(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise ShapeError(f"shape mismatch: {shape} vs {np.shape(a)}")


@dataclass
class SeparatedPair:
    y1_hat: np.ndarray
    y2_hat: np.ndarray
    mask: np.ndarray


def soft_mask(y1_raw, y2_raw, eps: float = MASK_EPS) -> np.ndarray:
    a1 = np.abs(np.asarray(y1_raw))
    a2 = np.abs(np.asarray(y2_raw))
    _same_shape(a1, a2)
    return (a1 + eps / 2) / (a1 + a2 + eps)


def apply_mask(mask, z):
    """Split mixture magnitudes ``z`` into ``(mask * z, (1 - mask) * z)``.

    The second part is computed as ``z - mask * z`` so the two parts sum back
    to ``z`` to within one rounding step.
    """
    mask = np.asarray(mask)
    z = np.asarray(z)
    _same_shape(mask, z)
    s1 = mask * z
    return s1, z - s1


def mask_layer_forward(y1_raw, y2_raw, z, eps: float = MASK_EPS) -> SeparatedPair:
    _same_shape(y1_raw, y2_raw, z)
    m = soft_mask(y1_raw, y2_raw, eps)
    y1_hat, y2_hat = apply_mask(m, z)
    return SeparatedPair(y1_hat, y2_hat, m)


def mask_layer_backward(y1_raw, y2_raw, z, grad_y1_hat, grad_y2_hat,
                        eps: float = MASK_EPS):
    """Gradients of a loss w.r.t. the raw outputs, given dL/dy1_hat and dL/dy2_hat.

    With ``S = |y1| + |y2| + eps``::

        d y1_hat / d|y1| =  z * (|y2| + eps/2) / S**2
        d y1_hat / d|y2| = -z * (|y1| + eps/2) / S**2

    and ``y2_hat = z - y1_hat``. The derivative of ``|x|`` is taken as +1 at
    zero since raw outputs come from a relu.
    """
    y1_raw = np.asarray(y1_raw)
    y2_raw = np.asarray(y2_raw)
    a1, a2 = np.abs(y1_raw), np.abs(y2_raw)
    s = a1 + a2 + eps
    common = (np.asarray(grad_y1_hat) - np.asarray(grad_y2_hat)) * np.asarray(z) / (s * s)
    g1 = common * (a2 + eps / 2) * np.where(y1_raw < 0, -1, 1)
    g2 = -common * (a1 + eps / 2) * np.where(y2_raw < 0, -1, 1)
    return g1, g2


def mse_joint(pred: SeparatedPair, target_y1, target_y2) -> float:
    """Joint squared error of both sources, summed over bins, averaged over frames."""
    _same_shape(pred.y1_hat, target_y1, pred.y2_hat, target_y2)
    return np.sum(mse_joint_terms(pred, target_y1, target_y2))


def mse_joint_terms(pred: SeparatedPair, target_y1, target_y2) -> np.ndarray:
    """Per-bin summands of :func:`mse_joint`, shape ``(B, 2F)``."""
    d1 = widen(np.atleast_2d(pred.y1_hat - target_y1))
    d2 = widen(np.atleast_2d(pred.y2_hat - target_y2))
    return np.concatenate([d1 ** 2, d2 ** 2], axis=1) / d1.shape[0]


def mse_joint_grad(pred: SeparatedPair, target_y1, target_y2):
    b = np.atleast_2d(pred.y1_hat).shape[0]
    return 2 * (pred.y1_hat - target_y1) / b, 2 * (pred.y2_hat - target_y2) / b


def ideal_binary_mask(vocal_mag, music_mag) -> np.ndarray:
    """1 where the vocal magnitude is at least the music magnitude, else 0."""
    vocal_mag = np.asarray(vocal_mag)
    music_mag = np.asarray(music_mag)
    _same_shape(vocal_mag, music_mag)
    return (vocal_mag >= music_mag).astype(np.float64)


def split_raw(raw: np.ndarray):
    """Split a ``(B, 2F)`` generator output into its vocal and background halves."""
    f = raw.shape[-1] // 2
    return raw[..., :f], raw[..., f:]


def generator_separate(g: DenseNet, z) -> SeparatedPair:
    """Run the generator on mixture frames ``z`` and apply the masking layer."""
    raw = forward(g, z).output
    y1, y2 = split_raw(raw)
    return mask_layer_forward(y1, y2, np.asarray(z, dtype=raw.dtype))


@register_loss("mask_mse", elementwise=True)
def masked_mse_loss(g: DenseNet, batch: Batch, terms: bool = False):
    """Joint MSE on masked outputs, back-propagated through the mask layer.

    ``batch.inputs`` holds mixture frames ``z`` (B, F); ``batch.targets``
    holds the clean magnitudes ``[y1 | y2]`` (B, 2F).
    """
    z = batch.inputs
    trace = forward(g, z)
    y1_raw, y2_raw = split_raw(trace.output)
    z = z.astype(trace.output.dtype, copy=False)
    pred = mask_layer_forward(y1_raw, y2_raw, z)
    t1, t2 = split_raw(batch.targets)
    if terms:
        return mse_joint_terms(pred, t1, t2)
    loss = mse_joint(pred, t1, t2)
    g1, g2 = mse_joint_grad(pred, t1, t2)
    r1, r2 = mask_layer_backward(y1_raw, y2_raw, z, g1, g2)
    grads, _ = backward(g, trace, np.concatenate([r1, r2], axis=1))
    return loss, grads
