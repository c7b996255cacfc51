"""Adversarial objectives and the two-phase training procedure.

Phase one (:func:`pretrain`) fits the generator to clean magnitudes with the
joint MSE through the masking layer. Phase two (:func:`adversarial_train`)
alternates discriminator updates on real/fake pairs with generator updates
driven by the non-saturating ``-log D(fake)`` objective.

The discriminator sees one of three inputs, selected by :class:`Variant`:

======  ==========================  ======
tag     discriminator input         width
======  ==========================  ======
VB      vocal | background          2F
VM      vocal | mixture             2F
VBM     vocal | background | mixture  3F
======  ==========================  ======

The mixture columns are conditioning only: they are identical on the real
and fake side and never receive generator gradients.
"""
from __future__ import annotations

import csv
import enum
import time
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError, ShapeError, TrainingError
from .mask import (generator_separate, mask_layer_backward, mask_layer_forward,
                   masked_mse_loss, mse_joint_grad, split_raw)
from .neural import (AdamState, Batch, DenseNet, adam_step, backward, clamp_prob,
                     forward, grad_check, init_network, make_rng, register_loss, widen,
                     BCE_CLAMP)

GENERATOR_HIDDEN = (1024, 1024, 1024)
DISCRIMINATOR_HIDDEN = (512, 512, 512)
GENERATOR_OUTPUT_BIAS = 1.0


class Variant(str, enum.Enum):
    VB = "VB"
    VM = "VM"
    VBM = "VBM"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        return cls(str(value).upper())

    def width(self, n_bins: int) -> int:
        return 3 * n_bins if self is Variant.VBM else 2 * n_bins


@dataclass
class TrainingSchedule:
    pretrain_epochs: int = 50
    adversarial_epochs: int = 20
    batch_size: int = 64
    d_steps_per_g_step: int = 1
    pretrain_lr: float = 1e-4
    adversarial_lr: float = 1e-5
    pretrain_beta1: float = 0.9
    adversarial_beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # weight of the joint MSE added to the generator loss in phase two; 0 = pure adversarial
    mse_weight: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.pretrain_epochs < 0 or self.adversarial_epochs < 0:
            raise ParameterError("epoch counts must be non-negative")
        if self.batch_size < 1 or self.d_steps_per_g_step < 1:
            raise ParameterError("batch_size and d_steps_per_g_step must be >= 1")
        if min(self.pretrain_lr, self.adversarial_lr) <= 0:
            raise ParameterError("learning rates must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def init_generator(n_bins: int, hidden=GENERATOR_HIDDEN, seed: int = 0,
                   dtype=np.float32, output_bias: float = GENERATOR_OUTPUT_BIAS) -> DenseNet:
    """Generator: F mixture bins in, 2F raw magnitudes out, relu throughout.

    The output bias starts positive so that no raw output begins inside the
    dead region of its relu; a bin whose two raw outputs start at zero would
    otherwise have its mask stuck near 0 or 1 with vanishing gradient.
    """
    dims = [n_bins, *hidden, 2 * n_bins]
    return init_network(dims, "relu", seed=seed, dtype=dtype, output_bias=output_bias)


def init_discriminator(variant, n_bins: int, hidden=DISCRIMINATOR_HIDDEN,
                       seed: int = 1, dtype=np.float32) -> DenseNet:
    """Discriminator sized for ``variant``: relu hidden layers, sigmoid output."""
    variant = Variant.parse(variant)
    dims = [variant.width(n_bins), *hidden, 1]
    acts = ["relu"] * len(hidden) + ["sigmoid"]
    return init_network(dims, acts, seed=seed, dtype=dtype)


def build_d_input(variant, y1, y2, z) -> np.ndarray:
    """Concatenate discriminator input along the last axis, per ``variant``."""
    variant = Variant.parse(variant)
    y1, y2, z = np.asarray(y1), np.asarray(y2), np.asarray(z)
    if not (y1.shape == y2.shape == z.shape):
        raise ShapeError(f"shape mismatch: {y1.shape}, {y2.shape}, {z.shape}")
    if variant is Variant.VB:
        parts = (y1, y2)
    elif variant is Variant.VM:
        parts = (y1, z)
    else:
        parts = (y1, y2, z)
    return np.concatenate(parts, axis=-1)


def _d_input_grad_to_sources(variant, grad, n_bins):
    """Route dL/d(D input) back to (dL/dy1_hat, dL/dy2_hat); mixture columns are dropped."""
    g1 = grad[:, :n_bins]
    if variant is Variant.VM:
        g2 = np.zeros_like(g1)
    else:
        g2 = grad[:, n_bins:2 * n_bins]
    return g1, g2


def _check_probs(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise TrainingError("non-finite discriminator output")


def d_loss(d_real, d_fake) -> float:
    """``-mean log D(real) - mean log(1 - D(fake))`` with clamped probabilities."""
    d_real = widen(d_real).reshape(-1)
    d_fake = widen(d_fake).reshape(-1)
    _check_probs(d_real, d_fake)
    return -np.mean(np.log(clamp_prob(d_real))) - np.mean(np.log(1 - clamp_prob(d_fake)))


def d_loss_grad(d_real, d_fake):
    """Gradients of :func:`d_loss` with respect to the (unclamped) outputs."""
    d_real = np.asarray(d_real)
    d_fake = np.asarray(d_fake)
    live_r = (d_real > BCE_CLAMP) & (d_real < 1 - BCE_CLAMP)
    live_f = (d_fake > BCE_CLAMP) & (d_fake < 1 - BCE_CLAMP)
    gr = np.where(live_r, -1.0 / clamp_prob(d_real), 0.0) / d_real.shape[0]
    gf = np.where(live_f, 1.0 / (1 - clamp_prob(d_fake)), 0.0) / d_fake.shape[0]
    return gr, gf


def g_loss_logd(d_fake) -> float:
    """Non-saturating generator loss ``-mean log D(fake)``."""
    d_fake = widen(d_fake).reshape(-1)
    _check_probs(d_fake)
    return -np.mean(np.log(clamp_prob(d_fake)))


def g_loss_logd_grad(d_fake):
    d_fake = np.asarray(d_fake)
    live = (d_fake > BCE_CLAMP) & (d_fake < 1 - BCE_CLAMP)
    return np.where(live, -1.0 / clamp_prob(d_fake), 0.0) / d_fake.shape[0]


# --------------------------------------------------------------------------
# Composed losses (also registered for grad_check)
# --------------------------------------------------------------------------

@register_loss("d_adv", elementwise=True)
def discriminator_loss(d: DenseNet, batch: Batch, terms: bool = False):
    """Discriminator objective on a stacked batch.

    ``batch.inputs`` holds discriminator inputs, ``batch.targets`` a column of
    1 (real) / 0 (fake) labels.
    """
    trace = forward(d, batch.inputs)
    out = trace.output
    real = batch.targets[:, 0] > 0.5
    if terms:
        p = clamp_prob(widen(out[:, 0]))
        return np.where(real, -np.log(p) / max(real.sum(), 1),
                        -np.log(1 - p) / max((~real).sum(), 1))
    loss = d_loss(out[real], out[~real])
    gr, gf = d_loss_grad(out[real], out[~real])
    grad = np.zeros_like(out)
    grad[real] = gr
    grad[~real] = gf
    grads, _ = backward(d, trace, grad)
    return loss, grads


def _generator_adv_pass(g, d, variant, z):
    """Forward G -> mask -> D on mixture frames; returns everything backward needs."""
    g_trace = forward(g, z)
    y1_raw, y2_raw = split_raw(g_trace.output)
    z = np.asarray(z, dtype=g_trace.output.dtype)
    pred = mask_layer_forward(y1_raw, y2_raw, z)
    d_in = build_d_input(variant, pred.y1_hat, pred.y2_hat, z)
    d_trace = forward(d, d_in)
    return g_trace, y1_raw, y2_raw, z, pred, d_trace


def _generator_grads(g, d, variant, g_trace, y1_raw, y2_raw, z, d_trace,
                     extra_y1=None, extra_y2=None):
    n_bins = z.shape[1]
    dout = g_loss_logd_grad(d_trace.output)
    _, d_in_grad = backward(d, d_trace, dout)
    g1, g2 = _d_input_grad_to_sources(variant, d_in_grad, n_bins)
    if extra_y1 is not None:
        g1 = g1 + extra_y1
        g2 = g2 + extra_y2
    r1, r2 = mask_layer_backward(y1_raw, y2_raw, z, g1, g2)
    grads, _ = backward(g, g_trace, np.concatenate([r1, r2], axis=1))
    return grads


@register_loss("logd", elementwise=True)
def generator_adversarial_loss(g: DenseNet, batch: Batch, d: DenseNet, variant="VBM",
                               terms: bool = False):
    """``-mean log D(G(z), z)`` as a function of the generator parameters.

    ``batch.inputs`` are mixture frames ``z``.
    """
    variant = Variant.parse(variant)
    g_trace, y1_raw, y2_raw, z, _, d_trace = _generator_adv_pass(g, d, variant, batch.inputs)
    if terms:
        return -np.log(clamp_prob(widen(d_trace.output[:, 0]))) / len(z)
    loss = g_loss_logd(d_trace.output)
    grads = _generator_grads(g, d, variant, g_trace, y1_raw, y2_raw, z, d_trace)
    return loss, grads


# --------------------------------------------------------------------------
# Training loops
# --------------------------------------------------------------------------

def _frames(data):
    z, y1, y2 = (np.asarray(a) for a in (data.z, data.y1, data.y2))
    if not (z.shape == y1.shape == y2.shape) or z.ndim != 2:
        raise ShapeError("training frames must be three equally shaped (N, F) arrays")
    return z, y1, y2


def evaluate_mse(g: DenseNet, data, batch_size: int = 1024) -> float:
    """Joint MSE of the masked generator over a whole frame set."""
    z, y1, y2 = _frames(data)
    total = 0.0
    for i in range(0, len(z), batch_size):
        pred = generator_separate(g, z[i:i + batch_size])
        d1 = (pred.y1_hat - y1[i:i + batch_size]).astype(np.float64)
        d2 = (pred.y2_hat - y2[i:i + batch_size]).astype(np.float64)
        total += np.sum(d1 ** 2) + np.sum(d2 ** 2)
    return float(total / max(len(z), 1))


def pretrain(g: DenseNet, data, schedule: TrainingSchedule, log=None):
    """Supervised initialisation of the generator with the joint MSE.

    Trains a copy of ``g``; the argument is left untouched.

    Returns
    -------
    g : DenseNet
    curve : list of float
        Joint MSE over the full training set before training and after each
        epoch (``pretrain_epochs + 1`` entries).
    """
    z, y1, y2 = _frames(data)
    targets = np.concatenate([y1, y2], axis=1)
    g = g.copy()
    state = AdamState.for_net(g, lr=schedule.pretrain_lr, beta1=schedule.pretrain_beta1,
                              beta2=schedule.beta2, eps=schedule.adam_eps)
    rng = make_rng(schedule.seed)
    curve = [evaluate_mse(g, data)]
    for epoch in range(1, schedule.pretrain_epochs + 1):
        order = rng.permutation(len(z))
        for i in range(0, len(z), schedule.batch_size):
            idx = order[i:i + schedule.batch_size]
            _, grads = masked_mse_loss(g, Batch(z[idx], targets[idx]))
            try:
                adam_step(g, grads, state)
            except TrainingError as exc:
                raise TrainingError(f"pretraining diverged in epoch {epoch}: {exc}") from exc
        loss = evaluate_mse(g, data)
        if not np.isfinite(loss):
            raise TrainingError(f"pretraining loss is non-finite in epoch {epoch}")
        curve.append(loss)
        if log:
            log(f"pretrain epoch {epoch}: J={loss:.6g}")
    return g, curve


@dataclass
class EpochDiagnostics:
    epoch: int
    d_loss: float
    g_loss: float
    d_accuracy: float
    wallclock_ms: float


def discriminator_accuracy(g: DenseNet, d: DenseNet, variant, data) -> float:
    """Accuracy of D on a balanced set: every frame once as real, once as fake."""
    variant = Variant.parse(variant)
    z, y1, y2 = _frames(data)
    real = forward(d, build_d_input(variant, y1, y2, z)).output[:, 0]
    pred = generator_separate(g, z)
    fake = forward(d, build_d_input(variant, pred.y1_hat, pred.y2_hat,
                                    z.astype(pred.y1_hat.dtype))).output[:, 0]
    return float((np.sum(real > 0.5) + np.sum(fake <= 0.5)) / (2 * len(z)))


def adversarial_train(g: DenseNet, d: DenseNet, variant, data, schedule: TrainingSchedule,
                      heldout=None, train_generator: bool = True, log=None):
    """Alternating adversarial fine-tuning.

    For every minibatch the discriminator takes one step on clean (real) and
    generated (fake, detached) inputs; every ``d_steps_per_g_step``
    minibatches the generator takes one step on ``-log D(fake)``. Both
    networks are copied first.

    Parameters
    ----------
    heldout : frame set, optional
        Frames used only to measure discriminator accuracy. Defaults to
        ``data``.
    train_generator : bool
        If False the generator is frozen and only D learns.

    Returns
    -------
    g, d : DenseNet
    diagnostics : list of EpochDiagnostics
    """
    variant = Variant.parse(variant)
    z, y1, y2 = _frames(data)
    n_bins = z.shape[1]
    if g.input_dim != n_bins or g.output_dim != 2 * n_bins:
        raise ShapeError(f"generator is {g.input_dim}->{g.output_dim}, data has F={n_bins}")
    if d.input_dim != variant.width(n_bins) or d.output_dim != 1:
        raise ShapeError(
            f"discriminator input {d.input_dim} does not match {variant.value} width "
            f"{variant.width(n_bins)}")
    heldout = data if heldout is None else heldout

    g, d = g.copy(), d.copy()
    hyper = dict(lr=schedule.adversarial_lr, beta1=schedule.adversarial_beta1,
                 beta2=schedule.beta2, eps=schedule.adam_eps)
    g_state = AdamState.for_net(g, **hyper)
    d_state = AdamState.for_net(d, **hyper)
    rng = make_rng(schedule.seed + 1)
    z = z.astype(g.dtype)
    real_all = build_d_input(variant, y1, y2, z).astype(d.dtype)

    diagnostics = []
    for epoch in range(1, schedule.adversarial_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(z))
        d_losses, g_losses = [], []
        for step, i in enumerate(range(0, len(z), schedule.batch_size)):
            idx = order[i:i + schedule.batch_size]
            zb = z[idx]

            pred = generator_separate(g, zb)
            fake = build_d_input(variant, pred.y1_hat, pred.y2_hat, zb)
            stacked = np.concatenate([real_all[idx], fake])
            labels = np.concatenate([np.ones(len(idx)), np.zeros(len(idx))])[:, None]
            loss, grads = discriminator_loss(d, Batch(stacked, labels))
            _step(d, grads, d_state, "discriminator", epoch)
            d_losses.append(loss)

            if train_generator and (step + 1) % schedule.d_steps_per_g_step == 0:
                g_trace, y1_raw, y2_raw, zc, pred, d_trace = _generator_adv_pass(g, d, variant, zb)
                loss = g_loss_logd(d_trace.output)
                extra = (None, None)
                if schedule.mse_weight:
                    e1, e2 = mse_joint_grad(pred, y1[idx], y2[idx])
                    extra = (schedule.mse_weight * e1, schedule.mse_weight * e2)
                grads = _generator_grads(g, d, variant, g_trace, y1_raw, y2_raw, zc, d_trace,
                                         *extra)
                _step(g, grads, g_state, "generator", epoch)
                g_losses.append(loss)

        acc = discriminator_accuracy(g, d, variant, heldout)
        diag = EpochDiagnostics(
            epoch=epoch,
            d_loss=float(np.mean(d_losses)) if d_losses else float("nan"),
            g_loss=float(np.mean(g_losses)) if g_losses else float("nan"),
            d_accuracy=acc,
            wallclock_ms=(time.perf_counter() - t0) * 1e3,
        )
        diagnostics.append(diag)
        if log:
            log(f"adversarial epoch {epoch}: d_loss={diag.d_loss:.4f} "
                f"g_loss={diag.g_loss:.4f} d_acc={acc:.3f}")
    return g, d, diagnostics


def _step(net, grads, state, name, epoch):
    try:
        adam_step(net, grads, state)
    except TrainingError as exc:
        raise TrainingError(f"{name} diverged in adversarial epoch {epoch}: {exc}") from exc


def write_diagnostics(path, diagnostics) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "d_loss", "g_loss", "d_accuracy", "wallclock_ms"])
        for row in diagnostics:
            writer.writerow([row.epoch, f"{row.d_loss:.8g}", f"{row.g_loss:.8g}",
                             f"{row.d_accuracy:.6f}", f"{row.wallclock_ms:.1f}"])


def gradient_suite(seed: int = 0, n_coords: int = 200, variant="VBM") -> dict:
    """Gradient checks for the three losses this module differentiates.

    Batches are normalised spectrogram rows from the synthetic dataset at a
    64-point frame (33 bins), fed to a ``[33, 64, 64, 66]`` generator.

    Returns
    -------
    dict
        Maximum relative error per check: ``"mask_mse"`` (joint MSE through
        the mask layer), ``"d_bce"`` (discriminator) and ``"g_logd"``
        (generator log-D loss through the discriminator's input gradient).
    """
    from .synth import spectrogram_frames

    z, y1, y2 = spectrogram_frames(seed)
    n_bins = z.shape[1]
    g = init_generator(n_bins, (64, 64), seed=seed, dtype=np.float64)
    d = init_discriminator(variant, n_bins, (64, 64), seed=seed + 1, dtype=np.float64)
    pred = generator_separate(g, z)
    real = build_d_input(variant, y1, y2, z)
    fake = build_d_input(variant, pred.y1_hat, pred.y2_hat, z)
    labels = np.r_[np.ones(len(z)), np.zeros(len(z))][:, None]
    return {
        "mask_mse": grad_check(g, "mask_mse", Batch(z, np.hstack([y1, y2])),
                               n_coords=n_coords, seed=seed),
        "d_bce": grad_check(d, "d_adv", Batch(np.vstack([real, fake]), labels),
                            n_coords=n_coords, seed=seed),
        "g_logd": grad_check(g, "logd", Batch(z), n_coords=n_coords, seed=seed,
                             d=d, variant=variant),
    }
