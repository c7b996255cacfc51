"""Dense feed-forward networks with hand-written backpropagation and Adam.

This is deliberately not a general autodiff system. A :class:`DenseNet` is a
chain of affine layers, each followed by ``relu``, ``sigmoid`` or ``linear``.
:func:`forward` returns a :class:`Trace` that :func:`backward` consumes to
produce parameter gradients *and* the gradient with respect to the network
input, which is what lets the adversarial loss flow from the discriminator
back into the generator.

Loss compositions used for training register themselves in :data:`LOSSES`
so that :func:`grad_check` can verify each of them against central finite
differences.
"""
from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import (CheckpointError, FormatError, InputError, IntegrityError,
                     ParameterError, ShapeError, TrainingError, UsageError)

ACTIVATIONS = ("relu", "sigmoid", "linear")
_ACT_TAG = {name: i for i, name in enumerate(ACTIVATIONS)}


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox generator; every random draw in the package uses it."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape


@dataclass
class DenseNet:
    layers: list[Layer]
    seed: int = 0

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [layer.weight.shape[0] for layer in self.layers]

    @property
    def dtype(self):
        return self.layers[0].weight.dtype

    def params(self) -> list[np.ndarray]:
        """Flat list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def astype(self, dtype) -> "DenseNet":
        layers = [Layer(l.weight.astype(dtype), l.bias.astype(dtype), l.activation)
                  for l in self.layers]
        return DenseNet(layers, self.seed)

    def copy(self) -> "DenseNet":
        return self.astype(self.dtype)

    def n_params(self) -> int:
        return sum(p.size for p in self.params())


@dataclass
class Trace:
    """Cached values from :func:`forward` needed by :func:`backward`."""

    inputs: list[np.ndarray]  # input to each layer
    outputs: list[np.ndarray]  # post-activation output of each layer

    @property
    def output(self) -> np.ndarray:
        return self.outputs[-1]


def init_network(layer_dims, activations, seed: int = 0, dtype=np.float32,
                 output_bias: float = 0.0) -> DenseNet:
    """Build a network with He/Glorot-uniform weights.

    ``relu`` layers use He-uniform (limit ``sqrt(6 / fan_in)``); ``sigmoid``
    and ``linear`` layers use Glorot-uniform (limit
    ``sqrt(6 / (fan_in + fan_out))``). Weights are drawn in float64 from a
    Philox stream seeded with ``seed`` and then cast, so the same seed gives
    bit-identical parameters. Biases are zero except the last layer's, which
    are set to ``output_bias``.
    """
    layer_dims = [int(d) for d in layer_dims]
    if isinstance(activations, str):
        activations = [activations] * (len(layer_dims) - 1)
    activations = list(activations)
    if len(layer_dims) < 2:
        raise ParameterError("need at least one layer (two dims)")
    if any(d <= 0 for d in layer_dims):
        raise ParameterError(f"layer dims must be positive, got {layer_dims}")
    if len(activations) != len(layer_dims) - 1:
        raise ParameterError(
            f"{len(layer_dims) - 1} layers but {len(activations)} activations")
    for act in activations:
        if act not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {act!r}")

    rng = make_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(layer_dims[:-1], layer_dims[1:], activations):
        if act == "relu":
            limit = np.sqrt(6.0 / fan_in)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype)
        layers.append(Layer(w, np.zeros(fan_out, dtype=dtype), act))
    layers[-1].bias[:] = output_bias
    return DenseNet(layers, int(seed))


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Overflow-safe logistic function."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(x, act):
    if act == "relu":
        return np.maximum(x, 0)
    if act == "sigmoid":
        return sigmoid(x)
    return x


# grad_check sets this to a list to collect relu on/off patterns from forward()
_relu_log: list | None = None


def forward(net: DenseNet, inputs) -> Trace:
    """Run the network on a ``(B, input_dim)`` batch."""
    x = np.asarray(inputs)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"expected (B, {net.input_dim}) input, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("non-finite network input")
    x = x.astype(net.dtype, copy=False)

    ins, outs = [], []
    for layer in net.layers:
        ins.append(x)
        x = _activate(x @ layer.weight.T + layer.bias, layer.activation)
        outs.append(x)
        if _relu_log is not None and layer.activation == "relu":
            _relu_log.append(np.packbits(x > 0).tobytes())
    return Trace(ins, outs)


def predict(net: DenseNet, inputs) -> np.ndarray:
    return forward(net, inputs).output


def backward(net: DenseNet, trace: Trace, output_grad):
    """Reverse-mode gradients of a scalar loss through ``net``.

    Parameters
    ----------
    output_grad : ndarray, shape (B, output_dim)
        dLoss/dOutput for the batch in ``trace``.

    Returns
    -------
    grads : list of ndarray
        Aligned with :meth:`DenseNet.params`.
    input_grad : ndarray, shape (B, input_dim)
    """
    if len(trace.outputs) != len(net.layers) or any(
            o.shape[1] != l.weight.shape[0] for o, l in zip(trace.outputs, net.layers)):
        raise UsageError("trace does not belong to this network")
    g = np.asarray(output_grad, dtype=net.dtype)
    if g.shape != trace.output.shape:
        raise UsageError(f"output_grad {g.shape} vs output {trace.output.shape}")

    grads: list[np.ndarray] = [None] * (2 * len(net.layers))
    for k in range(len(net.layers) - 1, -1, -1):
        layer, out = net.layers[k], trace.outputs[k]
        if layer.activation == "relu":
            g = g * (out > 0)
        elif layer.activation == "sigmoid":
            g = g * out * (1 - out)
        grads[2 * k] = g.T @ trace.inputs[k]
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ layer.weight
    return grads, g


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_net(cls, net: DenseNet, **hyper) -> "AdamState":
        state = cls(**hyper)
        state.m = [np.zeros_like(p) for p in net.params()]
        state.v = [np.zeros_like(p) for p in net.params()]
        return state


def adam_step(net: DenseNet, grads, state: AdamState) -> tuple[DenseNet, AdamState]:
    """One bias-corrected Adam update, applied to ``net`` in place."""
    params = net.params()
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ShapeError("gradient shapes do not mirror parameters")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in layer {i // 2}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = g.astype(p.dtype, copy=False)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return net, state


# --------------------------------------------------------------------------
# Losses and the gradient checker
# --------------------------------------------------------------------------

@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs))
        if self.inputs.shape[0] < 1:
            raise ShapeError("batch must hold at least one row")
        if not np.all(np.isfinite(self.inputs)):
            raise InputError("non-finite batch inputs")
        if self.targets is not None:
            self.targets = np.atleast_2d(np.asarray(self.targets))
            if self.targets.shape[0] != self.inputs.shape[0]:
                raise ShapeError("inputs and targets differ in batch size")


def widen(x):
    """Promote to at least float64 (wider types such as longdouble pass through)."""
    x = np.asarray(x)
    return x.astype(np.promote_types(x.dtype, np.float64), copy=False)


# A loss fn takes (net, batch, **kwargs) and returns (loss, grads aligned with net.params()).
# Losses registered with ``elementwise=True`` also accept ``terms=True`` and then
# return the array of summands of the loss instead; grad_check differences
# those term by term, which keeps unchanged terms from drowning small gradients.
LossFn = Callable[..., tuple]
LOSSES: dict[str, LossFn] = {}


def register_loss(name: str, elementwise: bool = False):
    def deco(fn):
        fn.elementwise = elementwise
        LOSSES[name] = fn
        return fn
    return deco


@register_loss("mse", elementwise=True)
def mse_loss(net: DenseNet, batch: Batch, terms: bool = False):
    """Mean over rows of the summed squared error."""
    trace = forward(net, batch.inputs)
    diff = trace.output - batch.targets
    b = diff.shape[0]
    parts = widen(diff) ** 2 / b
    if terms:
        return parts
    loss = np.sum(parts)
    grads, _ = backward(net, trace, 2 * diff / b)
    return loss, grads


BCE_CLAMP = 1e-7


def clamp_prob(p):
    return np.clip(p, BCE_CLAMP, 1 - BCE_CLAMP)


@register_loss("bce", elementwise=True)
def bce_loss(net: DenseNet, batch: Batch, terms: bool = False):
    """Binary cross-entropy against 0/1 targets on a sigmoid output."""
    trace = forward(net, batch.inputs)
    p = trace.output
    y = batch.targets
    pc = clamp_prob(p)
    b = p.shape[0]
    parts = -(y * np.log(pc) + (1 - y) * np.log(1 - pc)) / b
    if terms:
        return parts
    loss = np.sum(parts)
    inside = (p > BCE_CLAMP) & (p < 1 - BCE_CLAMP)
    dp = np.where(inside, (pc - y) / (pc * (1 - pc)), 0.0) / b
    grads, _ = backward(net, trace, dp)
    return loss, grads


def _relu_pattern(fn, *args, **kwargs):
    """Call ``fn`` and return its result plus the relu patterns it produced."""
    global _relu_log
    _relu_log = []
    try:
        out = fn(*args, **kwargs)
        return out, b"".join(_relu_log)
    finally:
        _relu_log = None


def grad_check(net: DenseNet, loss: str, batch: Batch, eps: float = 1e-5,
               n_coords: int = 200, seed: int = 0, **loss_kwargs) -> float:
    """Compare analytic gradients with central finite differences.

    Analytic gradients are computed with the network promoted to float64.
    The finite-difference side runs the same loss in extended precision
    (``np.longdouble``), so that cancellation in ``L(p + h) - L(p - h)``
    does not swamp small gradient coordinates. Losses that can report their
    summands are differenced term by term for the same reason. On platforms
    where ``longdouble`` is plain float64 this degrades to an ordinary
    float64 check.

    A central difference is only meaningful when no relu switches on or off
    inside ``[p - h, p + h]``. When a perturbed pass changes any relu
    pattern, the step ``h`` is divided by 10 (at most three times).

    Parameters
    ----------
    eps : float
        Initial finite-difference step.
    n_coords : int
        Parameter coordinates to check (all of them, if fewer), chosen with
        a seeded generator.

    Returns
    -------
    float
        ``max |g_a - g_n| / max(|g_a|, |g_n|, 1e-12)`` over the sampled
        coordinates.
    """
    fn = LOSSES[loss]
    termwise = getattr(fn, "elementwise", False)

    def promote(dtype):
        b = Batch(np.asarray(batch.inputs, dtype=dtype),
                  None if batch.targets is None else np.asarray(batch.targets, dtype))
        kw = {k: (v.astype(dtype) if isinstance(v, DenseNet) else v)
              for k, v in loss_kwargs.items()}
        return net.astype(dtype), b, kw

    net64, batch64, kw64 = promote(np.float64)
    _, analytic = fn(net64, batch64, **kw64)
    wide, batch_w, kw_w = promote(np.longdouble)
    extra = {"terms": True} if termwise else {}

    def evaluate():
        out, pattern = _relu_pattern(fn, wide, batch_w, **extra, **kw_w)
        return (out if termwise else out[0]), pattern

    _, base_pattern = evaluate()

    def central(p, j, saved, h):
        # (L(p + h) - L(p - h)) / 2h, and whether every relu kept its state
        p[j] = saved + h
        up, pat_up = evaluate()
        p[j] = saved - h
        down, pat_down = evaluate()
        p[j] = saved
        delta = math.fsum(np.ravel(up - down).tolist()) if termwise else up - down
        return delta / (2 * h), pat_up == base_pattern == pat_down

    params = wide.params()
    sizes = [p.size for p in params]
    total = sum(sizes)
    rng = make_rng(seed)
    picks = np.arange(total) if total <= n_coords else rng.choice(total, n_coords, replace=False)
    offsets = np.cumsum([0] + sizes)

    worst = 0.0
    for flat in picks:
        i = int(np.searchsorted(offsets, flat, side="right") - 1)
        p = params[i].reshape(-1)
        j = flat - offsets[i]
        saved = p[j]
        h = np.longdouble(eps)
        for _ in range(4):
            numeric, smooth = central(p, j, saved, h)
            if smooth:
                break
            h /= 10
        numeric = float(numeric)
        a = float(analytic[i].reshape(-1)[j])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
        worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

_CKPT_MAGIC = b"SVSG"
_CKPT_VERSION = 1


def save_checkpoint(path, net: DenseNet) -> None:
    """Write ``net`` in the ``SVSG`` v1 binary format (float32 payload + CRC32)."""
    parts = [_CKPT_MAGIC, struct.pack("<II", _CKPT_VERSION, len(net.layers))]
    for layer in net.layers:
        out_dim, in_dim = layer.weight.shape
        parts.append(struct.pack("<IIB", in_dim, out_dim, _ACT_TAG[layer.activation]))
    for layer in net.layers:
        parts.append(np.ascontiguousarray(layer.weight, dtype="<f4").tobytes())
    for layer in net.layers:
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    parts.append(struct.pack("<Q", net.seed & 0xFFFFFFFFFFFFFFFF))
    payload = b"".join(parts)
    Path(path).write_bytes(payload + struct.pack("<I", zlib.crc32(payload)))


def load_checkpoint(path) -> DenseNet:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != _CKPT_MAGIC:
        raise FormatError(f"{path}: not an SVSG checkpoint")
    payload, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise IntegrityError(f"{path}: CRC mismatch")
    version, n_layers = struct.unpack_from("<II", payload, 4)
    if version != _CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    shapes = []
    for _ in range(n_layers):
        in_dim, out_dim, tag = struct.unpack_from("<IIB", payload, pos)
        pos += 9
        if tag >= len(ACTIVATIONS):
            raise FormatError(f"{path}: bad activation tag {tag}")
        shapes.append((in_dim, out_dim, ACTIVATIONS[tag]))
    expected = pos + 4 * sum(o * i + o for i, o, _ in shapes) + 8
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    weights = []
    for in_dim, out_dim, _ in shapes:
        n = in_dim * out_dim
        weights.append(np.frombuffer(payload, "<f4", n, pos).reshape(out_dim, in_dim).astype(np.float32))
        pos += 4 * n
    layers = []
    for (in_dim, out_dim, act), w in zip(shapes, weights):
        b = np.frombuffer(payload, "<f4", out_dim, pos).astype(np.float32)
        pos += 4 * out_dim
        layers.append(Layer(w, b, act))
    (seed,) = struct.unpack_from("<Q", payload, pos)
    for a, b in zip(layers[:-1], layers[1:]):
        if a.weight.shape[0] != b.weight.shape[1]:
            raise FormatError(f"{path}: layer dimensions do not chain")
    return DenseNet(layers, seed)
