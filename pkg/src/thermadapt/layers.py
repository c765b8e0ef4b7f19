"""Layer forward/backward rules and loss functions.

All operations register themselves on the autodiff tape (:mod:`.tensor`).
Convolutions are valid (no padding), stride 1; pooling is non-overlapping
2x2 max. Spatial inputs may be a single sample ``(C, H, W)`` or a batch
``(N, C, H, W)``; dense inputs ``(in,)`` or ``(N, in)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import Tape, Tensor, register_op

logger = logging.getLogger(__name__)

# Probabilities are clamped here before taking logs.
LOG_CLAMP = 1e-12


@dataclass
class Conv2dLayer:
    """Valid stride-1 cross-correlation with per-channel bias."""

    weights: np.ndarray  # (out_channels, in_channels, kh, kw)
    bias: np.ndarray  # (out_channels,)

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 4:
            raise ShapeError(f"conv2d weights must be 4-d, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"conv2d bias shape {self.bias.shape} does not match "
                f"{self.weights.shape[0]} output channels"
            )


@dataclass
class DenseLayer:
    """Affine map W x + b."""

    weights: np.ndarray  # (out_units, in_units)
    bias: np.ndarray  # (out_units,)

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"dense layer shapes inconsistent: weights {self.weights.shape}, "
                f"bias {self.bias.shape}"
            )


@dataclass
class GradientReversal:
    """Identity forward; backward multiplies the gradient by -coefficient."""

    coefficient: float = 1.0

    def __post_init__(self):
        if self.coefficient < 0:
            raise ValueError("gradient reversal coefficient must be >= 0")


def grl_forward(values: np.ndarray, coefficient: float) -> np.ndarray:
    """Exact identity (returns its input unchanged)."""
    return values


def grl_backward(upstream_gradient: np.ndarray, coefficient: float) -> np.ndarray:
    """Reversed, scaled gradient: -coefficient * upstream."""
    return (-coefficient) * upstream_gradient


# ---------------------------------------------------------------------------
# Tape operations.


def _as_batched(x: np.ndarray, op: str):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"{op}: expected (C,H,W) or (N,C,H,W), got {x.shape}")


@register_op("conv2d")
def _op_conv2d(values, attrs, needs):
    x, w, b = values
    xb, squeeze = _as_batched(x, "conv2d")
    n, c, h, width = xb.shape
    out_ch, in_ch, kh, kw = w.shape
    if c != in_ch:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {in_ch}")
    if h < kh or width < kw:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} exceeds spatial input {h}x{width}"
        )
    ho, wo = h - kh + 1, width - kw + 1

    # im2col: one row per output position, columns in (c, kh, kw) order.
    patches = sliding_window_view(xb, (kh, kw), axis=(2, 3))
    cols = np.ascontiguousarray(patches.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, c * kh * kw
    )
    out2d = cols @ w.reshape(out_ch, -1).T
    out2d += b[None, :]
    out = np.ascontiguousarray(out2d.reshape(n, ho, wo, out_ch).transpose(0, 3, 1, 2))

    def backward(g):
        gb = g[None] if squeeze else g
        gflat = np.ascontiguousarray(gb.transpose(0, 2, 3, 1)).reshape(
            n * ho * wo, out_ch
        )
        grad_x = None
        if needs[0]:
            # One (N*Ho*Wo, O) @ (O, C) product per kernel tap, routed back
            # to the input cells that tap read from. Accumulate channel-last
            # so the inner axis stays contiguous, transpose once at the end.
            gx = np.zeros((n, h, width, c), dtype=np.float64)
            for u in range(kh):
                for v in range(kw):
                    part = gflat @ np.ascontiguousarray(w[:, :, u, v])
                    gx[:, u : u + ho, v : v + wo, :] += part.reshape(n, ho, wo, c)
            gx = np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
            grad_x = gx[0] if squeeze else gx
        grad_w = None
        if needs[1]:
            grad_w = (gflat.T @ cols).reshape(out_ch, in_ch, kh, kw)
        grad_b = gflat.sum(axis=0) if needs[2] else None
        return [grad_x, grad_w, grad_b]

    return out[0] if squeeze else out, backward


@register_op("maxpool2")
def _op_maxpool2(values, attrs, needs):
    (x,) = values
    xb, squeeze = _as_batched(x, "maxpool2")
    n, c, h, w = xb.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2: spatial dims must be even, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    windows = xb.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, h2, w2, 4
    )
    # argmax returns the first maximum: row-major tie-break within the window.
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = g[None] if squeeze else g
        buf = np.zeros((n, c, h2, w2, 4), dtype=np.float64)
        np.put_along_axis(buf, idx[..., None], gb[..., None], axis=-1)
        gx = buf.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, h, w
        )
        return [gx[0] if squeeze else gx]

    return out[0] if squeeze else out, backward


@register_op("dense")
def _op_dense(values, attrs, needs):
    x, w, b = values
    out_units, in_units = w.shape
    if x.ndim == 1:
        if x.shape[0] != in_units:
            raise ShapeError(
                f"dense: input length {x.shape[0]} does not match {in_units} units"
            )
        out = w @ x + b

        def backward(g):
            return [
                w.T @ g if needs[0] else None,
                np.outer(g, x) if needs[1] else None,
                g if needs[2] else None,
            ]

        return out, backward
    if x.ndim == 2:
        if x.shape[1] != in_units:
            raise ShapeError(
                f"dense: input width {x.shape[1]} does not match {in_units} units"
            )
        out = x @ w.T + b[None, :]

        def backward(g):
            return [
                g @ w if needs[0] else None,
                g.T @ x if needs[1] else None,
                g.sum(axis=0) if needs[2] else None,
            ]

        return out, backward
    raise ShapeError(f"dense: expected 1-d or 2-d input, got {x.shape}")


@register_op("relu")
def _op_relu(values, attrs, needs):
    (x,) = values
    mask = x > 0

    def backward(g):
        return [g * mask]

    return np.where(mask, x, 0.0), backward


@register_op("sigmoid")
def _op_sigmoid(values, attrs, needs):
    (x,) = values
    # Saturated in float64 beyond |x| ~ 40; clip only to avoid exp overflow.
    y = 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))

    def backward(g):
        return [g * y * (1.0 - y)]

    return y, backward


@register_op("softmax")
def _op_softmax(values, attrs, needs):
    (x,) = values
    if x.ndim not in (1, 2) or x.shape[-1] < 1:
        raise ShapeError(f"softmax: expected non-empty 1-d or 2-d input, got {x.shape}")
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return [y * (g - dot)]

    return y, backward


@register_op("grl")
def _op_grl(values, attrs, needs):
    (x,) = values
    lam = attrs["coefficient"]
    if lam < 0:
        raise ValueError("grl: coefficient must be >= 0")

    def backward(g):
        return [grl_backward(g, lam)]

    return grl_forward(x, lam), backward


@register_op("pick_log_loss")
def _op_pick_log_loss(values, attrs, needs):
    (p,) = values
    labels = attrs["labels"]
    if p.ndim == 1:
        label = int(labels)
        if not 0 <= label < p.shape[0]:
            raise ValueError(f"label {label} outside 0..{p.shape[0] - 1}")
        picked = np.array([p[label]])
        scale = 1.0
    elif p.ndim == 2:
        labels = np.asarray(labels)
        if labels.shape != (p.shape[0],):
            raise ShapeError(
                f"labels shape {labels.shape} does not match batch {p.shape[0]}"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= p.shape[1]):
            raise ValueError(f"labels outside 0..{p.shape[1] - 1}")
        picked = p[np.arange(p.shape[0]), labels]
        scale = 1.0 / p.shape[0]
    else:
        raise ShapeError(f"loss expects 1-d or 2-d probabilities, got {p.shape}")

    clamped = np.maximum(picked, LOG_CLAMP)
    n_clamped = int((picked < LOG_CLAMP).sum())
    if n_clamped:
        logger.debug("clamped %d probabilities below %g before log", n_clamped, LOG_CLAMP)
    out = np.asarray(-np.log(clamped).sum() * scale, dtype=np.float64)

    def backward(g):
        gp = np.zeros_like(p)
        coeff = -float(g) * scale / clamped
        if p.ndim == 1:
            gp[int(labels)] = coeff[0]
        else:
            gp[np.arange(p.shape[0]), labels] = coeff
        return [gp]

    return out, backward


@register_op("l2reg")
def _op_l2reg(values, attrs, needs):
    lam = attrs["lam"]
    total = 0.0
    for w in values:
        total += float((w * w).sum())

    def backward(g):
        factor = 2.0 * lam * float(g)
        return [factor * w if need else None for w, need in zip(values, needs)]

    return np.asarray(lam * total, dtype=np.float64), backward


# ---------------------------------------------------------------------------
# Public wrappers.


def conv2d(x: Tensor, layer: Conv2dLayer) -> Tensor:
    tape = x.tape
    return tape.record("conv2d", [x, tape.watch(layer.weights), tape.watch(layer.bias)])


def maxpool2(x: Tensor) -> Tensor:
    return x.tape.record("maxpool2", [x])


def dense(x: Tensor, layer: DenseLayer) -> Tensor:
    tape = x.tape
    return tape.record("dense", [x, tape.watch(layer.weights), tape.watch(layer.bias)])


def relu(x: Tensor) -> Tensor:
    return x.tape.record("relu", [x])


def sigmoid(x: Tensor) -> Tensor:
    return x.tape.record("sigmoid", [x])


def softmax(x: Tensor) -> Tensor:
    return x.tape.record("softmax", [x])


def grl(x: Tensor, coefficient: float) -> Tensor:
    return x.tape.record("grl", [x], coefficient=float(coefficient))


def nll_class_loss(probabilities: Tensor, true_label) -> Tensor:
    """-ln p[label]; for a batch, the mean over samples."""
    return probabilities.tape.record("pick_log_loss", [probabilities], labels=true_label)


def domain_bce_loss(domain_probabilities: Tensor, domain_label) -> Tensor:
    """Binary cross-entropy over the 2-way domain softmax (0=source, 1=target)."""
    return domain_probabilities.tape.record(
        "pick_log_loss", [domain_probabilities], labels=domain_label
    )


def l2_regularizer(weights: Sequence[np.ndarray], lam: float, tape: Tape) -> Tensor:
    """lam * sum of squared weight entries (biases are not passed in)."""
    if lam < 0:
        raise ValueError("regularization strength must be >= 0")
    staged = [tape.watch(w) for w in weights]
    return tape.record("l2reg", staged, lam=float(lam))
