"""Float network layers: input-normalized arcsin units and a cosine head.

Every layer shifts its input by a shared scalar c, divides by smoothed norms on
both the input side and the weight side (so the pre-activation is a cosine in
[-1, 1]), and then applies the chosen arcsin-family activation. The head skips
the activation and returns the normalized logits directly; softmax lives in
the training loss only.

Weights are stored raw. Normalization happens functionally at forward time, so
scaling any weight row leaves the function unchanged and gradients flow through
the norms during training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .activations import DEFAULT_EPS

__all__ = [
    "ActivationKind",
    "ASU",
    "RASU",
    "TASU",
    "DenseLayer",
    "ConvLayer",
    "HeadLayer",
    "GNetModel",
    "dense_forward",
    "conv_forward",
    "head_forward",
    "forward",
    "forward_batch",
    "layer_output_shape",
]

_TWO_OVER_PI = 2.0 / np.pi
_ACT_NAMES = ("asu", "rasu", "tasu")


@dataclass(frozen=True)
class ActivationKind:
    name: str
    kappa: Optional[float] = None

    def __post_init__(self):
        if self.name not in _ACT_NAMES:
            raise ValueError(f"unknown activation {self.name!r}")
        if self.name == "tasu":
            if self.kappa is None or not np.isfinite(self.kappa) or self.kappa <= 0:
                raise ValueError("tasu needs finite kappa > 0")
        elif self.kappa is not None:
            raise ValueError("kappa only applies to tasu")


ASU = ActivationKind("asu")
RASU = ActivationKind("rasu")


def TASU(kappa: float) -> ActivationKind:
    return ActivationKind("tasu", float(kappa))


def _activate(act: ActivationKind, u: np.ndarray) -> np.ndarray:
    # non-finite values propagate (corrupted-weight evaluation relies on it)
    a = _TWO_OVER_PI * np.arcsin(np.clip(u, -1.0, 1.0))
    if act.name == "asu":
        return a
    if act.name == "rasu":
        return np.maximum(a, 0.0)
    return np.tanh(act.kappa * a)


@dataclass
class DenseLayer:
    W: np.ndarray  # (n, p), raw storage
    c: float
    act: ActivationKind

    def __post_init__(self):
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        if self.W.ndim != 2 or min(self.W.shape) < 1:
            raise ValueError("dense weights must be a (n, p) matrix")
        self.c = float(self.c)


@dataclass
class ConvLayer:
    W: np.ndarray  # (filters, channels, *kernel)
    c: float
    stride: tuple
    padding: tuple
    act: ActivationKind

    def __post_init__(self):
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        rank = self.W.ndim - 2
        if rank not in (1, 2):
            raise ValueError("conv supports 1-D or 2-D kernels")
        self.stride = tuple(int(s) for s in self.stride)
        self.padding = tuple(int(p) for p in self.padding)
        if len(self.stride) != rank or len(self.padding) != rank:
            raise ValueError("stride/padding rank must match the kernel")
        if any(s < 1 for s in self.stride) or any(p < 0 for p in self.padding):
            raise ValueError("stride >= 1 and padding >= 0 required")
        self.c = float(self.c)

    @property
    def spatial_rank(self) -> int:
        return self.W.ndim - 2

    @property
    def kernel_shape(self) -> tuple:
        return self.W.shape[2:]


@dataclass
class HeadLayer:
    W: np.ndarray  # (classes, p)
    c: float = 0.0

    def __post_init__(self):
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape[0] < 2:
            raise ValueError("head needs a (classes >= 2, p) matrix")
        self.c = float(self.c)


Layer = Union[DenseLayer, ConvLayer, HeadLayer]


def layer_output_shape(layer: Layer, in_shape: tuple) -> tuple:
    """Output shape for a given input shape; raises when they do not compose."""
    flat = int(np.prod(in_shape))
    if isinstance(layer, (DenseLayer, HeadLayer)):
        if flat != layer.W.shape[1]:
            raise ValueError(
                f"layer expects {layer.W.shape[1]} inputs, got shape {in_shape}"
            )
        return (layer.W.shape[0],)
    if len(in_shape) != layer.spatial_rank + 1:
        raise ValueError("conv input must be (channels, *spatial)")
    if in_shape[0] != layer.W.shape[1]:
        raise ValueError(
            f"conv expects {layer.W.shape[1]} channels, got {in_shape[0]}"
        )
    out_sp = []
    for d in range(layer.spatial_rank):
        span = in_shape[1 + d] + 2 * layer.padding[d] - layer.kernel_shape[d]
        if span < 0:
            raise ValueError("kernel does not fit the padded input")
        out_sp.append(span // layer.stride[d] + 1)
    return (layer.W.shape[0], *out_sp)


@dataclass
class GNetModel:
    layers: list
    input_shape: tuple

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        if not self.layers:
            raise ValueError("model needs at least one layer")
        if not isinstance(self.layers[-1], HeadLayer):
            raise ValueError("last layer must be the head")
        if any(isinstance(l, HeadLayer) for l in self.layers[:-1]):
            raise ValueError("exactly one head layer, and it must be last")
        shape = self.input_shape
        for layer in self.layers:
            shape = layer_output_shape(layer, shape)

    @property
    def num_classes(self) -> int:
        return self.layers[-1].W.shape[0]

    def output_shapes(self) -> list:
        shapes = []
        shape = self.input_shape
        for layer in self.layers:
            shape = layer_output_shape(layer, shape)
            shapes.append(shape)
        return shapes


# ------------------------------------------------------------------ forwards
def _as_batch(x, expected_rank):
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == expected_rank:
        return X[None], True
    if X.ndim == expected_rank + 1:
        return X, False
    raise ValueError(f"input rank {X.ndim} does not match layer input")


def dense_forward(layer: DenseLayer, x, eps: float = DEFAULT_EPS) -> np.ndarray:
    """tau((2/pi) arcsin(cos)) with cos built from shifted, norm-smoothed parts.

    Accepts a single (p,) vector or a (B, p) batch.
    """
    Xb, single = _as_batch(x, 1)
    if Xb.shape[1] != layer.W.shape[1]:
        raise ValueError("input length does not match weight columns")
    Xp = Xb + layer.c
    xn = np.sqrt(np.sum(Xp * Xp, axis=1) + eps)
    rn = np.sqrt(np.sum(layer.W * layer.W, axis=1) + eps)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = (Xp @ layer.W.T) / (xn[:, None] * rn[None, :])
    out = _activate(layer.act, u)
    return out[0] if single else out


def _im2col(Xp: np.ndarray, kernel_shape, stride, padding):
    """Strided patches of the zero-padded input: (B, positions, patch_len)."""
    rank = len(kernel_shape)
    pads = [(0, 0), (0, 0)] + [(p, p) for p in padding]
    padded = np.pad(Xp, pads)
    win = sliding_window_view(
        padded, kernel_shape, axis=tuple(range(2, 2 + rank))
    )
    sub = (slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)
    win = win[sub]
    out_sp = win.shape[2 : 2 + rank]
    perm = (0,) + tuple(range(2, 2 + rank)) + (1,) + tuple(range(2 + rank, 2 + 2 * rank))
    patch_len = Xp.shape[1] * int(np.prod(kernel_shape))
    patches = np.ascontiguousarray(win.transpose(perm)).reshape(
        Xp.shape[0], int(np.prod(out_sp)), patch_len
    )
    return patches, out_sp


def conv_forward(layer: ConvLayer, X, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Per-position cosine against each filter, then the activation.

    The denominator couples the smoothed filter norm with the energy of the
    padded window, so each pre-activation is a true cosine. Accepts
    (channels, *spatial) or a leading batch axis.
    """
    Xb, single = _as_batch(X, layer.spatial_rank + 1)
    layer_output_shape(layer, Xb.shape[1:])  # validates
    Xp = Xb + layer.c
    patches, out_sp = _im2col(Xp, layer.kernel_shape, layer.stride, layer.padding)
    Wmat = layer.W.reshape(layer.W.shape[0], -1)
    num = patches @ Wmat.T
    a = np.sqrt(np.sum(patches * patches, axis=2) + eps)
    rn = np.sqrt(np.sum(Wmat * Wmat, axis=1) + eps)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = num / (a[:, :, None] * rn[None, None, :])
    out = _activate(layer.act, u)
    out = out.transpose(0, 2, 1).reshape(Xb.shape[0], layer.W.shape[0], *out_sp)
    return out[0] if single else out


def head_forward(layer: HeadLayer, y, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Normalized logits (cosines in [-1, 1]); no activation, no softmax."""
    Yb, single = _as_batch(y, 1)
    if Yb.shape[1] != layer.W.shape[1]:
        raise ValueError("input length does not match head columns")
    Yp = Yb + layer.c
    yn = np.sqrt(np.sum(Yp * Yp, axis=1) + eps)
    rn = np.sqrt(np.sum(layer.W * layer.W, axis=1) + eps)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = (Yp @ layer.W.T) / (yn[:, None] * rn[None, :])
    z = np.clip(z, -1.0, 1.0)
    return z[0] if single else z


def forward_batch(model: GNetModel, X, eps: float = DEFAULT_EPS):
    """(logits, trace) over a batch; trace entries keep natural layer shapes."""
    Xb = np.asarray(X, dtype=np.float64)
    if Xb.shape[1:] != model.input_shape:
        raise ValueError(
            f"input shape {Xb.shape[1:]} does not match model {model.input_shape}"
        )
    trace = []
    cur = Xb
    for layer in model.layers:
        if isinstance(layer, (DenseLayer, HeadLayer)) and cur.ndim > 2:
            cur = cur.reshape(cur.shape[0], -1)
        if isinstance(layer, DenseLayer):
            cur = dense_forward(layer, cur, eps)
        elif isinstance(layer, ConvLayer):
            cur = conv_forward(layer, cur, eps)
        else:
            cur = head_forward(layer, cur, eps)
        trace.append(cur)
    return trace[-1], trace


def forward(model: GNetModel, x, eps: float = DEFAULT_EPS):
    """Single-sample cascade: returns (logits, per-layer outputs)."""
    X = np.asarray(x, dtype=np.float64)
    if X.shape != model.input_shape:
        raise ValueError(
            f"input shape {X.shape} does not match model {model.input_shape}"
        )
    logits, trace = forward_batch(model, X[None], eps)
    return logits[0], [t[0] for t in trace]
