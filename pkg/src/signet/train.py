"""Supervised training with hand-written backprop through the cosine layers.

The chain rule runs through both smoothed norms (input side and weight side),
so raw weights stay unconstrained while the function sees only directions.
The arcsin derivative is evaluated at a clamped argument to dodge its poles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .activations import DEFAULT_EPS
from .data import DataError, Dataset
from .gnet import (
    ASU,
    ActivationKind,
    ConvLayer,
    DenseLayer,
    GNetModel,
    HeadLayer,
    _im2col,
    forward_batch,
    layer_output_shape,
)
from .rng import RngStream, gauss_matrix

__all__ = [
    "DELTA_G",
    "LayerSpec",
    "ArchSpec",
    "TrainConfig",
    "Gradients",
    "DriftReport",
    "init_model",
    "loss",
    "backward",
    "fit",
    "evaluate",
    "weight_drift",
]

DELTA_G = 1e-6  # clamp margin for the arcsin derivative near |u| = 1
_TWO_OVER_PI = 2.0 / np.pi


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "dense" | "conv" | "head"
    width: int  # units, filters, or classes
    act: ActivationKind = ASU
    kernel: tuple = ()
    stride: tuple = ()
    padding: tuple = ()

    def __post_init__(self):
        if self.kind not in ("dense", "conv", "head"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.width < 1:
            raise ValueError("layer width must be positive")
        if self.kind == "conv" and len(self.kernel) not in (1, 2):
            raise ValueError("conv needs a 1-D or 2-D kernel")


@dataclass(frozen=True)
class ArchSpec:
    input_shape: tuple
    layers: tuple


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    lr: float
    seed: int
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eps_norm: float = DEFAULT_EPS
    optimizer: str = "adam"
    init: str = "gauss-row-unit"
    train_head_shift: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("moment coefficients must lie in [0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.init != "gauss-row-unit":
            raise ValueError(f"unknown init style {self.init!r}")
        if not self.eps_norm > 0:
            raise ValueError("eps_norm must be positive")


@dataclass
class Gradients:
    dW: list
    dc: list


def init_model(arch: ArchSpec, rng: RngStream) -> GNetModel:
    """Gaussian rows normalized to unit length; every shift starts at zero."""
    layers = []
    shape = tuple(arch.input_shape)
    for i, spec in enumerate(arch.layers):
        sub = rng.derive(i)
        if spec.kind == "conv":
            ch = shape[0]
            cols = ch * int(np.prod(spec.kernel))
            g = gauss_matrix(sub, spec.width, cols)
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            rank = len(spec.kernel)
            layer = ConvLayer(
                g.reshape(spec.width, ch, *spec.kernel),
                c=0.0,
                stride=spec.stride or (1,) * rank,
                padding=spec.padding or (0,) * rank,
                act=spec.act,
            )
        else:
            cols = int(np.prod(shape))
            g = gauss_matrix(sub, spec.width, cols)
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            if spec.kind == "dense":
                layer = DenseLayer(g, c=0.0, act=spec.act)
            else:
                layer = HeadLayer(g, c=0.0)
        shape = layer_output_shape(layer, shape)
        layers.append(layer)
    return GNetModel(layers, tuple(arch.input_shape))


def loss(logits, label: int) -> float:
    """Cross-entropy of softmax(logits) against an integer label."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("loss takes a single logit vector")
    if not 0 <= label < z.shape[0]:
        raise ValueError("label out of range")
    m = float(np.max(z))
    lse = m + math.log(float(np.sum(np.exp(z - m))))
    return lse - float(z[label])


def _softmax(Z: np.ndarray) -> np.ndarray:
    m = np.max(Z, axis=1, keepdims=True)
    e = np.exp(Z - m)
    return e / np.sum(e, axis=1, keepdims=True)


def _act_deriv(act: ActivationKind, U, Y, delta_g):
    Uc = np.clip(U, -1.0 + delta_g, 1.0 - delta_g)
    base = _TWO_OVER_PI / np.sqrt(1.0 - Uc * Uc)
    if act.name == "asu":
        return base
    if act.name == "rasu":
        return np.where(U > 0, base, 0.0)
    return act.kappa * (1.0 - Y * Y) * base


def _col2im(dP, layer: ConvLayer, xp_shape, out_sp):
    """Scatter patch gradients back onto the (padded) input, then crop."""
    B, ch = xp_shape[:2]
    rank = layer.spatial_rank
    padded_sp = tuple(
        xp_shape[2 + d] + 2 * layer.padding[d] for d in range(rank)
    )
    dpad = np.zeros((B, ch) + padded_sp)
    dPk = dP.reshape(B, *out_sp, ch, *layer.kernel_shape)
    if rank == 1:
        (o0,) = out_sp
        (s0,) = layer.stride
        for i in range(layer.kernel_shape[0]):
            dpad[:, :, i : i + s0 * o0 : s0] += dPk[:, :, :, i].transpose(0, 2, 1)
    else:
        o0, o1 = out_sp
        s0, s1 = layer.stride
        for i in range(layer.kernel_shape[0]):
            for j in range(layer.kernel_shape[1]):
                dpad[:, :, i : i + s0 * o0 : s0, j : j + s1 * o1 : s1] += dPk[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
    crop = (slice(None), slice(None)) + tuple(
        slice(p, p + xp_shape[2 + d]) for d, p in enumerate(layer.padding)
    )
    return dpad[crop]


def backward(model: GNetModel, X, labels, eps: float = DEFAULT_EPS, delta_g: float = DELTA_G):
    """Mean batch loss and exact analytic gradients for every W and c."""
    Xb = np.asarray(X, dtype=np.float64)
    y = np.asarray(labels)
    if Xb.shape[0] == 0:
        raise ValueError("empty batch")
    if Xb.shape[0] != y.shape[0]:
        raise ValueError("inputs and labels disagree on batch size")
    B = Xb.shape[0]

    caches = []
    cur = Xb
    for layer in model.layers:
        flat_from = None
        if isinstance(layer, (DenseLayer, HeadLayer)) and cur.ndim > 2:
            flat_from = cur.shape
            cur = cur.reshape(B, -1)
        if isinstance(layer, ConvLayer):
            Xp = cur + layer.c
            patches, out_sp = _im2col(
                Xp, layer.kernel_shape, layer.stride, layer.padding
            )
            Wmat = layer.W.reshape(layer.W.shape[0], -1)
            a = np.sqrt(np.sum(patches * patches, axis=2) + eps)
            r = np.sqrt(np.sum(Wmat * Wmat, axis=1) + eps)
            U = (patches @ Wmat.T) / (a[:, :, None] * r[None, None, :])
            Y = _apply_act(layer.act, U)
            caches.append(("conv", layer, Xp.shape, patches, a, r, U, Y, out_sp, flat_from))
            cur = Y.transpose(0, 2, 1).reshape(B, layer.W.shape[0], *out_sp)
        else:
            Xp = cur + layer.c
            a = np.sqrt(np.sum(Xp * Xp, axis=1) + eps)
            r = np.sqrt(np.sum(layer.W * layer.W, axis=1) + eps)
            U = (Xp @ layer.W.T) / (a[:, None] * r[None, :])
            if isinstance(layer, HeadLayer):
                Y = np.clip(U, -1.0, 1.0)
            else:
                Y = _apply_act(layer.act, U)
            caches.append(("dense", layer, None, Xp, a, r, U, Y, None, flat_from))
            cur = Y

    logits = cur
    P = _softmax(logits)
    mean_loss = float(
        np.mean(-np.log(np.maximum(P[np.arange(B), y], 1e-300)))
    )
    onehot = np.zeros_like(P)
    onehot[np.arange(B), y] = 1.0
    G = (P - onehot) / B

    n_layers = len(model.layers)
    dW = [None] * n_layers
    dc = [0.0] * n_layers
    for li in range(n_layers - 1, -1, -1):
        kind, layer, xp_shape, store, a, r, U, Y, out_sp, flat_from = caches[li]
        if kind == "dense":
            Xp = store
            if isinstance(layer, HeadLayer):
                Gu = G  # clip is inactive in exact arithmetic (|u| < 1)
            else:
                Gu = G * _act_deriv(layer.act, U, Y, delta_g)
            s_w = np.sum(Gu * U, axis=0)
            dW[li] = ((Gu / a[:, None]).T @ Xp) / r[:, None] - s_w[:, None] * layer.W / (
                r * r
            )[:, None]
            s_x = np.sum(Gu * U, axis=1)
            dXp = ((Gu / r[None, :]) @ layer.W) / a[:, None] - s_x[:, None] * Xp / (
                a * a
            )[:, None]
            dc[li] = float(np.sum(dXp))
            G = dXp.reshape(flat_from) if flat_from is not None else dXp
        else:
            patches = store
            F = layer.W.shape[0]
            G3 = G.reshape(B, F, -1).transpose(0, 2, 1)
            Gu = G3 * _act_deriv(layer.act, U, Y, delta_g)
            Wmat = layer.W.reshape(F, -1)
            GA = Gu / a[:, :, None]
            s_w = np.sum(Gu * U, axis=(0, 1))
            dWmat = np.einsum("bpf,bps->fs", GA, patches) / r[:, None] - s_w[
                :, None
            ] * Wmat / (r * r)[:, None]
            dW[li] = dWmat.reshape(layer.W.shape)
            s_p = np.sum(Gu * U, axis=2)
            dP = ((Gu / r[None, None, :]) @ Wmat) / a[:, :, None] - s_p[
                :, :, None
            ] * patches / (a * a)[:, :, None]
            dXp = _col2im(dP, layer, xp_shape, out_sp)
            dc[li] = float(np.sum(dXp))
            G = dXp
        if not (np.all(np.isfinite(dW[li])) and math.isfinite(dc[li])):
            raise ValueError(f"non-finite gradient in layer {li}")

    return mean_loss, Gradients(dW=dW, dc=dc)


def _apply_act(act, U):
    A = _TWO_OVER_PI * np.arcsin(np.clip(U, -1.0, 1.0))
    if act.name == "asu":
        return A
    if act.name == "rasu":
        return np.maximum(A, 0.0)
    return np.tanh(act.kappa * A)


def _snap_float32(model: GNetModel) -> None:
    for layer in model.layers:
        layer.W = layer.W.astype(np.float32).astype(np.float64)
        layer.c = float(np.float32(layer.c))


def fit(
    model: GNetModel,
    dataset: Dataset,
    config: TrainConfig,
    eval_dataset: Optional[Dataset] = None,
):
    """Minibatch training; shuffling and all updates flow from config.seed.

    Returns the model (weights snapped to float32-representable reals so saved
    files reproduce in-memory behavior bit for bit) and per-epoch history.
    """
    n = len(dataset)
    if n == 0:
        raise DataError("empty dataset")
    if config.batch_size > n:
        raise ValueError("batch size exceeds dataset size")
    X = dataset.inputs.reshape((n,) + model.input_shape)
    y = dataset.labels

    stream = RngStream(config.seed).derive(0x5F17)
    mW = [np.zeros_like(l.W) for l in model.layers]
    vW = [np.zeros_like(l.W) for l in model.layers]
    mc = [0.0] * len(model.layers)
    vc = [0.0] * len(model.layers)
    t = 0
    history = []
    for epoch in range(config.epochs):
        perm = np.argsort(stream.derive(epoch).uniform(n), kind="stable")
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            batch_loss_val, grads = backward(model, X[idx], y[idx], eps=config.eps_norm)
            loss_sum += batch_loss_val * idx.size
            if not config.train_head_shift:
                grads.dc[-1] = 0.0
            t += 1
            if config.optimizer == "adam":
                b1c = 1.0 - config.beta1**t
                b2c = 1.0 - config.beta2**t
                for li, layer in enumerate(model.layers):
                    g = grads.dW[li]
                    mW[li] = config.beta1 * mW[li] + (1 - config.beta1) * g
                    vW[li] = config.beta2 * vW[li] + (1 - config.beta2) * g * g
                    layer.W -= config.lr * (mW[li] / b1c) / (np.sqrt(vW[li] / b2c) + config.adam_eps)
                    gc = grads.dc[li]
                    mc[li] = config.beta1 * mc[li] + (1 - config.beta1) * gc
                    vc[li] = config.beta2 * vc[li] + (1 - config.beta2) * gc * gc
                    layer.c -= config.lr * (mc[li] / b1c) / (
                        math.sqrt(vc[li] / b2c) + config.adam_eps
                    )
            else:
                for li, layer in enumerate(model.layers):
                    layer.W -= config.lr * grads.dW[li]
                    layer.c -= config.lr * grads.dc[li]
        for li, layer in enumerate(model.layers):
            if not (np.all(np.isfinite(layer.W)) and math.isfinite(layer.c)):
                raise RuntimeError(f"non-finite parameters in layer {li} after epoch {epoch + 1}")
        history.append(
            {
                "epoch": epoch + 1,
                "loss": loss_sum / n,
                "train_acc": evaluate(model, dataset, eps=config.eps_norm),
                "test_acc": (
                    evaluate(model, eval_dataset, eps=config.eps_norm)
                    if eval_dataset is not None
                    else float("nan")
                ),
            }
        )
    _snap_float32(model)
    return model, history


def evaluate(model: GNetModel, dataset: Dataset, eps: float = DEFAULT_EPS, batch: int = 512) -> float:
    """Argmax accuracy; samples with non-finite logits count as misclassified."""
    n = len(dataset)
    if n == 0:
        raise DataError("empty dataset")
    X = dataset.inputs.reshape((n,) + model.input_shape)
    correct = 0
    for start in range(0, n, batch):
        chunk = X[start : start + batch]
        logits, _ = forward_batch(model, chunk, eps)
        ok = np.all(np.isfinite(logits), axis=1)
        pred = np.argmax(logits, axis=1)
        correct += int(np.sum(ok & (pred == dataset.labels[start : start + batch])))
    return correct / n


def _ks_statistic(a: np.ndarray, b: np.ndarray) -> float:
    a = np.sort(a)
    b = np.sort(b)
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


@dataclass
class DriftReport:
    layers: list = field(default_factory=list)

    @property
    def max_ks(self) -> float:
        return max((e["ks"] for e in self.layers), default=0.0)


def weight_drift(model_a: GNetModel, model_b: GNetModel) -> DriftReport:
    """Per-layer 64-bin histograms plus the two-sample KS statistic."""
    if len(model_a.layers) != len(model_b.layers):
        raise ValueError("models have different depths")
    report = DriftReport()
    for li, (la, lb) in enumerate(zip(model_a.layers, model_b.layers)):
        if la.W.shape != lb.W.shape:
            raise ValueError(f"layer {li} shapes differ")
        wa = la.W.ravel()
        wb = lb.W.ravel()
        lo = min(wa.min(), wb.min())
        hi = max(wa.max(), wb.max())
        if hi == lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, 65)
        hist_a, _ = np.histogram(wa, bins=edges)
        hist_b, _ = np.histogram(wb, bins=edges)
        report.layers.append(
            {
                "layer": li,
                "ks": _ks_statistic(wa, wb),
                "edges": edges.tolist(),
                "hist_a": hist_a.tolist(),
                "hist_b": hist_b.tolist(),
            }
        )
    return report
