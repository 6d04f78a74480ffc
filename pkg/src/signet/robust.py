"""Weight-corruption experiments for the float cascade and its binary twin.

Three fault models: inverting packed sign bits in every converted layer,
inverting storage-precision bit patterns of float weights, and inverting the
first-stage encoding of a single input. Flip counts are exact, round(rho *
bits) chosen uniformly without replacement, so a sweep honors its fraction
deterministically instead of in expectation. Corrupted models are fresh
copies; the originals are never written to.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .bits import BitMatrix, BitVector, bip_rows, flip_matrix_bits, sign_pack
from .ehd import (
    EhdConvLayer,
    EhdDenseLayer,
    EhdModel,
    _apply_tau,
    _project_dense,
    ehd_dense_forward,
    ehd_evaluate,
)
from .gnet import ConvLayer, DenseLayer, GNetModel, HeadLayer
from .rng import RngStream
from .train import evaluate
from .verify import SweepResult

__all__ = [
    "SCOPES",
    "CorruptionConfig",
    "flip_ehd_bits",
    "flip_float_bits",
    "corrupt_hypervector",
    "robustness_sweep",
]

SCOPES = ("per-layer", "first-embedding-only", "float-bit-patterns")


@dataclass(frozen=True)
class CorruptionConfig:
    """One corruption run: fraction, fault model, repetitions, seed."""

    rho: float
    scope: str
    trials: int
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("flip fraction must lie in [0, 1]")
        if self.scope not in SCOPES:
            raise ValueError(f"scope must be one of {SCOPES}")
        if self.trials < 1:
            raise ValueError("need at least one trial")


def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not 0.0 <= rho <= 1.0:
        raise ValueError("flip fraction must lie in [0, 1]")
    return rho


def _pick_bits(rng: RngStream, pool: int, k: int) -> np.ndarray:
    """k distinct positions in [0, pool), uniform, one stream read."""
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if k == pool:
        return np.arange(pool, dtype=np.int64)
    u = rng.uniform(pool)
    return np.argpartition(u, k)[:k].astype(np.int64)


def _flip_bitmatrix(bm: BitMatrix, rho: float, rng: RngStream) -> BitMatrix:
    k = round(rho * bm.bit_count)
    if k == 0:
        return bm.copy()
    return flip_matrix_bits(bm, _pick_bits(rng, bm.bit_count, k))


def flip_ehd_bits(
    ehd: EhdModel, rho: float, rng: RngStream, include_embeds: bool = True
) -> EhdModel:
    """Invert round(rho * bits) code bits in every layer of a fresh copy.

    Stored packed embeddings are flipped with their own exact count unless
    include_embeds is False; procedurally generated embeddings hold no bits
    and are untouched either way.
    """
    rho = _check_rho(rho)
    layers = []
    for li, el in enumerate(ehd.layers):
        sub = rng.derive(li)
        codes = _flip_bitmatrix(el.codes, rho, sub.derive(0))
        embed = el.embed
        if embed is not None:
            embed = (
                _flip_bitmatrix(embed, rho, sub.derive(1))
                if include_embeds
                else embed.copy()
            )
        layers.append(dataclasses.replace(el, codes=codes, embed=embed))
    return EhdModel(layers, ehd.input_shape)


def _copy_float_layer(layer, W: np.ndarray):
    if isinstance(layer, ConvLayer):
        return ConvLayer(W, c=layer.c, stride=layer.stride, padding=layer.padding, act=layer.act)
    if isinstance(layer, DenseLayer):
        return DenseLayer(W, c=layer.c, act=layer.act)
    return HeadLayer(W, c=layer.c)


def _apply_float_flips(model: GNetModel, positions: np.ndarray, bits_per_weight: int) -> GNetModel:
    """Copy of model with the given global weight-bit positions inverted.

    Positions index the concatenation of all weight arrays, bits_per_weight
    bits per coordinate, least significant first; bit 31 (or 63) is the sign.
    Only targeted coordinates are rewritten, so untouched weights survive
    bit-for-bit even when they are not representable at storage precision.
    """
    offsets = []
    start = 0
    for layer in model.layers:
        offsets.append(start)
        start += layer.W.size * bits_per_weight
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size and (positions.min() < 0 or positions.max() >= start):
        raise ValueError("bit position out of range")

    layers = []
    for layer, off in zip(model.layers, offsets):
        W = layer.W.copy()
        span = layer.W.size * bits_per_weight
        local = positions[(positions >= off) & (positions < off + span)] - off
        if local.size:
            widx = local // bits_per_weight
            shift = local % bits_per_weight
            flat = W.reshape(-1)
            if bits_per_weight == 32:
                mask = np.zeros(flat.size, dtype=np.uint32)
                np.bitwise_xor.at(mask, widx, (np.uint32(1) << shift.astype(np.uint32)))
                sel = mask != 0
                patt = flat[sel].astype(np.float32).view(np.uint32) ^ mask[sel]
                with np.errstate(invalid="ignore"):  # NaN patterns are legal here
                    flat[sel] = patt.view(np.float32).astype(np.float64)
            else:
                mask = np.zeros(flat.size, dtype=np.uint64)
                np.bitwise_xor.at(mask, widx, (np.uint64(1) << shift.astype(np.uint64)))
                sel = mask != 0
                view = flat.view(np.uint64)
                view[sel] ^= mask[sel]
        layers.append(_copy_float_layer(layer, W))
    return GNetModel(layers, model.input_shape)


def flip_float_bits(
    model: GNetModel, rho: float, rng: RngStream, bits_per_weight: int = 32
) -> GNetModel:
    """Invert round(rho * total weight bits) storage-pattern bits globally.

    Weights are treated as one pool of bits_per_weight-bit patterns across
    all layers; shifts are never touched. Flips may produce non-finite
    values, which are kept: evaluation scores such samples as misclassified.
    """
    rho = _check_rho(rho)
    if bits_per_weight not in (32, 64):
        raise ValueError("storage precision must be 32 or 64 bits")
    total = sum(l.W.size for l in model.layers) * bits_per_weight
    k = round(rho * total)
    return _apply_float_flips(model, _pick_bits(rng, total, k), bits_per_weight)


def corrupt_hypervector(ehd: EhdModel, x, rho: float, rng: RngStream) -> int:
    """Prediction after inverting round(rho * N) bits of the first encoding.

    The first layer must be dense: its input is encoded once, the chosen
    bits are inverted, and the rest of the cascade runs unchanged.
    """
    rho = _check_rho(rho)
    first = ehd.layers[0]
    if not isinstance(first, EhdDenseLayer):
        raise ValueError("encoding corruption needs a dense first layer")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != ehd.input_shape:
        raise ValueError("input shape mismatch")
    t = sign_pack(_project_dense(first, x.reshape(-1)))
    k = round(rho * t.length)
    if k:
        as_row = BitMatrix(1, t.length, t.words[None, :])
        flipped = flip_matrix_bits(as_row, _pick_bits(rng, t.length, k))
        t = BitVector(t.length, flipped.words[0])
    cur = _apply_tau(first, bip_rows(first.codes, t))
    for el in ehd.layers[1:]:
        cur = ehd_dense_forward(el, cur)
    return int(np.argmax(np.abs(cur)))


def robustness_sweep(
    gnet,
    ehd,
    dataset,
    rho_grid,
    trials: int,
    mode: str,
    rng: RngStream,
    include_embeds: bool = True,
    bits_per_weight: int = 32,
    batch: int = 256,
) -> SweepResult:
    """Mean/std accuracy per flip fraction under the chosen fault model.

    per-layer and first-embedding-only corrupt the binary model; the float
    mode corrupts the float model. The rho=0 cells reproduce the clean
    accuracies exactly because a zero flip count copies the model verbatim.
    """
    if mode not in SCOPES:
        raise ValueError(f"mode must be one of {SCOPES}")
    if trials < 1:
        raise ValueError("need at least one trial")
    if mode == "float-bit-patterns":
        if gnet is None:
            raise ValueError("float corruption needs the float model")
    elif ehd is None:
        raise ValueError(f"{mode} corruption needs the converted model")

    grid = tuple(float(r) for r in rho_grid)
    n = len(dataset)
    means, stds = [], []
    for ci, rho in enumerate(grid):
        accs = np.empty(trials)
        for t in range(trials):
            sub = rng.derive(ci, t)
            if mode == "per-layer":
                accs[t] = ehd_evaluate(flip_ehd_bits(ehd, rho, sub, include_embeds), dataset, batch)
            elif mode == "float-bit-patterns":
                accs[t] = evaluate(flip_float_bits(gnet, rho, sub, bits_per_weight), dataset)
            else:
                X = dataset.inputs.reshape((n,) + tuple(ehd.input_shape))
                preds = np.array(
                    [corrupt_hypervector(ehd, X[i], rho, sub.derive(i)) for i in range(n)]
                )
                accs[t] = float(np.mean(preds == dataset.labels))
        means.append(accs.mean())
        stds.append(accs.std())
    return SweepResult(
        grid=grid, mean=means, std=stds, trials=trials, info={"mode": mode}
    )
