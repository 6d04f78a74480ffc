"""Conversion of trained cosine networks to bit-packed binary form.

Each layer's weight rows are replaced by sign codes of their random
projections, and inference runs on packed words: project, take signs, and
correlate against the codes with XOR/popcount. Integer-valued intermediate
signals are re-embedded exactly, so the whole cascade after the first
projection is integer arithmetic.

Float expressions here deliberately mirror the obvious unpacked formulas
term for term (one projection per window, one fold per shift) so that sign
decisions agree bit for bit with a plain float reference.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bits import (
    BitMatrix,
    BitVector,
    bip_rows,
    sign_pack,
    sign_pack_matrix,
    signed_bitmat_vec,
    unpack,
    unpack_matrix,
    words_per_row,
)
from .gnet import ConvLayer, GNetModel, HeadLayer, layer_output_shape
from .rng import RngStream, gauss_matrix, rademacher_matrix

EMBED_KINDS = ("gaussian", "rademacher")
TAUS = ("identity", "relu", "sign")
INPUT_KINDS = ("real", "int", "bits")

# activation name -> clipped counterpart acting on integer scores
TAU_FOR_ACT = {"asu": "identity", "rasu": "relu", "tasu": "sign"}

# four 64-bit fields (kind tag, width, seed, stream) when only the seed is kept
SPEC_STORAGE_BITS = 4 * 64


@dataclass(frozen=True)
class EmbedSpec:
    """Recipe for one layer's random projection: kind, width, and seed."""

    kind: str
    N: int
    seed: int
    stream: int

    def __post_init__(self):
        if self.kind not in EMBED_KINDS:
            raise ValueError(f"unknown embedding kind {self.kind!r}")
        if not isinstance(self.N, (int, np.integer)) or self.N < 1:
            raise ValueError("embedding width must be a positive integer")
        if self.seed < 0 or self.stream < 0:
            raise ValueError("seed and stream must be non-negative")


def _draw_embed(spec: EmbedSpec, width: int):
    """(stored_bits_or_None, float_matrix) for a spec at the given width."""
    rs = RngStream(spec.seed, spec.stream)
    if spec.kind == "gaussian":
        return None, gauss_matrix(rs, spec.N, width)
    bm = rademacher_matrix(rs, spec.N, width)
    return bm, unpack_matrix(bm)


def _check_common(codes, spec, tau, input_kind, input_scale):
    if not isinstance(codes, BitMatrix):
        raise ValueError("codes must be a BitMatrix")
    if tau not in TAUS:
        raise ValueError(f"unknown tau {tau!r}")
    if input_kind not in INPUT_KINDS:
        raise ValueError(f"unknown input kind {input_kind!r}")
    if not isinstance(input_scale, (int, np.integer)) or input_scale < 1:
        raise ValueError("input_scale must be a positive integer")
    if codes.cols != spec.N:
        raise ValueError("code width must equal the embedding width")


def _check_embed(embed, spec, width):
    if spec.kind == "rademacher":
        if not isinstance(embed, BitMatrix):
            raise ValueError("sign embeddings must keep their packed matrix")
        if (embed.rows, embed.cols) != (spec.N, width):
            raise ValueError("embedding dimensions disagree with the layer")
    elif embed is not None:
        raise ValueError("gaussian embeddings are regenerated, not stored")


@dataclass(eq=False)
class EhdDenseLayer:
    codes: BitMatrix
    embed: Optional[BitMatrix]
    spec: EmbedSpec
    c: float
    tau: str
    input_kind: str
    input_scale: int
    in_width: int = 0

    def __post_init__(self):
        _check_common(self.codes, self.spec, self.tau, self.input_kind, self.input_scale)
        if self.in_width == 0 and self.embed is not None:
            self.in_width = self.embed.cols
        if self.in_width < 1:
            raise ValueError("layer input width is required")
        _check_embed(self.embed, self.spec, self.in_width)
        self._E = None
        self._h = None

    @property
    def units(self) -> int:
        return self.codes.rows


@dataclass(eq=False)
class EhdConvLayer:
    codes: BitMatrix
    embed: Optional[BitMatrix]
    spec: EmbedSpec
    c: float
    tau: str
    input_kind: str
    input_scale: int
    channels: int
    kernel_shape: tuple
    stride: tuple
    padding: tuple

    def __post_init__(self):
        _check_common(self.codes, self.spec, self.tau, self.input_kind, self.input_scale)
        rank = len(self.kernel_shape)
        if rank < 1 or len(self.stride) != rank or len(self.padding) != rank:
            raise ValueError("kernel, stride, and padding ranks must agree")
        if self.channels < 1 or any(k < 1 for k in self.kernel_shape):
            raise ValueError("channels and kernel dims must be positive")
        if any(s < 1 for s in self.stride) or any(p < 0 for p in self.padding):
            raise ValueError("strides must be positive, padding non-negative")
        _check_embed(self.embed, self.spec, self.patch_len)
        self._E = None
        self._h = None

    @property
    def patch_len(self) -> int:
        return self.channels * int(np.prod(self.kernel_shape))

    @property
    def filters(self) -> int:
        return self.codes.rows

    @property
    def spatial_rank(self) -> int:
        return len(self.kernel_shape)


@dataclass(frozen=True)
class EhdModel:
    layers: tuple
    input_shape: tuple

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        object.__setattr__(self, "layers", list(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))


def _layer_width(el) -> int:
    return el.in_width if isinstance(el, EhdDenseLayer) else el.patch_len


def _embed_float(el) -> np.ndarray:
    """The projection matrix as float64 rows, cached on the layer."""
    if el._E is None:
        if el.embed is not None:
            el._E = unpack_matrix(el.embed)
        else:
            rs = RngStream(el.spec.seed, el.spec.stream)
            el._E = gauss_matrix(rs, el.spec.N, _layer_width(el))
    return el._E


def _shift_vector(el) -> np.ndarray:
    """Projection of the all-ones vector, for folding the shift."""
    if el._h is None:
        el._h = _embed_float(el) @ np.ones(_layer_width(el))
    return el._h


def _fold_shift(el, proj):
    gamma = el.c * el.input_scale
    if gamma == 0.0:
        return proj
    return np.asarray(proj, dtype=np.float64) + gamma * _shift_vector(el)


def _apply_tau(el, scores):
    if el.tau == "identity":
        return scores
    if el.tau == "relu":
        return np.maximum(scores, 0)
    return sign_pack(scores)


# ------------------------------------------------------------------ convert
def convert_dense(layer, spec: EmbedSpec, input_kind: str = "real", input_scale: int = 1) -> EhdDenseLayer:
    """Binary counterpart of one dense (or output) layer.

    Codes are the signs of each weight row's projection; row scaling never
    changes a sign, so normalization drops out. input_kind and input_scale
    describe the signal the previous binary layer emits.
    """
    W = np.asarray(layer.W, dtype=np.float64)
    W2 = W.reshape(W.shape[0], -1)
    if input_kind not in INPUT_KINDS:
        raise ValueError(f"unknown input kind {input_kind!r}")
    embed, Ef = _draw_embed(spec, W2.shape[1])
    codes = sign_pack_matrix(W2 @ Ef.T)
    if isinstance(layer, HeadLayer):
        tau = "identity"
    else:
        tau = TAU_FOR_ACT[layer.act.name]
    return EhdDenseLayer(
        codes=codes,
        embed=embed,
        spec=spec,
        c=float(layer.c),
        tau=tau,
        input_kind=input_kind,
        input_scale=int(input_scale),
        in_width=W2.shape[1],
    )


def convert_conv(layer: ConvLayer, spec: EmbedSpec, input_kind: str = "real", input_scale: int = 1) -> EhdConvLayer:
    """Binary counterpart of one conv layer; filters are coded over patches."""
    W = np.asarray(layer.W, dtype=np.float64)
    F, ch = W.shape[:2]
    kernel = W.shape[2:]
    S = ch * int(np.prod(kernel))
    if input_kind not in INPUT_KINDS:
        raise ValueError(f"unknown input kind {input_kind!r}")
    if input_kind == "bits":
        raise ValueError("conv layers take map inputs, not packed vectors")
    embed, Ef = _draw_embed(spec, S)
    codes = sign_pack_matrix(W.reshape(F, S) @ Ef.T)
    return EhdConvLayer(
        codes=codes,
        embed=embed,
        spec=spec,
        c=float(layer.c),
        tau=TAU_FOR_ACT[layer.act.name],
        input_kind=input_kind,
        input_scale=int(input_scale),
        channels=ch,
        kernel_shape=tuple(kernel),
        stride=tuple(layer.stride),
        padding=tuple(layer.padding),
    )


def convert_model(model: GNetModel, specs) -> EhdModel:
    """Convert every layer, threading signal kind and scale through the chain.

    After an identity or relu layer the signal is integer-valued with entries
    bounded by that layer's embedding width, which becomes the next scale.
    After a sign layer the signal is +-1: packed bits from a dense layer, a
    +-1 integer map from a conv layer. The output layer stays identity and
    classes are ranked by absolute score.
    """
    specs = list(specs)
    if len(specs) != len(model.layers):
        raise ValueError("need exactly one embedding spec per layer")
    kind, scale = "real", 1
    out = []
    for layer, spec in zip(model.layers, specs):
        if isinstance(layer, ConvLayer):
            el = convert_conv(layer, spec, input_kind=kind, input_scale=scale)
        else:
            el = convert_dense(layer, spec, input_kind=kind, input_scale=scale)
        out.append(el)
        if el.tau == "sign":
            kind = "bits" if isinstance(el, EhdDenseLayer) else "int"
            scale = 1
        else:
            kind = "int"
            scale = spec.N
    return EhdModel(tuple(out), model.input_shape)


# ------------------------------------------------------------------ forward
def _project_dense(el: EhdDenseLayer, x):
    """Embedding projection of one input under the layer's signal contract."""
    if el.input_kind == "bits":
        if not isinstance(x, BitVector):
            raise ValueError("this layer takes a packed sign vector")
        if x.length != el.in_width:
            raise ValueError("input length mismatch")
        if el.embed is not None:
            proj = bip_rows(el.embed, x)
        else:
            proj = _embed_float(el) @ unpack(x)
        return _fold_shift(el, proj)
    if isinstance(x, BitVector):
        raise ValueError("this layer takes an unpacked vector")
    z = np.asarray(x)
    if z.ndim != 1 or z.size != el.in_width:
        raise ValueError("input length mismatch")
    if el.input_kind == "int":
        if not np.issubdtype(z.dtype, np.integer):
            raise ValueError("this layer takes an integer vector")
        if el.embed is not None:
            proj = signed_bitmat_vec(el.embed, z)
        else:
            proj = _embed_float(el) @ z.astype(np.float64)
        return _fold_shift(el, proj)
    if not np.issubdtype(z.dtype, np.floating):
        z = z.astype(np.float64)
    return _embed_float(el) @ (z.astype(np.float64) + el.c)


def ehd_dense_forward(el: EhdDenseLayer, x):
    """One binary dense layer: project, sign, correlate, clip.

    Returns an int64 score vector, clipped below zero for relu, or a packed
    sign vector for sign.
    """
    proj = _project_dense(el, x)
    t = sign_pack(proj)
    scores = bip_rows(el.codes, t)
    return _apply_tau(el, scores)


def ehd_conv_forward(el: EhdConvLayer, X):
    """One binary conv layer over an input map of shape (channels, *spatial).

    Every window is projected separately (matching a per-window float dot
    exactly), signed, and correlated against each filter code. Sign output is
    a +-1 int64 map rather than packed bits, since the next conv re-reads it
    as a map.
    """
    Xa = np.asarray(X)
    if isinstance(X, BitVector):
        raise ValueError("conv layers take map inputs")
    rank = el.spatial_rank
    if Xa.ndim != rank + 1 or Xa.shape[0] != el.channels:
        raise ValueError("input map shape mismatch")
    if el.input_kind == "int" and not np.issubdtype(Xa.dtype, np.integer):
        raise ValueError("this layer takes an integer map")
    shift = el.c if el.input_kind == "real" else el.c * el.input_scale
    Xs = Xa.astype(np.float64) + shift
    pads = [(0, 0)] + [(p, p) for p in el.padding]
    Xp = np.pad(Xs, pads)
    out_sp = tuple(
        (Xs.shape[1 + d] + 2 * el.padding[d] - el.kernel_shape[d]) // el.stride[d] + 1
        for d in range(rank)
    )
    if any(o < 1 for o in out_sp):
        raise ValueError("input map smaller than the kernel")
    Ef = _embed_float(el)
    positions = list(np.ndindex(*out_sp))
    proj = np.empty((len(positions), el.spec.N))
    for i, pos in enumerate(positions):
        sl = (slice(None),) + tuple(
            slice(pos[d] * el.stride[d], pos[d] * el.stride[d] + el.kernel_shape[d])
            for d in range(rank)
        )
        proj[i] = Ef @ Xp[sl].ravel()
    b = sign_pack_matrix(proj)
    F = el.filters
    scores = np.empty((F, len(positions)), dtype=np.int64)
    for f in range(F):
        scores[f] = bip_rows(b, el.codes.row(f))
    scores = scores.reshape((F,) + out_sp)
    if el.tau == "identity":
        return scores
    if el.tau == "relu":
        return np.maximum(scores, 0)
    return np.where(scores >= 0, 1, -1).astype(np.int64)


def ehd_forward(model: EhdModel, x) -> np.ndarray:
    """Head scores of the full binary cascade for one sample."""
    cur = np.asarray(x, dtype=np.float64)
    if cur.shape != model.input_shape:
        raise ValueError("input shape mismatch")
    for el in model.layers:
        if isinstance(el, EhdConvLayer):
            cur = ehd_conv_forward(el, cur)
        else:
            if not isinstance(cur, BitVector):
                cur = np.asarray(cur).reshape(-1)
            cur = ehd_dense_forward(el, cur)
    return cur


def ehd_predict(model: EhdModel, x) -> int:
    """Predicted class: the head row with the largest absolute score."""
    scores = ehd_forward(model, x)
    return int(np.argmax(np.abs(scores)))


def _batched_dense_chain(model: EhdModel, X: np.ndarray) -> np.ndarray:
    """Head scores for a batch through an all-dense cascade.

    Signals stay as unpacked row matrices: +-1 floats where the per-sample
    path would carry packed bits. All integer stages are exact in float64;
    the first projection is the only float-valued GEMM.
    """
    cur = np.asarray(X, dtype=np.float64)
    for el in model.layers:
        Ef = _embed_float(el)
        if el.input_kind == "real":
            proj = (cur + el.c) @ Ef.T
        else:
            proj = cur @ Ef.T
            gamma = el.c * el.input_scale
            if gamma != 0.0:
                proj = proj + gamma * _shift_vector(el)[None, :]
        T = np.where(proj >= 0, 1.0, -1.0)
        scores = T @ unpack_matrix(el.codes).T
        if el.tau == "identity":
            cur = scores
        elif el.tau == "relu":
            cur = np.maximum(scores, 0.0)
        else:
            cur = np.where(scores >= 0, 1.0, -1.0)
    return cur


def ehd_predict_batch(model: EhdModel, X, batch: int = 256) -> np.ndarray:
    """Predicted classes for a batch of inputs, chunked to bound memory.

    Conv models fall back to the per-sample path; dense cascades run as
    matrix products that reproduce the per-sample scores exactly.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1:] != model.input_shape:
        raise ValueError("input shape mismatch")
    if batch < 1:
        raise ValueError("batch must be positive")
    n = X.shape[0]
    if any(isinstance(el, EhdConvLayer) for el in model.layers):
        return np.array([ehd_predict(model, X[i]) for i in range(n)], dtype=np.int64)
    preds = np.empty(n, dtype=np.int64)
    for start in range(0, n, batch):
        chunk = X[start : start + batch]
        scores = _batched_dense_chain(model, chunk)
        preds[start : start + batch] = np.argmax(np.abs(scores), axis=1)
    return preds


def ehd_evaluate(model: EhdModel, dataset, batch: int = 256) -> float:
    """Classification accuracy of the binary cascade on a dataset."""
    X = dataset.inputs.reshape((len(dataset),) + model.input_shape)
    preds = ehd_predict_batch(model, X, batch=batch)
    return float(np.mean(preds == dataset.labels))


# -------------------------------------------------------------------- cost
@dataclass(frozen=True)
class CostReport:
    layers: tuple
    totals: dict
    bits_per_real: int


_COUNT_KEYS = (
    "xor_words",
    "popcount_words",
    "int_adds",
    "sign_evals",
    "real_macs",
    "fp_macs",
    "fp_activation_evals",
    "ehd_memory_bits",
    "fp_memory_bits",
)


def _dense_entry(pl, el: EhdDenseLayer, bits_per_real: int) -> dict:
    n, p = el.units, el.in_width
    N = el.spec.N
    entry = {
        "kind": "head" if isinstance(pl, HeadLayer) else "dense",
        "units": n,
        "width": p,
        "N": N,
        "xor_words": n * words_per_row(N),
        "popcount_words": n * words_per_row(N),
        "int_adds": 0,
        "sign_evals": N + (n if el.tau == "sign" else 0),
        "real_macs": 0,
        "fp_macs": n * p,
        "fp_activation_evals": 0 if isinstance(pl, HeadLayer) else n,
        "fp_memory_bits": n * p * bits_per_real,
    }
    if el.input_kind == "bits" and el.embed is not None:
        entry["xor_words"] += N * words_per_row(p)
        entry["popcount_words"] += N * words_per_row(p)
    elif el.input_kind == "int" and el.embed is not None:
        entry["int_adds"] += N * p
    else:
        entry["real_macs"] += N * p
    if el.embed is not None:
        entry["ehd_memory_bits"] = n * N + N * p
    else:
        entry["ehd_memory_bits"] = n * N + SPEC_STORAGE_BITS
    return entry


def _conv_entry(el: EhdConvLayer, out_shape, bits_per_real: int) -> dict:
    F, S, N = el.filters, el.patch_len, el.spec.N
    P = int(np.prod(out_shape[1:]))
    entry = {
        "kind": "conv",
        "units": F,
        "width": S,
        "N": N,
        "positions": P,
        "xor_words": F * P * words_per_row(N),
        "popcount_words": F * P * words_per_row(N),
        "int_adds": 0,
        "sign_evals": P * N,
        "real_macs": P * S * N,
        "fp_macs": F * S * P,
        "fp_activation_evals": F * P,
        "fp_memory_bits": F * S * bits_per_real,
    }
    if el.embed is not None:
        entry["ehd_memory_bits"] = F * N + N * S
    else:
        entry["ehd_memory_bits"] = F * N + SPEC_STORAGE_BITS
    return entry


def cost_report(model: GNetModel, ehd: EhdModel, bits_per_real: int = 32) -> CostReport:
    """Side-by-side inference cost of the float and binary pipelines.

    Binary op counts are in 64-bit word units and match the instrumented
    counters of a single-sample forward pass exactly. Memory counts weight
    storage only: codes plus the stored embedding for packed embeddings,
    codes plus a four-word seed record for regenerated ones.
    """
    if len(model.layers) != len(ehd.layers):
        raise ValueError("model and binary model disagree in depth")
    if bits_per_real < 1:
        raise ValueError("bits_per_real must be positive")
    shapes = model.output_shapes()
    entries = []
    for pl, el, shape in zip(model.layers, ehd.layers, shapes):
        if isinstance(el, EhdConvLayer):
            entries.append(_conv_entry(el, shape, bits_per_real))
        else:
            entries.append(_dense_entry(pl, el, bits_per_real))
    totals = {k: sum(e[k] for e in entries) for k in _COUNT_KEYS}
    return CostReport(layers=tuple(entries), totals=totals, bits_per_real=bits_per_real)
