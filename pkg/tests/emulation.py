"""Unpacked float reference for the binary pipeline, used as a test oracle.

Everything here works on plain +-1 float matrices and numpy dots; none of the
bit-packing kernels are involved. Embedding matrices are drawn through the same
seeded stream as the implementation (that part is pinned by the RNG golden
tests), but every later step is recomputed from the definitions.
"""

import numpy as np

from signet.bits import unpack_matrix
from signet.rng import RngStream, gauss_matrix, rademacher_matrix


def draw_embed_float(spec, width):
    rs = RngStream(spec.seed, spec.stream)
    if spec.kind == "gaussian":
        return gauss_matrix(rs, spec.N, width)
    return unpack_matrix(rademacher_matrix(rs, spec.N, width))


def pm1(x):
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def emu_codes(W2d, E):
    return pm1(np.asarray(W2d, dtype=np.float64) @ E.T)  # (rows, N)


def emu_apply_tau(tau, scores):
    if tau == "identity":
        return scores
    if tau == "relu":
        return np.maximum(scores, 0)
    return pm1(scores).astype(np.int64)


def emu_dense(W, c, tau, spec, x, kind, scale):
    """One embedded dense layer from the definitions, on unpacked matrices.

    kind: "real" for the network input, "int" for integer signals (including
    +-1 sign maps from a conv layer), "pm1" for a sign-layer predecessor given
    as a +-1 vector. Returns (output, output_kind).
    """
    W = np.asarray(W, dtype=np.float64)
    p = W.shape[1]
    E = draw_embed_float(spec, p)
    codes = emu_codes(W, E)
    if kind == "real":
        proj = E @ (np.asarray(x, dtype=np.float64) + c)
    else:
        proj = E @ np.asarray(x, dtype=np.float64)
        gamma = c * scale
        if gamma != 0.0:
            proj = proj + gamma * (E @ np.ones(p))
    t = pm1(proj)
    scores = (codes @ t).astype(np.int64)
    out = emu_apply_tau(tau, scores)
    return out, ("pm1" if tau == "sign" else "int")


def emu_conv(W, c, tau, spec, X, kind, scale, stride, padding):
    """Position-by-position conv reference; windows flatten channel-major."""
    W = np.asarray(W, dtype=np.float64)
    F, ch = W.shape[:2]
    kernel = W.shape[2:]
    rank = len(kernel)
    S = ch * int(np.prod(kernel))
    E = draw_embed_float(spec, S)
    codes = emu_codes(W.reshape(F, S), E)

    shift = c if kind == "real" else c * scale
    Xs = np.asarray(X, dtype=np.float64) + shift
    pads = [(0, 0)] + [(padding[d], padding[d]) for d in range(rank)]
    Xp = np.pad(Xs, pads)
    out_sp = tuple(
        (Xs.shape[1 + d] + 2 * padding[d] - kernel[d]) // stride[d] + 1
        for d in range(rank)
    )
    scores = np.zeros((F,) + out_sp, dtype=np.int64)
    for pos in np.ndindex(*out_sp):
        sl = (slice(None),) + tuple(
            slice(pos[d] * stride[d], pos[d] * stride[d] + kernel[d])
            for d in range(rank)
        )
        w = Xp[sl].ravel()
        t = pm1(E @ w)
        scores[(slice(None),) + pos] = (codes @ t).astype(np.int64)
    out = emu_apply_tau(tau, scores)
    return out, ("pm1" if tau == "sign" else "int")


TAU_OF_ACT = {"asu": "identity", "rasu": "relu", "tasu": "sign"}


def emu_model_scores(model, specs, x):
    """Head scores of the full cascade, all layers emulated in float."""
    from signet.gnet import ConvLayer, DenseLayer, HeadLayer

    cur = np.asarray(x, dtype=np.float64)
    kind = "real"
    scale = 1
    for layer, spec in zip(model.layers, specs):
        if isinstance(layer, ConvLayer):
            cur, kind = emu_conv(
                layer.W,
                layer.c,
                TAU_OF_ACT[layer.act.name],
                spec,
                cur,
                kind,
                scale,
                layer.stride,
                layer.padding,
            )
        else:
            tau = "identity" if isinstance(layer, HeadLayer) else TAU_OF_ACT[layer.act.name]
            flat = cur.reshape(-1)
            cur, kind = emu_dense(
                layer.W.reshape(layer.W.shape[0], -1),
                layer.c,
                tau,
                spec,
                flat,
                kind,
                scale,
            )
        scale = 1 if kind == "pm1" else spec.N
    return cur  # head is identity: integer scores
