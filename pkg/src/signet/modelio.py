"""Binary persistence for float cascades and their converted twins.

One container format for both model kinds: a 4-byte magic tag, a u16 format
version, a CRC-32 of the payload, then little-endian layer records. Weight
entries are stored at 32-bit precision (training snaps weights onto that
grid, so the round trip is exact for fitted models); packed sign matrices
are stored as their raw 64-bit words, LSB-first. Procedurally generated
embeddings are not materialized: the record keeps (seed, stream, rows, cols)
and the loaded layer regenerates the same matrix on demand, which keeps the
forward pass bit-identical across save/load and across processes.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .bits import BitMatrix, words_per_row
from .ehd import EhdConvLayer, EhdDenseLayer, EhdModel, EmbedSpec
from .gnet import (
    ActivationKind,
    ConvLayer,
    DenseLayer,
    GNetModel,
    HeadLayer,
)

__all__ = ["FORMAT_VERSION", "ModelIOError", "save_model", "load_model"]

FORMAT_VERSION = 1
_MAGIC_GNET = b"GNET"
_MAGIC_EHDG = b"EHDG"

_ACTS = ("asu", "rasu", "tasu")
_TAUS = ("identity", "relu", "sign")
_IKINDS = ("real", "int", "bits")
_EKINDS = ("gaussian", "rademacher")


class ModelIOError(Exception):
    """Unreadable, corrupt, or unsupported model file."""


class _Writer:
    def __init__(self):
        self.parts = []

    def pack(self, fmt: str, *vals):
        self.parts.append(struct.pack("<" + fmt, *vals))

    def f32_array(self, a: np.ndarray):
        self.parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())

    def words(self, w: np.ndarray):
        self.parts.append(np.ascontiguousarray(w, dtype="<u8").tobytes())

    def blob(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def pull(self, fmt: str):
        fmt = "<" + fmt
        size = struct.calcsize(fmt)
        if self.off + size > len(self.buf):
            raise ModelIOError("file truncated")
        vals = struct.unpack_from(fmt, self.buf, self.off)
        self.off += size
        return vals if len(vals) > 1 else vals[0]

    def f32_array(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        size = 4 * count
        if self.off + size > len(self.buf):
            raise ModelIOError("file truncated")
        a = np.frombuffer(self.buf, dtype="<f4", count=count, offset=self.off)
        self.off += size
        return a.astype(np.float64).reshape(shape)

    def words(self, rows: int, wpr: int) -> np.ndarray:
        count = rows * wpr
        size = 8 * count
        if self.off + size > len(self.buf):
            raise ModelIOError("file truncated")
        w = np.frombuffer(self.buf, dtype="<u8", count=count, offset=self.off)
        self.off += size
        return w.astype(np.uint64).reshape(rows, wpr).copy()

    def done(self):
        if self.off != len(self.buf):
            raise ModelIOError("trailing data after the last record")


def _write_shape(w: _Writer, shape):
    w.pack("B", len(shape))
    for d in shape:
        w.pack("I", d)


def _read_shape(r: _Reader) -> tuple:
    rank = r.pull("B")
    return tuple(r.pull("I") for _ in range(rank))


def _write_gnet(model: GNetModel) -> bytes:
    w = _Writer()
    _write_shape(w, model.input_shape)
    w.pack("H", len(model.layers))
    for layer in model.layers:
        if isinstance(layer, HeadLayer):
            w.pack("B", 2)
            w.pack("f", layer.c)
            w.pack("II", *layer.W.shape)
            w.f32_array(layer.W)
            continue
        act: ActivationKind = layer.act
        kappa = 0.0 if act.kappa is None else act.kappa
        if isinstance(layer, DenseLayer):
            w.pack("B", 0)
            w.pack("Bd", _ACTS.index(act.name), kappa)
            w.pack("f", layer.c)
            w.pack("II", *layer.W.shape)
            w.f32_array(layer.W)
        else:
            w.pack("B", 1)
            w.pack("Bd", _ACTS.index(act.name), kappa)
            w.pack("f", layer.c)
            w.pack("II", layer.W.shape[0], layer.W.shape[1])
            rank = layer.spatial_rank
            w.pack("B", rank)
            for seq in (layer.kernel_shape, layer.stride, layer.padding):
                for v in seq:
                    w.pack("I", v)
            w.f32_array(layer.W)
    return w.blob()


def _pull_act(r: _Reader) -> ActivationKind:
    code, kappa = r.pull("Bd")
    if code >= len(_ACTS):
        raise ModelIOError("unknown activation code")
    name = _ACTS[code]
    return ActivationKind(name, kappa if name == "tasu" else None)


def _read_gnet(r: _Reader) -> GNetModel:
    input_shape = _read_shape(r)
    layers = []
    for _ in range(r.pull("H")):
        kind = r.pull("B")
        if kind == 2:
            c = r.pull("f")
            rows, cols = r.pull("II")
            layers.append(HeadLayer(r.f32_array((rows, cols)), c=c))
        elif kind == 0:
            act = _pull_act(r)
            c = r.pull("f")
            rows, cols = r.pull("II")
            layers.append(DenseLayer(r.f32_array((rows, cols)), c=c, act=act))
        elif kind == 1:
            act = _pull_act(r)
            c = r.pull("f")
            filters, channels = r.pull("II")
            rank = r.pull("B")
            kernel = tuple(r.pull("I") for _ in range(rank))
            stride = tuple(r.pull("I") for _ in range(rank))
            padding = tuple(r.pull("I") for _ in range(rank))
            W = r.f32_array((filters, channels) + kernel)
            layers.append(ConvLayer(W, c=c, stride=stride, padding=padding, act=act))
        else:
            raise ModelIOError("unknown layer kind")
    try:
        return GNetModel(layers, input_shape)
    except ValueError as e:
        raise ModelIOError(f"inconsistent model record: {e}") from e


def _write_bitmatrix(w: _Writer, bm: BitMatrix):
    w.pack("II", bm.rows, bm.cols)
    w.words(bm.words)


def _read_bitmatrix(r: _Reader) -> BitMatrix:
    rows, cols = r.pull("II")
    if rows < 1 or cols < 1:
        raise ModelIOError("empty bit matrix record")
    words = r.words(rows, words_per_row(cols))
    try:
        return BitMatrix(rows, cols, words)
    except ValueError as e:
        raise ModelIOError(f"bad bit matrix: {e}") from e


def _write_ehd(model: EhdModel) -> bytes:
    w = _Writer()
    _write_shape(w, model.input_shape)
    w.pack("H", len(model.layers))
    for el in model.layers:
        w.pack("B", 1 if isinstance(el, EhdConvLayer) else 0)
        spec = el.spec
        w.pack("BIQQ", _EKINDS.index(spec.kind), spec.N, spec.seed, spec.stream)
        w.pack("f", el.c)
        w.pack("BB", _TAUS.index(el.tau), _IKINDS.index(el.input_kind))
        w.pack("Q", el.input_scale)
        if isinstance(el, EhdConvLayer):
            w.pack("I", el.channels)
            rank = el.spatial_rank
            w.pack("B", rank)
            for seq in (el.kernel_shape, el.stride, el.padding):
                for v in seq:
                    w.pack("I", v)
        else:
            w.pack("I", el.in_width)
        _write_bitmatrix(w, el.codes)
        if el.embed is None:
            w.pack("B", 0)  # regenerate from (seed, stream, N, input width)
        else:
            w.pack("B", 1)
            _write_bitmatrix(w, el.embed)
    return w.blob()


def _read_ehd(r: _Reader) -> EhdModel:
    input_shape = _read_shape(r)
    layers = []
    for _ in range(r.pull("H")):
        kind = r.pull("B")
        if kind not in (0, 1):
            raise ModelIOError("unknown layer kind")
        ek, N, seed, stream = r.pull("BIQQ")
        if ek >= len(_EKINDS):
            raise ModelIOError("unknown embedding kind")
        spec = EmbedSpec(_EKINDS[ek], N, seed, stream)
        c = r.pull("f")
        tau_code, ik_code = r.pull("BB")
        if tau_code >= len(_TAUS) or ik_code >= len(_IKINDS):
            raise ModelIOError("unknown tau or input kind code")
        scale = r.pull("Q")
        if kind == 1:
            channels = r.pull("I")
            rank = r.pull("B")
            kernel = tuple(r.pull("I") for _ in range(rank))
            stride = tuple(r.pull("I") for _ in range(rank))
            padding = tuple(r.pull("I") for _ in range(rank))
            width = 0
        else:
            width = r.pull("I")
        codes = _read_bitmatrix(r)
        embed = _read_bitmatrix(r) if r.pull("B") else None
        try:
            if kind == 1:
                layers.append(
                    EhdConvLayer(
                        codes,
                        embed,
                        spec,
                        c,
                        _TAUS[tau_code],
                        _IKINDS[ik_code],
                        scale,
                        channels,
                        kernel,
                        stride,
                        padding,
                    )
                )
            else:
                layers.append(
                    EhdDenseLayer(
                        codes,
                        embed,
                        spec,
                        c,
                        _TAUS[tau_code],
                        _IKINDS[ik_code],
                        scale,
                        width,
                    )
                )
        except ValueError as e:
            raise ModelIOError(f"inconsistent layer record: {e}") from e
    return EhdModel(layers, input_shape)


def save_model(model, path) -> None:
    """Write either model kind; the magic tag records which."""
    if isinstance(model, GNetModel):
        magic, payload = _MAGIC_GNET, _write_gnet(model)
    elif isinstance(model, EhdModel):
        magic, payload = _MAGIC_EHDG, _write_ehd(model)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    header = magic + struct.pack("<HI", FORMAT_VERSION, zlib.crc32(payload))
    with open(path, "wb") as f:
        f.write(header + payload)


def load_model(path):
    """Read a model file back; the return type follows the magic tag."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise ModelIOError(f"cannot read {path}: {e}") from e
    if len(blob) < 10:
        raise ModelIOError("file truncated")
    magic, blob = blob[:4], blob[4:]
    if magic not in (_MAGIC_GNET, _MAGIC_EHDG):
        raise ModelIOError("not a model file (bad magic)")
    version, crc = struct.unpack_from("<HI", blob)
    if version != FORMAT_VERSION:
        raise ModelIOError(f"unsupported format version {version}")
    payload = blob[6:]
    if zlib.crc32(payload) != crc:
        raise ModelIOError("payload checksum mismatch")
    r = _Reader(payload)
    model = _read_gnet(r) if magic == _MAGIC_GNET else _read_ehd(r)
    r.done()
    return model
