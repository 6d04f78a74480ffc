"""Empirical checks behind the conversion guarantees.

Each routine here measures one quantitative claim: the arcsin form of the
sign-correlation expectation, the Hamming/geodesic near-isometry of sign
codes, per-layer and whole-network discrepancy between a float cascade and
its binary twin, the distortion envelope of a normalized arcsin layer, and
finite-difference validation of the training gradients. Everything is
deterministic given the stream handed in: trials derive child streams by
index, and aggregation order is fixed.

Absolute constants in the underlying bounds are not estimable from data, so
sweeps report scaling behavior (means, spread, satisfaction rates against
explicit bound formulas) and leave envelope thresholds to their callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bits import BitVector, unpack, unpack_matrix
from .ehd import EhdConvLayer, EhdModel, ehd_conv_forward, ehd_dense_forward
from .gnet import DEFAULT_EPS, DenseLayer, GNetModel, forward
from .rng import RngStream, gauss_matrix, rademacher_matrix
from .train import backward

__all__ = [
    "SweepResult",
    "IsometryProbe",
    "grothendieck_mc",
    "dispersion_g",
    "gram_schmidt_perp",
    "rademacher_identity_error",
    "rademacher_error_curve",
    "code_distances",
    "geodesic",
    "near_isometry_sweep",
    "layer_discrepancy_sweep",
    "network_delta_trace",
    "asu_isometry_probe",
    "grad_check",
]

_TWO_OVER_PI = 2.0 / np.pi
_MC_BLOCK_ELEMS = 1 << 22  # elements per projection block; bounds peak memory
_DISPERSION_CONSTANT = 264.0  # multiplier on g(u, v_perp) in the error bound


@dataclass(frozen=True)
class SweepResult:
    """Per-cell statistics of one sweep, plus the matching bound when known."""

    grid: tuple
    mean: tuple
    std: tuple
    trials: int
    bound: Optional[tuple] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "mean", tuple(float(m) for m in self.mean))
        object.__setattr__(self, "std", tuple(float(s) for s in self.std))
        if self.bound is not None:
            object.__setattr__(self, "bound", tuple(float(b) for b in self.bound))
        cells = len(self.grid)
        if len(self.mean) != cells or len(self.std) != cells:
            raise ValueError("mean/std must have one entry per grid cell")
        if self.bound is not None and len(self.bound) != cells:
            raise ValueError("bound must have one entry per grid cell")
        if any(s < 0 for s in self.std):
            raise ValueError("standard deviations cannot be negative")
        if self.trials < 1:
            raise ValueError("need at least one trial")


@dataclass(frozen=True)
class IsometryProbe:
    """Distortion envelope of a normalized arcsin layer on unit-ball pairs."""

    n: int
    p: int
    pairs: int
    beta_inv: float
    min_distortion: float
    max_distortion: float

    def __post_init__(self):
        if self.min_distortion > self.max_distortion:
            raise ValueError("distortion envelope is inverted")
        if self.n < 1 or self.p < 1 or self.pairs < 1:
            raise ValueError("n, p, and pair count must be positive")


def _require_unit(v, name: str) -> np.ndarray:
    v = np.ascontiguousarray(v, dtype=np.float64).reshape(-1)
    if abs(np.linalg.norm(v) - 1.0) > 1e-8:
        raise ValueError(f"{name} must have unit length")
    return v


def _sign_chunks(kind: str, rng: RngStream, N: int, p: int):
    """Yield (rows, p) blocks of the chosen projection ensemble."""
    if kind not in ("gaussian", "rademacher"):
        raise ValueError(f"unknown projection kind {kind!r}")
    block = max(1, _MC_BLOCK_ELEMS // p)
    done = 0
    while done < N:
        rows = min(block, N - done)
        if kind == "gaussian":
            yield gauss_matrix(rng, rows, p)
        else:
            yield _pm1_block(rng, rows, p)
        done += rows


def _pm1_block(rng: RngStream, rows: int, cols: int) -> np.ndarray:
    return unpack_matrix(rademacher_matrix(rng, rows, cols))


def grothendieck_mc(u, v, N: int, kind: str, rng: RngStream) -> float:
    """Monte Carlo sign-correlation (1/N) sum_j sign(g_j.u) sign(g_j.v).

    For the Gaussian ensemble the expectation is (2/pi) arcsin(u.v); the
    packed-sign ensemble only approaches that value as the dimension grows.
    """
    u = _require_unit(u, "u")
    v = _require_unit(v, "v")
    if u.shape != v.shape:
        raise ValueError("u and v must share a dimension")
    if N < 1:
        raise ValueError("need at least one projection")
    total = 0
    for block in _sign_chunks(kind, rng, N, u.shape[0]):
        su = np.where(block @ u >= 0, 1, -1)
        sv = np.where(block @ v >= 0, 1, -1)
        total += int(np.sum(su * sv))
    return total / N


def dispersion_g(w, wp) -> float:
    """Coordinate-spread functional sum_i (w_i^2 + w'_i^2)^{3/2}.

    Small values mean both vectors spread their mass over many coordinates,
    which is what makes the packed-sign ensemble behave like the Gaussian one.
    """
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    wp = np.asarray(wp, dtype=np.float64).reshape(-1)
    if w.shape != wp.shape:
        raise ValueError("vectors must share a dimension")
    return float(np.sum((w * w + wp * wp) ** 1.5))


def gram_schmidt_perp(u, v) -> np.ndarray:
    """Unit component of v orthogonal to u; rejects near-collinear pairs."""
    u = _require_unit(u, "u")
    v = _require_unit(v, "v")
    w = v - (v @ u) * u
    norm = np.linalg.norm(w)
    if norm < 1e-8:
        raise ValueError("vectors are collinear; no orthogonal component")
    return w / norm


def rademacher_identity_error(u, v, N: int, rng: RngStream):
    """(|MC estimate - arcsin target|, g(u, v_perp)) for one dispersed pair.

    Pairs with |u.v| > 0.9 are rejected: the orthogonalized direction is then
    ill-conditioned and the bound's spread functional loses meaning.
    """
    u = _require_unit(u, "u")
    v = _require_unit(v, "v")
    dot = float(u @ v)
    if abs(dot) > 0.9:
        raise ValueError("pair too aligned for the dispersion bound")
    vperp = gram_schmidt_perp(u, v)
    est = grothendieck_mc(u, v, N, "rademacher", rng)
    target = _TWO_OVER_PI * math.asin(dot)
    return abs(est - target), dispersion_g(u, vperp)


def rademacher_error_curve(p_grid, trials: int, N: int, rng: RngStream) -> SweepResult:
    """Mean identity error of the packed-sign ensemble as dimension grows.

    Pairs are uniform sphere draws (coordinates at the 1/sqrt(p) scale), so
    the reported bound column 264 * mean g(u, v_perp) shrinks like p^{-1/2}
    and the measured error should track that rate once N drowns the MC noise.
    """
    p_grid = tuple(int(p) for p in p_grid)
    if any(p < 4 for p in p_grid):
        raise ValueError("dimension grid entries must be >= 4")
    if trials < 1:
        raise ValueError("need at least one trial")
    means, stds, bounds = [], [], []
    for ci, p in enumerate(p_grid):
        errs = np.empty(trials)
        gs = np.empty(trials)
        for t in range(trials):
            sub = rng.derive(ci, t)
            u = sub.normal(p)
            u /= np.linalg.norm(u)
            while True:
                v = sub.normal(p)
                v /= np.linalg.norm(v)
                if abs(u @ v) <= 0.9:
                    break
            errs[t], gs[t] = rademacher_identity_error(u, v, N, sub.derive(1))
        means.append(errs.mean())
        stds.append(errs.std())
        bounds.append(_DISPERSION_CONSTANT * gs.mean())
    return SweepResult(grid=p_grid, mean=means, std=stds, trials=trials, bound=tuple(bounds))


def geodesic(a, b) -> float:
    """Angle between equal-norm vectors as a fraction of pi.

    The two-argument arctangent form stays accurate near 0 and pi, where the
    clamped-arccos version loses digits.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    theta = 2.0 * math.atan2(np.linalg.norm(a - b), np.linalg.norm(a + b))
    return theta / math.pi


def code_distances(E, x, y):
    """(Hamming fraction, input geodesic, code geodesic) for one pair.

    The code vectors are the signs of the projections; their normalized
    Hamming distance equals sin^2(pi/2 * code-geodesic) identically, which
    callers use as a cross-check on both metric paths.
    """
    E = np.asarray(E, dtype=np.float64)
    x = _require_unit(x, "x")
    y = _require_unit(y, "y")
    a = np.where(E @ x >= 0, 1.0, -1.0)
    b = np.where(E @ y >= 0, 1.0, -1.0)
    dh = float(np.mean(a != b))
    return dh, geodesic(x, y), geodesic(a, b)


def near_isometry_sweep(n: int, N_grid, pairs: int, rng: RngStream) -> SweepResult:
    """Hamming-vs-geodesic deviation of sign codes across projection counts.

    Per cell: one Gaussian projection, `pairs` uniform sphere pairs, and the
    statistics of |Hamming fraction - geodesic|. info carries the per-cell
    max deviation and the worst metric-identity residual seen anywhere.
    """
    N_grid = tuple(int(N) for N in N_grid)
    if n < 2:
        raise ValueError("ambient dimension must be >= 2")
    if pairs < 1:
        raise ValueError("need at least one pair")
    means, stds, maxes = [], [], []
    identity_worst = 0.0
    for ci, N in enumerate(N_grid):
        sub = rng.derive(ci)
        E = gauss_matrix(sub.derive(0), N, n)
        draw = sub.derive(1)
        devs = np.empty(pairs)
        for j in range(pairs):
            x = draw.normal(n)
            x /= np.linalg.norm(x)
            y = draw.normal(n)
            y /= np.linalg.norm(y)
            dh, dg, dg_codes = code_distances(E, x, y)
            devs[j] = abs(dh - dg)
            identity_worst = max(
                identity_worst, abs(dh - math.sin(math.pi / 2 * dg_codes) ** 2)
            )
        means.append(devs.mean())
        stds.append(devs.std())
        maxes.append(float(devs.max()))
    return SweepResult(
        grid=N_grid,
        mean=means,
        std=stds,
        trials=pairs,
        info={"max_dev": tuple(maxes), "metric_identity_max": identity_worst},
    )


def _screen_discrepancy_inputs(layer: DenseLayer, inputs) -> np.ndarray:
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim == 1:
        X = X[None]
    if X.ndim != 2 or X.shape[1] != layer.W.shape[1]:
        raise ValueError("inputs must be vectors matching the layer width")
    if layer.c != 0.0:
        raise ValueError("discrepancy sweep requires an unshifted layer")
    if np.max(np.abs(np.linalg.norm(layer.W, axis=1) - 1.0)) > 1e-8:
        raise ValueError("layer rows must be unit length")
    if np.max(np.abs(np.linalg.norm(X, axis=1) - 1.0)) > 1e-8:
        raise ValueError("inputs must be unit length")
    return X


def _plain_activation(act, u: np.ndarray, kappa: Optional[float]) -> np.ndarray:
    a = _TWO_OVER_PI * np.arcsin(np.clip(u, -1.0, 1.0))
    if act.name == "asu":
        return a
    if act.name == "rasu":
        return np.maximum(a, 0.0)
    return np.tanh(kappa * a)


def layer_discrepancy_sweep(
    layer: DenseLayer,
    inputs,
    N_grid,
    trials: int,
    kind: str,
    rng: RngStream,
    c: float = 3.0,
    lmin: Optional[float] = None,
    eps: Optional[float] = None,
) -> SweepResult:
    """Distance between one float layer and its sign-count surrogate, per N.

    For the identity/relu variants the comparison is ||scores/N - y||_2
    against the concentration bound sqrt(2 (c + log 2n) n / N); info reports
    the fraction of samples landing inside that bound. The thresholded
    variant compares the pure sign output against tanh at the theory gain
    derived from (lmin, eps), with every input screened to keep all row
    alignments at least lmin in magnitude.
    """
    if not isinstance(layer, DenseLayer):
        raise ValueError("discrepancy sweep takes a dense layer")
    if kind not in ("gaussian", "rademacher"):
        raise ValueError(f"unknown projection kind {kind!r}")
    if trials < 1:
        raise ValueError("need at least one trial")
    X = _screen_discrepancy_inputs(layer, inputs)
    N_grid = tuple(int(N) for N in N_grid)
    n, p = layer.W.shape
    thresholded = layer.act.name == "tasu"
    info: dict = {}
    kappa = None
    if thresholded:
        if lmin is None or eps is None:
            raise ValueError("thresholded sweep needs lmin and eps")
        if not (0 < lmin <= 1) or eps <= 0:
            raise ValueError("lmin in (0, 1] and eps > 0 required")
        align = np.min(np.abs(X @ layer.W.T), axis=1)
        bad = np.nonzero(align < lmin - 1e-12)[0]
        if bad.size:
            raise ValueError(
                f"input {bad[0]} has row alignment {align[bad[0]]:.4f} below {lmin}"
            )
        kappa = math.pi / (2 * lmin) * math.log(4 * math.sqrt(n) / eps)
        info.update(
            kappa=kappa,
            lmin=float(lmin),
            eps=float(eps),
            n_theory=8 * (c + math.log(2 * n)) * n * kappa**2 / eps**2,
        )

    Y = _plain_activation(layer.act, X @ layer.W.T, kappa)
    means, stds, bounds, rates = [], [], [], []
    for ci, N in enumerate(N_grid):
        bound = float(eps) if thresholded else math.sqrt(2 * (c + math.log(2 * n)) * n / N)
        vals = np.empty(trials * X.shape[0])
        k = 0
        for t in range(trials):
            sub = rng.derive(ci, t)
            if kind == "gaussian":
                E = gauss_matrix(sub, N, p)
            else:
                E = _pm1_block(sub, N, p)
            codes = np.where(layer.W @ E.T >= 0, 1.0, -1.0)
            T = np.where(X @ E.T >= 0, 1.0, -1.0)
            scores = T @ codes.T  # (inputs, n), integer-valued
            if thresholded:
                out = np.where(scores >= 0, 1.0, -1.0)
                diff = out - Y
            else:
                out = np.maximum(scores, 0.0) if layer.act.name == "rasu" else scores
                diff = out / N - Y
            for b in range(X.shape[0]):
                vals[k] = np.linalg.norm(diff[b])
                k += 1
        means.append(vals.mean())
        stds.append(vals.std())
        bounds.append(bound)
        rates.append(float(np.mean(vals <= bound)))
    info["bound_rate"] = tuple(rates)
    return SweepResult(
        grid=N_grid,
        mean=means,
        std=stds,
        trials=trials * X.shape[0],
        bound=tuple(bounds),
        info=info,
    )


def _ehd_trace(ehd: EhdModel, x: np.ndarray):
    """Per-layer outputs of the binary cascade, unpacked to float vectors."""
    cur = np.asarray(x, dtype=np.float64)
    out = []
    for el in ehd.layers:
        if isinstance(el, EhdConvLayer):
            cur = ehd_conv_forward(el, cur)
            out.append(np.asarray(cur, dtype=np.float64).reshape(-1))
        else:
            if not isinstance(cur, BitVector):
                cur = np.asarray(cur).reshape(-1)
            cur = ehd_dense_forward(el, cur)
            if isinstance(cur, BitVector):
                out.append(unpack(cur))
            else:
                out.append(np.asarray(cur, dtype=np.float64).reshape(-1))
    return out


def _safe_direction(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    return v if norm == 0 else v / norm


def network_delta_trace(gnet: GNetModel, ehd: Optional[EhdModel], inputs) -> SweepResult:
    """Per-layer normalized drift between the float cascade and its twin.

    delta_l is the difference of unit-normalized layer outputs; the mean over
    inputs is reported per layer together with a least-squares growth rate.
    Passing ehd=None compares the float cascade against itself, the exact
    infinite-width limit, so every entry is zero.
    """
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim == len(gnet.input_shape):
        X = X[None]
    L = len(gnet.layers)
    if ehd is not None and len(ehd.layers) != L:
        raise ValueError("models must have the same number of layers")
    norms = np.empty((X.shape[0], L))
    for bi in range(X.shape[0]):
        _, trace = forward(gnet, X[bi])
        flat = [np.asarray(t, dtype=np.float64).reshape(-1) for t in trace]
        twin = flat if ehd is None else _ehd_trace(ehd, X[bi])
        for li in range(L):
            delta = _safe_direction(twin[li]) - _safe_direction(flat[li])
            norms[bi, li] = np.linalg.norm(delta)
    mean = norms.mean(axis=0)
    idx = np.arange(1, L + 1, dtype=np.float64)
    growth = 0.0
    if L > 1:
        growth = float(np.polyfit(idx, mean, 1)[0])
    return SweepResult(
        grid=tuple(range(1, L + 1)),
        mean=mean,
        std=norms.std(axis=0),
        trials=X.shape[0],
        info={"growth": growth},
    )


def asu_isometry_probe(n: int, p: int, pairs: int, rng: RngStream) -> IsometryProbe:
    """Distortion envelope of the row-normalized arcsin map on unit-ball pairs.

    distortion(x, y) = beta_inv ||A(Wx) - A(Wy)||^2 - ||x - y||^2 with
    beta_inv = pi^2 p / 4 (sqrt(n) + sqrt(p))^2 and A the plain arcsin
    activation. Rows of W are normalized Gaussians, pairs are uniform in the
    unit ball, and the envelope is the observed min/max.
    """
    if pairs < 1:
        raise ValueError("need at least one pair")
    W = gauss_matrix(rng.derive(0), n, p)
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    beta_inv = math.pi**2 * p / (4 * (math.sqrt(n) + math.sqrt(p)) ** 2)
    draw = rng.derive(1)
    lo, hi = math.inf, -math.inf
    for _ in range(pairs):
        pts = []
        for _ in range(2):
            d = draw.normal(p)
            d /= np.linalg.norm(d)
            pts.append(d * draw.uniform(1)[0] ** (1.0 / p))
        x, y = pts
        ax = _TWO_OVER_PI * np.arcsin(np.clip(W @ x, -1.0, 1.0))
        ay = _TWO_OVER_PI * np.arcsin(np.clip(W @ y, -1.0, 1.0))
        dist = beta_inv * float(np.sum((ax - ay) ** 2)) - float(np.sum((x - y) ** 2))
        lo = min(lo, dist)
        hi = max(hi, dist)
    return IsometryProbe(
        n=n, p=p, pairs=pairs, beta_inv=beta_inv, min_distortion=lo, max_distortion=hi
    )


def _batch_loss(model: GNetModel, X, labels, eps: float) -> float:
    from .gnet import forward_batch
    from .train import loss

    logits, _ = forward_batch(model, X, eps)
    return float(np.mean([loss(logits[i], int(labels[i])) for i in range(len(labels))]))


def grad_check(model: GNetModel, X, labels, h: float = 1e-6) -> float:
    """Worst relative gap between analytic and central-difference gradients.

    Perturbs every weight and shift coordinate in place, so the model passed
    in is restored bit-for-bit before returning.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    _, grads = backward(model, X, labels)
    worst = 0.0

    def rel(analytic: float, numeric: float) -> float:
        return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-5)

    for li, layer in enumerate(model.layers):
        Wflat = layer.W.reshape(-1)
        gflat = grads.dW[li].reshape(-1)
        for j in range(Wflat.size):
            keep = Wflat[j]
            Wflat[j] = keep + h
            up = _batch_loss(model, X, labels, DEFAULT_EPS)
            Wflat[j] = keep - h
            dn = _batch_loss(model, X, labels, DEFAULT_EPS)
            Wflat[j] = keep
            worst = max(worst, rel(float(gflat[j]), (up - dn) / (2 * h)))
        keep_c = layer.c
        layer.c = keep_c + h
        up = _batch_loss(model, X, labels, DEFAULT_EPS)
        layer.c = keep_c - h
        dn = _batch_loss(model, X, labels, DEFAULT_EPS)
        layer.c = keep_c
        worst = max(worst, rel(float(grads.dc[li]), (up - dn) / (2 * h)))
    return worst
