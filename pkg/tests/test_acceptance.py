"""Desk-scale acceptance runs covering the full pipeline.

Each test prints one `criterion NN: PASS/FAIL` line with its measured
numbers before asserting, so a red run still shows every verdict in the
captured output. The MNIST fixtures are session-scoped: criteria 07 and 08
share one trained fully connected base model.
"""

import math
from pathlib import Path

import numpy as np
import pytest

import emulation as emu
from signet.bits import counters, unpack_matrix
from signet.data import load_idx
from signet.ehd import EmbedSpec, convert_model, cost_report, ehd_evaluate, ehd_forward
from signet.gnet import (
    ASU,
    RASU,
    TASU,
    ConvLayer,
    DenseLayer,
    GNetModel,
    HeadLayer,
    forward_batch,
)
from signet.rng import RngStream
from signet.robust import robustness_sweep
from signet.train import ArchSpec, LayerSpec, TrainConfig, evaluate, fit, init_model
from signet.verify import (
    code_distances,
    grad_check,
    grothendieck_mc,
    layer_discrepancy_sweep,
    near_isometry_sweep,
    network_delta_trace,
    rademacher_error_curve,
)

MNIST_DIR = Path(__file__).resolve().parents[1] / "data" / "mnist"


def _verdict(num: int, ok: bool, detail: str) -> str:
    line = f"criterion {num:02d}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    return line


def _unit_rows(rng: RngStream, n: int, p: int) -> np.ndarray:
    W = rng.normal((n, p))
    return W / np.linalg.norm(W, axis=1, keepdims=True)


def _unit_vec(rng: RngStream, p: int) -> np.ndarray:
    v = rng.normal((p,))
    return v / np.linalg.norm(v)


@pytest.fixture(scope="session")
def mnist():
    train = load_idx(
        MNIST_DIR / "train-images-idx3-ubyte.gz",
        MNIST_DIR / "train-labels-idx1-ubyte.gz",
        split="train",
    )
    test = load_idx(
        MNIST_DIR / "t10k-images-idx3-ubyte.gz",
        MNIST_DIR / "t10k-labels-idx1-ubyte.gz",
        split="test",
    )
    return train, test


def _train_fc(act, train, test):
    arch = ArchSpec((784,), (LayerSpec("dense", 512, act=act), LayerSpec("head", 10)))
    model = init_model(arch, RngStream(71).derive(0))
    cfg = TrainConfig(epochs=10, batch_size=64, lr=1e-3, seed=5)
    model, history = fit(model, train, cfg, eval_dataset=test)
    return model, history


@pytest.fixture(scope="session")
def fc_base(mnist):
    """Shared 784->512->10 base model, best faithful settings from pilots."""
    train, test = mnist
    return _train_fc(RASU, train, test)


@pytest.fixture(scope="session")
def fc_tasu(mnist):
    train, test = mnist
    return _train_fc(TASU(20.0), train, test)


def test_criterion_01():
    """Monte Carlo sign correlation against the arcsine value, 10 pairs."""
    base = RngStream(4201)
    worst = 0.0
    for i in range(10):
        sub = base.derive(i)
        u = _unit_vec(sub.derive(0), 32)
        v = _unit_vec(sub.derive(1), 32)
        est = grothendieck_mc(u, v, 10**6, "gaussian", sub.derive(2))
        target = (2.0 / math.pi) * math.asin(float(np.clip(u @ v, -1.0, 1.0)))
        worst = max(worst, abs(est - target))
    ok = worst <= 5e-3
    _verdict(1, ok, f"max |mc - arcsin| {worst:.2e} (need <= 5e-3, N=1e6, p=32)")
    assert ok


def test_criterion_02():
    """Hamming fraction tracks the geodesic, and the sin^2 identity is exact."""
    res = near_isometry_sweep(16, (16384,), pairs=1000, rng=RngStream(77))
    max_dev = max(res.info["max_dev"])
    ident = res.info["metric_identity_max"]
    ok = max_dev <= 0.05 and ident <= 1e-12
    _verdict(
        2,
        ok,
        f"max |hamming - geodesic| {max_dev:.4f} (need <= 0.05), "
        f"identity residual {ident:.2e} (need <= 1e-12)",
    )
    assert ok


def test_criterion_03():
    """Relu-variant layer discrepancy: bound rate and decay slope across N."""
    rng = RngStream(505)
    layer = DenseLayer(_unit_rows(rng.derive(0), 128, 64), c=0.0, act=RASU)
    x = _unit_vec(rng.derive(1), 64)
    grid = tuple(2**k for k in range(8, 15))
    res = layer_discrepancy_sweep(layer, x, grid, trials=20, kind="gaussian", rng=rng.derive(2), c=3.0)
    rates = res.info["bound_rate"]
    slope = float(np.polyfit(np.log2(grid), np.log2(res.mean), 1)[0])
    ok = all(r >= 19 / 20 for r in rates) and -0.6 <= slope <= -0.4
    _verdict(
        3,
        ok,
        f"bound rates {['%.2f' % r for r in rates]} (need >= 0.95 each), "
        f"slope {slope:.3f} (need in [-0.6, -0.4])",
    )
    assert ok


def test_criterion_04():
    """Thresholded layer discrepancy at the theory gain and width."""
    n = 16
    rng = RngStream(606)
    Q, _ = np.linalg.qr(rng.derive(0).normal((n, n)))
    layer = DenseLayer(Q, c=0.0, act=TASU(1.0))  # gain comes from the formulas
    lmin = 1.0 / math.sqrt(n)
    eps = 0.5 * math.sqrt(n)
    kappa = math.pi / (2 * lmin) * math.log(4 * math.sqrt(n) / eps)
    n_theory = 8 * (3.0 + math.log(2 * n)) * n * kappa**2 / eps**2
    N = int(math.ceil(n_theory))
    signs = np.where(rng.derive(1).uniform(50 * n).reshape(50, n) < 0.5, -1.0, 1.0)
    X = (signs / math.sqrt(n)) @ Q  # row alignments all exactly lmin
    res = layer_discrepancy_sweep(
        layer, X, (N,), trials=1, kind="gaussian", rng=rng.derive(2), c=3.0, lmin=lmin, eps=eps
    )
    rate = res.info["bound_rate"][0]
    ok = rate >= 0.9 and abs(res.info["kappa"] - kappa) < 1e-9
    _verdict(
        4,
        ok,
        f"||y - y~|| <= {eps:.2f} in {rate:.0%} of 50 trials (need >= 90%), "
        f"gain {kappa:.2f}, width {N}",
    )
    assert ok


def test_criterion_05():
    """Sign-vs-arcsine error decay across input widths at fixed sample count."""
    grid = (64, 256, 1024, 4096)
    res = rademacher_error_curve(grid, trials=20, N=10**5, rng=RngStream(8675309))
    slope = float(np.polyfit(np.log(grid), np.log(res.mean), 1)[0])
    ok = -0.8 <= slope <= -0.2
    _verdict(
        5,
        ok,
        f"log-log slope {slope:.3f} (need in [-0.8, -0.2]); "
        f"mean errors {['%.2e' % m for m in res.mean]}",
    )
    assert ok


def test_criterion_06():
    """Layer-wise drift of a three-layer cascade grows with depth."""
    rng = RngStream(6100)
    arch = ArchSpec(
        (10,),
        (
            LayerSpec("dense", 12, act=ASU),
            LayerSpec("dense", 12, act=ASU),
            LayerSpec("head", 4),
        ),
    )
    gnet = init_model(arch, rng.derive(0))
    X = np.stack([_unit_vec(rng.derive(1, i), 10) for i in range(8)])
    per_layer = []
    for s in range(20):
        specs = [EmbedSpec("gaussian", 4096, 6100 + s, li) for li in range(3)]
        ehd = convert_model(gnet, specs)
        res = network_delta_trace(gnet, ehd, X)
        per_layer.append(res.mean)
    means = np.mean(per_layer, axis=0)
    ok = bool(np.all(np.diff(means) >= 0.0))
    _verdict(
        6,
        ok,
        f"mean per-layer deltas {['%.4f' % m for m in means]} (need nondecreasing, 20 seeds)",
    )
    assert ok


def test_criterion_07(mnist, fc_base):
    """MNIST end to end: accuracy bar, binary conversion gap, conv smoke."""
    train, test = mnist
    model, history = fc_base
    g_acc = history[-1]["test_acc"]

    accs = []
    for seed in range(10):
        specs = [EmbedSpec("rademacher", 8192, seed, li) for li in range(2)]
        accs.append(ehd_evaluate(convert_model(model, specs), test))
    mean_ehd = float(np.mean(accs))
    gap = abs(g_acc - mean_ehd)

    conv_arch = ArchSpec(
        (1, 28, 28),
        (
            LayerSpec("conv", 8, act=RASU, kernel=(3, 3), stride=(2, 2)),
            LayerSpec("dense", 32, act=RASU),
            LayerSpec("head", 10),
        ),
    )
    conv_model = init_model(conv_arch, RngStream(72).derive(0))
    conv_train = train.subset(np.arange(2000)).reshape((1, 28, 28))
    conv_model, _ = fit(conv_model, conv_train, TrainConfig(epochs=1, batch_size=64, lr=1e-3, seed=6))
    conv_specs = [EmbedSpec("rademacher", 512, 9, li) for li in range(3)]
    conv_ehd = convert_model(conv_model, conv_specs)
    conv_acc = ehd_evaluate(conv_ehd, test.subset(np.arange(100)).reshape((1, 28, 28)))
    conv_ok = 0.0 <= conv_acc <= 1.0

    ok = g_acc >= 0.970 and gap <= 0.015 and conv_ok
    _verdict(
        7,
        ok,
        f"gnet test acc {g_acc:.4f} (need >= 0.9700), "
        f"ehd mean {mean_ehd:.4f} over 10 seeds, gap {gap * 100:.2f}pp (need <= 1.5), "
        f"conv pipeline smoke acc {conv_acc:.2f} (100-sample eval)",
    )
    assert conv_ok
    assert g_acc >= 0.970, f"gnet test accuracy {g_acc:.4f} below 0.970"
    assert gap <= 0.015, f"ehd gap {gap * 100:.2f}pp above 1.5pp"


def test_criterion_08(mnist, fc_base, fc_tasu):
    """Thresholded nets keep more accuracy under bit flips than relu nets."""
    _, test = mnist
    sub = test.subset(np.arange(2000))
    rho = (0.0, 0.05, 0.1, 0.2)
    rows = {}
    for tag, (model, _) in (("rasu", fc_base), ("tasu", fc_tasu)):
        specs = [EmbedSpec("rademacher", 4096, 0, li) for li in range(2)]
        ehd = convert_model(model, specs)
        clean = ehd_evaluate(ehd, sub)
        res = robustness_sweep(
            model, ehd, sub, rho, trials=5, mode="per-layer",
            rng=RngStream(313).derive(0 if tag == "rasu" else 1),
        )
        rows[tag] = (clean, res)

    clean_r, res_r = rows["rasu"]
    clean_t, res_t = rows["tasu"]
    zero_ok = res_r.mean[0] == clean_r and res_t.mean[0] == clean_t
    margins = []
    order_ok = True
    for i in range(1, len(rho)):
        pooled = math.sqrt((res_r.std[i] ** 2 + res_t.std[i] ** 2) / 2.0)
        margin = res_t.mean[i] - (res_r.mean[i] - pooled)
        margins.append(margin)
        order_ok = order_ok and margin >= 0.0
    ok = zero_ok and order_ok
    _verdict(
        8,
        ok,
        f"rho=0 exact: {zero_ok}; tasu {['%.4f' % v for v in res_t.mean]} vs "
        f"rasu {['%.4f' % v for v in res_r.mean]}, "
        f"margins-with-pooled-std {['%+.4f' % m for m in margins]} (need >= 0 each)",
    )
    assert zero_ok
    assert order_ok


def test_criterion_09():
    """Analytic gradients against central differences for every layer kind."""
    rng = RngStream(909)
    dense_model = GNetModel(
        [
            DenseLayer(_unit_rows(rng.derive(0), 5, 6), c=0.1, act=ASU),
            DenseLayer(_unit_rows(rng.derive(1), 5, 5), c=-0.2, act=RASU),
            DenseLayer(_unit_rows(rng.derive(2), 4, 5), c=0.05, act=TASU(3.0)),
            HeadLayer(_unit_rows(rng.derive(3), 3, 4)),
        ],
        input_shape=(6,),
    )
    conv_model = GNetModel(
        [
            ConvLayer(rng.derive(4).normal((3, 1, 3)), c=0.07, stride=(1,), padding=(1,), act=ASU),
            ConvLayer(rng.derive(5).normal((2, 3, 3)), c=-0.04, stride=(2,), padding=(0,), act=RASU),
            DenseLayer(_unit_rows(rng.derive(6), 4, 6), c=0.0, act=TASU(2.5)),
            HeadLayer(_unit_rows(rng.derive(7), 3, 4)),
        ],
        input_shape=(1, 8),
    )
    conv2d_model = GNetModel(
        [
            ConvLayer(rng.derive(8).normal((2, 1, 3, 3)), c=0.02, stride=(1, 1), padding=(1, 0), act=TASU(4.0)),
            HeadLayer(_unit_rows(rng.derive(9), 3, 2 * 6 * 4)),
        ],
        input_shape=(1, 6, 6),
    )
    worst = 0.0
    for model, shape, B in ((dense_model, (6,), 2), (conv_model, (1, 8), 2), (conv2d_model, (1, 6, 6), 2)):
        X = rng.derive(10, B).normal((B,) + shape)
        labels = np.arange(B) % 3
        worst = max(worst, grad_check(model, X, labels, h=1e-5))
    ok = worst <= 1e-4
    _verdict(9, ok, f"max relative gradient error {worst:.2e} (need <= 1e-4)")
    assert ok


def test_criterion_10():
    """Memory formulas and exact op-counter agreement on a toy forward."""
    rng = RngStream(1010)
    model = GNetModel(
        [
            DenseLayer(_unit_rows(rng.derive(0), 8, 12), c=0.0, act=RASU),
            HeadLayer(_unit_rows(rng.derive(1), 4, 8)),
        ],
        input_shape=(12,),
    )
    specs = [EmbedSpec("rademacher", 192, 3, 0), EmbedSpec("rademacher", 256, 4, 1)]
    ehd = convert_model(model, specs)

    mem_ok = True
    for bits in (32, 64):
        rep = cost_report(model, ehd, bits_per_real=bits)
        for entry, (m, p, N) in zip(rep.layers, ((8, 12, 192), (4, 8, 256))):
            mem_ok = mem_ok and entry["ehd_memory_bits"] == (m + p) * N
            mem_ok = mem_ok and entry["fp_memory_bits"] == m * p * bits

    rep = cost_report(model, ehd, bits_per_real=32)
    x = _unit_vec(rng.derive(2), 12)
    with counters.counting():
        ehd_forward(ehd, x)
        seen = {
            "xor_words": counters.xor_words,
            "popcount_words": counters.popcount_words,
            "int_adds": counters.int_adds,
            "sign_evals": counters.sign_evals,
        }
    predicted = {
        key: sum(entry[key] for entry in rep.layers)
        for key in ("xor_words", "popcount_words", "int_adds", "sign_evals")
    }
    count_ok = seen == predicted
    ok = mem_ok and count_ok
    _verdict(
        10,
        ok,
        f"memory formulas exact: {mem_ok}; counters {seen} == predicted {predicted}: {count_ok}",
    )
    assert ok


def test_criterion_11():
    """Packed forward equals unpacked float emulation, 200 random instances."""
    rng = np.random.default_rng(911)
    acts = [ASU, RASU, TASU(2.0), TASU(6.0)]
    kinds = ["gaussian", "rademacher"]
    checked = 0
    for case in range(200):
        layers = []
        specs = []
        use_conv = case % 4 == 0
        if use_conv:
            ch, length, k = 1 + rng.integers(2), 6 + rng.integers(5), 2 + rng.integers(2)
            shape = (int(ch), int(length))
            W = rng.standard_normal((int(1 + rng.integers(3)), int(ch), int(k)))
            layers.append(
                ConvLayer(W, c=float(rng.normal() * 0.2), stride=(1,), padding=(0,), act=acts[rng.integers(4)])
            )
            width = W.shape[0] * (int(length) - int(k) + 1)
        else:
            width = int(2 + rng.integers(9))
            shape = (width,)
        for _ in range(int(rng.integers(1, 3))):
            units = int(1 + rng.integers(6))
            Wd = rng.standard_normal((units, width))
            layers.append(DenseLayer(Wd, c=float(rng.normal() * 0.3), act=acts[rng.integers(4)]))
            width = units
        layers.append(HeadLayer(rng.standard_normal((int(2 + rng.integers(3)), width))))
        model = GNetModel(layers, input_shape=shape)
        for li in range(len(layers)):
            N = int(64 * (1 + rng.integers(4)))
            specs.append(EmbedSpec(kinds[rng.integers(2)], N, int(rng.integers(1000)), li))
        x = rng.standard_normal(shape)
        got = ehd_forward(convert_model(model, specs), x)
        want = emu.emu_model_scores(model, specs, x)
        assert got.dtype == np.int64
        assert np.array_equal(got, np.asarray(want)), f"instance {case} diverged"
        checked += 1
    ok = checked == 200
    _verdict(11, ok, f"{checked}/200 randomized instances integer-exact")
    assert ok
