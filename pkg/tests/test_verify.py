"""Monte Carlo harness: analytic targets, identities, and small sweeps."""

import numpy as np
import pytest

from signet.gnet import ASU, RASU, TASU, DenseLayer, HeadLayer, GNetModel
from signet.ehd import EmbedSpec, convert_model
from signet.rng import RngStream
from signet.train import ArchSpec, LayerSpec, init_model
from signet.verify import (
    IsometryProbe,
    SweepResult,
    asu_isometry_probe,
    code_distances,
    dispersion_g,
    grad_check,
    gram_schmidt_perp,
    grothendieck_mc,
    layer_discrepancy_sweep,
    near_isometry_sweep,
    network_delta_trace,
    rademacher_error_curve,
    rademacher_identity_error,
)

TWO_PI = 2.0 / np.pi


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def pair_with_dot(rng, p, target):
    u = unit(rng.standard_normal(p))
    w = rng.standard_normal(p)
    w = unit(w - (w @ u) * u)
    return u, unit(target * u + np.sqrt(1.0 - target**2) * w)


class TestSweepResult:
    def test_validates(self):
        with pytest.raises(ValueError):
            SweepResult(grid=(1, 2), mean=(0.1,), std=(0.0, 0.0), trials=3)
        with pytest.raises(ValueError):
            SweepResult(grid=(1,), mean=(0.1,), std=(-1e-9,), trials=3)
        with pytest.raises(ValueError):
            SweepResult(grid=(1,), mean=(0.1,), std=(0.0,), trials=0)
        r = SweepResult(grid=(1, 2), mean=(0.5, 0.25), std=(0.0, 0.0), trials=2, bound=(1.0, 0.5))
        assert r.bound == (1.0, 0.5)


class TestGrothendieckMC:
    def test_same_vector_gives_one(self):
        u = unit([0.3, -1.2, 0.8, 0.05])
        for kind in ("gaussian", "rademacher"):
            assert grothendieck_mc(u, u, 500, kind, RngStream(3)) == 1.0

    def test_opposite_vector_gives_minus_one(self):
        u = unit([1.0, 0.2, -0.4])
        assert grothendieck_mc(u, -u, 500, "gaussian", RngStream(4)) == -1.0

    def test_orthogonal_near_zero(self):
        rng = np.random.default_rng(11)
        u, v = pair_with_dot(rng, 16, 0.0)
        est = grothendieck_mc(u, v, 200_000, "gaussian", RngStream(7))
        assert abs(est) <= 0.01

    def test_half_dot_near_third(self):
        rng = np.random.default_rng(12)
        u, v = pair_with_dot(rng, 16, 0.5)
        est = grothendieck_mc(u, v, 200_000, "gaussian", RngStream(8))
        assert abs(est - TWO_PI * np.arcsin(0.5)) <= 0.01
        assert abs(est - 1.0 / 3.0) <= 0.011

    def test_tracks_arcsin_across_dots(self):
        rng = np.random.default_rng(13)
        for target in (-0.8, -0.3, 0.2, 0.9):
            u, v = pair_with_dot(rng, 24, target)
            est = grothendieck_mc(u, v, 100_000, "gaussian", RngStream(9))
            assert abs(est - TWO_PI * np.arcsin(u @ v)) <= 0.02

    def test_requires_unit_vectors(self):
        with pytest.raises(ValueError):
            grothendieck_mc(np.ones(4), unit(np.ones(4)), 100, "gaussian", RngStream(1))
        with pytest.raises(ValueError):
            grothendieck_mc(unit(np.ones(4)), 0.5 * unit(np.ones(4)), 100, "gaussian", RngStream(1))

    def test_deterministic(self):
        rng = np.random.default_rng(14)
        u, v = pair_with_dot(rng, 8, 0.3)
        a = grothendieck_mc(u, v, 5000, "rademacher", RngStream(21))
        b = grothendieck_mc(u, v, 5000, "rademacher", RngStream(21))
        assert a == b

    def test_sample_mean_unbiased(self):
        # grand mean over independent runs stays within 4 standard errors
        rng = np.random.default_rng(15)
        u, v = pair_with_dot(rng, 8, 0.4)
        target = TWO_PI * np.arcsin(u @ v)
        runs = np.array(
            [grothendieck_mc(u, v, 10_000, "gaussian", RngStream(200 + i)) for i in range(200)]
        )
        se = runs.std(ddof=1) / np.sqrt(len(runs))
        assert abs(runs.mean() - target) <= 4 * se


class TestDispersionG:
    def test_disjoint_basis_vectors(self):
        e1 = np.zeros(6)
        e2 = np.zeros(6)
        e1[0] = 1.0
        e2[1] = 1.0
        assert dispersion_g(e1, e2) == pytest.approx(2.0, abs=1e-12)

    def test_flat_vectors_scale(self):
        p = 64
        u = np.full(p, p**-0.5)
        v = np.full(p, p**-0.5)
        # sum of p terms (2/p)^{3/2}
        assert dispersion_g(u, v) == pytest.approx(p * (2.0 / p) ** 1.5, rel=1e-12)

    def test_gram_schmidt_perp(self):
        rng = np.random.default_rng(16)
        u, v = pair_with_dot(rng, 10, 0.6)
        w = gram_schmidt_perp(u, v)
        assert abs(w @ u) <= 1e-12
        assert np.linalg.norm(w) == pytest.approx(1.0, abs=1e-12)
        with pytest.raises(ValueError):
            gram_schmidt_perp(u, u)


class TestRademacherErrorCurve:
    def test_identity_error_rejects_aligned_pair(self):
        u = unit(np.ones(16))
        with pytest.raises(ValueError):
            rademacher_identity_error(u, u, 1000, RngStream(2))

    def test_identity_error_small_for_dispersed(self):
        rng = np.random.default_rng(17)
        u, v = pair_with_dot(rng, 256, 0.3)
        err, g = rademacher_identity_error(u, v, 50_000, RngStream(5))
        assert err <= 0.05
        assert g > 0

    def test_curve_shape_and_decrease(self):
        res = rademacher_error_curve((16, 256), trials=6, N=20_000, rng=RngStream(31))
        assert isinstance(res, SweepResult)
        assert res.grid == (16, 256)
        assert res.trials == 6
        assert res.mean[1] < res.mean[0]
        assert all(s >= 0 for s in res.std)
        assert len(res.bound) == 2 and all(b > 0 for b in res.bound)

    def test_rejects_tiny_widths(self):
        with pytest.raises(ValueError):
            rademacher_error_curve((2, 16), trials=2, N=100, rng=RngStream(1))

    def test_deterministic(self):
        a = rademacher_error_curve((16,), trials=3, N=5000, rng=RngStream(77))
        b = rademacher_error_curve((16,), trials=3, N=5000, rng=RngStream(77))
        assert a.mean == b.mean


class TestNearIsometry:
    def test_code_distances_same_point(self):
        rng = np.random.default_rng(18)
        E = rng.standard_normal((512, 8))
        x = unit(rng.standard_normal(8))
        dh, dg, dg_codes = code_distances(E, x, x)
        assert dh == 0.0 and dg == 0.0 and dg_codes == 0.0

    def test_code_distances_antipodal(self):
        rng = np.random.default_rng(19)
        E = rng.standard_normal((512, 8))
        x = unit(rng.standard_normal(8))
        dh, dg, dg_codes = code_distances(E, x, -x)
        assert dg == pytest.approx(1.0, abs=1e-12)
        assert dh == 1.0
        assert dg_codes == pytest.approx(1.0, abs=1e-12)

    def test_metric_identity_holds(self):
        rng = np.random.default_rng(20)
        E = rng.standard_normal((777, 12))
        for _ in range(20):
            x = unit(rng.standard_normal(12))
            y = unit(rng.standard_normal(12))
            dh, _, dg_codes = code_distances(E, x, y)
            assert abs(dh - np.sin(np.pi / 2 * dg_codes) ** 2) <= 1e-12

    def test_sweep_deviation_shrinks(self):
        res = near_isometry_sweep(8, (256, 4096), pairs=200, rng=RngStream(41))
        assert res.grid == (256, 4096)
        assert res.info["max_dev"][1] < res.info["max_dev"][0]
        assert res.info["metric_identity_max"] <= 1e-12
        assert res.trials == 200

    def test_sweep_deterministic(self):
        a = near_isometry_sweep(6, (128,), pairs=50, rng=RngStream(42))
        b = near_isometry_sweep(6, (128,), pairs=50, rng=RngStream(42))
        assert a.mean == b.mean and a.info["max_dev"] == b.info["max_dev"]


def unit_row_layer(rng, n, p, act):
    W = rng.standard_normal((n, p))
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    return DenseLayer(W, c=0.0, act=act)


class TestLayerDiscrepancy:
    def test_rasu_mean_decreases_with_bound(self):
        rng = np.random.default_rng(22)
        layer = unit_row_layer(rng, 8, 8, RASU)
        x = unit(rng.standard_normal(8))
        res = layer_discrepancy_sweep(layer, x, (512, 8192), trials=6, kind="gaussian", rng=RngStream(51))
        assert res.mean[1] < res.mean[0]
        n = 8
        for N, b in zip(res.grid, res.bound):
            assert b == pytest.approx(np.sqrt(2 * (3.0 + np.log(2 * n)) * n / N), rel=1e-12)
        assert 0.0 <= res.info["bound_rate"][0] <= 1.0

    def test_asu_supported(self):
        rng = np.random.default_rng(23)
        layer = unit_row_layer(rng, 6, 10, ASU)
        x = unit(rng.standard_normal(10))
        res = layer_discrepancy_sweep(layer, x, (1024,), trials=4, kind="rademacher", rng=RngStream(52))
        assert res.mean[0] < 1.0

    def test_multiple_inputs_pooled(self):
        rng = np.random.default_rng(24)
        layer = unit_row_layer(rng, 5, 7, RASU)
        X = np.stack([unit(rng.standard_normal(7)) for _ in range(3)])
        res = layer_discrepancy_sweep(layer, X, (256,), trials=2, kind="gaussian", rng=RngStream(53))
        assert res.trials == 6  # embeddings x inputs

    def test_tasu_uses_theory_kappa(self):
        layer = DenseLayer(np.eye(4), c=0.0, act=TASU(3.0))
        x = unit([0.5, 0.5, 0.5, 0.5])  # alignment exactly 0.5 with each row
        res = layer_discrepancy_sweep(
            layer, x, (4096,), trials=5, kind="gaussian", rng=RngStream(54), lmin=0.5, eps=1.0
        )
        n = 4
        kappa = np.pi / (2 * 0.5) * np.log(4 * np.sqrt(n) / 1.0)
        assert res.info["kappa"] == pytest.approx(kappa, rel=1e-12)
        assert res.info["n_theory"] == pytest.approx(8 * (3.0 + np.log(2 * n)) * n * kappa**2 / 1.0)
        assert res.mean[0] <= 1.5  # eps = 1 target, generous margin

    def test_tasu_screening_rejects(self):
        layer = DenseLayer(np.eye(4), c=0.0, act=TASU(3.0))
        bad = unit([1.0, 0.01, 0.0, 0.0])
        with pytest.raises(ValueError):
            layer_discrepancy_sweep(
                layer, bad, (512,), trials=2, kind="gaussian", rng=RngStream(55), lmin=0.3, eps=1.0
            )

    def test_tasu_requires_lmin_and_eps(self):
        layer = DenseLayer(np.eye(4), c=0.0, act=TASU(3.0))
        x = unit([0.5, 0.5, 0.5, 0.5])
        with pytest.raises(ValueError):
            layer_discrepancy_sweep(layer, x, (512,), trials=2, kind="gaussian", rng=RngStream(56))

    def test_rejects_unnormalized(self):
        rng = np.random.default_rng(25)
        bad_rows = DenseLayer(rng.standard_normal((4, 6)), c=0.0, act=RASU)
        x = unit(rng.standard_normal(6))
        with pytest.raises(ValueError):
            layer_discrepancy_sweep(bad_rows, x, (256,), trials=2, kind="gaussian", rng=RngStream(57))
        good = unit_row_layer(rng, 4, 6, RASU)
        with pytest.raises(ValueError):
            layer_discrepancy_sweep(good, 2.0 * x, (256,), trials=2, kind="gaussian", rng=RngStream(58))
        shifted = DenseLayer(good.W, c=0.5, act=RASU)
        with pytest.raises(ValueError):
            layer_discrepancy_sweep(shifted, x, (256,), trials=2, kind="gaussian", rng=RngStream(59))


class TestNetworkDeltaTrace:
    def build(self, rng, L=3, n=10):
        layers = []
        prev = n
        for _ in range(L):
            layers.append(unit_row_layer(rng, n, prev, ASU))
            prev = n
        layers.append(HeadLayer(rng.standard_normal((3, prev))))
        return GNetModel(layers, input_shape=(n,))

    def test_primal_vs_primal_is_zero(self):
        rng = np.random.default_rng(26)
        model = self.build(rng)
        X = np.stack([unit(rng.standard_normal(10)) for _ in range(4)])
        res = network_delta_trace(model, None, X)
        assert res.grid == (1, 2, 3, 4)
        assert all(m == 0.0 for m in res.mean)

    def test_ehd_trace_layers_and_determinism(self):
        rng = np.random.default_rng(27)
        model = self.build(rng)
        specs = [EmbedSpec("gaussian", 2048, 80 + i, i) for i in range(4)]
        ehd = convert_model(model, specs)
        X = np.stack([unit(rng.standard_normal(10)) for _ in range(4)])
        res = network_delta_trace(model, ehd, X)
        assert len(res.grid) == 4
        assert all(m >= 0.0 for m in res.mean)
        assert res.mean[0] > 0.0
        res2 = network_delta_trace(model, ehd, X)
        assert res.mean == res2.mean
        assert "growth" in res.info


class TestAsuIsometryProbe:
    def test_beta_formula_and_envelope(self):
        probe = asu_isometry_probe(n=256, p=16, pairs=200, rng=RngStream(61))
        assert isinstance(probe, IsometryProbe)
        beta_inv = np.pi**2 * 16 / (4 * (np.sqrt(256) + np.sqrt(16)) ** 2)
        assert probe.beta_inv == pytest.approx(beta_inv, rel=1e-12)
        assert probe.min_distortion <= probe.max_distortion

    def test_envelope_shrinks_with_aspect(self):
        wide = asu_isometry_probe(n=64, p=16, pairs=400, rng=RngStream(62))
        tall = asu_isometry_probe(n=1024, p=16, pairs=400, rng=RngStream(62))
        spread_wide = max(abs(wide.min_distortion), abs(wide.max_distortion))
        spread_tall = max(abs(tall.min_distortion), abs(tall.max_distortion))
        assert spread_tall < spread_wide

    def test_deterministic(self):
        a = asu_isometry_probe(n=128, p=8, pairs=100, rng=RngStream(63))
        b = asu_isometry_probe(n=128, p=8, pairs=100, rng=RngStream(63))
        assert (a.min_distortion, a.max_distortion) == (b.min_distortion, b.max_distortion)


class TestGradCheck:
    def fit_free_model(self, seed, act):
        arch = ArchSpec((5,), (LayerSpec("dense", 6, act=act), LayerSpec("head", 3)))
        return init_model(arch, RngStream(seed))

    def test_rasu_model_passes(self):
        model = self.fit_free_model(71, RASU)
        rng = np.random.default_rng(28)
        X = rng.standard_normal((4, 5))
        labels = np.array([0, 1, 2, 1])
        assert grad_check(model, X, labels) <= 1e-4

    def test_tasu_and_asu_pass(self):
        rng = np.random.default_rng(29)
        for seed, act in ((72, TASU(4.0)), (73, ASU)):
            model = self.fit_free_model(seed, act)
            X = rng.standard_normal((3, 5))
            labels = np.array([2, 0, 1])
            assert grad_check(model, X, labels) <= 1e-4
