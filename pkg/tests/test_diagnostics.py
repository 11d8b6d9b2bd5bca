import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eulernet.data import generate_moons
from eulernet.diagnostics import (
    capture_trajectory,
    layer_spectra,
    default_schedule,
    perturbation_amplification,
    shrinkage_certificate,
    stability_margin,
)
from eulernet.nn import (
    BlockKind,
    NetworkConfig,
    init_model,
    residual_block_forward,
    shrinkage_block_forward,
)


def zero_model(cfg):
    m = init_model(cfg)
    for p in m.parameters().values():
        p[...] = 0.0
    if m.proj_w is None:
        return m
    m.proj_w[...] = np.eye(*m.proj_w.shape)
    return m


class TestStabilityMargin:
    def test_negative_identity(self):
        assert stability_margin(-np.eye(3), 1.0) == 0.0

    def test_scalar_cases(self):
        assert stability_margin(-3 * np.eye(2), 1.0) == pytest.approx(2.0, abs=1e-12)
        assert stability_margin(-3 * np.eye(2), 0.1) == pytest.approx(0.7, abs=1e-12)

    def test_rotation(self):
        j = np.array([[0.0, 1.0], [-1.0, 0.0]])
        assert stability_margin(j, 0.1) == pytest.approx(np.sqrt(1.01), abs=1e-12)
        assert stability_margin(j, 0.1, mode="real") == pytest.approx(1.0, abs=1e-12)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            stability_margin(np.eye(2), 0.1, mode="spectral")

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 1.0), st.floats(0.1, 10.0))
    def test_scaling(self, seed, h, c):
        j = np.random.default_rng(seed).normal(size=(4, 4))
        assert abs(stability_margin(j, h) - stability_margin(c * j, h / c)) < 1e-9

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.01, 1.0), st.floats(1e-6, 1.0))
    def test_stable_region(self, h, frac):
        lam = -frac / h
        assert abs(1.0 + h * lam) < 1.0
        assert stability_margin(np.array([[lam]]), h) < 1.0


class TestCertificate:
    def test_construction_passes(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            w = int(rng.integers(2, 10))
            k1 = rng.normal(size=(w, w))
            d = rng.uniform(0, 2, size=w)
            assert shrinkage_certificate(-(k1.T * d) @ k1).passed

    def test_positive_witness(self):
        cert = shrinkage_certificate(np.array([[0.1]]))
        assert not cert.passed
        assert cert.witness == pytest.approx(0.1)

    def test_zero_boundary(self):
        assert shrinkage_certificate(np.zeros((3, 3))).passed

    def test_asymmetric_fails(self):
        cert = shrinkage_certificate(np.array([[-1.0, 1.0], [0.0, -1.0]]))
        assert not cert.passed and cert.witness is None


class TestLayerSpectra:
    def test_shrinkage_network(self):
        rng = np.random.default_rng(1)
        for act in ("tanh", "relu"):
            cfg = NetworkConfig(input_dim=2, n_classes=2, depth=20, width=2, h=1.0,
                                block_kind="shrinkage", activation=act, seed=2)
            rep = layer_spectra(init_model(cfg), cfg, rng.normal(size=(30, 2)))
            assert len(rep.layers) == 20
            assert all(layer.spectral_abscissa <= 1e-8 for layer in rep.layers)
            assert all(layer.certificate.passed for layer in rep.layers)

    def test_shrinkage_margin_oracle(self):
        rng = np.random.default_rng(3)
        cfg = NetworkConfig(input_dim=2, n_classes=2, depth=30, width=2, h=0.5,
                            block_kind="shrinkage", seed=4)
        m = init_model(cfg)
        for blk in m.blocks:
            blk.k1 *= 0.9  # keeps ||K1||^2 below 2 / h for every layer drawn here
        rep = layer_spectra(m, cfg, rng.normal(size=(10, 2)))
        for layer in rep.layers:
            eigs = layer.eigenvalues.real
            if eigs.min() >= -2.0 / cfg.h:
                expected = max(abs(1 + cfg.h * e) for e in eigs)
                assert layer.margin == pytest.approx(expected, abs=1e-12)
                assert layer.margin <= 1.0

    def test_zero_blocks(self):
        cfg = NetworkConfig(input_dim=3, n_classes=2, depth=4, width=3, h=0.3, seed=0)
        rep = layer_spectra(zero_model(cfg), cfg, np.ones((5, 3)))
        assert all(layer.margin == 1.0 for layer in rep.layers)
        assert all(np.all(layer.jacobian == 0) for layer in rep.layers)
        assert rep.n_stable == 4

    def test_probe_is_batch_mean(self):
        cfg = NetworkConfig(input_dim=2, n_classes=2, depth=2, width=2, h=0.5, seed=5)
        m = init_model(cfg)
        x = np.random.default_rng(6).normal(size=(8, 2))
        rep = layer_spectra(m, cfg, x)
        np.testing.assert_allclose(rep.layers[0].probe, x.mean(axis=0))
        second = np.array([residual_block_forward(r, m.blocks[0], 0.5) for r in x]).mean(axis=0)
        np.testing.assert_allclose(rep.layers[1].probe, second, atol=1e-14)

    def test_divergence_partial(self):
        cfg = NetworkConfig(input_dim=2, n_classes=2, depth=5, width=2, h=1.0, activation="relu", seed=0)
        m = init_model(cfg)
        for blk in m.blocks[2:]:
            blk.k1[:] = np.eye(2) * 1e200
            blk.k2[:] = np.eye(2) * 1e200
        rep = layer_spectra(m, cfg, np.ones((2, 2)))
        assert rep.diverged
        assert len(rep.layers) < 5

    def test_csv_columns(self):
        cfg = NetworkConfig(input_dim=2, n_classes=2, depth=3, width=2, h=0.2, seed=0)
        rep = layer_spectra(init_model(cfg), cfg, np.ones((3, 2)))
        rows = list(csv.reader(io.StringIO(rep.to_csv())))
        assert rows[0][:4] == ["layer", "spectral_abscissa", "margin", "stable"]
        assert len(rows) == 4
        assert "3 layers stable" in rep.summary() or "of 3 layers stable" in rep.summary()


class TestPerturbation:
    def test_identity_network(self):
        cfg = NetworkConfig(input_dim=2, n_classes=2, depth=10, width=2, h=0.7, seed=0)
        probe = perturbation_amplification(zero_model(cfg), cfg, np.array([0.3, -0.2]), epsilon=1e-3)
        np.testing.assert_allclose(probe.deviations, 1e-3, rtol=1e-9)
        assert probe.amplification == pytest.approx(1.0, abs=1e-9)
        assert len(probe.deviations) == 11

    def test_linear_regime(self):
        cfg = NetworkConfig(input_dim=2, n_classes=2, depth=20, width=2, h=0.1, seed=3)
        m = init_model(cfg)
        y0 = np.array([0.5, 0.25])
        a = perturbation_amplification(m, cfg, y0, epsilon=1e-3, seed=1).amplification
        b = perturbation_amplification(m, cfg, y0, epsilon=1e-4, seed=1).amplification
        assert 0.5 < a / b < 2.0

    def test_bad_epsilon(self):
        cfg = NetworkConfig(input_dim=2, n_classes=2, depth=1, width=2)
        with pytest.raises(ValueError):
            perturbation_amplification(init_model(cfg), cfg, np.zeros(2), epsilon=0.0)

    def test_divergence_is_infinite(self):
        cfg = NetworkConfig(input_dim=2, n_classes=2, depth=3, width=2, h=1.0, activation="relu")
        m = init_model(cfg)
        for blk in m.blocks:
            blk.k1[:] = np.eye(2) * 1e200
            blk.k2[:] = np.eye(2) * 1e200
        probe = perturbation_amplification(m, cfg, np.ones(2))
        assert probe.diverged and probe.amplification == float("inf")


class TestTrajectory:
    def test_schedules(self):
        assert default_schedule(100) == [0, 5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100]
        assert default_schedule(500) == [0, 5, 50, 100, 150, 200, 250, 300, 350, 400, 450, 500]

    def test_layer_zero_is_input(self):
        d = generate_moons(50, 0.1, seed=0)
        cfg = NetworkConfig(input_dim=2, n_classes=2, depth=10, width=2, h=0.5, seed=1)
        rec = capture_trajectory(init_model(cfg), cfg, d, [0])
        assert rec.layers == (0,)
        np.testing.assert_array_equal(rec.snapshots[0], d.features)

    def test_matches_manual_composition(self):
        d = generate_moons(20, 0.1, seed=2)
        for kind, fwd in ((BlockKind.RESIDUAL, residual_block_forward),
                          (BlockKind.SHRINKAGE, shrinkage_block_forward)):
            cfg = NetworkConfig(input_dim=2, n_classes=2, depth=6, width=2, h=0.4, block_kind=kind, seed=3)
            m = init_model(cfg)
            rec = capture_trajectory(m, cfg, d, [0, 3, 6])
            y = d.features
            manual = {0: y}
            for i, blk in enumerate(m.blocks, start=1):
                y = fwd(y, blk, 0.4)
                manual[i] = y
            for t, snap in zip(rec.layers, rec.snapshots):
                np.testing.assert_allclose(snap, manual[t], atol=1e-13)

    def test_bounds_are_tight(self):
        d = generate_moons(40, 0.1, seed=4)
        cfg = NetworkConfig(input_dim=2, n_classes=2, depth=5, width=2, h=0.5, seed=0)
        rec = capture_trajectory(init_model(cfg), cfg, d)
        lo, hi = rec.bounds[0]
        np.testing.assert_array_equal(lo, d.features.min(axis=0))
        np.testing.assert_array_equal(hi, d.features.max(axis=0))

    def test_schedule_out_of_range(self):
        d = generate_moons(10, 0.1)
        cfg = NetworkConfig(input_dim=2, n_classes=2, depth=5, width=2)
        with pytest.raises(ValueError):
            capture_trajectory(init_model(cfg), cfg, d, [0, 6])

    def test_shrinkage_norms_decrease_residual_grow(self):
        d = generate_moons(200, 0.1, seed=5)
        shrink = NetworkConfig(input_dim=2, n_classes=2, depth=100, width=2, h=1.0,
                               block_kind="shrinkage", seed=6)
        rec = capture_trajectory(init_model(shrink), shrink, d)
        norms = rec.mean_norms()
        assert norms[-1] < norms[0]
        assert rec.spans()[-1] < rec.spans()[0]
        plain = NetworkConfig(input_dim=2, n_classes=2, depth=100, width=2, h=1.0, seed=6)
        rec = capture_trajectory(init_model(plain), plain, d)
        assert rec.diverged or rec.mean_norms()[-1] > rec.mean_norms()[0]
