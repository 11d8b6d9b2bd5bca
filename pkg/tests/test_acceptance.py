"""Acceptance checks, one test per criterion.

Each test appends a ``[PASS]``/``[FAIL]`` line that the terminal summary
prints at the end of the run, then asserts. Trained moons models are
shared between criteria through a cache, so the depth-100 residual runs
are trained once.

Moons protocol used throughout: 1000 training and 1000 test points with
noise 0.1, tanh, plain SGD with learning rate 0.05, batch size 100 and
100 epochs, trial seeds 0..9 on a fixed dataset.
"""

import csv
import functools
import json
import time

import numpy as np
import pytest

from eulernet import cli
from eulernet.data import generate_moons
from eulernet.diagnostics import capture_trajectory, perturbation_amplification, shrinkage_certificate
from eulernet.linalg import general_eigenvalues, symmetric_eigenvalues
from eulernet.nn import (
    BlockKind,
    BlockParams,
    NetworkConfig,
    block_jacobian,
    init_model,
    loss_and_grads,
    network_forward,
    softmax_cross_entropy,
)
from eulernet.train import TrainSpec, evaluate, train, trial_seed, variant_config

from svgutil import external_refs, parse

N_TRIALS = 10
MOONS_SPEC = TrainSpec(epochs=100, batch_size=100, learning_rate=0.05)


def report(log, number, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
    log.append(line)
    print(line)
    return passed


@functools.lru_cache(maxsize=None)
def moons():
    return generate_moons(1000, 0.1, seed=[0, 0]), generate_moons(1000, 0.1, seed=[0, 1])


@functools.lru_cache(maxsize=None)
def trained(variant, h, depth):
    """``N_TRIALS`` trained models as ``(model, cfg, accuracy or None, diverged)`` plus wall time."""
    tr, te = moons()
    template = NetworkConfig(input_dim=2, n_classes=2, depth=depth, width=2)
    start = time.perf_counter()
    runs = []
    for t in range(N_TRIALS):
        cfg = variant_config(template, variant, h, trial_seed(0, t))
        m, hist = train(cfg, MOONS_SPEC, tr, te)
        acc = None if hist.diverged else evaluate(m, cfg, te)
        runs.append((m, cfg, acc, hist.diverged))
    return runs, time.perf_counter() - start


def accuracy_stats(runs):
    accs = [r[2] for r in runs if r[2] is not None]
    n_div = sum(r[3] for r in runs)
    if not accs:
        return float("nan"), float("nan"), n_div
    return float(np.mean(accs)), float(np.std(accs)), n_div


def numeric_gradient(x, labels, m, cfg, name, step=1e-5):
    p = m.parameters()[name]
    out = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        orig = p[idx]
        p[idx] = orig + step
        up = softmax_cross_entropy(network_forward(x, m, cfg, training=True)[0], labels)[0]
        p[idx] = orig - step
        down = softmax_cross_entropy(network_forward(x, m, cfg, training=True)[0], labels)[0]
        p[idx] = orig
        out[idx] = (up - down) / (2 * step)
    return out


def test_gradient_correctness(acceptance_log):
    start = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(2024)
    for kind in BlockKind:
        for bn in (False, True):
            cfg = NetworkConfig(input_dim=3, n_classes=3, depth=2, width=3, h=0.7,
                                block_kind=kind, use_batchnorm=bn, seed=7)
            m = init_model(cfg)
            for p in m.parameters().values():
                p += rng.normal(scale=0.3, size=p.shape)
            x = rng.normal(size=(6, 3))
            labels = np.array([0, 1, 2, 0, 1, 2])
            _, grads, _ = loss_and_grads(x, labels, m, cfg)
            for name in m.parameters():
                fd = numeric_gradient(x, labels, m, cfg, name)
                denom = np.maximum(np.maximum(np.abs(fd), np.abs(grads[name])), 1e-6)
                worst = max(worst, float(np.max(np.abs(fd - grads[name]) / denom)))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 10
    report(acceptance_log, 1, ok, f"max relative gradient error {worst:.2e} (< 1e-4), {elapsed:.1f} s (< 10 s)")
    assert ok


def test_shrinkage_certificate(acceptance_log):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_asym, worst_eig, failures = 0.0, -np.inf, 0
    for i in range(500):
        w = int(rng.integers(2, 65))
        act = "tanh" if i % 2 == 0 else "relu"
        p = BlockParams(k1=rng.normal(scale=rng.uniform(0.1, 3.0), size=(w, w)), k2=None,
                        b1=rng.normal(size=w), b2=rng.normal(size=w), kind=BlockKind.SHRINKAGE)
        j = block_jacobian(rng.normal(scale=2.0, size=w), p, activation=act)
        cert = shrinkage_certificate(j, tol=1e-7)
        asym = float(np.max(np.abs(j - j.T)))
        worst_asym = max(worst_asym, asym)
        if cert.max_eigenvalue is not None:
            worst_eig = max(worst_eig, cert.max_eigenvalue)
        failures += not (cert.passed and asym <= 1e-10)
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 30
    report(acceptance_log, 2, ok, f"{500 - failures}/500 Jacobians certified; max asymmetry {worst_asym:.1e}, "
           f"max eigenvalue {worst_eig:.1e}; {elapsed:.1f} s (< 30 s)")
    assert ok


def test_eigen_solver_oracle(acceptance_log):
    rng = np.random.default_rng(11)
    worst_trace = worst_det = worst_agree = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 33))
        a = rng.normal(size=(n, n))
        eigs = general_eigenvalues(a)
        worst_trace = max(worst_trace, abs(eigs.sum() - np.trace(a)))
        det = np.linalg.det(a)  # LAPACK LU, independent of the QR iteration
        worst_det = max(worst_det, abs(np.prod(eigs) - det) / max(1.0, abs(det)))
        s = a + a.T
        sym = symmetric_eigenvalues(s)
        gen = np.sort(general_eigenvalues(s).real)[::-1]
        worst_agree = max(worst_agree, float(np.max(np.abs(sym - gen))))
    ok = worst_trace < 1e-7 and worst_det < 1e-7 and worst_agree < 1e-7
    report(acceptance_log, 3, ok, f"trace error {worst_trace:.1e}, relative determinant error {worst_det:.1e}, "
           f"symmetric/general disagreement {worst_agree:.1e} (all < 1e-7)")
    assert ok


def test_residual_h1_depth100(acceptance_log):
    runs, elapsed = trained("residual", 1.0, 100)
    mean, std, n_div = accuracy_stats(runs)
    _, te = moons()
    growing = ends_higher = 0
    for m, cfg, _, _ in runs:
        rec = capture_trajectory(m, cfg, te)
        norms = rec.mean_norms()
        # growth anywhere along the trajectory; a trial may grow and then collapse
        growing += rec.diverged or norms.max() > norms[0]
        ends_higher += rec.diverged or norms[-1] > norms[0]
    ok = 0.6 <= mean <= 0.9 and growing == N_TRIALS and elapsed < 300
    report(acceptance_log, 4, ok, f"mean {mean:.4f} (std {std:.4f}, {n_div} diverged) in [0.6, 0.9]; "
           f"{growing}/{N_TRIALS} trajectories diverge or grow ({ends_higher} end above the input norm); "
           f"{elapsed:.0f} s (< 300 s)")
    assert ok


def test_residual_h01_depth500(acceptance_log):
    runs, elapsed = trained("residual", 0.1, 500)
    mean, std, _ = accuracy_stats(runs)
    ok = mean >= 0.97 and elapsed < 900
    report(acceptance_log, 5, ok, f"mean {mean:.4f} (std {std:.4f}) >= 0.97; {elapsed:.0f} s (< 900 s)")
    assert ok


def test_shrinkage_h1(acceptance_log):
    runs, _ = trained("shrinkage", 1.0, 100)
    mean, std, _ = accuracy_stats(runs)
    _, te = moons()
    shrinking = 0
    for m, cfg, _, _ in runs:
        norms = capture_trajectory(m, cfg, te).mean_norms()
        shrinking += norms[-1] < norms[0]
    ok = mean < 0.75 and shrinking == N_TRIALS
    report(acceptance_log, 6, ok, f"mean {mean:.4f} (std {std:.4f}) < 0.75; "
           f"feature norms shrink in {shrinking}/{N_TRIALS} trials")
    assert ok


def test_shrinkage_h01(acceptance_log):
    runs, _ = trained("shrinkage", 0.1, 100)
    mean, std, _ = accuracy_stats(runs)
    ok = 0.75 <= mean <= 0.92
    report(acceptance_log, 7, ok, f"mean {mean:.4f} (std {std:.4f}) in [0.75, 0.92]")
    assert ok


def test_batchnorm_h01_depth500(acceptance_log):
    runs, elapsed = trained("residual+batchnorm", 0.1, 500)
    mean, std, _ = accuracy_stats(runs)
    ok = mean >= 0.97
    report(acceptance_log, 8, ok, f"mean {mean:.4f} (std {std:.4f}) >= 0.97; {elapsed:.0f} s")
    assert ok


def test_step_size_ordering(acceptance_log):
    small, _ = trained("residual", 0.1, 100)
    large, _ = trained("residual", 1.0, 100)
    m_small, s_small, _ = accuracy_stats(small)
    m_large, s_large, _ = accuracy_stats(large)
    ok = m_small > m_large and s_small < s_large
    report(acceptance_log, 9, ok, f"h=0.1 mean {m_small:.4f} std {s_small:.4f} vs "
           f"h=1.0 mean {m_large:.4f} std {s_large:.4f}")
    assert ok


def wine_like_csv(path, seed=0):
    """Synthetic stand-in with the Wine shape: 178 rows, 13 features, classes of 59/71/48."""
    rng = np.random.default_rng(seed)
    sizes = (59, 71, 48)
    centres = rng.normal(0.0, 1.0, size=(3, 13))
    scales = rng.uniform(0.5, 20.0, size=13)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(13)] + ["class"])
        for k, n in enumerate(sizes):
            for row in centres[k] + rng.normal(size=(n, 13)):
                w.writerow([repr(float(v)) for v in row * scales] + [k + 1])


def test_wine_sweep(acceptance_log, tmp_path):
    data = tmp_path / "wine.csv"
    wine_like_csv(data)
    config = {
        "dataset": {"source": "csv", "path": str(data), "label_column": "class"},
        "network": {"depth": 20, "width": 13},
        "training": {"epochs": 50, "batch_size": 10, "learning_rate": 0.01},
        "sweep": {"n_trials": N_TRIALS},
    }
    cfg_path = tmp_path / "wine.json"
    cfg_path.write_text(json.dumps(config), encoding="utf-8")
    out = tmp_path / "out"
    start = time.perf_counter()
    code = cli.main(["sweep", "--config", str(cfg_path), "--out-dir", str(out)])
    elapsed = time.perf_counter() - start
    with open(out / "sweep.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    with open(out / "sweep_summary.csv", newline="", encoding="utf-8") as fh:
        summary = {(r["variant"], float(r["h"])): r for r in csv.DictReader(fh)}
    root = parse((out / "accuracy_vs_h.svg").read_text(encoding="utf-8"))
    variants = {r["variant"] for r in rows}
    complete = (code == 0 and len(rows) == 3 * 6 * N_TRIALS and len(variants) == 3
                and all(r["test_accuracy"] for r in rows) and not external_refs(root))
    std_small = float(summary[("residual", 0.1)]["std_accuracy"])
    std_large = float(summary[("residual", 1.0)]["std_accuracy"])
    ok = complete and std_small <= std_large
    report(acceptance_log, 10, ok, f"{len(rows)} rows over {len(variants)} variants, exit {code}, SVG well-formed; "
           f"residual std h=0.1 {std_small:.4f} <= h=1.0 {std_large:.4f}; {elapsed:.0f} s")
    assert ok


def test_perturbation_probe(acceptance_log):
    cfg = NetworkConfig(input_dim=2, n_classes=2, depth=100, width=2, h=1.0, seed=0)
    zero = init_model(cfg)
    for p in zero.parameters().values():
        p[...] = 0.0
    identity_amp = perturbation_amplification(zero, cfg, np.array([0.4, -0.3])).amplification
    _, te = moons()
    y0 = te.features[0]
    large, _ = trained("residual", 1.0, 100)
    small, _ = trained("residual", 0.1, 100)
    wins = 0
    for (m1, c1, _, _), (m2, c2, _, _) in zip(large, small):
        a1 = perturbation_amplification(m1, c1, y0).amplification
        a2 = perturbation_amplification(m2, c2, y0).amplification
        wins += a1 > a2
    identity_ok = abs(identity_amp - 1.0) <= 1e-12
    ok = identity_ok and wins >= 8
    report(acceptance_log, 11, ok, f"identity network c = {identity_amp!r}; h=1 amplification exceeds h=0.1 "
           f"in {wins}/10 paired seeds (>= 8)")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
