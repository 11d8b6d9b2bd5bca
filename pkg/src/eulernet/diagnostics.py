"""Numerical checks of forward-Euler stability for trained or initialized networks.

* per-layer Jacobian spectra and the Euler stability margin ``max |1 + h lambda|``
* the shrinkage-block certificate (symmetric Jacobian, spectrum <= 0)
* perturbation amplification of an input through the layers
* trajectory capture for plotting feature propagation
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .linalg import general_eigenvalues, spectral_abscissa, symmetric_eigenvalues
from .nn import BlockKind, Model, NetworkConfig, block_jacobian, forward_states


def stability_margin(j, h: float, mode: str = "modulus", eigenvalues=None) -> float:
    """``max |1 + h lambda|`` over the eigenvalues of ``j``.

    ``mode="real"`` uses only the real parts, ``max |1 + h Re(lambda)|``.
    A value of at most one means the Euler step is stable at this point.
    """
    if mode not in ("modulus", "real"):
        raise ValueError(f"unknown margin mode {mode!r}")
    eigs = general_eigenvalues(j) if eigenvalues is None else np.asarray(eigenvalues)
    if mode == "real":
        eigs = eigs.real
    return float(np.max(np.abs(1.0 + h * eigs)))


@dataclass(frozen=True)
class Certificate:
    passed: bool
    asymmetry: float
    max_eigenvalue: float | None
    witness: float | None = None


def shrinkage_certificate(j, tol: float = 1e-7) -> Certificate:
    """Check that ``j`` is symmetric and has no eigenvalue above ``tol``.

    On failure ``witness`` carries the offending eigenvalue (``None`` when
    the matrix is not symmetric to begin with).
    """
    j = np.asarray(j, dtype=np.float64)
    asym = float(np.max(np.abs(j - j.T), initial=0.0))
    if asym > tol:
        return Certificate(passed=False, asymmetry=asym, max_eigenvalue=None)
    top = float(symmetric_eigenvalues(0.5 * (j + j.T))[0])
    if top > tol:
        return Certificate(passed=False, asymmetry=asym, max_eigenvalue=top, witness=top)
    return Certificate(passed=True, asymmetry=asym, max_eigenvalue=top)


@dataclass(frozen=True)
class LayerSpectrum:
    layer: int
    probe: np.ndarray
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    margin: float
    spectral_abscissa: float
    certificate: Certificate | None = None

    @property
    def stable(self) -> bool:
        return self.margin <= 1.0


@dataclass(frozen=True)
class SpectralReport:
    h: float
    layers: tuple
    diverged: bool = False
    margin_mode: str = "modulus"

    @property
    def n_stable(self) -> int:
        return sum(layer.stable for layer in self.layers)

    def summary(self) -> str:
        n = len(self.layers)
        lines = [f"h = {self.h:g}; {self.n_stable} of {n} layers stable "
                 f"(max |1 + h lambda| <= 1, {self.margin_mode}); {n - self.n_stable} unstable"]
        if self.layers:
            margins = np.array([layer.margin for layer in self.layers])
            absc = np.array([layer.spectral_abscissa for layer in self.layers])
            lines.append(f"margin range [{margins.min():.6g}, {margins.max():.6g}]; "
                         f"spectral abscissa range [{absc.min():.6g}, {absc.max():.6g}]")
        certs = [layer.certificate for layer in self.layers if layer.certificate is not None]
        if certs:
            lines.append(f"shrinkage certificate: {sum(c.passed for c in certs)} of {len(certs)} layers pass")
        if self.diverged:
            lines.append(f"forward pass diverged; report stops after layer {len(self.layers)}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "spectral_abscissa", "margin", "stable", "certificate", "eigenvalues"])
        for layer in self.layers:
            cert = "" if layer.certificate is None else ("pass" if layer.certificate.passed else "fail")
            eigs = ";".join(_fmt_complex(e) for e in layer.eigenvalues)
            w.writerow([layer.layer, repr(layer.spectral_abscissa), repr(layer.margin),
                        str(layer.stable).lower(), cert, eigs])
        return buf.getvalue()


def _fmt_complex(z) -> str:
    z = complex(z)
    if z.imag == 0:
        return repr(z.real)
    return f"{z.real!r}{z.imag:+}j"


def layer_spectra(m: Model, cfg: NetworkConfig, probe_batch, per_sample: bool = False,
                  margin_mode: str = "modulus", certificate_tol: float = 1e-7):
    """Jacobian spectrum of every block at the mean activation entering it.

    With ``per_sample`` the first row of the probe batch is followed instead
    of the batch mean. Batch-norm layers are linearized with their running
    statistics. If the forward pass stops producing finite values the
    report ends there and is flagged as diverged.
    """
    probe_batch = np.atleast_2d(np.asarray(probe_batch, dtype=np.float64))
    if probe_batch.shape[0] == 0:
        raise ValueError("probe batch is empty")
    if per_sample:
        probe_batch = probe_batch[:1]
    ys = forward_states(probe_batch, m, cfg)
    layers = []
    diverged = False
    for i, (blk, bn) in enumerate(zip(m.blocks, m.norms)):
        if i >= len(ys) or not np.isfinite(ys[i]).all():
            diverged = True
            break
        y = ys[i].mean(axis=0)
        with np.errstate(over="ignore", invalid="ignore"):
            j = block_jacobian(y, blk, activation=cfg.activation, norm=bn)
        if not np.isfinite(j).all():
            diverged = True
            break
        cert = None
        if blk.kind is BlockKind.SHRINKAGE:
            eigs = symmetric_eigenvalues(0.5 * (j + j.T)).astype(np.complex128)
            cert = shrinkage_certificate(j, certificate_tol)
        else:
            eigs = general_eigenvalues(j)
        layers.append(LayerSpectrum(
            layer=i + 1, probe=y, jacobian=j, eigenvalues=eigs,
            margin=stability_margin(j, cfg.h, margin_mode, eigenvalues=eigs),
            spectral_abscissa=spectral_abscissa(eigs), certificate=cert))
    if len(ys) < len(m.blocks) + 1 or not np.isfinite(ys[-1]).all():
        diverged = True
    return SpectralReport(h=cfg.h, layers=tuple(layers), diverged=diverged, margin_mode=margin_mode)


@dataclass(frozen=True)
class PerturbationProbe:
    epsilon: float
    deviations: np.ndarray  # max over directions, per layer 0..depth
    amplification: float
    diverged: bool = False

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "deviation", "ratio"])
        for i, d in enumerate(self.deviations):
            w.writerow([i, repr(float(d)), repr(float(d / self.epsilon))])
        return buf.getvalue()

    def summary(self) -> str:
        if self.diverged:
            return f"epsilon = {self.epsilon:g}; forward pass diverged, amplification = inf\n"
        peak = int(np.argmax(self.deviations))
        return (f"epsilon = {self.epsilon:g}; amplification estimate c = {self.amplification:.6g} "
                f"(largest deviation at layer {peak})\n")


def perturbation_amplification(m: Model, cfg: NetworkConfig, y0, epsilon: float = 1e-3,
                               n_directions: int = 16, seed: int = 0) -> PerturbationProbe:
    """Propagate ``y0`` and ``y0 + epsilon * u`` for random unit directions ``u``.

    Records, per layer, the largest distance between perturbed and
    unperturbed features, and estimates ``c`` as the largest such distance
    divided by ``epsilon``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if n_directions < 1:
        raise ValueError("need at least one direction")
    y0 = np.asarray(y0, dtype=np.float64).ravel()
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_directions, y0.size))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    batch = np.vstack([y0, y0 + epsilon * dirs])
    ys = forward_states(batch, m, cfg)
    devs = []
    diverged = False
    for y in ys:
        if not np.isfinite(y).all():
            diverged = True
            break
        devs.append(np.max(np.linalg.norm(y[1:] - y[0], axis=1)))
    diverged = diverged or len(ys) < len(m.blocks) + 1
    devs = np.array(devs)
    amp = float("inf") if diverged or not devs.size else float(np.max(devs) / epsilon)
    return PerturbationProbe(epsilon=epsilon, deviations=devs, amplification=amp, diverged=diverged)


def default_schedule(depth: int) -> list:
    """Layers 0 and 5, then ten evenly spaced layers up to ``depth``.

    Depth 100 gives 0, 5, 10, 20, ..., 100 and depth 500 gives
    0, 5, 50, 100, ..., 500.
    """
    if depth <= 0:
        return [0]
    marks = {0, min(5, depth)}
    marks.update(int(round(depth * k / 10)) for k in range(1, 11))
    return sorted(marks)


@dataclass(frozen=True)
class TrajectoryRecord:
    layers: tuple
    snapshots: tuple
    labels: np.ndarray
    diverged: bool = False

    @property
    def bounds(self) -> list:
        """Per recorded layer, the ``(min, max)`` of every feature."""
        return [(s.min(axis=0), s.max(axis=0)) for s in self.snapshots]

    def spans(self) -> np.ndarray:
        """Largest per-feature range of each snapshot."""
        return np.array([np.max(hi - lo) for lo, hi in self.bounds])

    def mean_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(s, axis=1).mean() for s in self.snapshots])


def capture_trajectory(m: Model, cfg: NetworkConfig, d: Dataset, layer_schedule=None) -> TrajectoryRecord:
    """Feature snapshots of every point of ``d`` at the scheduled layers.

    Layer 0 is the (projected) input. A divergent forward pass truncates
    the record at the last finite scheduled layer.
    """
    depth = len(m.blocks)
    schedule = sorted(set(default_schedule(depth) if layer_schedule is None else layer_schedule))
    if schedule and (schedule[0] < 0 or schedule[-1] > depth):
        raise ValueError(f"layer schedule must lie within 0..{depth}")
    ys = forward_states(d.features, m, cfg)
    layers, snaps = [], []
    diverged = False
    for t in schedule:
        if t >= len(ys) or not np.isfinite(ys[t]).all():
            diverged = True
            break
        layers.append(t)
        snaps.append(ys[t])
    return TrajectoryRecord(layers=tuple(layers), snapshots=tuple(snaps), labels=d.labels,
                            diverged=diverged)
