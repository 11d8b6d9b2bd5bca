"""SGD training, evaluation, and multi-trial step-size sweeps."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, batches
from .nn import (
    BlockKind,
    DivergenceError,
    Model,
    NetworkConfig,
    apply_running_stats,
    init_model,
    loss_and_grads,
    network_forward,
)

log = logging.getLogger(__name__)

DEFAULT_H_GRID = (0.1, 0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass(frozen=True)
class TrainSpec:
    epochs: int = 100
    batch_size: int = 100
    learning_rate: float = 0.01
    momentum: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    test_accuracy: list = field(default_factory=list)
    diverged: bool = False
    diverged_layer: int | None = None

    def __len__(self):
        return len(self.train_loss)

    def rows(self):
        for i, row in enumerate(zip(self.train_loss, self.train_accuracy, self.test_accuracy)):
            yield (i + 1, *row)


def _check_compatible(cfg: NetworkConfig, d: Dataset, what: str):
    if d.n_features != cfg.input_dim:
        raise ValueError(f"{what} set has {d.n_features} features, config expects {cfg.input_dim}")
    if d.labels.max() >= cfg.n_classes:
        raise ValueError(f"{what} set has labels beyond n_classes={cfg.n_classes}")


def evaluate(m: Model, cfg: NetworkConfig, d: Dataset) -> float:
    """Fraction of rows whose largest logit is the true class (inference mode)."""
    if d.n_features != cfg.input_dim:
        raise ValueError(f"dataset has {d.n_features} features, config expects {cfg.input_dim}")
    logits, _ = network_forward(d.features, m, cfg, training=False)
    return float(np.mean(logits.argmax(axis=1) == d.labels))


def train(cfg: NetworkConfig, spec: TrainSpec, train_set: Dataset, test_set: Dataset | None = None,
          model: Model | None = None):
    """Mini-batch SGD from ``init_model(cfg)`` (or ``model``, trained in place).

    Shuffling uses a stream derived from ``cfg.seed``. If the forward pass
    diverges the loop stops and the history so far is returned with its
    ``diverged`` flag set; the returned model is then the last one that
    was updated.
    """
    _check_compatible(cfg, train_set, "training")
    if test_set is not None:
        _check_compatible(cfg, test_set, "test")
    m = model if model is not None else init_model(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    params = m.parameters()
    velocity = {k: np.zeros_like(v) for k, v in params.items()} if spec.momentum else None
    hist = History()
    lr = spec.learning_rate
    for epoch in range(spec.epochs):
        total_loss = 0.0
        correct = 0
        try:
            for xb, yb in batches(train_set, spec.batch_size, rng):
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads, cache = loss_and_grads(xb, yb, m, cfg, training=True)
                if not np.isfinite(loss):
                    raise DivergenceError(len(m.blocks))
                apply_running_stats(m, cache)
                logits_pred = (cache.ys[-1] @ m.head_w.T + m.head_b).argmax(axis=1)
                correct += int(np.sum(logits_pred == yb))
                total_loss += loss * len(yb)
                for name, p in params.items():
                    g = grads[name]
                    if velocity is not None:
                        v = velocity[name]
                        v *= spec.momentum
                        v += g
                        g = v
                    p -= lr * g
            test_acc = evaluate(m, cfg, test_set) if test_set is not None else float("nan")
        except DivergenceError as exc:
            hist.diverged = True
            hist.diverged_layer = exc.layer
            log.info("diverged in epoch %d at layer %d", epoch + 1, exc.layer)
            break
        hist.train_loss.append(total_loss / len(train_set))
        hist.train_accuracy.append(correct / len(train_set))
        hist.test_accuracy.append(test_acc)
    return m, hist


VARIANTS = {
    "residual": (BlockKind.RESIDUAL, False),
    "residual+batchnorm": (BlockKind.RESIDUAL, True),
    "shrinkage": (BlockKind.SHRINKAGE, False),
}


def variant_config(template: NetworkConfig, variant: str, h: float, seed: int) -> NetworkConfig:
    kind, bn = VARIANTS[variant]
    return replace(template, block_kind=kind, use_batchnorm=bn, h=h, seed=seed)


def trial_seed(master_seed: int, trial: int) -> int:
    return master_seed ^ trial


@dataclass(frozen=True)
class TrialResult:
    variant: str
    h: float
    trial: int
    seed: int
    accuracy: float | None
    diverged: bool
    epochs_completed: int


@dataclass(frozen=True)
class SweepCell:
    variant: str
    h: float
    trials: tuple

    @property
    def accuracies(self) -> list:
        """Accuracies that enter the statistics; diverged trials without any evaluation are left out."""
        return [t.accuracy for t in self.trials if t.accuracy is not None]

    @property
    def n_diverged(self) -> int:
        return sum(t.diverged for t in self.trials)

    @property
    def n_completed(self) -> int:
        return len(self.trials) - self.n_diverged

    @property
    def mean(self) -> float:
        acc = self.accuracies
        return float(np.mean(acc)) if acc else float("nan")

    @property
    def std(self) -> float:
        """Population standard deviation, so a single trial gives 0."""
        acc = self.accuracies
        return float(np.std(acc)) if acc else float("nan")


@dataclass(frozen=True)
class SweepReport:
    h_values: tuple
    variants: tuple
    cells: tuple

    def cell(self, variant: str, h: float) -> SweepCell:
        for c in self.cells:
            if c.variant == variant and np.isclose(c.h, h):
                return c
        raise KeyError((variant, h))

    def trials(self):
        for c in self.cells:
            yield from c.trials


def run_trial(template: NetworkConfig, spec: TrainSpec, variant: str, h: float, trial: int,
              master_seed: int, train_set: Dataset, test_set: Dataset) -> TrialResult:
    seed = trial_seed(master_seed, trial)
    cfg = variant_config(template, variant, h, seed)
    _, hist = train(cfg, spec, train_set, test_set)
    acc = hist.test_accuracy[-1] if hist.test_accuracy else None
    return TrialResult(variant=variant, h=float(h), trial=trial, seed=seed, accuracy=acc,
                       diverged=hist.diverged, epochs_completed=len(hist))


def _run_trial_args(args):
    return run_trial(*args)


def sweep(template: NetworkConfig, spec: TrainSpec, train_set: Dataset, test_set: Dataset,
          h_values=DEFAULT_H_GRID, n_trials: int = 10, master_seed: int = 0,
          variants=tuple(VARIANTS), workers: int = 1, progress=None) -> SweepReport:
    """Train every (h, variant) cell ``n_trials`` times.

    Trial ``t`` of every cell uses the seed ``master_seed ^ t`` so that
    cells are paired by initialization. Cells are ordered by h, then
    variant, then trial, whatever the execution order.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}; expected one of {sorted(VARIANTS)}")
    jobs = [(template, spec, v, float(h), t, master_seed, train_set, test_set)
            for h in h_values for v in variants for t in range(n_trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial_args, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_trial_args(job))
            if progress is not None:
                progress(results[-1])
    cells = []
    it = iter(results)
    for h in h_values:
        for v in variants:
            cells.append(SweepCell(variant=v, h=float(h), trials=tuple(next(it) for _ in range(n_trials))))
    return SweepReport(h_values=tuple(float(h) for h in h_values), variants=tuple(variants),
                       cells=tuple(cells))
