"""JSON experiment configuration.

A config is one JSON object; every section is optional and unknown keys
are rejected. Command-line flags override the file, which overrides the
defaults below.

.. code-block:: json

    {
      "seed": 0,
      "out_dir": "runs/moons",
      "dataset": {"source": "moons", "n_train": 1000, "n_test": 1000, "noise_std": 0.1},
      "network": {"depth": 100, "width": 2, "h": 0.1, "block": "residual",
                  "batchnorm": false, "activation": "tanh"},
      "training": {"epochs": 100, "batch_size": 100, "learning_rate": 0.01, "momentum": 0.0},
      "sweep": {"h_values": [0.1, 0.2, 0.4, 0.6, 0.8, 1.0], "n_trials": 10,
                "variants": ["residual", "residual+batchnorm", "shrinkage"]},
      "trajectory": {"enabled": false, "layers": null},
      "diagnostics": {"epsilon": 0.001, "n_directions": 16, "margin": "modulus"}
    }

For CSV data the dataset section reads::

    {"source": "csv", "path": "wine.csv", "label_column": "class", "header": true,
     "categorical": {"colour": "onehot"}, "label_bins": [["small", 1, 8], ...],
     "drop_columns": [], "train_fraction": 0.8, "stratified": true, "standardize": true}
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .nn import Activation, BlockKind
from .train import DEFAULT_H_GRID, VARIANTS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSection:
    source: str = "moons"
    n_train: int = 1000
    n_test: int = 1000
    noise_std: float = 0.1
    path: str | None = None
    label_column: str | int = -1
    header: bool = True
    categorical: dict = field(default_factory=dict)
    label_bins: list | None = None
    drop_columns: list = field(default_factory=list)
    train_fraction: float = 0.8
    stratified: bool = True
    standardize: bool = True


@dataclass(frozen=True)
class NetworkSection:
    depth: int = 100
    width: int | None = None
    h: float = 1.0
    block: str = "residual"
    batchnorm: bool = False
    activation: str = "tanh"


@dataclass(frozen=True)
class TrainingSection:
    epochs: int = 100
    batch_size: int = 100
    learning_rate: float = 0.01
    momentum: float = 0.0


@dataclass(frozen=True)
class SweepSection:
    h_values: list = field(default_factory=lambda: list(DEFAULT_H_GRID))
    n_trials: int = 10
    variants: list = field(default_factory=lambda: list(VARIANTS))
    workers: int = 1


@dataclass(frozen=True)
class TrajectorySection:
    enabled: bool = False
    layers: list | None = None


@dataclass(frozen=True)
class DiagnosticsSection:
    epsilon: float = 1e-3
    n_directions: int = 16
    margin: str = "modulus"


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs"
    dataset: DatasetSection = field(default_factory=DatasetSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    trajectory: TrajectorySection = field(default_factory=TrajectorySection)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)

    def to_dict(self) -> dict:
        return asdict(self)


SECTIONS = {
    "dataset": DatasetSection,
    "network": NetworkSection,
    "training": TrainingSection,
    "sweep": SweepSection,
    "trajectory": TrajectorySection,
    "diagnostics": DiagnosticsSection,
}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad {where} section: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    top = {}
    for key, value in data.items():
        if key in SECTIONS:
            top[key] = _build(SECTIONS[key], value, key)
        elif key in ("seed", "out_dir"):
            top[key] = value
        else:
            raise ConfigError(f"unknown top-level key {key!r}")
    cfg = ExperimentConfig(**top)
    try:
        validate(cfg)
    except TypeError as exc:
        raise ConfigError(f"wrongly typed setting: {exc}") from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def _positive_int(value, name):
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")


def validate(cfg: ExperimentConfig):
    """Raise :class:`ConfigError` on the first invalid setting."""
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    ds = cfg.dataset
    if ds.source not in ("moons", "csv"):
        raise ConfigError(f"dataset.source must be 'moons' or 'csv', got {ds.source!r}")
    if ds.source == "csv" and not ds.path:
        raise ConfigError("dataset.path is required for csv data")
    if ds.source == "moons":
        _positive_int(ds.n_train, "dataset.n_train")
        _positive_int(ds.n_test, "dataset.n_test")
        if ds.noise_std < 0:
            raise ConfigError("dataset.noise_std must be non-negative")
    if not 0.0 < ds.train_fraction < 1.0:
        raise ConfigError("dataset.train_fraction must lie in (0, 1)")
    net = cfg.network
    if not isinstance(net.depth, int) or net.depth < 0:
        raise ConfigError("network.depth must be a non-negative integer")
    if net.width is not None:
        _positive_int(net.width, "network.width")
    if not 0.0 < net.h <= 1.0:
        raise ConfigError(f"network.h must lie in (0, 1], got {net.h}")
    if net.block not in {k.value for k in BlockKind}:
        raise ConfigError(f"network.block must be one of {[k.value for k in BlockKind]}")
    if net.activation not in {a.value for a in Activation}:
        raise ConfigError(f"network.activation must be one of {[a.value for a in Activation]}")
    tr = cfg.training
    _positive_int(tr.epochs, "training.epochs")
    _positive_int(tr.batch_size, "training.batch_size")
    if tr.learning_rate < 0:
        raise ConfigError("training.learning_rate must be non-negative")
    if not 0.0 <= tr.momentum < 1.0:
        raise ConfigError("training.momentum must lie in [0, 1)")
    sw = cfg.sweep
    if not sw.h_values or any(not 0.0 < h <= 1.0 for h in sw.h_values):
        raise ConfigError("sweep.h_values must be a non-empty list of values in (0, 1]")
    _positive_int(sw.n_trials, "sweep.n_trials")
    _positive_int(sw.workers, "sweep.workers")
    bad = [v for v in sw.variants if v not in VARIANTS]
    if bad or not sw.variants:
        raise ConfigError(f"sweep.variants must be drawn from {list(VARIANTS)}")
    dg = cfg.diagnostics
    if dg.epsilon <= 0:
        raise ConfigError("diagnostics.epsilon must be positive")
    _positive_int(dg.n_directions, "diagnostics.n_directions")
    if dg.margin not in ("modulus", "real"):
        raise ConfigError("diagnostics.margin must be 'modulus' or 'real'")
    if cfg.trajectory.layers is not None and any(
            not isinstance(t, int) or t < 0 for t in cfg.trajectory.layers):
        raise ConfigError("trajectory.layers must be non-negative integers")


def apply_overrides(cfg: ExperimentConfig, seed=None, out_dir=None, h=None, block=None,
                    batchnorm=None, depth=None, trajectory=None) -> ExperimentConfig:
    """Return ``cfg`` with command-line values layered on top."""
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if out_dir is not None:
        cfg = replace(cfg, out_dir=str(out_dir))
    net = cfg.network
    if h is not None:
        net = replace(net, h=h)
    if block is not None:
        net = replace(net, block=block)
    if batchnorm is not None:
        net = replace(net, batchnorm=batchnorm)
    if depth is not None:
        net = replace(net, depth=depth)
    cfg = replace(cfg, network=net)
    if trajectory is not None:
        cfg = replace(cfg, trajectory=replace(cfg.trajectory, enabled=trajectory))
    validate(cfg)
    return cfg
