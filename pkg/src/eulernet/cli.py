"""Command-line entry point: ``eulernet {generate,train,sweep,diagnose}``.

Settings come from built-in defaults, then the JSON file given with
``--config``, then individual flags; later sources win. Exit status is 0
on success, 1 for usage, config or data errors and 2 when a forward pass
diverged (the outputs written up to that point are kept).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError, ExperimentConfig
from .data import DataError, SplitSpec, generate_moons, load_csv, split, standardize
from .diagnostics import capture_trajectory, layer_spectra, default_schedule, perturbation_amplification
from .nn import BlockKind, NetworkConfig, model_from_dict, model_to_dict
from .plotting import accuracy_vs_h_figure, dataset_figure, render_svg, trajectory_figure
from .train import TrainSpec, sweep, train

log = logging.getLogger("eulernet")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2


class CommandError(Exception):
    """Usage or input problem reported with exit status 1."""


def write_atomic(path: Path, text: str):
    """Write ``text`` to a temporary sibling of ``path`` and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise CommandError(f"output directory {out} is not writable")
    return out


def load_data(cfg: ExperimentConfig):
    """Train and test sets described by the dataset section."""
    ds = cfg.dataset
    if ds.source == "moons":
        train_set = generate_moons(ds.n_train, ds.noise_std, seed=[cfg.seed, 0])
        test_set = generate_moons(ds.n_test, ds.noise_std, seed=[cfg.seed, 1])
        return train_set, test_set
    bins = None if ds.label_bins is None else [tuple(b) for b in ds.label_bins]
    full = load_csv(ds.path, label_column=ds.label_column, header=ds.header,
                    categorical=ds.categorical, label_bins=bins, drop_columns=ds.drop_columns)
    if full.dropped_rows:
        log.warning("dropped %d row(s) with missing values from %s", full.dropped_rows, ds.path)
    train_set, test_set = split(full, SplitSpec(ds.train_fraction, seed=cfg.seed, stratified=ds.stratified))
    if ds.standardize:
        train_set = standardize(train_set)
        test_set = standardize(test_set, train_set.standardization)
    return train_set, test_set


def network_config(cfg: ExperimentConfig, input_dim: int, n_classes: int) -> NetworkConfig:
    net = cfg.network
    return NetworkConfig(input_dim=input_dim, n_classes=n_classes, depth=net.depth,
                         width=net.width or input_dim, h=net.h, block_kind=net.block,
                         use_batchnorm=net.batchnorm, activation=net.activation, seed=cfg.seed)


def train_spec(cfg: ExperimentConfig) -> TrainSpec:
    tr = cfg.training
    return TrainSpec(epochs=tr.epochs, batch_size=tr.batch_size,
                     learning_rate=tr.learning_rate, momentum=tr.momentum)


def _dataset_csv(d) -> str:
    header = [f"x{i}" for i in range(d.n_features)] + ["label"]
    rows = ([_fmt(v) for v in x] + [int(y)] for x, y in zip(d.features, d.labels))
    return _csv_text(header, rows)


def cmd_generate(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    train_set, test_set = load_data(cfg)
    write_atomic(out / "train.csv", _dataset_csv(train_set))
    write_atomic(out / "test.csv", _dataset_csv(test_set))
    written = ["train.csv", "test.csv"]
    if train_set.n_features == 2:
        write_atomic(out / "dataset.svg", render_svg(dataset_figure(train_set, test_set)))
        written.append("dataset.svg")
    print(f"wrote {', '.join(written)} to {out} ({len(train_set)} train, {len(test_set)} test rows)")
    return EXIT_OK


def _trajectory_outputs(out: Path, m, net: NetworkConfig, d, cfg: ExperimentConfig):
    schedule = cfg.trajectory.layers or default_schedule(net.depth)
    schedule = [t for t in schedule if t <= net.depth]
    rec = capture_trajectory(m, net, d, schedule)
    title = f"{net.block_kind.value}, h = {net.h:g}"
    for fixed, name in ((False, "trajectory_scaled.svg"), (True, "trajectory_fixed.svg")):
        fig = trajectory_figure(rec, fixed_axes=fixed, title=title, n_classes=d.n_classes)
        write_atomic(out / name, render_svg(fig))
    return rec


def cmd_train(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    train_set, test_set = load_data(cfg)
    net = network_config(cfg, train_set.n_features, max(train_set.n_classes, test_set.n_classes))
    if cfg.trajectory.enabled and net.width != 2:
        raise CommandError(f"trajectory grids need width 2, network width is {net.width}")
    m, hist = train(net, train_spec(cfg), train_set, test_set)
    doc = {"config": cfg.to_dict(), "model": model_to_dict(m)}
    write_atomic(out / "model.json", json.dumps(doc, indent=1) + "\n")
    write_atomic(out / "history.csv", _csv_text(
        ["epoch", "train_loss", "train_accuracy", "test_accuracy"],
        ([_fmt(v) for v in row] for row in hist.rows())))
    if cfg.trajectory.enabled:
        _trajectory_outputs(out, m, net, train_set, cfg)
    if hist.diverged:
        print(f"error: forward pass diverged at layer {hist.diverged_layer} during epoch {len(hist) + 1}; "
              f"partial outputs in {out}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"trained {net.block_kind.value} network (h = {net.h:g}, depth {net.depth}) for {len(hist)} epochs; "
          f"final test accuracy {hist.test_accuracy[-1]:.4f}")
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg)
    train_set, test_set = load_data(cfg)
    template = network_config(cfg, train_set.n_features, max(train_set.n_classes, test_set.n_classes))
    sw = cfg.sweep

    def progress(r):
        log.info("%s h=%g trial %d: %s", r.variant, r.h, r.trial,
                 "diverged" if r.diverged else f"{r.accuracy:.4f}")

    report = sweep(template, train_spec(cfg), train_set, test_set, h_values=sw.h_values,
                   n_trials=sw.n_trials, master_seed=cfg.seed, variants=sw.variants,
                   workers=sw.workers, progress=progress)
    rows = []
    for h in report.h_values:
        for v in report.variants:
            for t in report.cell(v, h).trials:
                rows.append([t.variant, _fmt(t.h), t.trial, t.seed, _fmt(t.accuracy),
                             _fmt(t.diverged), t.epochs_completed])
    write_atomic(out / "sweep.csv", _csv_text(
        ["variant", "h", "trial", "seed", "test_accuracy", "diverged", "epochs_completed"], rows))
    summary = [[c.variant, _fmt(c.h), _fmt(c.mean), _fmt(c.std), len(c.trials), c.n_diverged]
               for c in sorted(report.cells, key=lambda c: (report.variants.index(c.variant), c.h))]
    write_atomic(out / "sweep_summary.csv", _csv_text(
        ["variant", "h", "mean_accuracy", "std_accuracy", "n_trials", "n_diverged"], summary))
    write_atomic(out / "accuracy_vs_h.svg", render_svg(accuracy_vs_h_figure(report)))
    n_div = sum(c.n_diverged for c in report.cells)
    print(f"swept {len(report.variants)} variant(s) x {len(report.h_values)} step size(s) x "
          f"{sw.n_trials} trial(s); {n_div} trial(s) diverged; results in {out}")
    return EXIT_OK


def _model_dims(m):
    width = m.blocks[0].k1.shape[1] if m.blocks else m.head_w.shape[1]
    input_dim = m.proj_w.shape[1] if m.proj_w is not None else width
    return {"input_dim": input_dim, "width": width, "depth": len(m.blocks),
            "n_classes": m.head_w.shape[0]}


def check_model_matches(m, net: NetworkConfig):
    dims = _model_dims(m)
    for key, have in dims.items():
        want = getattr(net, key)
        if have != want:
            raise CommandError(f"model {key} is {have} but the config implies {want}")
    for i, (blk, bn) in enumerate(zip(m.blocks, m.norms), start=1):
        if blk.kind is not net.block_kind:
            raise CommandError(f"block {i} is {blk.kind.value}, config says {net.block_kind.value}")
        if (bn is not None) != net.use_batchnorm:
            raise CommandError(f"block {i} batch-norm setting does not match the config")


def read_model(path: Path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CommandError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CommandError(f"model file {path} is not valid JSON: {exc}") from exc
    try:
        return model_from_dict(doc["model"]), doc.get("config")
    except (KeyError, TypeError, ValueError) as exc:
        raise CommandError(f"model file {path} is malformed: {exc}") from exc


def cmd_diagnose(cfg: ExperimentConfig, model_path: Path) -> int:
    out = _out_dir(cfg)
    m, _ = read_model(model_path)
    train_set, test_set = load_data(cfg)
    net = network_config(cfg, train_set.n_features, max(train_set.n_classes, test_set.n_classes))
    check_model_matches(m, net)
    dg = cfg.diagnostics
    rep = layer_spectra(m, net, test_set.features, margin_mode=dg.margin)
    write_atomic(out / "spectra.csv", rep.to_csv())
    probe = perturbation_amplification(m, net, test_set.features[0], epsilon=dg.epsilon,
                                       n_directions=dg.n_directions, seed=cfg.seed)
    write_atomic(out / "perturbation.csv", probe.to_csv())
    text = rep.summary() + probe.summary()
    write_atomic(out / "stability.txt", text)
    sys.stdout.write(text)
    if rep.diverged or probe.diverged:
        print(f"error: forward pass diverged; partial diagnostics in {out}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out-dir", type=Path, help="directory for output files")
    common.add_argument("--h", type=float, help="step size in (0, 1]")
    common.add_argument("--block", choices=[k.value for k in BlockKind], help="block kind")
    common.add_argument("--batchnorm", action=argparse.BooleanOptionalAction, default=None,
                        help="batch normalization on the block preactivation")
    common.add_argument("--depth", type=int, help="number of blocks")
    common.add_argument("--trajectory", action=argparse.BooleanOptionalAction, default=None,
                        help="write trajectory grids (width-2 networks only)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(
        prog="eulernet", description="Train and diagnose residual networks as forward-Euler integrators.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write train/test CSVs and a scatter SVG")
    sub.add_parser("train", parents=[common], help="train one network")
    sub.add_parser("sweep", parents=[common], help="accuracy over step sizes, variants and trials")
    diag = sub.add_parser("diagnose", parents=[common], help="Jacobian spectra and perturbation probe")
    diag.add_argument("--model", type=Path, help="model file (default: <out-dir>/model.json)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = cfgmod.load_config(args.config) if args.config else ExperimentConfig()
    return cfgmod.apply_overrides(cfg, seed=args.seed, out_dir=args.out_dir, h=args.h, block=args.block,
                                  batchnorm=args.batchnorm, depth=args.depth, trajectory=args.trajectory)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        model_path = args.model or Path(cfg.out_dir) / "model.json"
        return cmd_diagnose(cfg, model_path)
    except (ConfigError, CommandError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # dataset and network settings that only clash once the data is loaded
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
