"""Command-line experiment runner.

Five subcommands: ``train`` (fit per seed, write metrics), ``probe-variance``
(mask-resampling net variance of a checkpoint), ``histogram`` (net-value
histograms of a checkpoint), ``compare`` (side-by-side aggregate table over
several configs), and ``reproduce-mnist`` (the full base/dropout/accelerated
pipeline in one shot).

Exit codes: 0 success, 1 runtime failure (message names the offending
path), 2 configuration error (message carries file and line).

Emitted files, all with fixed column order and a header row:

- ``metrics_seed<seed>.csv``: epoch, train_loss, train_accuracy, val_loss,
  val_accuracy, test_accuracy, then any grad_info_layer<k> columns. Floats
  use the shortest decimal that round-trips a 64-bit value, so reruns are
  byte-identical.
- ``run_summary.json``: config echo, per-seed results and file paths,
  aggregate mean/std (sample std, n-1) of final test accuracy and
  epochs_to_converge.
- ``variance.csv``: layer, node, variance, layer_mean, mask_count,
  batch_rows; one row per node, layers numbered from 1 in depth order.
- ``histogram.csv``: layer, bin_left, bin_right, count, underflow,
  overflow, total, saturation_threshold, saturation_fraction; one row per
  bin, layer-level fields repeated.
- ``compare.txt`` / ``compare.json``: one row per config with
  mean +/- std of test accuracy and epochs to converge.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig, load_config, serialize_config
from .data import Dataset, load_mnist_idx, synthetic_blobs
from .errors import ConfigError, GradlabError
from .nn import Mode, Network, build_mlp, load_checkpoint, save_checkpoint
from .numcore import RngStream
from .probes import (
    SaturationHistogram,
    gradient_info_probe,
    net_variance_probe,
    saturation_histogram,
)
from .train import (
    Adam,
    SGD,
    StoppingRule,
    TrainConfig,
    TrainResult,
    evaluate,
    softmax_cross_entropy,
    train,
)

__all__ = ["RunReport", "main"]

_MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte.gz",
    "train_labels": "train-labels-idx1-ubyte.gz",
    "test_images": "t10k-images-idx3-ubyte.gz",
    "test_labels": "t10k-labels-idx1-ubyte.gz",
}

# synthetic data is a function of the [dataset] section alone, never of the
# run seeds, so every variant in a comparison sees identical samples
_SYNTH_TRAIN_SEED = 0
_SYNTH_TEST_SEED = 1


@dataclass
class RunReport:
    """Aggregate view of one config's per-seed runs; everything here can be
    recomputed from the referenced metrics CSVs plus the stopping rule."""

    name: str
    config_text: str
    seeds: tuple[int, ...]
    metrics_paths: list[str]
    checkpoint_paths: list[str]
    test_accuracy: list[float]
    epochs_to_converge: list[int]
    wall_seconds: float

    def aggregate(self) -> dict:
        return {
            "test_accuracy_mean": _mean(self.test_accuracy),
            "test_accuracy_std": _std(self.test_accuracy),
            "epochs_to_converge_mean": _mean(self.epochs_to_converge),
            "epochs_to_converge_std": _std(self.epochs_to_converge),
        }

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seeds": list(self.seeds),
            "metrics_paths": self.metrics_paths,
            "checkpoint_paths": self.checkpoint_paths,
            "test_accuracy": self.test_accuracy,
            "epochs_to_converge": self.epochs_to_converge,
            "wall_seconds": self.wall_seconds,
            "aggregate": self.aggregate(),
        }


def _mean(v) -> float:
    return float(np.mean(v)) if len(v) else 0.0


def _std(v) -> float:
    return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0


# -- config plumbing ----------------------------------------------------------


def build_network(cfg: ExperimentConfig, seed: int) -> Network:
    activation = cfg.gaaf_spec() or cfg.activation_kind()
    return build_mlp(
        list(cfg.layer_sizes),
        activation,
        RngStream(seed),
        dropout_p=cfg.dropout_p,
        dropout_per_sample=cfg.dropout_per_sample,
        batchnorm=cfg.batchnorm,
        init_scale=cfg.init_scale if cfg.init_scale > 0.0 else None,
    )


def build_optimizer(cfg: ExperimentConfig):
    if cfg.optimizer_kind == "adam":
        return Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon)
    return SGD(cfg.lr, cfg.momentum)


def build_train_config(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg.batch_size,
        max_epochs=cfg.max_epochs,
        seed=seed,
        stopping=StoppingRule(cfg.patience, cfg.min_delta, cfg.monitor),
        val_fraction=cfg.val_fraction,
        grad_info_every=cfg.grad_info_every,
        grad_info_samples=cfg.grad_info_samples,
    )


def load_datasets(cfg: ExperimentConfig, data_dir: str | None) -> tuple[Dataset, Dataset]:
    """(train, test) per the config's [dataset] section.

    MNIST paths resolve in order: explicit config paths (joined onto
    --data-dir when relative), else conventional file names inside
    --data-dir. subset_size truncates the training set only.
    """
    if cfg.dataset_kind == "synthetic":
        train_ds = synthetic_blobs(cfg.samples, cfg.classes, cfg.dim, cfg.spread, _SYNTH_TRAIN_SEED)
        test_n = max(cfg.samples // 4, cfg.classes)
        test_ds = synthetic_blobs(test_n, cfg.classes, cfg.dim, cfg.spread, _SYNTH_TEST_SEED)
    else:
        paths = {}
        for key, conventional in _MNIST_FILES.items():
            explicit = getattr(cfg, key)
            if explicit:
                paths[key] = (
                    os.path.join(data_dir, explicit)
                    if data_dir and not os.path.isabs(explicit)
                    else explicit
                )
            elif data_dir:
                paths[key] = os.path.join(data_dir, conventional)
            else:
                raise ConfigError(f"dataset file {key} is not set and no --data-dir was given")
        train_ds = load_mnist_idx(paths["train_images"], paths["train_labels"])
        test_ds = load_mnist_idx(paths["test_images"], paths["test_labels"])
    if cfg.subset_size > 0:
        train_ds = train_ds.subset(np.arange(min(cfg.subset_size, train_ds.n)))
    return train_ds, test_ds


def _probe_batch(cfg: ExperimentConfig, data_dir, split: str, rows: int = 128) -> Dataset:
    train_ds, test_ds = load_datasets(cfg, data_dir)
    ds = train_ds if split == "train" else test_ds
    return ds.subset(np.arange(min(rows, ds.n)))


# -- the train command --------------------------------------------------------


def run_config(cfg: ExperimentConfig, data_dir=None, quiet=False) -> tuple[RunReport, list[dict]]:
    """Train the config once per seed; writes metrics, checkpoints, and the
    run summary under <out_dir>/<name>/."""
    out_dir = os.path.join(cfg.out_dir, cfg.name)
    os.makedirs(out_dir, exist_ok=True)
    train_ds, test_ds = load_datasets(cfg, data_dir)
    per_seed = []
    metrics_paths, checkpoint_paths, accuracies, epochs = [], [], [], []
    total_seconds = 0.0
    for seed in cfg.seeds:
        net = build_network(cfg, seed)
        result = train(net, train_ds, build_train_config(cfg, seed), build_optimizer(cfg), test_ds)
        metrics_path = os.path.join(out_dir, f"metrics_seed{seed}.csv")
        checkpoint_path = os.path.join(out_dir, f"checkpoint_seed{seed}.json")
        result.log.to_csv(metrics_path)
        save_checkpoint(net, checkpoint_path)
        acc = result.log.rows[-1]["test_accuracy"]
        if acc is None:
            acc, _ = evaluate(net, test_ds)
        per_seed.append(
            {
                "seed": seed,
                "metrics_csv": metrics_path,
                "checkpoint": checkpoint_path,
                "test_accuracy": acc,
                "epochs_to_converge": result.epochs_to_converge,
                "epochs_trained": len(result.log.rows),
                "stopped_early": result.stopped_early,
                "wall_seconds": result.total_seconds,
            }
        )
        metrics_paths.append(metrics_path)
        checkpoint_paths.append(checkpoint_path)
        accuracies.append(float(acc))
        epochs.append(result.epochs_to_converge)
        total_seconds += result.total_seconds
        if not quiet:
            print(
                f"{cfg.name} seed {seed}: test_accuracy={acc:.4f} "
                f"epochs_to_converge={result.epochs_to_converge} "
                f"({result.total_seconds:.1f}s)"
            )
    report = RunReport(
        name=cfg.name,
        config_text=serialize_config(cfg),
        seeds=cfg.seeds,
        metrics_paths=metrics_paths,
        checkpoint_paths=checkpoint_paths,
        test_accuracy=accuracies,
        epochs_to_converge=epochs,
        wall_seconds=total_seconds,
    )
    summary = {"config": report.config_text, "per_seed": per_seed, **report.to_dict()}
    with open(os.path.join(out_dir, "run_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return report, per_seed


def cmd_train(args) -> int:
    cfg = _load_with_overrides(args)
    report, _ = run_config(cfg, args.data_dir)
    agg = report.aggregate()
    print(
        f"{cfg.name}: test_accuracy {agg['test_accuracy_mean']:.4f} "
        f"+/- {agg['test_accuracy_std']:.4f}, epochs_to_converge "
        f"{agg['epochs_to_converge_mean']:.1f} +/- {agg['epochs_to_converge_std']:.1f}"
    )
    return 0


def _load_with_overrides(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seeds = (args.seed,)
    return cfg


# -- probe commands -----------------------------------------------------------


def cmd_probe_variance(args) -> int:
    cfg = _load_with_overrides(args)
    seed = cfg.seeds[0]
    net = load_checkpoint(args.checkpoint)
    if not net.dropout_layers():
        print(
            "warning: model has no dropout layers; variances are identically zero",
            file=sys.stderr,
        )
    batch = _probe_batch(cfg, args.data_dir, args.split)
    records = net_variance_probe(
        net,
        batch.features,
        mask_count=cfg.mask_count,
        rng=RngStream(seed).split("variance-probe"),
        allow_no_dropout=True,
    )
    out_dir = args.out or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "variance.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("layer,node,variance,layer_mean,mask_count,batch_rows\n")
        for rec in records:
            for node, var in enumerate(rec.per_node_variance):
                fh.write(
                    f"{rec.layer_index},{node},{float(var)!r},"
                    f"{rec.mean_variance!r},{rec.mask_count},{rec.batch_rows}\n"
                )
    for rec in records:
        print(f"layer {rec.layer_index}: mean net variance {rec.mean_variance:.6g}")
    print(f"wrote {path}")
    return 0


def layer_histograms(net: Network, features: np.ndarray, cfg: ExperimentConfig,
                     batch_size: int = 512) -> list[SaturationHistogram]:
    """Eval-mode histograms of every hidden dense layer's nets (the output
    layer feeds the loss, not a squashing activation, and is excluded)."""
    dense_count = len(net.dense_layers())
    hidden = max(dense_count - 1, 1)
    collected: list[list[np.ndarray]] = [[] for _ in range(hidden)]
    for start in range(0, features.shape[0], batch_size):
        _, nets = net.forward_collect_nets(features[start : start + batch_size], Mode.EVAL)
        for k in range(hidden):
            collected[k].append(nets[k])
    return [
        saturation_histogram(
            np.concatenate(chunks),
            value_range=cfg.histogram_range,
            bins=cfg.histogram_bins,
            threshold=cfg.saturation_threshold,
        )
        for chunks in collected
    ]


def cmd_histogram(args) -> int:
    cfg = _load_with_overrides(args)
    net = load_checkpoint(args.checkpoint)
    train_ds, test_ds = load_datasets(cfg, args.data_dir)
    ds = train_ds if args.split == "train" else test_ds
    histograms = layer_histograms(net, ds.features, cfg)
    out_dir = args.out or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "histogram.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(
            "layer,bin_left,bin_right,count,underflow,overflow,total,"
            "saturation_threshold,saturation_fraction\n"
        )
        for layer, h in enumerate(histograms, start=1):
            for b in range(len(h.counts)):
                fh.write(
                    f"{layer},{float(h.edges[b])!r},{float(h.edges[b + 1])!r},"
                    f"{int(h.counts[b])},{h.underflow},{h.overflow},{h.total},"
                    f"{h.threshold!r},{h.saturation_fraction!r}\n"
                )
    for layer, h in enumerate(histograms, start=1):
        print(f"layer {layer}: saturation fraction {h.saturation_fraction:.4f}")
    print(f"wrote {path}")
    return 0


# -- compare ------------------------------------------------------------------


def cmd_compare(args) -> int:
    if len(args.configs) < 2:
        raise ConfigError("compare needs at least two config files")
    reports = []
    for path in args.configs:
        cfg = load_config(path)
        if args.out:
            cfg.out_dir = args.out
        if args.seed is not None:
            cfg.seeds = (args.seed,)
        report, _ = run_config(cfg, args.data_dir)
        reports.append(report)
    table = render_compare_table(reports)
    print(table)
    out_dir = args.out or "runs"
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "compare.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    with open(os.path.join(out_dir, "compare.json"), "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2)
        fh.write("\n")
    return 0


def render_compare_table(reports: list[RunReport]) -> str:
    rows = [["name", "test_accuracy", "epochs_to_converge", "seeds"]]
    for r in reports:
        agg = r.aggregate()
        rows.append(
            [
                r.name,
                f"{agg['test_accuracy_mean']:.4f} +/- {agg['test_accuracy_std']:.4f}",
                f"{agg['epochs_to_converge_mean']:.1f} +/- {agg['epochs_to_converge_std']:.1f}",
                str(len(r.seeds)),
            ]
        )
    widths = [max(len(row[c]) for row in rows) for c in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)) for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


# -- the one-shot reproduction ------------------------------------------------

_MNIST_LAYERS = (784, 512, 256, 256, 10)


def _mnist_config(name: str, seeds: tuple[int, ...], out_dir: str, **model) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.name = name
    cfg.seeds = seeds
    cfg.out_dir = out_dir
    cfg.dataset_kind = "mnist"
    cfg.layer_sizes = _MNIST_LAYERS
    cfg.activation = "tanh"
    cfg.max_epochs = 50
    for key, value in model.items():
        setattr(cfg, key, value)
    return cfg


def cmd_reproduce_mnist(args) -> int:
    """Train base / dropout / accelerated variants, then run every probe and
    fold the lot into one summary JSON."""
    out_dir = args.out or os.path.join("runs", "mnist")
    seeds = (args.seed,) if args.seed is not None else (0, 1, 2)
    variants = {
        "base": _mnist_config("base", seeds, out_dir),
        "dropout": _mnist_config("dropout", seeds, out_dir, dropout_p=0.5),
        "gaaf": _mnist_config("gaaf", seeds, out_dir, gaaf=True),
    }
    summary: dict = {"variants": {}}
    for name, cfg in variants.items():
        report, per_seed = run_config(cfg, args.data_dir)
        summary["variants"][name] = report.to_dict()

    # per-sample gradient magnitudes after one epoch, with and without masks
    probe_seed = seeds[0]
    base_cfg = variants["base"]
    train_ds, test_ds = load_datasets(base_cfg, args.data_dir)
    probe_x = train_ds.features[:128]
    probe_y = train_ds.labels[:128]
    one_epoch = {}
    for name in ("base", "dropout"):
        net = build_network(variants[name], probe_seed)
        one_epoch_cfg = TrainConfig(
            batch_size=128, max_epochs=1, seed=probe_seed, stopping=None, val_fraction=0.0
        )
        train(net, train_ds, one_epoch_cfg, build_optimizer(variants[name]))
        records = gradient_info_probe(net, probe_x, probe_y, softmax_cross_entropy)
        one_epoch[name] = {str(r.layer_index): r.value for r in records}
    hidden = [str(k) for k in range(1, len(_MNIST_LAYERS) - 1)]
    summary["gradient_info_one_epoch"] = {
        **one_epoch,
        "dropout_over_base": {k: one_epoch["dropout"][k] / one_epoch["base"][k] for k in hidden},
    }

    # probes on the trained seed-0 checkpoints
    checkpoints = {
        name: summary["variants"][name]["checkpoint_paths"][0] for name in variants
    }
    dropout_net = load_checkpoint(checkpoints["dropout"])
    variance = net_variance_probe(
        dropout_net,
        test_ds.features[:128],
        mask_count=variants["dropout"].mask_count,
        rng=RngStream(probe_seed).split("variance-probe"),
    )
    summary["net_variance"] = {str(r.layer_index): r.mean_variance for r in variance}

    gaaf_net = load_checkpoint(checkpoints["gaaf"])
    gaaf_records = gradient_info_probe(gaaf_net, probe_x, probe_y, softmax_cross_entropy)
    summary["gradient_info_trained_gaaf"] = {str(r.layer_index): r.value for r in gaaf_records}

    summary["saturation_fraction"] = {}
    for name in variants:
        net = load_checkpoint(checkpoints[name])
        hists = layer_histograms(net, test_ds.features, variants[name])
        summary["saturation_fraction"][name] = {
            str(layer): h.saturation_fraction for layer, h in enumerate(hists, start=1)
        }

    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "reproduction_summary.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(f"wrote {path}")
    return 0


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradlab",
        description="Deterministic feed-forward network experiments with "
        "dropout and gradient-acceleration instrumentation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment config file")
        p.add_argument("--data-dir", default=None, help="directory holding dataset files")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, default=None, help="override the config's seed list")

    p = sub.add_parser("train", help="train one config across its seeds")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("probe-variance", help="net variance across dropout masks")
    common(p)
    p.add_argument("--checkpoint", required=True, help="trained model checkpoint")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_probe_variance)

    p = sub.add_parser("histogram", help="net-value histograms of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True, help="trained model checkpoint")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_histogram)

    p = sub.add_parser("compare", help="run several configs and tabulate")
    p.add_argument("configs", nargs="+", help="two or more config files")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("reproduce-mnist", help="base vs dropout vs accelerated, end to end")
    p.add_argument("--data-dir", required=True, help="directory with the four idx files")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None, help="single-seed run instead of 0,1,2")
    p.set_defaults(func=cmd_reproduce_mnist)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (GradlabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
