"""Experiment configuration: a small INI schema with strict key checking.

Unknown sections or keys are rejected with the line number where they
appear, so a typo fails loudly instead of silently training the wrong
model. ``serialize`` writes a file that parses back to an equal config.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import Optional

from .activations import ActivationKind, Constant, GaafSpec, GaussianBump, ShiftedSigmoid, default_shape_for
from .errors import ConfigError

__all__ = ["ExperimentConfig", "load_config", "parse_config", "serialize_config"]

_SCHEMA = {
    "experiment": {"schema_version", "name", "seeds", "out_dir"},
    "dataset": {
        "kind",
        "train_images",
        "train_labels",
        "test_images",
        "test_labels",
        "samples",
        "classes",
        "dim",
        "spread",
        "subset_size",
    },
    "model": {
        "layer_sizes",
        "activation",
        "gaaf",
        "gaaf_k",
        "gaaf_shape",
        "gaaf_sigma",
        "gaaf_center",
        "gaaf_temperature",
        "gaaf_constant",
        "dropout_p",
        "dropout_per_sample",
        "batchnorm",
        "init_scale",
    },
    "optimizer": {"kind", "lr", "momentum", "beta1", "beta2", "epsilon"},
    "training": {
        "batch_size",
        "max_epochs",
        "patience",
        "min_delta",
        "monitor",
        "val_fraction",
        "grad_info_every",
        "grad_info_samples",
    },
    "probes": {"mask_count", "histogram_bins", "histogram_range", "saturation_threshold"},
}

SCHEMA_VERSION = 1


@dataclass
class ExperimentConfig:
    """Everything needed to rerun an experiment from its config file alone."""

    name: str = "experiment"
    seeds: tuple[int, ...] = (0,)
    out_dir: str = "runs"

    dataset_kind: str = "synthetic"  # synthetic | mnist
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    samples: int = 512
    classes: int = 3
    dim: int = 8
    spread: float = 0.6
    subset_size: int = 0  # 0: use everything

    layer_sizes: tuple[int, ...] = (8, 16, 3)
    activation: str = "tanh"
    gaaf: bool = False
    gaaf_k: float = 10000.0
    gaaf_shape: str = "auto"  # auto | bump | sigmoid | constant
    gaaf_sigma: float = 1.5
    gaaf_center: float = 0.0
    gaaf_temperature: float = 1.0
    gaaf_constant: float = 1.0
    dropout_p: float = 0.0
    dropout_per_sample: bool = False
    batchnorm: bool = False
    init_scale: float = 0.0  # 0: 1/sqrt(fan_in)

    optimizer_kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    batch_size: int = 128
    max_epochs: int = 50
    patience: int = 10
    min_delta: float = 1e-4
    monitor: str = "val_loss"
    val_fraction: float = 0.1
    grad_info_every: int = 0
    grad_info_samples: int = 128

    mask_count: int = 20
    histogram_bins: int = 50
    histogram_range: tuple[float, float] = (-5.0, 5.0)
    saturation_threshold: float = 2.0

    def activation_kind(self) -> ActivationKind:
        try:
            return ActivationKind(self.activation)
        except ValueError:
            raise ConfigError(f"unknown activation: {self.activation!r}") from None

    def gaaf_spec(self) -> Optional[GaafSpec]:
        if not self.gaaf:
            return None
        base = self.activation_kind()
        if self.gaaf_shape == "auto":
            shape = default_shape_for(base)
        elif self.gaaf_shape == "bump":
            shape = GaussianBump(self.gaaf_sigma)
        elif self.gaaf_shape == "sigmoid":
            shape = ShiftedSigmoid(self.gaaf_center, self.gaaf_temperature)
        elif self.gaaf_shape == "constant":
            shape = Constant(self.gaaf_constant)
        else:
            raise ConfigError(f"unknown gaaf_shape: {self.gaaf_shape!r}")
        return GaafSpec(base=base, k=self.gaaf_k, shape=shape)


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None

    lines = text.splitlines()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(
                f"{source}:{_find_line(lines, f'[{section}]')}: unknown section [{section}]"
            )
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(
                    f"{source}:{_find_line(lines, key)}: unknown key {key!r} in [{section}]"
                )

    if parser.has_option("experiment", "schema_version"):
        version = _get(parser, "experiment", "schema_version", int, source)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"{source}: unsupported schema_version {version}")

    cfg = ExperimentConfig()
    g = lambda sec, key, conv, default: (
        _get(parser, sec, key, conv, source) if parser.has_option(sec, key) else default
    )

    cfg.name = g("experiment", "name", str, cfg.name)
    cfg.seeds = g("experiment", "seeds", _int_tuple, cfg.seeds)
    cfg.out_dir = g("experiment", "out_dir", str, cfg.out_dir)

    cfg.dataset_kind = g("dataset", "kind", str, cfg.dataset_kind)
    if cfg.dataset_kind not in ("synthetic", "mnist"):
        raise ConfigError(f"{source}: unknown dataset kind {cfg.dataset_kind!r}")
    cfg.train_images = g("dataset", "train_images", str, cfg.train_images)
    cfg.train_labels = g("dataset", "train_labels", str, cfg.train_labels)
    cfg.test_images = g("dataset", "test_images", str, cfg.test_images)
    cfg.test_labels = g("dataset", "test_labels", str, cfg.test_labels)
    cfg.samples = g("dataset", "samples", int, cfg.samples)
    cfg.classes = g("dataset", "classes", int, cfg.classes)
    cfg.dim = g("dataset", "dim", int, cfg.dim)
    cfg.spread = g("dataset", "spread", float, cfg.spread)
    cfg.subset_size = g("dataset", "subset_size", int, cfg.subset_size)

    cfg.layer_sizes = g("model", "layer_sizes", _int_tuple, cfg.layer_sizes)
    cfg.activation = g("model", "activation", str, cfg.activation)
    cfg.gaaf = g("model", "gaaf", _boolean, cfg.gaaf)
    cfg.gaaf_k = g("model", "gaaf_k", float, cfg.gaaf_k)
    cfg.gaaf_shape = g("model", "gaaf_shape", str, cfg.gaaf_shape)
    cfg.gaaf_sigma = g("model", "gaaf_sigma", float, cfg.gaaf_sigma)
    cfg.gaaf_center = g("model", "gaaf_center", float, cfg.gaaf_center)
    cfg.gaaf_temperature = g("model", "gaaf_temperature", float, cfg.gaaf_temperature)
    cfg.gaaf_constant = g("model", "gaaf_constant", float, cfg.gaaf_constant)
    cfg.dropout_p = g("model", "dropout_p", float, cfg.dropout_p)
    cfg.dropout_per_sample = g("model", "dropout_per_sample", _boolean, cfg.dropout_per_sample)
    cfg.batchnorm = g("model", "batchnorm", _boolean, cfg.batchnorm)
    cfg.init_scale = g("model", "init_scale", float, cfg.init_scale)

    cfg.optimizer_kind = g("optimizer", "kind", str, cfg.optimizer_kind)
    if cfg.optimizer_kind not in ("adam", "sgd"):
        raise ConfigError(f"{source}: unknown optimizer kind {cfg.optimizer_kind!r}")
    cfg.lr = g("optimizer", "lr", float, cfg.lr)
    cfg.momentum = g("optimizer", "momentum", float, cfg.momentum)
    cfg.beta1 = g("optimizer", "beta1", float, cfg.beta1)
    cfg.beta2 = g("optimizer", "beta2", float, cfg.beta2)
    cfg.epsilon = g("optimizer", "epsilon", float, cfg.epsilon)

    cfg.batch_size = g("training", "batch_size", int, cfg.batch_size)
    cfg.max_epochs = g("training", "max_epochs", int, cfg.max_epochs)
    cfg.patience = g("training", "patience", int, cfg.patience)
    cfg.min_delta = g("training", "min_delta", float, cfg.min_delta)
    cfg.monitor = g("training", "monitor", str, cfg.monitor)
    cfg.val_fraction = g("training", "val_fraction", float, cfg.val_fraction)
    cfg.grad_info_every = g("training", "grad_info_every", int, cfg.grad_info_every)
    cfg.grad_info_samples = g("training", "grad_info_samples", int, cfg.grad_info_samples)

    cfg.mask_count = g("probes", "mask_count", int, cfg.mask_count)
    cfg.histogram_bins = g("probes", "histogram_bins", int, cfg.histogram_bins)
    cfg.histogram_range = g("probes", "histogram_range", _float_pair, cfg.histogram_range)
    cfg.saturation_threshold = g("probes", "saturation_threshold", float, cfg.saturation_threshold)

    cfg.activation_kind()  # validate eagerly
    cfg.gaaf_spec()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, source=str(path))


def serialize_config(cfg: ExperimentConfig) -> str:
    """Write the config back out; parse(serialize(cfg)) == cfg."""
    sections = {
        "experiment": {
            "schema_version": SCHEMA_VERSION,
            "name": cfg.name,
            "seeds": ", ".join(str(s) for s in cfg.seeds),
            "out_dir": cfg.out_dir,
        },
        "dataset": {
            "kind": cfg.dataset_kind,
            "train_images": cfg.train_images,
            "train_labels": cfg.train_labels,
            "test_images": cfg.test_images,
            "test_labels": cfg.test_labels,
            "samples": cfg.samples,
            "classes": cfg.classes,
            "dim": cfg.dim,
            "spread": cfg.spread,
            "subset_size": cfg.subset_size,
        },
        "model": {
            "layer_sizes": ", ".join(str(s) for s in cfg.layer_sizes),
            "activation": cfg.activation,
            "gaaf": cfg.gaaf,
            "gaaf_k": cfg.gaaf_k,
            "gaaf_shape": cfg.gaaf_shape,
            "gaaf_sigma": cfg.gaaf_sigma,
            "gaaf_center": cfg.gaaf_center,
            "gaaf_temperature": cfg.gaaf_temperature,
            "gaaf_constant": cfg.gaaf_constant,
            "dropout_p": cfg.dropout_p,
            "dropout_per_sample": cfg.dropout_per_sample,
            "batchnorm": cfg.batchnorm,
            "init_scale": cfg.init_scale,
        },
        "optimizer": {
            "kind": cfg.optimizer_kind,
            "lr": cfg.lr,
            "momentum": cfg.momentum,
            "beta1": cfg.beta1,
            "beta2": cfg.beta2,
            "epsilon": cfg.epsilon,
        },
        "training": {
            "batch_size": cfg.batch_size,
            "max_epochs": cfg.max_epochs,
            "patience": cfg.patience,
            "min_delta": cfg.min_delta,
            "monitor": cfg.monitor,
            "val_fraction": cfg.val_fraction,
            "grad_info_every": cfg.grad_info_every,
            "grad_info_samples": cfg.grad_info_samples,
        },
        "probes": {
            "mask_count": cfg.mask_count,
            "histogram_bins": cfg.histogram_bins,
            "histogram_range": f"{cfg.histogram_range[0]}, {cfg.histogram_range[1]}",
            "saturation_threshold": cfg.saturation_threshold,
        },
    }
    out = []
    for section, pairs in sections.items():
        out.append(f"[{section}]")
        for key, value in pairs.items():
            out.append(f"{key} = {value}")
        out.append("")
    return "\n".join(out)


def _find_line(lines: list[str], needle: str) -> int:
    for i, line in enumerate(lines, start=1):
        stripped = line.strip()
        if stripped.startswith(needle) or stripped.lower().startswith(needle.lower()):
            return i
    return 0


def _get(parser, section, key, conv, source):
    raw = parser.get(section, key)
    try:
        return conv(raw)
    except (ValueError, TypeError):
        raise ConfigError(
            f"{source}: bad value for {key} in [{section}]: {raw!r}"
        ) from None


def _boolean(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def _int_tuple(raw: str) -> tuple[int, ...]:
    parts = [p for p in raw.replace(",", " ").split() if p]
    if not parts:
        raise ValueError(raw)
    return tuple(int(p) for p in parts)


def _float_pair(raw: str) -> tuple[float, float]:
    parts = [p for p in raw.replace(",", " ").split() if p]
    if len(parts) != 2:
        raise ValueError(raw)
    return (float(parts[0]), float(parts[1]))
