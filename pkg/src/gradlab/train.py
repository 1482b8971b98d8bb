"""Loss, optimizers, the training loop, and evaluation.

The loop is deliberately plain: shuffled mini-batches, gradient
accumulation through the network, one optimizer step per batch, one metrics
row per epoch. Early stopping watches a validation metric with a patience
counter; "epochs to converge" is the (1-based) epoch of the best monitored
value under that fixed rule. Everything is deterministic given the seed:
batch order, dropout masks, and initialization all flow from split
substreams of one root.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .data import BatchPlan, Dataset, batches, split_dataset
from .errors import ConfigError, DomainError, ShapeError
from .nn import Mode, Network

__all__ = [
    "Adam",
    "MetricsLog",
    "SGD",
    "StoppingRule",
    "TrainConfig",
    "TrainResult",
    "evaluate",
    "softmax_cross_entropy",
    "train",
]


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(logits) against integer labels.

    Returns (loss, grad) where grad = (softmax - onehot) / batch, the exact
    gradient of the mean loss with respect to the logits. Log-sum-exp is
    stabilized by subtracting the row max.
    """
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DomainError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad


class SGD:
    """Gradient descent with classical momentum: v = mu*v + g; p -= lr*v."""

    def __init__(self, lr: float = 0.01, momentum: float = 0.0):
        self.lr = float(lr)
        self.momentum = float(momentum)
        self._velocity: Optional[list[np.ndarray]] = None
        self.step_count = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self._velocity is None:
            self._velocity = [np.zeros_like(p) for p in params]
        _check_slots(params, grads, self._velocity)
        self.step_count += 1
        for p, g, v in zip(params, grads, self._velocity):
            v *= self.momentum
            v += g
            p -= self.lr * v


class Adam:
    """Adam with bias correction (step-1 update magnitude ~= lr)."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self._m: Optional[list[np.ndarray]] = None
        self._v: Optional[list[np.ndarray]] = None
        self.step_count = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        _check_slots(params, grads, self._m)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


def _check_slots(params, grads, slots):
    if len(params) != len(grads) or len(params) != len(slots):
        raise ShapeError(f"got {len(params)} params, {len(grads)} grads, {len(slots)} slots")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"param shape {p.shape} does not match grad shape {g.shape}")


@dataclass(frozen=True)
class StoppingRule:
    """Early stopping: stop after `patience` epochs without the monitored
    metric improving by more than `min_delta`."""

    patience: int = 10
    min_delta: float = 1e-4
    monitor: str = "val_loss"  # val_loss (minimized) or val_accuracy (maximized)

    def __post_init__(self):
        if self.patience < 1:
            raise DomainError(f"patience must be >= 1, got {self.patience}")
        if self.monitor not in ("val_loss", "val_accuracy"):
            raise ConfigError(f"unknown monitored metric: {self.monitor!r}")

    def improved(self, value: float, best: float) -> bool:
        if self.monitor == "val_loss":
            return value < best - self.min_delta
        return value > best + self.min_delta


class MetricsLog:
    """Append-only per-epoch metric rows with strictly increasing epochs.

    ``wall_seconds`` is tracked per row but excluded from the CSV so that
    identical (config, seed) runs serialize to identical bytes; it is
    reported in the JSON run summary instead.
    """

    CORE_COLUMNS = ["epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy", "test_accuracy"]

    def __init__(self):
        self.rows: list[dict] = []

    def append(self, row: dict) -> None:
        if self.rows and row["epoch"] <= self.rows[-1]["epoch"]:
            raise DomainError(
                f"epochs must increase: {row['epoch']} after {self.rows[-1]['epoch']}"
            )
        self.rows.append(dict(row))

    def columns(self) -> list[str]:
        extra = sorted(
            {k for row in self.rows for k in row} - set(self.CORE_COLUMNS) - {"wall_seconds"}
        )
        return self.CORE_COLUMNS + extra

    def to_csv(self, path) -> None:
        cols = self.columns()
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for row in self.rows:
                fh.write(",".join(_format_cell(row.get(c)) for c in cols) + "\n")

    def column(self, name: str) -> list:
        return [row.get(name) for row in self.rows]


def _format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))  # shortest round-trip decimal for float64


@dataclass
class TrainConfig:
    """Knobs for one training run (the CLI maps its config file onto this)."""

    batch_size: int = 128
    max_epochs: int = 200
    seed: int = 0
    stopping: Optional[StoppingRule] = field(default_factory=StoppingRule)
    val_fraction: float = 0.1
    eval_test_every: int = 0  # 0: only after the final epoch (if test data given)
    grad_info_every: int = 0  # 0: off
    grad_info_samples: int = 128
    shuffle_seed: Optional[int] = None  # defaults to seed

    def __post_init__(self):
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise DomainError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise DomainError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.stopping is not None and self.val_fraction == 0.0:
            # stopping monitors validation metrics; carve the conventional tail
            self.val_fraction = 0.1


@dataclass
class TrainResult:
    net: Network
    log: MetricsLog
    epochs_to_converge: int  # 1-based epoch of the best monitored metric
    best_value: float
    stopped_early: bool
    total_seconds: float


def train(
    net: Network,
    dataset: Dataset,
    config: TrainConfig,
    optimizer=None,
    test_dataset: Optional[Dataset] = None,
) -> TrainResult:
    """Run the training loop; returns the trained network and its metrics.

    The dataset is split (val_fraction tail of a seed-shuffled copy) when a
    stopping rule monitors validation metrics. Per-epoch train loss/accuracy
    are accumulated from the training batches themselves (dropout masks
    active), so they reflect what the optimizer saw.
    """
    optimizer = optimizer if optimizer is not None else Adam()
    if config.val_fraction > 0.0:
        train_ds, val_ds = split_dataset(dataset, config.val_fraction, config.seed)
    else:
        train_ds, val_ds = dataset, None
    if config.stopping is not None and val_ds is None:
        raise ConfigError("early stopping monitors validation metrics but there is no split")

    params = net.parameters()
    log = MetricsLog()
    shuffle_seed = config.seed if config.shuffle_seed is None else config.shuffle_seed
    best = np.inf if (config.stopping is None or config.stopping.monitor == "val_loss") else -np.inf
    best_epoch = 1
    bad_epochs = 0
    stopped_early = False
    t0 = time.perf_counter()

    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        epoch_t0 = time.perf_counter()
        loss_sum = 0.0
        hit_sum = 0
        seen = 0
        for bx, by in batches(train_ds, BatchPlan(config.batch_size, shuffle_seed, epoch)):
            net.zero_grads()
            logits = net.forward(bx, Mode.TRAIN)
            loss, grad = softmax_cross_entropy(logits, by)
            net.backward(grad)
            optimizer.step(params, net.gradients())
            loss_sum += loss * bx.shape[0]
            hit_sum += int((logits.argmax(axis=1) == by).sum())
            seen += bx.shape[0]
        row = {
            "epoch": epoch,
            "train_loss": loss_sum / seen,
            "train_accuracy": hit_sum / seen,
            "val_loss": None,
            "val_accuracy": None,
            "test_accuracy": None,
            "wall_seconds": time.perf_counter() - epoch_t0,
        }
        if val_ds is not None:
            val_acc, val_loss = evaluate(net, val_ds)
            row["val_loss"] = val_loss
            row["val_accuracy"] = val_acc
        if test_dataset is not None and config.eval_test_every and epoch % config.eval_test_every == 0:
            row["test_accuracy"], _ = evaluate(net, test_dataset)
        if config.grad_info_every and epoch % config.grad_info_every == 0:
            for rec in _grad_info_rows(net, train_ds, config, epoch):
                row[f"grad_info_layer{rec.layer_index}"] = rec.value
        log.append(row)

        if config.stopping is not None:
            value = row["val_loss"] if config.stopping.monitor == "val_loss" else row["val_accuracy"]
            if config.stopping.improved(value, best):
                best = value
                best_epoch = epoch
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= config.stopping.patience:
                    stopped_early = True
                    break
        else:
            # no rule: convergence epoch falls back to the best train loss
            if row["train_loss"] < best:
                best = row["train_loss"]
                best_epoch = epoch

    if test_dataset is not None and log.rows and log.rows[-1]["test_accuracy"] is None:
        acc, _ = evaluate(net, test_dataset)
        log.rows[-1]["test_accuracy"] = acc
    return TrainResult(
        net=net,
        log=log,
        epochs_to_converge=best_epoch,
        best_value=float(best),
        stopped_early=stopped_early,
        total_seconds=time.perf_counter() - t0,
    )


def _grad_info_rows(net, train_ds, config, epoch):
    from .probes import gradient_info_probe

    k = min(config.grad_info_samples, train_ds.n)
    return gradient_info_probe(
        net, train_ds.features[:k], train_ds.labels[:k], softmax_cross_entropy, step=epoch
    )


def evaluate(net: Network, dataset: Dataset, batch_size: int = 512) -> tuple[float, float]:
    """Eval-mode accuracy and mean loss; ties break toward the lowest class."""
    hits = 0
    loss_sum = 0.0
    for start in range(0, dataset.n, batch_size):
        bx = dataset.features[start : start + batch_size]
        by = dataset.labels[start : start + batch_size]
        logits = net.forward(bx, Mode.EVAL)
        loss, _ = softmax_cross_entropy(logits, by)
        hits += int((logits.argmax(axis=1) == by).sum())
        loss_sum += loss * bx.shape[0]
    if dataset.n == 0:
        return 0.0, 0.0
    return hits / dataset.n, loss_sum / dataset.n
