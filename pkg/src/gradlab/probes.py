"""Measurement instruments for gradient flow and net-value saturation.

Three instruments, all read-only with respect to parameters (the variance
probe does consume dropout masks and layer caches, so it takes exclusive
control of the network while it runs):

* ``gradient_info``: mean over samples of the mean absolute per-sample
  weight gradient of one layer. ``gradient_info_probe`` drives a network to
  produce those per-sample gradients with batch-of-one backward passes.
* ``net_variance_probe``: re-runs one fixed batch through the network in
  Train mode with fresh dropout masks and measures, per layer, the variance
  the masks induce on the nets. ``dropout_net_variance_closed_form`` is the
  matching closed form p(1-p) * sum_i (W_ij x_i)^2 for a single dense layer.
* ``saturation_histogram``: fixed-range histogram of net values plus the
  fraction beyond a saturation threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError
from .nn import Mode, Network
from .numcore import RngStream

__all__ = [
    "GradientInfoRecord",
    "NetVarianceRecord",
    "SaturationHistogram",
    "dropout_net_variance_closed_form",
    "gradient_info",
    "gradient_info_probe",
    "net_variance_probe",
    "saturation_histogram",
]


@dataclass(frozen=True)
class GradientInfoRecord:
    layer_index: int
    value: float  # mean over samples of mean |per-sample weight gradient|
    sample_count: int
    step: int = -1  # epoch/step stamp; -1 when unstamped

    def __post_init__(self):
        if self.value < 0:
            raise DomainError(f"gradient information must be >= 0, got {self.value}")


@dataclass(frozen=True)
class NetVarianceRecord:
    layer_index: int
    per_node_variance: np.ndarray  # (nodes,) averaged over batch rows
    mean_variance: float
    mask_count: int
    batch_rows: int = 0

    def __post_init__(self):
        if np.any(self.per_node_variance < 0):
            raise DomainError("variances must be >= 0")


@dataclass(frozen=True)
class SaturationHistogram:
    edges: np.ndarray  # bins + 1 uniform edges
    counts: np.ndarray  # (bins,)
    underflow: int
    overflow: int
    threshold: float
    saturation_fraction: float  # fraction of entries with |z| > threshold

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.underflow + self.overflow


def gradient_info(
    per_sample_grads: Sequence[np.ndarray], layer_index: int, step: int = -1
) -> GradientInfoRecord:
    """Reduce a sequence of same-shape per-sample gradient matrices to the
    layer's gradient-information scalar."""
    if len(per_sample_grads) == 0:
        raise DomainError("gradient_info needs at least one per-sample gradient")
    first = per_sample_grads[0].shape
    for g in per_sample_grads:
        if g.shape != first:
            raise DomainError(f"per-sample gradient shapes differ: {g.shape} vs {first}")
    value = float(np.mean([np.mean(np.abs(g)) for g in per_sample_grads]))
    return GradientInfoRecord(layer_index, value, len(per_sample_grads), step)


def gradient_info_probe(
    net: Network,
    x: np.ndarray,
    labels: np.ndarray,
    loss_grad: Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]],
    step: int = -1,
) -> list[GradientInfoRecord]:
    """Per-sample weight-gradient probe over a batch.

    Runs Train-mode forward/backward one sample at a time (so dropout masks
    are redrawn per sample, as they would be across training iterations) and
    aggregates each dense layer's |grad| into a GradientInfoRecord. Records
    are keyed by depth (1 = first dense layer) so that nets with and without
    dropout layers interleaved line up. The network's accumulated gradients
    are clobbered.
    """
    dense = net.dense_layers()
    per_layer: dict[int, list[np.ndarray]] = {i: [] for i, _ in dense}
    for r in range(x.shape[0]):
        net.zero_grads()
        logits = net.forward(x[r : r + 1], Mode.TRAIN)
        _, grad = loss_grad(logits, labels[r : r + 1])
        net.backward(grad)
        for i, layer in dense:
            per_layer[i].append(layer.grad_w.copy())
    net.zero_grads()
    return [
        gradient_info(per_layer[i], depth, step)
        for depth, (i, _) in enumerate(dense, start=1)
    ]


def dropout_net_variance_closed_form(w: np.ndarray, x: np.ndarray, p_drop: float) -> np.ndarray:
    """Var(z_j) = p(1-p) * sum_i (W_ij x_i)^2 for dropout on the inputs of a
    single dense layer. `x` may be one row or a batch; returns (out,) or
    (batch, out) accordingly."""
    if not 0.0 <= p_drop <= 1.0:
        raise DomainError(f"p_drop must be in [0, 1], got {p_drop}")
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    x2 = np.atleast_2d(x) ** 2
    if x2.shape[1] != w.shape[0]:
        raise DomainError(f"x width {x2.shape[1]} does not match weight rows {w.shape[0]}")
    var = p_drop * (1.0 - p_drop) * (x2 @ (w * w))
    return var[0] if squeeze else var


def net_variance_probe(
    net: Network,
    batch: np.ndarray,
    mask_count: int = 20,
    rng: Optional[RngStream] = None,
    allow_no_dropout: bool = False,
) -> list[NetVarianceRecord]:
    """Variance of each layer's nets across `mask_count` fresh dropout masks.

    The identical batch is pushed through the network in Train mode
    ``mask_count`` times; per (row, node) the sample variance across runs is
    taken, then averaged over rows into the per-node vector and over nodes
    into the layer mean. Records are keyed by depth (1 = first dense layer).
    Passing `rng` re-seeds the dropout layers first so the probe is
    reproducible regardless of prior training draws.
    """
    if mask_count < 2:
        raise DomainError(f"mask_count must be >= 2, got {mask_count}")
    if not net.dropout_layers() and not allow_no_dropout:
        raise ConfigError(
            "network has no dropout layer; its net variance is trivially zero "
            "(pass allow_no_dropout=True to measure anyway)"
        )
    if rng is not None:
        net.attach_dropout_rng(rng)
    runs: list[list[np.ndarray]] = []
    for _ in range(mask_count):
        _, nets = net.forward_collect_nets(batch, Mode.TRAIN)
        runs.append(nets)
    records = []
    for layer_pos, _ in enumerate(net.dense_layers()):
        stack = np.stack([run[layer_pos] for run in runs])  # (M, rows, nodes)
        # shift by run 0 (variance-invariant): layers the masks cannot reach
        # come out exactly zero instead of accumulated rounding noise
        stack -= stack[:1].copy()
        per_row_node = stack.var(axis=0, ddof=1)
        per_node = per_row_node.mean(axis=0)
        records.append(
            NetVarianceRecord(
                layer_index=layer_pos + 1,
                per_node_variance=per_node,
                mean_variance=float(per_node.mean()),
                mask_count=mask_count,
                batch_rows=batch.shape[0],
            )
        )
    return records


def saturation_histogram(
    nets: np.ndarray,
    value_range: tuple[float, float] = (-5.0, 5.0),
    bins: int = 50,
    threshold: float = 2.0,
) -> SaturationHistogram:
    """Histogram of all net entries over a uniform grid, plus the fraction
    with |z| above the saturation threshold."""
    nets = np.asarray(nets, dtype=np.float64)
    if nets.size == 0:
        raise DomainError("saturation_histogram needs at least one net value")
    if bins < 1:
        raise DomainError(f"bins must be >= 1, got {bins}")
    lo, hi = float(value_range[0]), float(value_range[1])
    if not lo < hi:
        raise DomainError(f"empty histogram range: [{lo}, {hi}]")
    flat = nets.ravel()
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(flat[(flat >= lo) & (flat <= hi)], bins=edges)
    underflow = int((flat < lo).sum())
    overflow = int((flat > hi).sum())
    sat = float((np.abs(flat) > threshold).mean())
    return SaturationHistogram(
        edges=edges,
        counts=counts,
        underflow=underflow,
        overflow=overflow,
        threshold=float(threshold),
        saturation_fraction=sat,
    )
