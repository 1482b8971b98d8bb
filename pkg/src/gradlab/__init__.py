"""gradlab: a small, deterministic feed-forward network laboratory.

Pure-numpy layers with exact manual backprop, dropout whose training-time
effect on gradients and net variance can be measured directly, and a
gradient-accelerated activation family that adds a high-frequency sawtooth
(scaled by a bounded shape function) to any base nonlinearity. Everything is
reproducible bit-for-bit from a single seed.
"""

from .activations import Constant, GaafSpec, GaussianBump, ShiftedSigmoid
from .data import Dataset, load_mnist_idx, synthetic_blobs
from .nn import Mode, Network, build_mlp, load_checkpoint, save_checkpoint
from .numcore import RngStream
from .probes import gradient_info_probe, net_variance_probe, saturation_histogram
from .train import Adam, SGD, StoppingRule, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "Constant",
    "Dataset",
    "GaafSpec",
    "GaussianBump",
    "Mode",
    "Network",
    "RngStream",
    "SGD",
    "ShiftedSigmoid",
    "StoppingRule",
    "TrainConfig",
    "build_mlp",
    "evaluate",
    "gradient_info_probe",
    "load_checkpoint",
    "load_mnist_idx",
    "net_variance_probe",
    "saturation_histogram",
    "save_checkpoint",
    "synthetic_blobs",
    "train",
    "__version__",
]
