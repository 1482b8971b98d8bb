import os

import numpy as np
import pytest

MNIST_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "data", "mnist")


@pytest.fixture(scope="session")
def mnist_dir() -> str:
    if not os.path.isdir(MNIST_DIR):
        pytest.fail(f"dataset directory missing: {os.path.abspath(MNIST_DIR)}")
    return os.path.abspath(MNIST_DIR)


@pytest.fixture(scope="session")
def fd_param_grad():
    """Central finite differences of a scalar function w.r.t. one parameter
    array, mutating it entry by entry (restored afterwards)."""

    def fd(f, param: np.ndarray, h: float = 1e-5) -> np.ndarray:
        grad = np.zeros_like(param)
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = param[idx]
            param[idx] = orig + h
            plus = f()
            param[idx] = orig - h
            minus = f()
            param[idx] = orig
            grad[idx] = (plus - minus) / (2.0 * h)
        return grad

    return fd


@pytest.fixture(scope="session")
def rel_error():
    """Norm-based relative error between two gradient tensors.

    The 1e-6 denominator floor keeps mathematically-zero gradients (where
    both routes return sub-resolution noise) from reading as 100% error.
    """

    def rel(a: np.ndarray, b: np.ndarray) -> float:
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        return float(np.linalg.norm(a - b) / max(na, nb, 1e-6))

    return rel
