import os
import tempfile

# settings are read at import time
os.environ.setdefault("GDCNN_DATA_DIR", tempfile.mkdtemp(prefix="gdcnn-test-"))
os.environ.setdefault("GDCNN_LOG_TO_FILE", "false")
os.environ.setdefault("GDCNN_LOG_LEVEL", "WARNING")

import numpy as np
import pytest

from gdcnn.model import ModelConfig
from gdcnn.synthetic import generate_synthetic_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_gap():
    """46x46 input keeps a 2x2 featuremap after conv4"""
    return ModelConfig(input_size=46, conv_filters=(4, 4, 4, 4), head="gap", dropout_rate=0.0)


@pytest.fixture
def tiny_dense():
    return ModelConfig(input_size=46, conv_filters=(4, 4, 4, 4), head="dense", dense_hidden=6, dropout_rate=0.0)


@pytest.fixture
def synthetic(tmp_path):
    """Four images per class plus manifest.csv"""
    return generate_synthetic_dataset(4, seed=7, out_dir=tmp_path / "synth")


def finite_differences(f, x: np.ndarray, step: float = 1e-5) -> tuple[np.ndarray, np.ndarray]:
    """
    Central differences of scalar f() w.r.t. every entry of x (perturbed in place),
    plus a mask of entries whose one-sided slopes disagree: the step crossed a ReLU
    kink or sits on one, so the central difference is not a derivative there.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    kinked = np.zeros(x.shape, dtype=bool)
    base = f()
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        saved = x[i]
        x[i] = saved + step
        plus = f()
        x[i] = saved - step
        minus = f()
        x[i] = saved
        grad[i] = (plus - minus) / (2 * step)
        right, left = (plus - base) / step, (base - minus) / step
        kinked[i] = abs(right - left) > 0.1 * max(abs(right), abs(left)) + 1e-5
    return grad, kinked


def numeric_gradient(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar f() w.r.t. every entry of x (perturbed in place)"""
    return finite_differences(f, x, step)[0]


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
