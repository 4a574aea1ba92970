import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for oracles.py

from flowsieve.dataset import Dataset, SyntheticSpec, generate_synthetic


REPO_ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture
def repo_root() -> Path:
    return REPO_ROOT


@pytest.fixture
def two_cluster_dataset() -> Dataset:
    """Small, crisply separable dataset for classifier tests."""
    spec = SyntheticSpec(
        class_means=((0.0, 0.0), (4.0, 4.0)),
        rows_per_class=(60, 60),
    )
    ds, _ = generate_synthetic(spec, seed=11)
    return ds


@pytest.fixture
def redundant_dataset() -> tuple[Dataset, dict]:
    """Informative + duplicated + noise features with ground-truth roles."""
    spec = SyntheticSpec(
        class_means=((0.0, 0.0, 0.0), (3.0, 3.0, 3.0)),
        rows_per_class=(150, 150),
        duplicates=((0, 0.0), (1, 0.0)),
        n_noise=3,
    )
    return generate_synthetic(spec, seed=5)


def assert_close(a, b, rel=1e-9, abs_tol=1e-9):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = np.abs(a - b)
    bound = abs_tol + rel * np.maximum(np.abs(a), np.abs(b))
    assert (diff <= bound).all(), f"max diff {diff.max()} exceeds tolerance"
