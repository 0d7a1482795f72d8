"""
Shared pytest fixtures: seeded generators, small cubes and synthetic scenes, and a
central finite-difference helper for gradient checks.
"""
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from hsio import HyperspectralCube  # noqa: E402
from synthetic import make_scene  # noqa: E402


def numeric_gradient(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar function f with respect to every entry of x (modified in place, restored)."""
    grad = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        original = x[idx]
        x[idx] = original + eps
        plus = f()
        x[idx] = original - eps
        minus = f()
        x[idx] = original
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cube(rng):
    return HyperspectralCube(data=rng.uniform(0.0, 1.0, size=(3, 8, 8)))


@pytest.fixture
def scene():
    """32x32x4 two-material scene with its 8x8 centre-square mask."""
    return make_scene(size=32, bands=4, seed=7, noise_sigma=0.02)


@pytest.fixture
def fd():
    return numeric_gradient
