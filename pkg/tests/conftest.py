from pathlib import Path

import numpy as np
import pytest

from statcs import SeededRng, SpectralGaussian, power_decay_spectrum

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def rng():
    return SeededRng(20260810)


@pytest.fixture
def decay_model():
    """Canonical-basis power-decay model, N=64, alpha=3."""
    return SpectralGaussian.from_spectrum(power_decay_spectrum(64, 3.0))


@pytest.fixture(scope="session")
def scene_path():
    return FIXTURES / "scene512.pgm"


def random_spd_model(n, rng, mean_scale=1.0):
    """Full-rank random model for oracle comparisons."""
    gen = rng.generator()
    a = gen.standard_normal((n, n))
    lam, basis = np.linalg.eigh(a @ a.T / n + 0.1 * np.eye(n))
    order = np.argsort(lam)[::-1]
    return SpectralGaussian(
        dim=n,
        mean=mean_scale * gen.standard_normal(n),
        basis=basis[:, order],
        eigenvalues=lam[order],
    )
