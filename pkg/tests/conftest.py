"""Shared generators for randomized test instances."""

import numpy as np
import pytest

from so2mra.signal_model import (
    FBImage,
    RotationDistribution,
    TrigSignal,
    UNIFORM_DENSITY,
)


def random_signal_1d(B, rng, real=True):
    """Non-vanishing conjugate-symmetric signal with moduli in [0.5, 1.5]."""
    mods = rng.uniform(0.5, 1.5, B)
    phases = rng.uniform(0, 2 * np.pi, B)
    pos = mods * np.exp(1j * phases)
    zero = rng.uniform(0.5, 1.5) * (1.0 if rng.integers(0, 2) else -1.0)
    coeffs = np.concatenate([pos[::-1].conj(), [zero], pos])
    return TrigSignal(B, coeffs, is_real=real)


def random_rho(B, rng, min_mod=0.2, max_mod=1.0):
    """Non-vanishing rotation distribution; not necessarily a positive density."""
    mods = rng.uniform(min_mod, max_mod, 2 * B) * UNIFORM_DENSITY
    phases = rng.uniform(0, 2 * np.pi, 2 * B)
    return RotationDistribution.from_positive(B, mods * np.exp(1j * phases))


def random_image(B, Q, rng):
    """Non-vanishing real image with moduli in [0.5, 1.5]."""
    mods = rng.uniform(0.5, 1.5, B * Q)
    phases = rng.uniform(0, 2 * np.pi, B * Q)
    pos = (mods * np.exp(1j * phases)).reshape(B, Q)
    zero = rng.uniform(0.5, 1.5, Q) * np.where(rng.integers(0, 2, Q) == 0, -1.0, 1.0)
    blocks = [pos[k - 1].conj() for k in range(B, 0, -1)] + [zero.astype(complex)]
    blocks += [pos[k - 1] for k in range(1, B + 1)]
    return FBImage(B, np.full(B + 1, Q, dtype=np.int64), np.concatenate(blocks), is_real=True)


def rho_truncation(rho, B):
    """Coefficients of ``rho`` restricted to ``k = -B..B`` as a raw vector."""
    off = 2 * rho.B
    return rho.coeffs[off - B : off + B + 1]


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
