"""Rotation-aligned recovery error, SNR helpers and sweep aggregation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .signal_model import FBImage, RotationDistribution, TrigSignal

GRID_FACTOR = 16
NEWTON_ITERATIONS = 30

Estimable = Union[TrigSignal, FBImage, RotationDistribution, np.ndarray]


@dataclass(frozen=True)
class ErrorReport:
    relative_error: float
    best_angle: float
    aligned_estimate: np.ndarray


def _coeffs_and_k(obj: Estimable) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(obj, (TrigSignal, FBImage)):
        return obj.coeffs, obj.k_values
    if isinstance(obj, RotationDistribution):
        return obj.coeffs, np.arange(-2 * obj.B, 2 * obj.B + 1)
    arr = np.asarray(obj, dtype=np.complex128)
    if arr.ndim != 1 or arr.size % 2 != 1:
        raise ValueError("raw coefficient vectors must be 1-D with odd length")
    half = (arr.size - 1) // 2
    return arr, np.arange(-half, half + 1)


def recovery_error(estimate: Estimable, truth: Estimable) -> ErrorReport:
    """Relative squared error after aligning the estimate over all rotations.

    Minimises ``|est - exp(-1j*k*phi) . truth|^2 / |truth|^2`` over the
    continuous angle ``phi``.  The objective's rotation-dependent part is the
    real part of a trigonometric polynomial, which is maximised on a dense
    grid and polished with Newton iterations on its derivative.
    """
    e, ke = _coeffs_and_k(estimate)
    t, kt = _coeffs_and_k(truth)
    if e.shape != t.shape or not np.array_equal(ke, kt):
        raise ValueError("estimate and truth must share shape and angular layout")
    norm_t = float(np.vdot(t, t).real)
    if norm_t == 0.0:
        raise ValueError("truth has zero norm")

    # <est, rotate(truth, phi)> = sum_k exp(1j*k*phi) * c_k with the radial
    # sums collapsed into c_k.
    k_lo, k_hi = int(ke.min()), int(ke.max())
    k_range = np.arange(k_lo, k_hi + 1)
    c = np.zeros(k_range.size, dtype=np.complex128)
    np.add.at(c, ke - k_lo, t.conj() * e)

    def overlap(phi: np.ndarray) -> np.ndarray:
        return (np.exp(1j * np.outer(phi, k_range)) @ c).real

    grid = np.linspace(0.0, 2.0 * np.pi, GRID_FACTOR * k_range.size, endpoint=False)
    values = overlap(grid)
    best = float(grid[int(np.argmax(values))])
    best_val = float(values.max())

    phi = best
    spacing = grid[1] - grid[0] if grid.size > 1 else 2.0 * np.pi
    for _ in range(NEWTON_ITERATIONS):
        ph = np.exp(1j * phi * k_range)
        d1 = float((1j * k_range * c * ph).sum().real)
        d2 = float((-(k_range**2) * c * ph).sum().real)
        if d2 >= 0.0:
            break
        step = d1 / d2
        if abs(step) > spacing:
            break
        phi -= step
    refined_val = float(overlap(np.array([phi]))[0])
    if refined_val > best_val:
        best, best_val = phi % (2.0 * np.pi), refined_val

    aligned = e * np.exp(1j * ke * best)
    rel = float(np.vdot(aligned - t, aligned - t).real) / norm_t
    return ErrorReport(relative_error=rel, best_angle=best, aligned_estimate=aligned)


def snr(signal: Union[TrigSignal, FBImage], sigma: float) -> float:
    """Total signal power over total in-band noise power.

    Equals ``sum_k P[k] / ((2B+1) * sigma^2)`` in 1-D and
    ``sum_kq P[k, q] / ((2B+1) * Q * sigma^2)`` for uniform-Q images; the
    denominator is the coefficient count times the per-coefficient variance.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return float(signal.power_spectrum.sum()) / (signal.size * sigma**2)


def sigma_for_snr(signal: Union[TrigSignal, FBImage], target_snr: float) -> float:
    """Noise level achieving the requested SNR for this signal."""
    if target_snr <= 0:
        raise ValueError("target SNR must be positive")
    return float(np.sqrt(signal.power_spectrum.sum() / (signal.size * target_snr)))


def aggregate(errors: np.ndarray, margin: float = 0.2) -> tuple[float, float, float]:
    """Median with a symmetric percentile band of ``100*margin`` points.

    ``margin = 0.2`` yields the 30th and 70th percentiles (linear
    interpolation between order statistics).
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("cannot aggregate an empty error vector")
    if not 0.0 <= margin <= 0.5:
        raise ValueError("margin must lie in [0, 0.5]")
    med, lo, hi = np.percentile(errors, [50.0, 50.0 - 100.0 * margin, 50.0 + 100.0 * margin])
    return float(med), float(lo), float(hi)
