"""Domain types and samplers for rotational alignment in coefficient space.

Everything lives in coefficient space: 1-D signals as Fourier coefficients
``x[k]`` for ``k = -B..B``, images as steerable (angular/radial) coefficients
``x[k, q]`` over ``{(k, q): -B <= k <= B, 0 <= q < Q_k}``, and rotation
distributions as Fourier coefficients ``rho[k]`` for ``k = -2B..2B`` of a
density on ``[0, 2*pi)``.  An in-plane rotation by ``phi`` acts on a
coefficient with angular index ``k`` as multiplication by ``exp(-1j*k*phi)``.

Conventions:

* ``rho[k] = (1/2pi) * integral rho(theta) exp(-1j*k*theta) dtheta``, hence
  ``rho[0] == 1/(2*pi)`` and ``E[exp(-1j*k*phi)] == 2*pi*rho[k]`` for a
  random angle ``phi`` with density ``rho``.
* The density is synthesised as ``rho(theta) = sum_k rho[k] exp(1j*k*theta)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import DegenerateDrawError, NotSampleableError

TWO_PI = 2.0 * np.pi
UNIFORM_DENSITY = 1.0 / TWO_PI

# Number of subintervals of [0, 2*pi] used for density evaluation, positivity
# checks and inverse-CDF rotation sampling.
DENSITY_GRID_SIZE = 8192


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.flags.writeable = False
    return a


def _check_conj_symmetric(coeffs: np.ndarray, what: str) -> None:
    scale = max(1.0, float(np.abs(coeffs).max(initial=0.0)))
    if not np.allclose(coeffs, coeffs[::-1].conj(), rtol=0.0, atol=1e-12 * scale):
        raise ValueError(f"{what} requires conjugate-symmetric coefficients")


@dataclass(frozen=True)
class TrigSignal:
    """Bandlimited 1-D signal on the circle, stored as Fourier coefficients.

    ``coeffs[j]`` is the coefficient of ``exp(1j*k*theta)`` with ``k = j - B``,
    so the vector runs over ``k = -B..B`` and has length ``2B+1``.  When
    ``is_real`` is set, ``coeffs[-k] == conj(coeffs[k])`` is enforced.
    """

    B: int
    coeffs: np.ndarray
    is_real: bool = False

    def __post_init__(self):
        if self.B < 0:
            raise ValueError("bandwidth must be nonnegative")
        coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if coeffs.shape != (2 * self.B + 1,):
            raise ValueError(
                f"expected {2 * self.B + 1} coefficients, got shape {coeffs.shape}"
            )
        if self.is_real:
            _check_conj_symmetric(coeffs, "a real signal")
        object.__setattr__(self, "coeffs", _readonly(coeffs))

    def __getitem__(self, k: int) -> complex:
        return self.coeffs[k + self.B]

    @property
    def k_values(self) -> np.ndarray:
        return np.arange(-self.B, self.B + 1)

    @property
    def size(self) -> int:
        return self.coeffs.size

    @property
    def power_spectrum(self) -> np.ndarray:
        return np.abs(self.coeffs) ** 2


@dataclass(frozen=True)
class FBImage:
    """Bandlimited 2-D image as steerable coefficients ``x[k, q]``.

    ``radial_bandwidths[|k|]`` gives the number of radial coefficients
    ``Q_k`` for each angular frequency (symmetric in k).  Coefficients are
    stored flat in lexicographic order: blocks ``k = -B..B``, each holding
    ``q = 0..Q_|k|-1``.
    """

    B: int
    radial_bandwidths: np.ndarray
    coeffs: np.ndarray
    is_real: bool = False

    def __post_init__(self):
        if self.B < 0:
            raise ValueError("bandwidth must be nonnegative")
        qk = np.asarray(self.radial_bandwidths, dtype=np.int64)
        if qk.shape != (self.B + 1,) or (qk < 1).any():
            raise ValueError("radial_bandwidths must hold Q_k >= 1 for k = 0..B")
        coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        size = int(qk.sum() * 2 - qk[0])
        if coeffs.shape != (size,):
            raise ValueError(f"expected {size} coefficients, got shape {coeffs.shape}")
        object.__setattr__(self, "radial_bandwidths", _readonly(qk))
        object.__setattr__(self, "coeffs", _readonly(coeffs))
        if self.is_real:
            for k in range(1, self.B + 1):
                pos = self.block(k)
                neg = self.block(-k)
                scale = max(1.0, float(np.abs(coeffs).max()))
                if not np.allclose(neg, pos.conj(), rtol=0.0, atol=1e-12 * scale):
                    raise ValueError("a real image requires x[-k, q] == conj(x[k, q])")

    @property
    def size(self) -> int:
        return self.coeffs.size

    @property
    def k_values(self) -> np.ndarray:
        """Angular index of every flat coefficient, in storage order."""
        return np.repeat(
            np.arange(-self.B, self.B + 1),
            self.radial_bandwidths[np.abs(np.arange(-self.B, self.B + 1))],
        )

    @property
    def uniform_q(self) -> bool:
        return bool((self.radial_bandwidths == self.radial_bandwidths[0]).all())

    def block_start(self, k: int) -> int:
        ks = np.arange(-self.B, self.B + 1)
        sizes = self.radial_bandwidths[np.abs(ks)]
        return int(sizes[: k + self.B].sum())

    def block(self, k: int) -> np.ndarray:
        start = self.block_start(k)
        return self.coeffs[start : start + int(self.radial_bandwidths[abs(k)])]

    def __getitem__(self, kq: tuple) -> complex:
        k, q = kq
        return self.coeffs[self.block_start(k) + q]

    @property
    def power_spectrum(self) -> np.ndarray:
        return np.abs(self.coeffs) ** 2


@dataclass(frozen=True)
class RotationDistribution:
    """Density on ``[0, 2*pi)`` stored as Fourier coefficients ``rho[-2B..2B]``.

    The DC coefficient is pinned to ``1/(2*pi)`` and negative frequencies are
    mirrored from the positive ones, so normalisation and conjugate symmetry
    hold exactly.  ``sampleable`` records whether the synthesised density
    stays above ``-positivity_tol`` on the evaluation grid.
    """

    B: int
    coeffs: np.ndarray
    positivity_tol: float = 0.0
    grid_size: int = DENSITY_GRID_SIZE
    sampleable: bool = field(init=False, default=False)
    min_density: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.B < 0:
            raise ValueError("bandwidth must be nonnegative")
        coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if coeffs.shape != (4 * self.B + 1,):
            raise ValueError(
                f"expected {4 * self.B + 1} coefficients, got shape {coeffs.shape}"
            )
        dc = coeffs[2 * self.B]
        if abs(dc - UNIFORM_DENSITY) > 1e-12:
            raise ValueError("rho[0] must equal 1/(2*pi)")
        _check_conj_symmetric(coeffs, "a rotation density")
        # Re-pin DC and mirror negatives so both invariants hold exactly.
        pos = coeffs[2 * self.B + 1 :].copy()
        full = np.concatenate([pos[::-1].conj(), [UNIFORM_DENSITY + 0.0j], pos])
        object.__setattr__(self, "coeffs", _readonly(full))
        dens = self.density_grid()[1]
        object.__setattr__(self, "min_density", float(dens.min()))
        object.__setattr__(
            self, "sampleable", bool(self.min_density >= -self.positivity_tol)
        )

    @classmethod
    def uniform(cls, B: int) -> "RotationDistribution":
        coeffs = np.zeros(4 * B + 1, dtype=np.complex128)
        coeffs[2 * B] = UNIFORM_DENSITY
        return cls(B, coeffs)

    @classmethod
    def from_positive(
        cls,
        B: int,
        positive_coeffs: np.ndarray,
        positivity_tol: float = 0.0,
        grid_size: int = DENSITY_GRID_SIZE,
    ) -> "RotationDistribution":
        """Build from the coefficients for ``k = 1..2B``; the rest is implied."""
        pos = np.asarray(positive_coeffs, dtype=np.complex128)
        if pos.shape != (2 * B,):
            raise ValueError(f"expected {2 * B} positive-frequency coefficients")
        full = np.concatenate([pos[::-1].conj(), [UNIFORM_DENSITY + 0.0j], pos])
        return cls(B, full, positivity_tol, grid_size)

    def __getitem__(self, k: int) -> complex:
        return self.coeffs[k + 2 * self.B]

    @property
    def positive_coeffs(self) -> np.ndarray:
        """Coefficients for ``k = 1..2B``."""
        return self.coeffs[2 * self.B + 1 :]

    def density(self, theta: np.ndarray) -> np.ndarray:
        """Evaluate the density at arbitrary angles."""
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        k = np.arange(-2 * self.B, 2 * self.B + 1)
        return (np.exp(1j * np.outer(theta, k)) @ self.coeffs).real

    def density_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Density on the closed uniform grid ``theta_j = 2*pi*j/M``, ``j = 0..M``.

        Uses an FFT synthesis; the final node repeats the first (periodicity)
        so the result is directly usable for trapezoidal integration.
        """
        m = self.grid_size
        buf = np.zeros(m, dtype=np.complex128)
        for k in range(-2 * self.B, 2 * self.B + 1):
            buf[k % m] += self.coeffs[k + 2 * self.B]
        dens = (np.fft.ifft(buf) * m).real
        nodes = np.linspace(0.0, TWO_PI, m + 1)
        return nodes, np.concatenate([dens, dens[:1]])


Signal = Union[TrigSignal, FBImage]


@dataclass(frozen=True)
class ObservationBatch:
    """Coefficient-space observations: one randomly rotated noisy copy per row."""

    representation: str  # "1d" | "2d"
    data: np.ndarray
    sigma: float
    true_angles: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.representation not in ("1d", "2d"):
            raise ValueError("representation must be '1d' or '2d'")
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim != 2:
            raise ValueError("data must be a (n, dim) matrix")
        object.__setattr__(self, "data", _readonly(data))
        if self.true_angles is not None:
            object.__setattr__(self, "true_angles", _readonly(np.asarray(self.true_angles)))

    @property
    def n(self) -> int:
        return self.data.shape[0]


def make_experiment_signal_2d(B: int, Q: int, rng: np.random.Generator) -> FBImage:
    """Random real image with unit-modulus coefficients and uniform phases.

    All ``|x[k, q]| == 1``; phases for ``k > 0`` are uniform on ``[0, 2*pi)``,
    the ``k = 0`` coefficients are real with a uniformly random sign, and
    negative frequencies mirror the positive ones by conjugation.
    """
    if B < 0 or Q < 1:
        raise ValueError("need B >= 0 and Q >= 1")
    phases = rng.uniform(0.0, TWO_PI, size=B * Q)
    signs = np.where(rng.integers(0, 2, size=Q) == 0, -1.0, 1.0)
    pos = np.exp(1j * phases).reshape(B, Q)  # block k = 1..B
    zero = signs.astype(np.complex128)
    blocks = [pos[k - 1].conj() for k in range(B, 0, -1)] + [zero] + [pos[k - 1] for k in range(1, B + 1)]
    coeffs = np.concatenate(blocks)
    return FBImage(B, np.full(B + 1, Q, dtype=np.int64), coeffs, is_real=True)


def _min_density_scaled(pos: np.ndarray, gamma: float, B: int, grid_size: int) -> float:
    rho = RotationDistribution.from_positive(B, gamma * pos, np.inf, grid_size)
    return rho.min_density


def make_experiment_distribution(
    B: int,
    rng: np.random.Generator,
    tol_pos: float = 0.0,
    grid_size: int = DENSITY_GRID_SIZE,
) -> RotationDistribution:
    """Random nonnegative density whose Toeplitz form is exactly circulant.

    Real and imaginary parts of ``rho[k]``, ``k = 1..2B``, are drawn uniformly
    on ``[0, 1]``; each coefficient pair ``(k, -(2B+1-k))`` is replaced by its
    closest circulant-compatible value (the Frobenius-optimal weighted
    average), which forces the circulant distance to vanish.  The non-DC
    coefficients are then shrunk by the largest ``gamma`` in ``(0, 1]`` that
    keeps the density above ``tol_pos`` on the evaluation grid; shrinking is
    linear, so circulant compatibility is preserved.
    """
    if B < 1:
        raise ValueError("need B >= 1")
    re = rng.random(2 * B)
    im = rng.random(2 * B)
    pos = re + 1j * im  # k = 1..2B
    n = 2 * B + 1
    # Closest circulant-compatible coefficients: for each k the pair
    # (rho[k], rho[-(n-k)]) collapses onto the weighted average
    # (k*rho[-(n-k)] + (n-k)*rho[k]) / n, mirrored conjugately.
    merged = np.empty_like(pos)
    for k in range(1, n):
        merged[k - 1] = (k * pos[n - k - 1].conj() + (n - k) * pos[k - 1]) / n
    pos = merged

    if tol_pos > UNIFORM_DENSITY:
        raise DegenerateDrawError("positivity target exceeds the uniform density level")

    def feasible(gamma: float) -> bool:
        return _min_density_scaled(pos, gamma, B, grid_size) >= tol_pos

    if feasible(1.0):
        gamma = 1.0
    else:
        lo, hi = 0.0, 1.0
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if feasible(mid):
                lo = mid
            else:
                hi = mid
        gamma = lo
    if gamma <= 1e-6:
        raise DegenerateDrawError("no usable positive rescaling found for this draw")
    return RotationDistribution.from_positive(B, gamma * pos, tol_pos, grid_size)


def perturb_distribution(rho: RotationDistribution, eta: float) -> RotationDistribution:
    """Phase-twist the positive coefficients: ``rho[k] -> exp(1j*eta*sqrt(k))*rho[k]``.

    Negative frequencies are re-mirrored by conjugation and the DC term is
    untouched.  Positivity is re-checked; the result may be non-sampleable.
    """
    k = np.arange(1, 2 * rho.B + 1)
    pos = rho.positive_coeffs * np.exp(1j * eta * np.sqrt(k))
    return RotationDistribution.from_positive(rho.B, pos, rho.positivity_tol, rho.grid_size)


def rotate_distribution(rho: RotationDistribution, angle: float) -> RotationDistribution:
    """Shift the density: acts on coefficients as ``rho[k] -> exp(-1j*k*angle)*rho[k]``."""
    k = np.arange(1, 2 * rho.B + 1)
    pos = rho.positive_coeffs * np.exp(-1j * k * angle)
    return RotationDistribution.from_positive(rho.B, pos, rho.positivity_tol, rho.grid_size)


def rotate_signal(signal: Signal, angle: float) -> Signal:
    """Rotate a signal or image: ``x[k, .] -> x[k, .] * exp(-1j*k*angle)``."""
    coeffs = signal.coeffs * np.exp(-1j * signal.k_values * angle)
    if isinstance(signal, TrigSignal):
        return TrigSignal(signal.B, coeffs, signal.is_real)
    return FBImage(signal.B, signal.radial_bandwidths, coeffs, signal.is_real)


def sample_rotations(rho: RotationDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` angles in ``[0, 2*pi)`` from the density by grid inverse-CDF.

    The density is evaluated on the uniform grid, clamped at zero, integrated
    with the trapezoid rule, normalised, and inverted by linear interpolation.
    """
    if not rho.sampleable:
        raise NotSampleableError(
            f"density dips to {rho.min_density:.3g}, below -{rho.positivity_tol:.3g}"
        )
    if n == 0:
        return np.empty(0, dtype=np.float64)
    nodes, dens = rho.density_grid()
    dens = np.maximum(dens, 0.0)
    dtheta = nodes[1] - nodes[0]
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * dtheta)])
    total = cdf[-1]
    if total <= 0.0:
        raise NotSampleableError("density has no positive mass on the grid")
    u = rng.random(n)
    return np.interp(u, cdf / total, nodes)


def _conjugate_noise(
    k_index: np.ndarray, n: int, sigma: float, rng: np.random.Generator
) -> np.ndarray:
    """Coefficient-space noise obeying ``eps[-k, q] == conj(eps[k, q])``.

    Entries with ``k == 0`` are real N(0, sigma^2); for ``k > 0`` real and
    imaginary parts are independent N(0, sigma^2/2), mirrored conjugately
    into ``k < 0``.
    """
    dim = k_index.size
    eps = np.zeros((n, dim), dtype=np.complex128)
    if sigma == 0.0:
        return eps
    idx_zero = np.flatnonzero(k_index == 0)
    idx_pos = np.flatnonzero(k_index > 0)
    # Partner of each k>0 entry: same q inside the mirrored block.  Blocks are
    # stored k-ascending with identical q-order, so the flat layout of the
    # negative half is the block-reversed positive half.
    idx_neg_partner = _negative_partners(k_index)
    z0 = rng.standard_normal((n, idx_zero.size))
    zp = rng.standard_normal((n, 2 * idx_pos.size))
    eps[:, idx_zero] = sigma * z0
    pos_noise = (zp[:, ::2] + 1j * zp[:, 1::2]) * (sigma / np.sqrt(2.0))
    eps[:, idx_pos] = pos_noise
    eps[:, idx_neg_partner] = pos_noise.conj()
    return eps


def _negative_partners(k_index: np.ndarray) -> np.ndarray:
    """For each flat index with ``k > 0`` (in order), the index of ``(-k, q)``."""
    partners = []
    order = np.flatnonzero(k_index > 0)
    for i in order:
        k = k_index[i]
        block = np.flatnonzero(k_index == k)
        q = int(np.where(block == i)[0][0])
        neg_block = np.flatnonzero(k_index == -k)
        partners.append(neg_block[q])
    return np.asarray(partners, dtype=np.int64)


def generate_observations(
    signal: Signal,
    rho: RotationDistribution,
    n: int,
    sigma: float,
    rng: np.random.Generator,
) -> ObservationBatch:
    """Draw ``n`` observations ``y_i = rotate(x, phi_i) + eps_i`` in coefficient space."""
    if signal.B != rho.B:
        raise ValueError("signal and distribution bandwidths must agree")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    angles = sample_rotations(rho, n, rng)
    k_index = signal.k_values
    representation = "1d" if isinstance(signal, TrigSignal) else "2d"
    # exp(-1j*k*phi) per unique k, expanded to the flat layout
    pos_k = np.arange(0, signal.B + 1)
    e_pos = np.exp(-1j * np.outer(angles, pos_k))
    e_all = np.concatenate([e_pos[:, :0:-1].conj(), e_pos], axis=1)  # k = -B..B
    data = signal.coeffs[None, :] * e_all[:, k_index + signal.B]
    del e_pos, e_all
    data += _conjugate_noise(k_index, n, sigma, rng)
    return ObservationBatch(representation, data, sigma, angles)
