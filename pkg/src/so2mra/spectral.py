"""Spectral recovery and its perturbation-bound evaluators.

The debiased second moment, conjugated by the inverse square root of the
power spectrum, equals ``2*pi * D_xt * T * D_xt^H`` where ``xt`` is the unit
phase vector of the signal and ``T`` is the (block) Toeplitz matrix of the
rotation distribution.  When ``T`` is (block) circulant the matrix has an
eigenvector equal to ``xt`` up to a grid rotation and a global phase, which
the algorithm extracts from the most isolated eigenvalue.  When ``T`` is not
circulant, the recovery error is controlled by the Frobenius distance to the
nearest circulant through a sin-theta eigenvector perturbation bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import MomentConsistencyError
from .freq_march import RecoveryResult
from .moments import MomentPair, debias
from .signal_model import (
    FBImage,
    RotationDistribution,
    Signal,
    TrigSignal,
    TWO_PI,
    rotate_distribution,
    rotate_signal,
)

RANK_TOL_POPULATION = 1e-8
RANK_TOL_EMPIRICAL = 1e-3
PHASE_ANCHOR_TOL = 1e-12


@dataclass(frozen=True)
class EigOptions:
    """Numerical knobs for the eigendecomposition-based steps.

    ``rank_tol`` is the relative threshold below which eigenvalues count as
    zero in the low-rank 2-D problem (use ``RANK_TOL_EMPIRICAL`` for sampled
    moments).  ``tie_tol`` is the window inside which two candidate isolation
    gaps count as tied (the larger ``|lambda|`` wins).  ``degeneracy_tol`` is
    the relative gap under which an eigenvalue is treated as degenerate when
    checking bound applicability.
    """

    rank_tol: float = RANK_TOL_POPULATION
    tie_tol: float = 1e-12
    degeneracy_tol: float = 1e-10


@dataclass(frozen=True)
class CirculantApprox:
    """First column of the circulant closest to the distribution's Toeplitz form."""

    v_opt: np.ndarray
    s_b: float


@dataclass(frozen=True)
class SpectralReport:
    """Eigen-structure of a spectral run or of a bound evaluation.

    For recovery runs only ``eigenvalues`` (descending, the scanned set),
    ``kappa`` and ``gap`` are populated.  Bound evaluators fill the circulant
    spectrum, ``delta_kappa``, ``s_b``, the error bound (``None`` when not
    applicable) and the four applicability conditions; ``inner_sign`` is
    ``None`` when no recovery was supplied to check it against.
    """

    eigenvalues: np.ndarray
    kappa: int
    gap: float
    delta_kappa: Optional[float] = None
    s_b: Optional[float] = None
    bound: Optional[float] = None
    conditions_met: Optional[dict] = None
    eigenvalues_circ: Optional[np.ndarray] = None

    def all_conditions_met(self, assume_unchecked: bool = True) -> bool:
        if self.conditions_met is None:
            return False
        vals = []
        for v in self.conditions_met.values():
            if v is None:
                vals.append(assume_unchecked)
            else:
                vals.append(bool(v))
        return all(vals)


def circulant_project(rho: RotationDistribution) -> CirculantApprox:
    """Frobenius-closest circulant to the Toeplitz matrix of ``rho``.

    ``v_opt[k] = (k*rho[-(N-k)] + (N-k)*rho[k]) / N`` for ``N = 2B+1``, with
    the squared distance
    ``s_b = sum_k |rho[k] - rho[-(N-k)]|^2 * k*(N-k)/N``.
    """
    B = rho.B
    n = 2 * B + 1
    k = np.arange(1, n)
    pos = rho.coeffs[k + 2 * B]  # rho[k], k = 1..2B
    wrap = rho.coeffs[-(n - k) + 2 * B]  # rho[-(N-k)]
    v = np.empty(n, dtype=np.complex128)
    v[0] = rho.coeffs[2 * B]
    v[1:] = (k * wrap + (n - k) * pos) / n
    s_b = float(np.sum(np.abs(pos - wrap) ** 2 * (k * (n - k)) / n))
    return CirculantApprox(v, s_b)


def toeplitz_matrix(rho: RotationDistribution) -> np.ndarray:
    """Hermitian Toeplitz matrix ``T[k1, k2] = rho[k1 - k2]``, ``k = -B..B``."""
    B = rho.B
    k = np.arange(-B, B + 1)
    return rho.coeffs[(k[:, None] - k[None, :]) + 2 * B]


def circulant_matrix(v: np.ndarray) -> np.ndarray:
    """Circulant matrix with first column ``v``: ``C[i, j] = v[(i - j) mod N]``."""
    n = v.size
    i = np.arange(n)
    return v[(i[:, None] - i[None, :]) % n]


def block_ones_expand(a: np.ndarray, q: int) -> np.ndarray:
    """Expand each entry of ``a`` into a constant ``q x q`` block."""
    return np.kron(a, np.ones((q, q)))


def _select_isolated(lams: np.ndarray, tie_tol: float) -> tuple[int, float]:
    """Index of the eigenvalue with the largest isolation gap.

    Ties within ``tie_tol`` resolve toward the larger ``|lambda|``, then the
    smaller index, so the choice is deterministic.
    """
    diffs = np.abs(lams[:, None] - lams[None, :])
    np.fill_diagonal(diffs, np.inf)
    gaps = diffs.min(axis=1) if lams.size > 1 else np.full(1, np.inf)
    gmax = gaps.max()
    cand = np.flatnonzero(gaps >= gmax - tie_tol)
    best = cand[int(np.argmax(np.abs(lams[cand])))]
    return int(best), float(gaps[best])


def _spectral_core(
    m: MomentPair,
    anchor: int,
    restrict_rank: bool,
    opts: EigOptions,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int, float]:
    """Shared eigenvector-extraction steps of the 1-D and 2-D algorithms.

    Returns ``(x_est, x_tilde, eigenvalues_scanned, kappa, gap)``.
    """
    if not m.debiased:
        m = debias(m)
    p = np.diag(m.M2).real
    if p.min() <= 0.0:
        raise MomentConsistencyError(
            f"power-spectrum entry {p.min():.3g} is not positive after debiasing"
        )
    inv_sqrt = 1.0 / np.sqrt(p)
    mat = m.M2 * np.outer(inv_sqrt, inv_sqrt)
    lams, vecs = np.linalg.eigh(mat)
    lams = lams[::-1]
    vecs = vecs[:, ::-1]
    if restrict_rank:
        keep = np.abs(lams) > opts.rank_tol * np.abs(lams).max(initial=0.0)
        if not keep.any():
            raise MomentConsistencyError("no eigenvalue above the rank threshold")
        lams = lams[keep]
        vecs = vecs[:, keep]
    kappa, gap = _select_isolated(lams, opts.tie_tol)
    x_tilde = np.sqrt(float(m.dim)) * vecs[:, kappa]
    if abs(x_tilde[anchor]) < PHASE_ANCHOR_TOL:
        raise MomentConsistencyError("phase anchor entry of the eigenvector vanishes")
    beta = np.exp(1j * (np.angle(m.M1[anchor]) - np.angle(x_tilde[anchor])))
    x_tilde = beta * x_tilde
    x_est = np.sqrt(p) * x_tilde
    return x_est, x_tilde, lams, kappa, gap


def _rho_from_first_moment(
    m1: np.ndarray, x_est: np.ndarray, k_index: np.ndarray, B: int
) -> RotationDistribution:
    """Estimate ``rho[k]`` for ``k = 1..B`` from ``M1 / (2*pi*x_est)``.

    Radially redundant estimates are averaged per ``k``; frequencies above
    ``B`` are not identified by this route and are reported as zero.
    """
    ratios = m1 / (TWO_PI * x_est)
    pos = np.zeros(2 * B, dtype=np.complex128)
    for k in range(1, B + 1):
        pos[k - 1] = ratios[k_index == k].mean()
    return RotationDistribution.from_positive(B, pos)


def spectral_recover_1d(
    m: MomentPair, opts: EigOptions = EigOptions()
) -> tuple[RecoveryResult, SpectralReport]:
    """Spectral recovery from 1-D moments.

    All ``2B+1`` eigenvalues are scanned for the most isolated one; the
    corresponding eigenvector carries the signal phases up to a grid rotation
    and a global phase fixed by the DC entry of the first moment.
    """
    dim = m.dim
    if dim % 2 != 1:
        raise ValueError("1-D moments must have odd dimension 2B+1")
    B = (dim - 1) // 2
    k_index = np.arange(-B, B + 1)
    x_est, x_tilde, lams, kappa, gap = _spectral_core(
        m, anchor=B, restrict_rank=False, opts=opts
    )
    rho_est = _rho_from_first_moment(m.M1, x_est, k_index, B)
    result = RecoveryResult(
        TrigSignal(B, x_est),
        rho_est,
        {"x_tilde": x_tilde, "kappa": kappa, "gap": gap},
    )
    report = SpectralReport(eigenvalues=lams, kappa=kappa, gap=gap)
    return result, report


def spectral_recover_2d(
    m: MomentPair, image_shape: tuple, opts: EigOptions = EigOptions()
) -> tuple[RecoveryResult, SpectralReport]:
    """Spectral recovery from 2-D block moments (uniform radial bandwidth only).

    Only eigenvalues above ``opts.rank_tol`` (relative) are scanned: the
    conjugated second moment has rank at most ``2B+1``, the rest of the
    spectrum is structural zeros.
    """
    B, qk = image_shape
    qk = np.asarray(qk, dtype=np.int64)
    if qk.shape != (B + 1,):
        raise ValueError("image_shape must be (B, Q_k for k = 0..B)")
    if not (qk == qk[0]).all():
        raise ValueError("the spectral path requires a uniform radial bandwidth")
    q = int(qk[0])
    ks = np.arange(-B, B + 1)
    k_index = np.repeat(ks, qk[np.abs(ks)])
    if m.dim != k_index.size:
        raise ValueError("moment dimension does not match the image shape")
    anchor = int(np.flatnonzero(k_index == 0)[0])
    x_est, x_tilde, lams, kappa, gap = _spectral_core(
        m, anchor=anchor, restrict_rank=True, opts=opts
    )
    rho_est = _rho_from_first_moment(m.M1, x_est, k_index, B)
    result = RecoveryResult(
        FBImage(B, qk, x_est),
        rho_est,
        {"x_tilde": x_tilde, "kappa": kappa, "gap": gap},
    )
    report = SpectralReport(eigenvalues=lams, kappa=kappa, gap=gap)
    return result, report


def bound_value(s_b_eff: float, delta: float, p_max: float, dim_factor: float) -> Optional[float]:
    """Evaluate ``2*dim_factor*p_max*(1 - sqrt(1 - s_b_eff/delta^2))``.

    Returns ``None`` when the bound does not apply (``s_b_eff > delta^2``).
    A zero circulant distance always yields a zero bound.
    """
    if s_b_eff == 0.0:
        return 0.0
    if delta <= 0.0 or s_b_eff > delta**2:
        return None
    return 2.0 * dim_factor * p_max * (1.0 - np.sqrt(1.0 - s_b_eff / delta**2))


def _inner_sign_condition(
    x_tilde_est: np.ndarray, x_tilde_true: np.ndarray, k_index: np.ndarray, B: int
) -> bool:
    """Post-hoc check that the extracted phase vector is positively aligned
    with some grid rotation of the true one."""
    best = -np.inf
    for ell in range(2 * B + 1):
        phase = np.exp(-1j * k_index * (TWO_PI * ell / (2 * B + 1)))
        best = max(best, float(np.vdot(x_tilde_est, phase * x_tilde_true).real))
    return best >= 0.0


def _davis_kahan(
    lam_t: np.ndarray,
    lam_c: np.ndarray,
    p: np.ndarray,
    s_b: float,
    s_b_eff: float,
    dim_factor: float,
    x: Signal,
    kappa_policy,
    opts: EigOptions,
    recovery: Optional[RecoveryResult],
    k_index: np.ndarray,
    B: int,
) -> SpectralReport:
    if isinstance(kappa_policy, (int, np.integer)):
        kappa = int(kappa_policy)
        if not 0 <= kappa < lam_t.size:
            raise ValueError("kappa index out of range")
        diffs = np.abs(lam_t - lam_t[kappa])
        diffs[kappa] = np.inf
        gap = float(diffs.min()) if lam_t.size > 1 else np.inf
    elif kappa_policy == "max_gap":
        kappa, gap = _select_isolated(lam_t, opts.tie_tol)
    else:
        raise ValueError("kappa_policy must be 'max_gap' or an eigenvalue index")

    if kappa >= lam_c.size:
        delta = 0.0  # no matching circulant eigenvalue: bound cannot apply
    else:
        others_t = np.delete(lam_t, kappa)
        others_c = np.delete(lam_c, kappa)
        d1 = np.abs(lam_c[kappa] - others_t).min() if others_t.size else np.inf
        d2 = np.abs(others_c - lam_t[kappa]).min() if others_c.size else np.inf
        delta = float(max(d1, d2))

    p_max = float(p.max())
    scale = max(np.abs(lam_t).max(initial=0.0), np.abs(lam_c).max(initial=0.0), 1e-30)
    deg_tol = opts.degeneracy_tol * scale

    def simple(lams: np.ndarray, idx: int) -> bool:
        if idx >= lams.size:
            return False
        diffs = np.abs(lams - lams[idx])
        diffs[idx] = np.inf
        return bool(diffs.min(initial=np.inf) > deg_tol)

    conditions = {
        "nonvanishing": bool(np.abs(x.coeffs).min() > 1e-12 * max(1.0, np.abs(x.coeffs).max())),
        "simple_eigenvalues": simple(lam_t, kappa) and simple(lam_c, kappa),
        "inner_sign": None,
        "distance_within_gap": bool(s_b_eff <= delta**2),
    }
    if recovery is not None and "x_tilde" in recovery.diagnostics:
        x_tilde_true = x.coeffs / np.abs(x.coeffs)
        conditions["inner_sign"] = _inner_sign_condition(
            recovery.diagnostics["x_tilde"], x_tilde_true, k_index, B
        )
    bound = bound_value(s_b_eff, delta, p_max, dim_factor)
    return SpectralReport(
        eigenvalues=lam_t,
        kappa=kappa,
        gap=gap,
        delta_kappa=delta,
        s_b=s_b,
        bound=bound,
        conditions_met=conditions,
        eigenvalues_circ=lam_c,
    )


def davis_kahan_bound_1d(
    x: TrigSignal,
    rho: RotationDistribution,
    kappa_policy="max_gap",
    opts: EigOptions = EigOptions(),
    recovery: Optional[RecoveryResult] = None,
) -> SpectralReport:
    """Evaluation-side error bound for the 1-D spectral algorithm.

    Builds the Toeplitz matrix and its circulant projection, compares their
    spectra at the chosen index, and evaluates the sin-theta bound
    ``2*(2B+1)*P_max*(1 - sqrt(1 - s_b/delta^2))`` where applicable.
    ``inner_sign`` is only checked when a recovery result is supplied.
    """
    if x.B != rho.B:
        raise ValueError("signal and distribution bandwidths must agree")
    B = rho.B
    ca = circulant_project(rho)
    lam_t = np.sort(np.linalg.eigvalsh(toeplitz_matrix(rho)))[::-1]
    lam_c = np.sort(np.linalg.eigvalsh(circulant_matrix(ca.v_opt)))[::-1]
    return _davis_kahan(
        lam_t,
        lam_c,
        x.power_spectrum,
        ca.s_b,
        ca.s_b,
        float(2 * B + 1),
        x,
        kappa_policy,
        opts,
        recovery,
        x.k_values,
        B,
    )


def davis_kahan_bound_2d(
    x: FBImage,
    rho: RotationDistribution,
    kappa_policy="max_gap",
    opts: EigOptions = EigOptions(),
    recovery: Optional[RecoveryResult] = None,
) -> SpectralReport:
    """Evaluation-side error bound for the 2-D spectral algorithm.

    The block matrices expand each Toeplitz/circulant entry into a constant
    ``Q x Q`` block; only their nonzero eigenvalues (relative threshold
    ``opts.rank_tol``) enter the gap computation, and the squared circulant
    distance scales as ``Q^2 * s_b``.
    """
    if x.B != rho.B:
        raise ValueError("image and distribution bandwidths must agree")
    if not x.uniform_q:
        raise ValueError("the 2-D bound requires a uniform radial bandwidth")
    B = rho.B
    q = int(x.radial_bandwidths[0])
    ca = circulant_project(rho)
    t_big = block_ones_expand(toeplitz_matrix(rho), q)
    c_big = block_ones_expand(circulant_matrix(ca.v_opt), q)

    def nonzero_desc(mat: np.ndarray) -> np.ndarray:
        lams = np.sort(np.linalg.eigvalsh(mat))[::-1]
        keep = np.abs(lams) > opts.rank_tol * np.abs(lams).max(initial=0.0)
        return lams[keep]

    lam_t = nonzero_desc(t_big)
    lam_c = nonzero_desc(c_big)
    return _davis_kahan(
        lam_t,
        lam_c,
        x.power_spectrum,
        ca.s_b,
        q**2 * ca.s_b,
        float(q * (2 * B + 1)),
        x,
        kappa_policy,
        opts,
        recovery,
        x.k_values,
        B,
    )


def min_bound_over_rotations(
    x: Signal,
    rho: RotationDistribution,
    grid_size: int,
    kappa_policy="max_gap",
    opts: EigOptions = EigOptions(),
    recovery: Optional[RecoveryResult] = None,
) -> tuple[float, SpectralReport]:
    """Minimise the applicable bound over rotated representatives of ``rho``.

    Rotating the distribution (with the matching signal rotation) leaves the
    moments and hence the measured error unchanged, but moves the circulant
    projection, so the bound can be tightened by scanning rotations.  Returns
    the minimising angle and its report; if no angle yields an applicable
    bound, returns the angle closest to applicability with ``bound=None``.
    """
    if grid_size < 1:
        raise ValueError("grid_size must be at least 1")
    if isinstance(x, FBImage):
        evaluate = davis_kahan_bound_2d
        q_sq = int(x.radial_bandwidths[0]) ** 2
    else:
        evaluate = davis_kahan_bound_1d
        q_sq = 1
    best_angle = 0.0
    best_report = None
    fallback = (np.inf, 0.0, None)  # (ratio to applicability, angle, report)
    for j in range(grid_size):
        alpha = TWO_PI * j / grid_size
        # Matched representative pair with identical moments: shifting the
        # distribution's coefficients by exp(-1j*k*alpha) pairs with the
        # signal rotated by -alpha.
        rho_a = rotate_distribution(rho, alpha)
        x_a = rotate_signal(x, -alpha)
        report = evaluate(x_a, rho_a, kappa_policy, opts, recovery)
        if report.bound is not None:
            if best_report is None or report.bound < best_report.bound:
                best_angle, best_report = alpha, report
        else:
            ratio = (
                q_sq * report.s_b / report.delta_kappa**2
                if report.delta_kappa
                else np.inf
            )
            if ratio < fallback[0]:
                fallback = (ratio, alpha, report)
    if best_report is None:
        return fallback[1], fallback[2]
    return best_angle, best_report
