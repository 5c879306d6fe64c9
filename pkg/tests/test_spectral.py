import numpy as np
import pytest

from so2mra.errors import MomentConsistencyError
from so2mra.metrics import recovery_error
from so2mra.moments import MomentPair, debias, population_moments_1d, population_moments_2d
from so2mra.signal_model import (
    FBImage,
    RotationDistribution,
    UNIFORM_DENSITY,
    make_experiment_distribution,
    make_experiment_signal_2d,
    perturb_distribution,
    rotate_distribution,
)
from so2mra.spectral import (
    bound_value,
    circulant_matrix,
    circulant_project,
    davis_kahan_bound_1d,
    davis_kahan_bound_2d,
    min_bound_over_rotations,
    spectral_recover_1d,
    spectral_recover_2d,
    toeplitz_matrix,
)

from conftest import random_image, random_rho, random_signal_1d, rho_truncation


def brute_force_toeplitz(rho):
    B = rho.B
    t = np.empty((2 * B + 1, 2 * B + 1), dtype=complex)
    for i, k1 in enumerate(range(-B, B + 1)):
        for j, k2 in enumerate(range(-B, B + 1)):
            t[i, j] = rho[k1 - k2]
    return t


def brute_force_circulant(v):
    n = v.size
    c = np.empty((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            c[i, j] = v[(i - j) % n]
    return c


def isolated_gap_ok(rho, rel_tol=1e-6):
    lam = np.sort(np.linalg.eigvalsh(circulant_matrix(circulant_project(rho).v_opt)))
    diffs = np.abs(lam[:, None] - lam[None, :])
    np.fill_diagonal(diffs, np.inf)
    spread = max(lam.max() - lam.min(), 1e-30)
    return diffs.min(axis=1).max() > rel_tol * spread


class TestCirculantProjection:
    def test_compatible_coefficients_are_fixed_point(self):
        rho = make_experiment_distribution(3, np.random.default_rng(0))
        ca = circulant_project(rho)
        assert ca.s_b < 1e-15
        # the projection returns the positive-frequency coefficients unchanged
        assert ca.v_opt[0] == rho[0]
        assert np.abs(ca.v_opt[1:] - rho.positive_coeffs).max() < 1e-14

    def test_uniform(self):
        ca = circulant_project(RotationDistribution.uniform(2))
        expected = np.zeros(5, dtype=complex)
        expected[0] = UNIFORM_DENSITY
        assert np.array_equal(ca.v_opt, expected)
        assert ca.s_b == 0.0

    def test_b1_closed_form_and_brute_force(self):
        rng = np.random.default_rng(1)
        a = 0.04 * np.exp(1j * 0.9)
        b = 0.03 * np.exp(-1j * 0.4)
        rho = RotationDistribution.from_positive(1, np.array([a, b]))
        ca = circulant_project(rho)
        closed = (4.0 / 3.0) * abs(a - np.conj(b)) ** 2
        assert ca.s_b == pytest.approx(closed, rel=1e-12)
        t = brute_force_toeplitz(rho)
        c = brute_force_circulant(ca.v_opt)
        assert np.linalg.norm(t - c, "fro") ** 2 == pytest.approx(ca.s_b, rel=1e-12, abs=1e-18)

    def test_frobenius_identity_random(self):
        for seed in range(20):
            rho = random_rho(3, np.random.default_rng(seed))
            ca = circulant_project(rho)
            t = brute_force_toeplitz(rho)
            c = brute_force_circulant(ca.v_opt)
            assert np.linalg.norm(t - c, "fro") ** 2 == pytest.approx(ca.s_b, rel=1e-12, abs=1e-18)

    def test_minimality_against_perturbed_columns(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            rho = random_rho(2, rng)
            ca = circulant_project(rho)
            t = toeplitz_matrix(rho)
            base = np.linalg.norm(t - circulant_matrix(ca.v_opt), "fro")
            v = ca.v_opt + 1e-3 * (rng.standard_normal(5) + 1j * rng.standard_normal(5))
            assert np.linalg.norm(t - circulant_matrix(v), "fro") >= base


class TestSpectralRecovery1D:
    def test_exact_recovery_compatible_rho(self):
        for seed in range(10):
            rng = np.random.default_rng((50, seed))
            B = 10
            x = random_signal_1d(B, rng)
            rho = make_experiment_distribution(B, rng)
            if not isolated_gap_ok(rho):
                continue
            m = population_moments_1d(x, rho, sigma=0.4)
            rec, report = spectral_recover_1d(m)
            assert recovery_error(rec.signal_est, x).relative_error < 1e-8
            est = rho_truncation(rec.rho_est, B)
            truth = rho_truncation(rho, B)
            assert recovery_error(est, truth).relative_error < 1e-8

    def test_rank_one_point_mass(self):
        # rho[k] = 1/(2*pi) everywhere: M2 - sigma^2 I = x x^H, and the
        # conjugated matrix is the rank-one phase outer product.
        rng = np.random.default_rng(3)
        B = 4
        x = random_signal_1d(B, rng)
        rho = RotationDistribution.from_positive(B, np.full(2 * B, UNIFORM_DENSITY, dtype=complex))
        m = population_moments_1d(x, rho, sigma=0.7)
        rec, report = spectral_recover_1d(m)
        assert report.eigenvalues[0] == pytest.approx(2 * B + 1, rel=1e-12)
        assert np.abs(report.eigenvalues[1:]).max() < 1e-10
        assert recovery_error(rec.signal_est, x).relative_error < 1e-10

    def test_error_within_bound_for_perturbed_rho(self):
        rng = np.random.default_rng(4)
        B = 10
        x = random_signal_1d(B, rng)
        rho = perturb_distribution(make_experiment_distribution(B, rng), 0.05)
        m = population_moments_1d(x, rho, sigma=0.0)
        rec, _ = spectral_recover_1d(m)
        report = davis_kahan_bound_1d(x, rho, recovery=rec)
        if report.all_conditions_met():
            abs_err = recovery_error(rec.signal_est, x).relative_error * float(
                np.vdot(x.coeffs, x.coeffs).real
            )
            assert abs_err <= report.bound

    def test_conjugate_flip_symmetry(self):
        rng = np.random.default_rng(5)
        B = 6
        x = random_signal_1d(B, rng)
        rho = perturb_distribution(make_experiment_distribution(B, rng), 0.08)
        rec, _ = spectral_recover_1d(population_moments_1d(x, rho, 0.2))
        xt = rec.diagnostics["x_tilde"]
        assert np.abs(xt - xt[::-1].conj()).max() < 1e-10

    def test_spectrum_matches_toeplitz(self):
        rng = np.random.default_rng(6)
        B = 5
        x = random_signal_1d(B, rng)
        rho = perturb_distribution(make_experiment_distribution(B, rng), 0.03)
        _, report = spectral_recover_1d(population_moments_1d(x, rho, 0.3))
        lam_t = np.sort(np.linalg.eigvalsh(toeplitz_matrix(rho)))[::-1]
        assert np.abs(report.eigenvalues - 2 * np.pi * lam_t).max() < 1e-10

    def test_nonpositive_power_spectrum_raises(self):
        m1 = np.ones(3, dtype=complex)
        m2 = np.diag([1.0, 0.5, 1.0]).astype(complex)
        m = MomentPair(m1, m2, sigma=1.0, debiased=False)  # debias drives diag negative
        with pytest.raises(MomentConsistencyError):
            spectral_recover_1d(m)


class TestDavisKahan1D:
    def test_zero_distance_zero_bound(self):
        rng = np.random.default_rng(7)
        x = random_signal_1d(4, rng)
        rho = make_experiment_distribution(4, rng)
        report = davis_kahan_bound_1d(x, rho)
        assert report.s_b < 1e-15
        assert report.bound == 0.0

    def test_boundary_algebra(self):
        # At s_b == delta^2 the square root vanishes and the bound saturates.
        assert bound_value(0.25, 0.5, 2.0, 21.0) == pytest.approx(2 * 21 * 2.0)
        assert bound_value(0.26, 0.5, 2.0, 21.0) is None
        assert bound_value(0.0, 0.0, 2.0, 21.0) == 0.0

    def test_bound_tracks_perturbation_sweep(self):
        rng = np.random.default_rng(8)
        B = 10
        x = random_signal_1d(B, rng)
        base = make_experiment_distribution(B, rng)
        norm_sq = float(np.vdot(x.coeffs, x.coeffs).real)
        errors, bounds, sbs = [], [], []
        for eta in np.logspace(-3, -1, 8):
            rho = perturb_distribution(base, eta)
            rec, _ = spectral_recover_1d(population_moments_1d(x, rho, 0.0))
            report = davis_kahan_bound_1d(x, rho, recovery=rec)
            if not report.all_conditions_met():
                continue
            errors.append(recovery_error(rec.signal_est, x).relative_error * norm_sq)
            bounds.append(report.bound)
            sbs.append(report.s_b)
        assert len(bounds) >= 5
        assert all(e <= b for e, b in zip(errors, bounds))
        assert all(b1 <= b2 for b1, b2 in zip(bounds, bounds[1:]))


class TestSpectralRecovery2D:
    def test_exact_recovery_b10_q2(self):
        B, Q = 10, 2
        for seed in range(20):
            rng = np.random.default_rng((90, seed))
            img = make_experiment_signal_2d(B, Q, rng)
            rho = make_experiment_distribution(B, rng)
            if isolated_gap_ok(rho):
                break
        else:
            raise AssertionError("no draw with an isolated gap in 20 attempts")
        m = population_moments_2d(img, rho, sigma=0.5)
        rec, report = spectral_recover_2d(m, (B, np.full(B + 1, Q)))
        assert recovery_error(rec.signal_est, img).relative_error < 1e-8
        est = rho_truncation(rec.rho_est, B)
        truth = rho_truncation(rho, B)
        assert recovery_error(est, truth).relative_error < 1e-8

    def test_q1_identical_to_1d(self):
        rng = np.random.default_rng(10)
        B = 5
        x = random_signal_1d(B, rng)
        rho = make_experiment_distribution(B, rng)
        m = population_moments_1d(x, rho, 0.2)
        rec1, rep1 = spectral_recover_1d(m)
        rec2, rep2 = spectral_recover_2d(m, (B, np.ones(B + 1, dtype=np.int64)))
        assert np.array_equal(rec1.signal_est.coeffs, rec2.signal_est.coeffs)
        assert np.array_equal(rec1.rho_est.coeffs, rec2.rho_est.coeffs)
        assert rep1.kappa == rep2.kappa

    def test_rank_at_most_2b_plus_1(self):
        rng = np.random.default_rng(11)
        B, Q = 3, 3
        img = random_image(B, Q, rng)
        rho = random_rho(B, rng)
        m = debias(population_moments_2d(img, rho, 0.3))
        p = np.sqrt(np.diag(m.M2).real)
        mat = m.M2 / np.outer(p, p)
        lam = np.linalg.eigvalsh(mat)
        above = (np.abs(lam) > 1e-8 * np.abs(lam).max()).sum()
        assert above <= 2 * B + 1

    def test_conjugate_flip_symmetry_2d(self):
        # x_tilde[k, q] == conj(x_tilde[-k, q]) for the anchored eigenvector.
        rng = np.random.default_rng(18)
        B, Q = 4, 2
        img = random_image(B, Q, rng)
        rho = perturb_distribution(make_experiment_distribution(B, rng), 0.04)
        rec, _ = spectral_recover_2d(population_moments_2d(img, rho, 0.2), (B, np.full(B + 1, Q)))
        xt = rec.diagnostics["x_tilde"]
        for k in range(1, B + 1):
            for q in range(Q):
                i = img.block_start(k) + q
                j = img.block_start(-k) + q
                assert abs(xt[j] - np.conj(xt[i])) < 1e-10

    def test_nonuniform_q_rejected(self):
        rng = np.random.default_rng(12)
        qk = np.array([2, 2, 1])
        with pytest.raises(ValueError):
            spectral_recover_2d(
                MomentPair(np.ones(8, dtype=complex), np.eye(8, dtype=complex), 0.0, True),
                (2, qk),
            )


class TestDavisKahan2D:
    def test_q1_reduces_to_1d(self):
        rng = np.random.default_rng(13)
        B = 4
        x = random_signal_1d(B, rng)
        img = FBImage(B, np.ones(B + 1, dtype=np.int64), x.coeffs, is_real=True)
        rho = perturb_distribution(make_experiment_distribution(B, rng), 0.05)
        r1 = davis_kahan_bound_1d(x, rho)
        r2 = davis_kahan_bound_2d(img, rho)
        assert r1.delta_kappa == pytest.approx(r2.delta_kappa, rel=1e-12)
        assert r1.s_b == r2.s_b
        assert r1.bound == pytest.approx(r2.bound, rel=1e-12)

    def test_zero_distance_zero_bound(self):
        rng = np.random.default_rng(14)
        img = make_experiment_signal_2d(3, 2, rng)
        rho = make_experiment_distribution(3, rng)
        assert davis_kahan_bound_2d(img, rho).bound == 0.0

    def test_block_frobenius_identity(self):
        # || T_blocks - C_blocks ||_F^2 == Q^2 * s_b, by explicit construction.
        for B in (1, 2, 3):
            for Q in (1, 2, 3):
                rng = np.random.default_rng((B, Q))
                rho = random_rho(B, rng)
                ca = circulant_project(rho)
                n = 2 * B + 1
                t_big = np.zeros((n * Q, n * Q), dtype=complex)
                c_big = np.zeros((n * Q, n * Q), dtype=complex)
                for i, k1 in enumerate(range(-B, B + 1)):
                    for j, k2 in enumerate(range(-B, B + 1)):
                        t_big[i * Q : (i + 1) * Q, j * Q : (j + 1) * Q] = rho[k1 - k2]
                        c_big[i * Q : (i + 1) * Q, j * Q : (j + 1) * Q] = ca.v_opt[(i - j) % n]
                dist = np.linalg.norm(t_big - c_big, "fro") ** 2
                assert dist == pytest.approx(Q**2 * ca.s_b, rel=1e-12, abs=1e-18)


class TestMinBoundOverRotations:
    def test_periodicity(self):
        rng = np.random.default_rng(15)
        x = random_signal_1d(3, rng)
        rho = perturb_distribution(make_experiment_distribution(3, rng), 0.05)
        r0 = davis_kahan_bound_1d(x, rotate_distribution(rho, 0.0))
        r2pi = davis_kahan_bound_1d(x, rotate_distribution(rho, 2 * np.pi))
        assert r0.bound == pytest.approx(r2pi.bound, rel=1e-10)
        assert np.allclose(r0.eigenvalues_circ, r2pi.eigenvalues_circ, atol=1e-12)

    def test_grid_size_one_is_identity(self):
        rng = np.random.default_rng(16)
        x = random_signal_1d(3, rng)
        rho = perturb_distribution(make_experiment_distribution(3, rng), 0.05)
        angle, report = min_bound_over_rotations(x, rho, 1)
        direct = davis_kahan_bound_1d(x, rho)
        assert angle == 0.0
        assert report.bound == direct.bound

    def test_minimised_bound_still_dominates(self):
        rng = np.random.default_rng(17)
        B, Q = 10, 2
        img = make_experiment_signal_2d(B, Q, rng)
        base = make_experiment_distribution(B, rng)
        norm_sq = float(np.vdot(img.coeffs, img.coeffs).real)
        gaps = []
        for eta in (0.003, 0.01, 0.05):
            rho = perturb_distribution(base, eta)
            rec, _ = spectral_recover_2d(population_moments_2d(img, rho, 0.0), (B, np.full(B + 1, Q)))
            _, report = min_bound_over_rotations(img, rho, 90, recovery=rec)
            if report.bound is None:
                continue
            abs_err = recovery_error(rec.signal_est, img).relative_error * norm_sq
            assert abs_err <= report.bound
            gaps.append(report.bound - abs_err)
        assert gaps and all(g > 0 for g in gaps)
