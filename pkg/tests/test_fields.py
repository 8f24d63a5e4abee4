import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vortexnoise.fields import (
    ConfigurationError,
    GridField,
    SpectralField,
    enforce_reality,
    evaluate_modes,
    grid_points,
    half_space_mask,
    leray_project,
    make_mollifier,
    theta_hat_scaled,
    to_grid,
    to_spectral,
    wavevectors,
)

# Frozen by tests/oracles.py (midpoint tensor grids, no shared code with the package).
THETA_HAT_1_2D = 0.9362481097242891   # 2048^2 grid
THETA_HAT_1_3D = 0.9453532966525628   # 384^3 grid


def random_field(d, k_max, seed, solenoidal=True):
    rng = np.random.default_rng(seed)
    shape = (d,) + (2 * k_max + 1,) * d
    raw = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    f = SpectralField.from_half(d, k_max, raw)
    return leray_project(f) if solenoidal else f


class TestMollifier:
    @pytest.mark.parametrize("d", [2, 3])
    def test_unit_mass_by_quadrature(self, d):
        m = make_mollifier(d=d)
        rho = np.linspace(0, 1, 200_001)
        sphere = 2 * np.pi if d == 2 else 4 * np.pi
        vals = m.theta(np.stack([rho] + [np.zeros_like(rho)] * (d - 1), axis=-1))
        mass = np.trapezoid(sphere * vals * rho ** (d - 1), rho)
        assert abs(mass - 1.0) < 1e-10

    def test_positive_and_supported(self, m2):
        x = np.random.default_rng(0).uniform(-1.5, 1.5, (10_000, 2))
        v = m2.theta(x)
        assert np.all(v >= 0)
        assert np.all(v[np.linalg.norm(x, axis=1) >= 1] == 0)

    def test_theta_hat_zero_is_one(self, m2, m3):
        assert m2.theta_hat(0.0) == 1.0
        assert m3.theta_hat(0.0) == 1.0

    def test_theta_hat_one_matches_tensor_grid_2d(self, m2):
        assert abs(float(m2.theta_hat(1.0)) - THETA_HAT_1_2D) < 1e-9

    def test_theta_hat_one_matches_tensor_grid_3d(self, m3):
        assert abs(float(m3.theta_hat(1.0)) - THETA_HAT_1_3D) < 1e-9

    def test_scaled_value_at_node_is_exact(self, m2):
        r = m2.r_nodes[1234]
        assert m2.theta_hat(r) == m2.values[1234]

    def test_scaled_lookup(self, m2):
        assert abs(theta_hat_scaled(m2, 0.25, (4, 0)) - THETA_HAT_1_2D) < 1e-9
        assert theta_hat_scaled(m2, 0.0, (3, 5)) == 1.0

    def test_fast_decay_bounded_on_table(self, m2, m3):
        for m in (m2, m3):
            r = m.r_nodes
            assert np.max(np.abs(m.values) * r ** 8) < 1e12

    def test_out_of_range_counts_and_zeroes(self):
        m = make_mollifier(d=2, r_max=64.0)
        before = m.out_of_range_count
        assert m.theta_hat(100.0) == 0.0
        assert m.out_of_range_count == before + 1

    def test_rejects_coarse_quadrature(self):
        with pytest.raises(ConfigurationError):
            make_mollifier(quadrature_points=128)

    def test_rejects_unknown_profile(self):
        with pytest.raises(ConfigurationError):
            make_mollifier("polynomial_bump")

    def test_energy_integral_matches_quadrature(self, m2):
        from scipy import integrate

        val, _ = integrate.quad(lambda r: float(m2.theta_hat(r)) ** 2, 0, 5, limit=200)
        assert abs(m2.energy_integral(0.0, 5.0) - val) < 1e-8 * val


class TestSpectralField:
    def test_zero_field(self):
        f = SpectralField.zeros(2, 4)
        assert f.norm_sq() == 0.0
        assert np.all(to_grid(f, 10).values == 0)

    def test_coefficients_read_only(self):
        f = random_field(2, 3, 0)
        with pytest.raises(ValueError):
            f.coeffs[0, 0, 0] = 1.0

    def test_leray_kills_parallel(self):
        k = wavevectors(2, 3).astype(float)
        f = SpectralField.from_half(2, 3, k.astype(complex))
        assert np.max(np.abs(leray_project(f).coeffs)) < 1e-15

    def test_leray_keeps_orthogonal(self):
        k = wavevectors(2, 3).astype(float)
        perp = np.stack([k[1], -k[0]]).astype(complex)
        f = SpectralField.from_half(2, 3, perp)
        assert np.allclose(leray_project(f).coeffs, f.coeffs, atol=1e-15)

    @settings(max_examples=25, deadline=None)
    @given(d=st.sampled_from([2, 3]), k_max=st.integers(1, 4), seed=st.integers(0, 2 ** 32 - 1))
    def test_invariants_after_projection(self, d, k_max, seed):
        f = random_field(d, k_max, seed)
        assert f.divergence_defect() < 1e-12
        assert f.reality_defect() == 0.0
        assert np.all(f.mean() == 0)

    @settings(max_examples=25, deadline=None)
    @given(d=st.sampled_from([2, 3]), k_max=st.integers(1, 4), seed=st.integers(0, 2 ** 32 - 1))
    def test_round_trip(self, d, k_max, seed):
        f = random_field(d, k_max, seed)
        n = 2 * k_max + 2
        back = to_spectral(to_grid(f, n), k_max, divergence_free=True)
        assert np.max(np.abs(back.coeffs - f.coeffs)) < 1e-10
        assert back.reality_defect() < 1e-12

    def test_grid_round_trip_at_half_minus_one(self):
        n = 12
        f = random_field(2, n // 2 - 1, 1)
        g = to_grid(f, n)
        g2 = to_grid(to_spectral(g, n // 2 - 1), n)
        assert np.max(np.abs(g2.values - g.values)) < 1e-10

    def test_single_mode(self):
        c = np.zeros((2, 5, 5), complex)
        c[1, 2 + 1, 2] = 0.5
        f = SpectralField.from_half(2, 2, c)
        g = to_grid(f, 8)
        x = grid_points(2, 8)
        assert np.allclose(g.values[1], np.cos(x[0]), atol=1e-14)

    def test_grid_matches_direct_summation(self):
        f = random_field(2, 5, 7)
        n = 16
        g = to_grid(f, n)
        rng = np.random.default_rng(0)
        idx = rng.integers(0, n, (8, 2))
        pts = 2 * np.pi * idx / n
        direct = f.evaluate(pts)
        assert np.max(np.abs(direct - g.values[:, idx[:, 0], idx[:, 1]].T)) < 1e-10

    @pytest.mark.parametrize("d", [2, 3])
    def test_parseval(self, d):
        f = random_field(d, 3, 11)
        g = to_grid(f, 8)
        assert abs(g.norm_sq() - f.norm_sq()) < 1e-8 * f.norm_sq()

    def test_aliasing_rejected(self):
        f = random_field(2, 4, 0)
        with pytest.raises(ConfigurationError):
            to_grid(f, 9)
        with pytest.raises(ConfigurationError):
            to_spectral(GridField(2, 8, np.zeros((2, 8, 8))), 4)

    def test_evaluate_modes_batches(self):
        fs = [random_field(2, 3, s) for s in range(3)]
        pts = np.array([[0.1, 0.2], [1.0, 3.0]])
        batch = evaluate_modes(np.stack([f.coeffs for f in fs]), pts)
        for b, f in enumerate(fs):
            assert np.allclose(batch[b], f.evaluate(pts))

    @given(seed=st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_enforce_reality_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        c = rng.standard_normal((3, 5, 5, 5)) + 1j * rng.standard_normal((3, 5, 5, 5))
        once = enforce_reality(c, 3)
        assert np.array_equal(enforce_reality(once, 3), once)

    def test_half_space_counts(self):
        for d, k in [(2, 3), (3, 2)]:
            assert half_space_mask(d, k).sum() == ((2 * k + 1) ** d - 1) // 2
