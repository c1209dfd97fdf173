import numpy as np
import pytest
from scipy.integrate import quad

from turbidps.errors import TableFormatError
from turbidps.tables import (SIN_ANGLE_FLOOR, V_MAX, build_table_f,
                             build_table_g, load_tables, lookup_f, lookup_g,
                             save_tables, scattered_path_factor,
                             scattered_radiance_profile)


def f_integral(u, v):
    """Independent adaptive-quadrature oracle for the F integrand."""
    val, _ = quad(lambda xi: np.exp(-u * np.tan(xi)), 0.0, v, limit=200)
    return val


def g_bracket(t, gamma_prime):
    """Bounded bracket of the hemispherical integrand, by quadrature."""
    u = t * np.sin(gamma_prime)
    return f_integral(u, V_MAX) - f_integral(u, gamma_prime / 2)


def g_integrand(t, gamma_prime):
    """Raw hemispherical integrand factor (table-free)."""
    s = max(np.sin(gamma_prime), SIN_ANGLE_FLOOR)
    return np.exp(-t * np.cos(gamma_prime)) / s * g_bracket(t, gamma_prime)


def g_monte_carlo(t, mu, n=1_000_000, seed=11):
    """Uniform hemisphere Monte Carlo oracle for one G entry.

    Only the smooth bracket is interpolated from a precomputed curve; the
    singular 1/sin factor is evaluated exactly per sample, else samples
    falling near the source direction would inherit the clamp value.
    """
    rng = np.random.default_rng(seed)
    ct = rng.random(n)
    phi = rng.random(n) * 2 * np.pi
    st = np.sqrt(1 - ct ** 2)
    sl = np.sqrt(max(0.0, 1 - mu * mu))
    cos_gp = sl * st * np.cos(phi) + mu * ct
    gp = np.arccos(np.clip(cos_gp, -1, 1))
    grid = np.linspace(0, np.pi, 4001)
    brackets = np.array([g_bracket(t, g) for g in grid])
    samples = np.exp(-t * np.cos(gp)) \
        / np.maximum(np.sin(gp), SIN_ANGLE_FLOOR) \
        * np.interp(gp, grid, brackets) * ct
    return samples.mean() * 2 * np.pi


class TestTableF:
    def test_zero_interval(self, table_f):
        for u in (0.0, 0.7, 4.2, 10.0):
            assert lookup_f(table_f, u, 0.0) == 0.0

    def test_u_zero_identity(self, table_f):
        for v in (0.1, 0.7, 1.3, 1.5):
            assert lookup_f(table_f, 0.0, v) == pytest.approx(v, abs=1e-9)

    def test_frozen_quadrature_value(self, table_f):
        # adaptive-quadrature oracle value, frozen
        assert lookup_f(table_f, 1.0, np.pi / 4) == pytest.approx(
            0.52479714326027049, rel=1e-6)
        assert lookup_f(table_f, 2.5, 1.2) == pytest.approx(
            0.33743475805439047, rel=1e-5)

    def test_node_identity(self, table_f):
        idx = [(0, 0), (5, 9), (700, 1023), (1023, 512)]
        for i, j in idx:
            assert lookup_f(table_f, table_f.u_grid[i], table_f.v_grid[j]) \
                == table_f.values[i, j]

    def test_monotone_in_v(self, table_f):
        vs = np.linspace(0, V_MAX, 500)
        out = lookup_f(table_f, np.full_like(vs, 0.5), vs)
        assert np.all(np.diff(out) >= -1e-15)

    def test_invariants_on_grid(self, table_f):
        vals = table_f.values
        assert np.all(vals[:, 0] == 0.0)
        assert np.all(np.diff(vals, axis=1) >= -1e-15)   # rows rise with v
        assert np.all(np.diff(vals[:, 1:], axis=0) <= 1e-15)  # columns fall with u

    def test_random_sweep_against_quadrature(self, table_f):
        rng = np.random.default_rng(42)
        us = rng.uniform(0, 10, 1000)
        vs = rng.uniform(0, np.pi / 2 - 1e-3, 1000)
        got = lookup_f(table_f, us, vs)
        for u, v, g in zip(us, vs, got):
            ref = f_integral(u, v)
            assert abs(g - ref) <= max(1e-3 * abs(ref), 1e-6)

    def test_domain_errors(self, table_f):
        with pytest.raises(ValueError):
            lookup_f(table_f, -0.1, 0.5)
        with pytest.raises(ValueError):
            lookup_f(table_f, 1.0, np.pi / 2)
        with pytest.raises(ValueError):
            lookup_f(table_f, 1.0, -0.01)

    def test_u_above_max_clamps(self, table_f):
        assert lookup_f(table_f, 25.0, 1.0) == lookup_f(table_f, 10.0, 1.0)

    def test_build_validation(self):
        with pytest.raises(ValueError):
            build_table_f(1, 16)
        with pytest.raises(ValueError):
            build_table_f(16, 16, u_max=-1.0)


class TestScatteredPath:
    def test_matches_direct_quadrature(self, table_f, medium):
        rng = np.random.default_rng(3)
        for _ in range(50):
            d_sv = rng.uniform(20, 1000)
            gamma = rng.uniform(np.deg2rad(5), np.deg2rad(175))
            d_end = rng.uniform(10, 1000)
            got = scattered_path_factor(table_f, medium, d_sv, gamma, d_end)

            def integrand(x):
                d = np.sqrt(d_sv ** 2 + x ** 2 - 2 * d_sv * x * np.cos(gamma))
                return medium.scattering / (4 * np.pi) / d ** 2 \
                    * np.exp(-medium.extinction * (x + d))
            ref, _ = quad(integrand, 0.0, d_end, limit=400)
            assert got == pytest.approx(ref, rel=1e-3, abs=1e-14)

    def test_zero_cases(self, table_f, medium):
        from turbidps.scene import Medium
        vacuum = Medium.from_coefficients(0.2, 0.0)
        assert scattered_path_factor(table_f, vacuum, 100.0, 1.0, 50.0) == 0.0
        assert scattered_path_factor(table_f, medium, 100.0, 1.0, 0.0) \
            == pytest.approx(0.0, abs=1e-15)


class TestTableG:
    def test_nonnegative_for_positive_mu(self, table_g):
        pos = table_g.mu_grid >= 0
        assert np.all(table_g.values[:, pos] >= 0)
        assert np.all(np.isfinite(table_g.values))

    def test_node_identity(self, table_g):
        for i, j in [(0, 0), (40, 200), (255, 255)]:
            assert lookup_g(table_g, table_g.t_grid[i], table_g.mu_grid[j]) \
                == table_g.values[i, j]

    def test_against_monte_carlo(self, table_g, table_f):
        # hemispheric Monte Carlo oracle, 1e6 samples, 1% agreement
        cases = [(0.1, 1.0), (0.6, 1.0), (0.6, 0.5), (2.0, 1.0),
                 (2.0, 0.3), (5.0, 0.1), (0.3, 0.8)]
        for t, mu in cases:
            ref = g_monte_carlo(t, mu)
            got = lookup_g(table_g, t, mu)
            assert got == pytest.approx(ref, rel=1e-2), (t, mu)

    def test_azimuthal_discretization_agreement(self, table_f):
        a = build_table_g(24, 24, table_f, azimuth_samples=96)
        b = build_table_g(24, 24, table_f, azimuth_samples=170)
        scale = np.abs(a.values).max()
        assert np.allclose(a.values, b.values, rtol=2e-3, atol=2e-3 * scale)

    def test_mid_cell_against_direct_integral(self, table_g, table_f):
        # direct product-quadrature of the hemispheric integral, rotated
        # frame with analytic azimuth (independent of the build path)
        from numpy.polynomial.legendre import leggauss

        def g_direct(t, mu):
            xg, wg = leggauss(64)
            edges = np.linspace(0, np.pi, 33)
            gp = np.concatenate([0.5 * (a + b) + 0.5 * (b - a) * xg
                                 for a, b in zip(edges[:-1], edges[1:])])
            w = np.concatenate([0.5 * (b - a) * wg
                                for a, b in zip(edges[:-1], edges[1:])])
            sl = np.sqrt(max(0.0, 1 - mu * mu))
            prof = np.array([g_integrand(t, g) for g in gp]) \
                * np.maximum(np.sin(gp), SIN_ANGLE_FLOOR)
            if sl < 1e-12:
                psimax = np.where(gp <= np.pi / 2, np.pi, 0.0)
            else:
                arg = np.clip(-mu / np.tan(gp) / sl, -1, 1)
                psimax = np.arccos(arg)
            inner = 2 * psimax * mu * np.cos(gp) \
                + 2 * sl * np.sin(gp) * np.sin(psimax)
            return float((prof * inner * w).sum())

        rng = np.random.default_rng(8)
        for _ in range(5):
            t = rng.uniform(0.1, 5.0)
            mu = rng.uniform(0.1, 1.0)
            assert lookup_g(table_g, t, mu) == pytest.approx(
                g_direct(t, mu), rel=1e-2)

    def test_t_clamping(self, table_g):
        assert lookup_g(table_g, 1e-6, 0.5) == lookup_g(table_g,
                                                        table_g.t_grid[0], 0.5)
        assert lookup_g(table_g, 100.0, 0.5) == lookup_g(table_g,
                                                         table_g.t_grid[-1], 0.5)

    def test_mu_domain(self, table_g):
        with pytest.raises(ValueError):
            lookup_g(table_g, 1.0, 1.5)

    def test_profile_positive(self, table_f):
        angles = np.linspace(1e-4, np.pi - 1e-4, 100)
        prof = scattered_radiance_profile(table_f, 1.0, angles)
        assert np.all(prof >= 0)
        assert np.all(np.isfinite(prof))


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path, table_f):
        small_g = build_table_g(16, 16, table_f)
        path = tmp_path / "tables.bin"
        save_tables(path, table_f, small_g)
        f2, g2 = load_tables(path)
        assert np.array_equal(f2.values, table_f.values)
        assert np.array_equal(f2.u_grid, table_f.u_grid)
        assert np.array_equal(f2.v_grid, table_f.v_grid)
        assert np.array_equal(g2.values, small_g.values)
        assert np.array_equal(g2.t_grid, small_g.t_grid)

    def test_truncated_file(self, tmp_path, table_f):
        small_g = build_table_g(8, 8, table_f)
        path = tmp_path / "tables.bin"
        save_tables(path, table_f, small_g)
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) - 100])
        with pytest.raises(TableFormatError, match="truncated"):
            load_tables(path)

    def test_version_mismatch(self, tmp_path, table_f):
        small_g = build_table_g(8, 8, table_f)
        path = tmp_path / "tables.bin"
        save_tables(path, table_f, small_g)
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(TableFormatError, match="version"):
            load_tables(path)

    def test_not_a_table_file(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"garbage")
        with pytest.raises(TableFormatError):
            load_tables(path)
