import csv
import math

import numpy as np
import pytest
from scipy import stats

from vortexnoise.covariance import vortex_spectrum
from vortexnoise.fields import ConfigurationError, evaluate_modes
from vortexnoise.jump_process import (
    JumpKernel,
    ScalingParams,
    compound_poisson_kurtosis,
    covariance_check,
    gaussianity_check,
    increment_correlation,
    jump_moment,
    max_jump_stat,
    scalar_samples,
    simulate_ensemble,
    simulate_wn,
    tail_bound,
    tail_probability,
    write_paths_csv,
)
from vortexnoise.structures import StructureLaw, draw_many, filament_coeffs, vortex_coeffs

PROBES = np.array([[0.3, 1.1], [2.0, 4.0]])


class TestParams:
    def test_rate_and_amplitude(self):
        sp = ScalingParams(N=8, lam=0.5, T=2.0)
        assert sp.rate == 32.0 and sp.amplitude == 0.125

    @pytest.mark.parametrize("kw", [dict(N=0), dict(N=1.5), dict(lam=0.0), dict(T=-1.0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            ScalingParams(**kw)

    def test_times_in_range(self, m2):
        with pytest.raises(ConfigurationError):
            simulate_wn(StructureLaw.point_vortex(0.2), ScalingParams(T=1.0), PROBES, [1.5],
                        0, m2, 4)


class TestKernel:
    @pytest.mark.parametrize("law", [StructureLaw.point_vortex(0.3, sigma=0.8),
                                     StructureLaw.power_law(2, beta=1.0, ell_max=0.5)])
    def test_2d_matches_field_evaluation(self, m2, law):
        draws = draw_many(law, np.random.default_rng(0), 6)
        vals, h = JumpKernel(law, m2, 6, PROBES).values(draws)
        coeffs = vortex_coeffs(m2, 6, draws["gamma"], draws["ell"], draws["x0"])
        assert np.allclose(vals, evaluate_modes(coeffs, PROBES), atol=1e-12)
        assert np.allclose(h ** 2, np.sum(np.abs(coeffs) ** 2, axis=(1, 2, 3)))

    def test_3d_matches_field_evaluation(self, m3):
        law = StructureLaw.filament(0.4, n_steps=50)
        draws = draw_many(law, np.random.default_rng(1), 3)
        probes = np.array([[0.1, 0.2, 0.3]])
        vals, _ = JumpKernel(law, m3, 2, probes).values(draws)
        c = filament_coeffs(m3, 2, draws["gamma"][1], draws["ell"][1], draws["x0"][1],
                            draws["increments"][1])
        assert np.allclose(vals[1], evaluate_modes(c[None], probes)[0])

    def test_probe_dimension(self, m2):
        with pytest.raises(ConfigurationError):
            JumpKernel(StructureLaw.point_vortex(0.2), m2, 4, [[0.0, 0.0, 0.0]])


class TestPaths:
    def test_final_value_is_sum_of_jumps(self, m2):
        sp = ScalingParams(N=3)
        p = simulate_wn(StructureLaw.point_vortex(0.2), sp, PROBES, [0.5, 1.0], 7, m2, 4)
        assert p.n_arrivals == p.jumps.shape[0]
        assert np.allclose(p.values[-1], p.jumps.sum(0))
        early = p.jumps[p.arrival_times <= 0.5].sum(0)
        assert np.allclose(p.values[0], early)

    def test_zero_time_is_zero(self, m2):
        p = simulate_wn(StructureLaw.point_vortex(0.2), ScalingParams(N=4), PROBES, [0.0], 1, m2, 4)
        assert np.all(p.values == 0)

    def test_reproducible(self, m2):
        args = (StructureLaw.point_vortex(0.2), ScalingParams(N=4), PROBES, [1.0], 3, m2, 4)
        a, b = simulate_wn(*args, path_index=5), simulate_wn(*args, path_index=5)
        assert a.values.tobytes() == b.values.tobytes()
        ens = simulate_ensemble(*args[:4], 3, 3, m2, 4, first_index=4)
        assert ens[1].values.tobytes() == a.values.tobytes()

    def test_poisson_counts(self, m2):
        sp = ScalingParams(N=4, lam=1.5)
        paths = simulate_ensemble(StructureLaw.point_vortex(0.2), sp, PROBES, [1.0], 2000, 2, m2, 2)
        n = np.array([p.n_arrivals for p in paths])
        assert abs(n.mean() - sp.rate) < 4 * math.sqrt(sp.rate / n.size)
        assert abs(n.var() / n.mean() - 1) < 0.15

    def test_max_jump_scales_inverse_n_for_point_mass(self, m2):
        law = StructureLaw.point_vortex(0.2)
        s = [max_jump_stat(simulate_ensemble(law, ScalingParams(N=N), PROBES, [1.0], 50, 0, m2, 4),
                           "h").median for N in (4, 8)]
        assert s[1] / s[0] == pytest.approx(0.5, rel=1e-9)

    def test_csv(self, m2, tmp_path):
        paths = simulate_ensemble(StructureLaw.point_vortex(0.2), ScalingParams(N=2), PROBES,
                                  [0.5, 1.0], 2, 0, m2, 3)
        rows = list(csv.reader(open(write_paths_csv(paths, PROBES, tmp_path / "p.csv"))))
        assert rows[0][:3] == ["path", "t", "probe"] and len(rows) == 1 + 2 * 2 * 2


@pytest.fixture(scope="module")
def ensemble(m2):
    law = StructureLaw.point_vortex(0.3)
    sp = ScalingParams(N=4)
    return law, sp, simulate_ensemble(law, sp, PROBES, [0.5, 1.0], 3000, 11, m2, 6)


class TestStatistics:
    def test_covariance(self, m2, ensemble):
        law, sp, paths = ensemble
        res = covariance_check(paths, vortex_spectrum(law, m2, 6), sp, PROBES, n_se=4)
        assert res.passed and res.checked.sum() >= 4

    def test_martingale_increments_uncorrelated(self, ensemble):
        _, _, paths = ensemble
        r, se = increment_correlation(paths, [1.0, 0.0], 0, 1)
        assert abs(r) < 4 * se

    def test_tail_bound_holds(self, m2, ensemble):
        law, sp, paths = ensemble
        m4 = jump_moment(law, m2, 6, PROBES, 4)
        for eps in (0.3, 0.5, 1.0):
            assert tail_probability(paths, eps) <= tail_bound(sp, m4, 4, eps) + 0.02

    def test_kurtosis_prediction(self, m2, ensemble):
        law, sp, paths = ensemble
        x = scalar_samples(paths, [1.0, 0.0])
        pred = compound_poisson_kurtosis(law, m2, 6, sp, PROBES[0], [1.0, 0.0])
        se = math.sqrt(24 / x.size) * (1 + pred)
        assert abs(stats.kurtosis(x) - pred) < 4 * se

    def test_second_moment_matches_spectrum(self, m2):
        law = StructureLaw.point_vortex(0.3)
        j2 = jump_moment(law, m2, 6, [[0.5, 0.5]], 2)
        # E|u(x)|^2 = trace Q(0) = (d-1) sum c_k
        assert j2 == pytest.approx(vortex_spectrum(law, m2, 6).energy(), rel=1e-12)

    def test_gaussianity_needs_paths(self, m2):
        with pytest.raises(ConfigurationError):
            gaussianity_check(StructureLaw.point_vortex(0.3), ScalingParams(N=4), [0, 0], [1, 0],
                              999, 0, m2, 4)

    def test_gaussianity_small_run(self, m2):
        rep = gaussianity_check(StructureLaw.point_vortex(0.3), ScalingParams(N=16), [0.0, 0.0],
                                [1.0, 1.0], 1000, 5, m2, 6)
        assert rep.ks_statistic < rep.ks_threshold
        assert abs(rep.skew) < 4 * rep.skew_stderr

    def test_empty_stat(self):
        with pytest.raises(ValueError):
            max_jump_stat([])
