import numpy as np
import pytest

from deqlab.concentration import (
    derive_seed,
    equilibrium_depth_decay,
    fresh_randomness_reconstruct,
    kernel_depth_decay,
    lambda0_vs_width,
    layer_iterates,
    tied_vs_population,
    write_report_csv,
    write_summary_csv,
)
from deqlab.data import gen_sphere_data
from deqlab.errors import AssumptionError, DegenerateInputError, InputError
from deqlab.kernel import kernel_recursion, rho
from deqlab.linalg import gram, spectral_norm
from deqlab.model import DeqParams, SolverConfig, init_params, solve_equilibrium


class TestDeriveSeed:
    def test_deterministic(self):
        assert derive_seed(1, 100, 3) == derive_seed(1, 100, 3)

    def test_components_matter(self):
        base = derive_seed(1, 100, 3)
        assert derive_seed(2, 100, 3) != base
        assert derive_seed(1, 200, 3) != base
        assert derive_seed(1, 100, 4) != base


class TestLayerIterates:
    def test_first_level_is_single_layer(self):
        p = init_params(12, 6, 0.08, seed=0)
        x = gen_sphere_data(4, 6, seed=0).x
        zs = layer_iterates(p, x, 3)
        np.testing.assert_array_equal(zs[0], np.maximum(p.u @ x, 0))
        assert len(zs) == 3

    def test_converges_to_equilibrium(self):
        p = init_params(20, 5, 0.08, seed=1)
        x = gen_sphere_data(5, 5, seed=1).x
        z_star = solve_equilibrium(p, x, SolverConfig(tol=1e-13)).z
        z_deep = layer_iterates(p, x, 200)[-1]
        assert np.abs(z_deep - z_star).max() <= 1e-10


class TestKernelDepthDecay:
    def test_strictly_decreasing_and_geometric(self):
        x = gen_sphere_data(8, 8, seed=5).x
        series = kernel_depth_decay(x, 0.08, 12)
        assert all(series[i + 1] < series[i] for i in range(1, 11))
        # Ratio approaches sigma_w^2; proof gives it as the asymptotic rate.
        for i in range(2, 8):
            assert series[i + 1] / series[i] <= 0.08 + 0.02

    def test_sigma_near_zero_collapses_to_first_layer(self):
        x = gen_sphere_data(5, 6, seed=6).x
        series = kernel_depth_decay(x, 1e-12, 4)
        assert series[0] <= 1e-9


class TestEquilibriumDepthDecay:
    def test_deep_iterate_reaches_solver_tolerance(self):
        p = init_params(60, 8, 0.08, seed=7)
        x = gen_sphere_data(8, 8, seed=7).x
        series = equilibrium_depth_decay(p, x, 80)
        assert series[-1] <= 1e-8

    def test_log_linear_tail_slope(self):
        # Eventually log-error drops at least as fast as log ||W||_2 per level.
        p = init_params(100, 8, 0.08, seed=8)
        x = gen_sphere_data(8, 8, seed=8).x
        series = np.array(equilibrium_depth_decay(p, x, 16))
        w_norm = spectral_norm(p.w)
        tail = np.log(series[5:12])
        slopes = np.diff(tail)
        assert np.max(slopes) <= np.log(w_norm) + 0.2

    def test_w_zero_first_layer_exact(self):
        p = init_params(15, 5, 0.08, seed=9)
        p0 = DeqParams(w=np.zeros_like(p.w), u=p.u, a=p.a, sigma_w2=p.sigma_w2)
        x = gen_sphere_data(4, 5, seed=9).x
        series = equilibrium_depth_decay(p0, x, 3)
        assert series[0] <= 1e-12


class TestTiedVsPopulation:
    def test_median_error_shrinks_with_width(self):
        x = gen_sphere_data(8, 8, seed=5).x
        report = tied_vs_population(x, 0.08, [50, 200, 800], l=4, trials=10,
                                    base_seed=9)
        meds = [np.median(report.errors_for(m=m)) for m in (50, 200, 800)]
        assert meds[0] / meds[1] >= 1.5
        assert meds[1] / meds[2] >= 1.5

    def test_single_input_concentrates_on_rho(self):
        x = np.full((9, 1), 1.0)
        x = x * (3.0 / np.linalg.norm(x))
        level = 5
        errs = {}
        for m in (100, 1600):
            report = tied_vs_population(x, 0.08, [m], l=level, trials=10,
                                        base_seed=4)
            errs[m] = np.median(report.errors_for(m=m))
        # error here is |G_11/m - rho^(l)|; larger width concentrates harder
        assert errs[1600] < errs[100]
        assert errs[1600] < 0.1 * rho(0.08, level)

    def test_deterministic(self):
        x = gen_sphere_data(4, 6, seed=10).x
        a = tied_vs_population(x, 0.08, [30], l=3, trials=5, base_seed=1)
        b = tied_vs_population(x, 0.08, [30], l=3, trials=5, base_seed=1)
        assert a.cells == b.cells

    def test_sigma_near_zero_matches_single_layer_baseline(self):
        # With sigma_w^2 ~ 0 the deep tied model is the classical
        # one-layer feature map; error statistics must coincide.
        x = gen_sphere_data(6, 8, seed=11).x
        sigma_w2 = 1e-12
        report = tied_vs_population(x, sigma_w2, [80], l=5, trials=6, base_seed=2)
        k1 = kernel_recursion(x, sigma_w2, 1).k
        for cell in report.cells:
            p = init_params(cell.m, 8, sigma_w2, cell.seed)
            z1 = np.maximum(p.u @ x, 0)
            baseline = float(np.linalg.norm(gram(z1) / cell.m - k1))
            assert cell.error == pytest.approx(baseline, abs=1e-5)

    def test_input_validation(self):
        x = gen_sphere_data(4, 6, seed=12).x
        with pytest.raises(InputError):
            tied_vs_population(x, 0.08, [], l=3, trials=5, base_seed=0)
        with pytest.raises(InputError):
            tied_vs_population(x, 0.08, [200, 100], l=3, trials=5, base_seed=0)


class TestLambda0VsWidth:
    def test_fraction_ge_half_reported(self):
        x = gen_sphere_data(8, 8, seed=5).x
        report = lambda0_vs_width(x, 0.08, [100, 400], trials=8, base_seed=11)
        fr = report.extra["fraction_ge_half"]
        assert set(fr) == {100, 400}
        assert fr[400] >= fr[100] - 0.25  # non-decreasing up to trial noise
        assert all(0.0 <= v <= 1.0 for v in fr.values())

    def test_ratio_recorded_per_trial(self):
        x = gen_sphere_data(5, 8, seed=13).x
        report = lambda0_vs_width(x, 0.08, [60], trials=4, base_seed=3)
        assert len(report.cells) == 4
        assert all(c.error >= 0 for c in report.cells)

    def test_degenerate_data_aborts(self):
        col = np.arange(1.0, 7.0)
        x = np.column_stack([col, col])  # parallel pair
        x = x * (np.sqrt(6) / np.linalg.norm(x, axis=0))
        with pytest.raises(AssumptionError, match="lambda_star"):
            lambda0_vs_width(x, 0.08, [50], trials=2, base_seed=0)

    def test_single_input_ratio_approaches_one(self):
        # n=1: lambda_0 = ||z||^2 concentrates at m rho_inf and lambda* is
        # exactly rho_inf, so the recorded ratio tends to 1 with width.
        x = np.full((9, 1), 1.0) * (3.0 / 3.0)
        x = x * (np.sqrt(9) / np.linalg.norm(x))
        report = lambda0_vs_width(x, 0.08, [1600], trials=10, base_seed=6)
        ratios = report.errors_for(m=1600)
        assert abs(np.median(ratios) - 1.0) < 0.1
        assert report.extra["lambda_star"] == pytest.approx(1 / 0.92, abs=1e-10)


class TestFreshRandomnessReconstruct:
    def test_exact_identities_at_scale(self):
        ds = gen_sphere_data(8, 16, seed=3)
        p = init_params(200, 16, 0.08, seed=4)
        for i, j in [(0, 1), (3, 6), (7, 2)]:
            id_err, ip_err = fresh_randomness_reconstruct(p, ds.x, i, j, l=3)
            assert id_err <= 1e-8 * p.m
            assert ip_err <= 1e-10

    def test_l_one_boundary(self):
        ds = gen_sphere_data(5, 8, seed=14)
        p = init_params(80, 8, 0.08, seed=15)
        id_err, ip_err = fresh_randomness_reconstruct(p, ds.x, 0, 3, l=1)
        assert id_err <= 1e-8 * p.m
        assert ip_err <= 1e-10

    def test_diagonal_pair(self):
        ds = gen_sphere_data(5, 8, seed=16)
        p = init_params(80, 8, 0.08, seed=17)
        id_err, ip_err = fresh_randomness_reconstruct(p, ds.x, 2, 2, l=3)
        assert id_err <= 1e-8 * p.m
        assert ip_err <= 1e-10

    def test_error_is_rounding_not_statistical(self):
        # The identity is algebraic: errors stay at rounding scale across
        # widths instead of shrinking like 1/sqrt(m).
        ds = gen_sphere_data(4, 8, seed=18)
        for m in (100, 1600):
            p = init_params(m, 8, 0.08, seed=19)
            id_err, ip_err = fresh_randomness_reconstruct(p, ds.x, 0, 1, l=2)
            assert id_err <= 1e-9 * m
            assert ip_err <= 1e-12

    def test_degenerate_history_raises(self):
        # Duplicate input columns make the layer histories coincide.
        col = np.arange(1.0, 9.0)
        x = np.column_stack([col, col])
        x = x * (np.sqrt(8) / np.linalg.norm(x, axis=0))
        p = init_params(50, 8, 0.08, seed=20)
        with pytest.raises(DegenerateInputError):
            fresh_randomness_reconstruct(p, x, 0, 1, l=3)

    def test_bad_indices(self):
        ds = gen_sphere_data(3, 8, seed=21)
        p = init_params(20, 8, 0.08, seed=22)
        with pytest.raises(InputError):
            fresh_randomness_reconstruct(p, ds.x, 0, 5, l=2)
        with pytest.raises(InputError):
            fresh_randomness_reconstruct(p, ds.x, 0, 1, l=0)


class TestReportCsv:
    def test_schema_and_determinism(self, tmp_path):
        x = gen_sphere_data(4, 6, seed=23).x
        report = tied_vs_population(x, 0.08, [30, 60], l=2, trials=3, base_seed=5)
        res, summ = tmp_path / "cells.csv", tmp_path / "summary.csv"
        write_report_csv(res, report)
        write_summary_csv(summ, report)
        lines = res.read_text().splitlines()
        assert lines[0] == "experiment,m,l,trial,seed,error"
        assert len(lines) == 1 + 6
        assert summ.read_text().splitlines()[0] == "experiment,m,l,trials,q1,median,q3"
        write_report_csv(tmp_path / "again.csv", report)
        assert (tmp_path / "again.csv").read_bytes() == res.read_bytes()
