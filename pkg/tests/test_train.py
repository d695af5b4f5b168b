import numpy as np
import pytest

from deqlab.data import Dataset, gen_sphere_data
from deqlab.errors import (
    ConvergenceError,
    InputError,
    TrainingAssertionError,
    WellPosednessError,
)
from deqlab.grad import gradients
from deqlab.linalg import gram, min_eig_sym
from deqlab.model import DeqParams, SolverConfig, init_params, predict, solve_equilibrium
from deqlab.train import (
    METRICS_HEADER,
    TrainConfig,
    auto_eta,
    monitors,
    train,
    write_metrics_csv,
)

TIGHT = SolverConfig(tol=1e-12)


def setup(m=30, n=12, d=8, seed=0):
    p = init_params(m, d, 0.08, seed=seed)
    ds = gen_sphere_data(n, d, seed=seed + 500)
    return p, ds


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(InputError):
            TrainConfig(eta=-1.0)
        with pytest.raises(InputError):
            TrainConfig(eta="fast")
        with pytest.raises(InputError):
            TrainConfig(steps=0)
        with pytest.raises(InputError):
            TrainConfig(assert_mode="explode")


class TestTrain:
    def test_stationary_point(self):
        # Labels equal to the initial predictions: gradients vanish and
        # the parameters never move.
        p, ds = setup(seed=1)
        sol = solve_equilibrium(p, ds.x, TIGHT)
        data = Dataset(x=ds.x, y=predict(p, sol.z), provenance="synthetic")
        cfg = TrainConfig(eta=1e-3, steps=5, solver=TIGHT)
        p_out, trace = train(p, data, cfg)
        assert np.array_equal(p_out.w, p.w)
        assert np.array_equal(p_out.u, p.u)
        assert np.array_equal(p_out.a, p.a)
        assert all(r.grad_norm_sq == 0.0 for r in trace.records)

    def test_single_step_matches_gradient_oracle(self):
        p, ds = setup(seed=2)
        eta = 1e-4
        cfg = TrainConfig(eta=eta, steps=1, solver=TIGHT, warm_start=False)
        p_out, trace = train(p, ds, cfg)
        sol = solve_equilibrium(p, ds.x, TIGHT)
        g = gradients(p, sol.z, ds.x, ds.y, TIGHT)
        np.testing.assert_allclose(p_out.w, p.w - eta * g.gw, atol=1e-14)
        np.testing.assert_allclose(p_out.u, p.u - eta * g.gu, atol=1e-14)
        np.testing.assert_allclose(p_out.a, p.a - eta * g.ga, atol=1e-14)

    def test_loss_decreases_under_auto_eta(self):
        p, ds = setup(seed=3)
        _, trace = train(p, ds, TrainConfig(eta="auto", steps=50))
        losses = trace.column("loss")
        assert losses[-1] < losses[0]
        assert np.all(losses[1:] <= losses[:-1] * (1 + 1e-10))

    def test_pl_floor_every_monitored_step(self):
        p, ds = setup(seed=4)
        _, trace = train(p, ds, TrainConfig(eta="auto", steps=40))
        for r in trace.records:
            assert r.grad_norm_sq >= 2 * r.lambda_tau * r.loss - 1e-8 * (1 + r.loss)

    def test_deterministic(self):
        p, ds = setup(seed=5)
        cfg = TrainConfig(eta="auto", steps=15)
        _, t1 = train(p, ds, cfg)
        _, t2 = train(p, ds, cfg)
        for a, b in zip(t1.records, t2.records):
            assert a == b

    def test_warm_start_agrees_with_cold(self):
        p, ds = setup(seed=6)
        cfg_w = TrainConfig(eta="auto", steps=12, solver=TIGHT, warm_start=True)
        cfg_c = TrainConfig(eta="auto", steps=12, solver=TIGHT, warm_start=False)
        _, tw = train(p, ds, cfg_w)
        _, tc = train(p, ds, cfg_c)
        np.testing.assert_allclose(tw.column("loss"), tc.column("loss"),
                                   rtol=1e-7, atol=1e-9)

    def test_monitor_cadence(self):
        p, ds = setup(seed=7)
        _, trace = train(p, ds, TrainConfig(eta="auto", steps=10, monitor_every=4))
        assert [r.step for r in trace.records] == [0, 4, 8, 10]

    def test_well_posedness_persists_under_half_eta_max(self):
        # Theorem-style guarantee, desk scale: eta at half the theoretical
        # bound never pushes ||W|| to 1 (the bound is tiny, so W barely moves).
        from deqlab.condition import check_condition, init_bounds

        p, ds = setup(seed=8)
        sol = solve_equilibrium(p, ds.x)
        lam0 = min_eig_sym(gram(sol.z))
        r0 = float(np.linalg.norm(predict(p, sol.z) - ds.y))
        report = check_condition(init_bounds(p), lam0, ds.x, r0)
        cfg = TrainConfig(eta=0.5 * report.eta_max, steps=25)
        _, trace = train(p, ds, cfg)
        assert np.all(trace.column("w_spec_norm") < 1.0)

    def test_fail_fast_on_blowup(self):
        p, ds = setup(seed=9)
        cfg = TrainConfig(eta=50.0, steps=200, assert_mode="fail-fast")
        with pytest.raises(TrainingAssertionError):
            train(p, ds, cfg)

    def test_record_mode_blowup_raises_well_posedness(self):
        p, ds = setup(seed=9)
        cfg = TrainConfig(eta=50.0, steps=200, assert_mode="record")
        with pytest.raises(WellPosednessError):
            train(p, ds, cfg)

    def test_solver_failure_carries_step_index(self):
        p, ds = setup(seed=10)
        cfg = TrainConfig(eta="auto", steps=3,
                          solver=SolverConfig(tol=1e-14, max_iter=2))
        with pytest.raises(ConvergenceError, match="training step"):
            train(p, ds, cfg)

    def test_rejects_raw_arrays(self):
        p, _ = setup(seed=11)
        with pytest.raises(InputError):
            train(p, (np.zeros((8, 3)), np.zeros(3)), TrainConfig(steps=1))


class TestWidthEffect:
    # The full width sweep (final loss strictly decreasing in m) runs at
    # its stated scale in the acceptance suite; at unit scale the
    # initial-loss randomness swamps the ordering, so here we check the
    # mechanism behind it: lambda_0 grows with m and is degenerate below n.
    def test_lambda0_grows_with_width(self):
        ds = gen_sphere_data(40, 20, seed=12)
        lams = []
        for m in (20, 80, 320):
            p = init_params(m, 20, 0.08, seed=13)
            sol = solve_equilibrium(p, ds.x)
            lams.append(min_eig_sym(gram(sol.z)))
        assert lams[0] <= 1e-8  # rank-deficient: m < n
        assert lams[2] > lams[1] > 1e-8


class TestMonitors:
    def test_step_zero_envelope_and_lambda(self):
        p, ds = setup(seed=14)
        sol = solve_equilibrium(p, ds.x, TIGHT)
        lam0 = min_eig_sym(gram(sol.z))
        phi0 = 3.14
        rec = monitors(p, sol.z, ds, lam0, eta=1e-3, tau=0, phi0=phi0, solver=TIGHT)
        assert rec.rate_envelope == phi0
        assert rec.lambda_tau == pytest.approx(lam0, abs=1e-12)

    def test_lambda_via_singular_value_route(self):
        p, ds = setup(seed=15)
        sol = solve_equilibrium(p, ds.x, TIGHT)
        rec = monitors(p, sol.z, ds, 1.0, eta=1e-3, tau=2, phi0=1.0, solver=TIGHT)
        smin = np.linalg.svd(sol.z, compute_uv=False)[-1]
        assert rec.lambda_tau == pytest.approx(smin**2, abs=1e-8)

    def test_residual_recomputed_when_missing(self):
        p, ds = setup(seed=16)
        sol = solve_equilibrium(p, ds.x, TIGHT)
        rec = monitors(p, sol.z, ds, 1.0, eta=1e-3, tau=0, phi0=1.0, solver=TIGHT)
        assert rec.residual <= 1e-11


class TestAutoEta:
    def test_positive_and_stable(self):
        p, ds = setup(seed=17)
        sol = solve_equilibrium(p, ds.x)
        eta = auto_eta(p, sol.z, ds.x)
        assert eta > 0
        _, trace = train(p, ds, TrainConfig(eta=eta, steps=30))
        losses = trace.column("loss")
        assert np.all(losses[1:] <= losses[:-1] * (1 + 1e-10))

    def test_safety_scales_linearly(self):
        p, ds = setup(seed=18)
        sol = solve_equilibrium(p, ds.x)
        assert auto_eta(p, sol.z, ds.x, 0.25) == pytest.approx(
            0.5 * auto_eta(p, sol.z, ds.x, 0.5), rel=1e-12)


class TestMetricsCsv:
    def test_exact_header_and_parse(self, tmp_path):
        p, ds = setup(seed=19)
        _, trace = train(p, ds, TrainConfig(eta="auto", steps=5))
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, trace)
        lines = path.read_text().splitlines()
        assert lines[0] == METRICS_HEADER
        assert len(lines) == 1 + len(trace.records)
        first = lines[1].split(",")
        assert int(first[0]) == 0
        assert float(first[1]) == trace.records[0].loss

    def test_deterministic_bytes(self, tmp_path):
        p, ds = setup(seed=20)
        cfg = TrainConfig(eta="auto", steps=4)
        _, t1 = train(p, ds, cfg)
        _, t2 = train(p, ds, cfg)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_metrics_csv(p1, t1)
        write_metrics_csv(p2, t2)
        assert p1.read_bytes() == p2.read_bytes()
