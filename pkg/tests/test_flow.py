import warnings

import numpy as np
import pytest

from sparseflow._csv import read_csv
from sparseflow.flow import (
    DivergenceError,
    SolverConfig,
    StabilityWarning,
    estimate_mse_curve,
    euler_solve,
    schedule_grid,
    stability_margin,
)
from sparseflow.numerics import RngStream
from sparseflow.objective import SmoothLassoParams, smoothed_g
from sparseflow.problem import ProblemInstance, sample_batch, squared_error
from sparseflow.schedule import ConstantSchedule, RBFSchedule

from conftest import scalar_inst


class TestSolverConfig:
    def test_eta(self):
        cfg = SolverConfig(4.0, 5000)
        assert cfg.eta == 4.0 / 5000

    def test_default_stride(self):
        assert SolverConfig(0.5, 500).stride == 1
        assert SolverConfig(4.0, 5000).stride == 10

    def test_terminal_always_recorded(self):
        ks = SolverConfig(1.0, 10, record_stride=3).record_steps()
        np.testing.assert_array_equal(ks, [0, 3, 6, 9, 10])

    @pytest.mark.parametrize("T,N,stride", [(0.0, 10, None), (1.0, 0, None), (1.0, 10, 0), (-1.0, 5, None)])
    def test_invalid(self, T, N, stride):
        with pytest.raises(ValueError):
            SolverConfig(T, N, stride)


class TestEulerSolve:
    def test_fixed_point(self):
        # x = 1 is the equilibrium of the scalar problem A = 1, y = 2, lam = 1, alpha = 50
        traj = euler_solve(scalar_inst(), [2.0], 1.0, 50.0, SolverConfig(1.0, 100), x0=[1.0])
        assert np.max(np.abs(traj.states - 1.0)) <= 1e-12

    def test_geometric_decay(self):
        cfg = SolverConfig(1.0, 20, record_stride=1)
        traj = euler_solve(scalar_inst(), [0.0], 0.0, 50.0, cfg, x0=[1.0])
        expected = (1 - cfg.eta) ** np.arange(21)
        np.testing.assert_allclose(traj.states[:, 0], expected, rtol=1e-13)

    def test_trajectory_shape(self, small_inst, small_obs):
        _, y = small_obs
        traj = euler_solve(small_inst, y, 1.0, 50.0, SolverConfig(0.5, 500))
        assert traj.states.shape == (501, small_inst.n)
        assert np.all(np.diff(traj.times) > 0)
        np.testing.assert_array_equal(traj.states[0], 0.0)
        np.testing.assert_array_equal(traj.states[-1], traj.terminal)

    def test_sparse_terminal_state(self):
        inst = ProblemInstance.generate(64, 128, 0.1, 0.1, seed=0)
        ob = sample_batch(inst, RngStream(0, 1), 1)
        traj = euler_solve(inst, ob.y[0], 5.0, 50.0, SolverConfig(0.5, 500))
        small = np.abs(traj.terminal) <= 0.05
        assert small.mean() > 0.5
        assert 0 < (~small).sum() < inst.n // 2

    def test_constant_schedule_is_bit_identical(self, small_inst, small_obs):
        _, y = small_obs
        cfg = SolverConfig(0.5, 200)
        a = euler_solve(small_inst, y, 2.0, 50.0, cfg)
        b = euler_solve(small_inst, y, ConstantSchedule(2.0), 50.0, cfg)
        # exp(-beta d^2) rounds to exactly 1 for a vanishing width parameter
        c = euler_solve(small_inst, y, RBFSchedule([2.0], [0.0], 1e-300), 50.0, cfg)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.states, c.states)

    def test_negative_schedule_clamped(self, small_inst, small_obs):
        _, y = small_obs
        cfg = SolverConfig(0.2, 100)
        neg = euler_solve(small_inst, y, RBFSchedule([-3.0], [0.1], 1.0), 50.0, cfg)
        zero = euler_solve(small_inst, y, 0.0, 50.0, cfg)
        np.testing.assert_array_equal(neg.terminal, zero.terminal)

    def test_schedule_sampled_at_left_edges(self):
        cfg = SolverConfig(1.0, 4)
        s = RBFSchedule([1.0], [0.0], 1.0)
        np.testing.assert_allclose(schedule_grid(s, cfg), np.exp(-np.array([0.0, 0.25, 0.5, 0.75]) ** 2))

    def test_energy_decreases(self, small_inst, small_obs):
        _, y = small_obs
        p = SmoothLassoParams(1.0, 20.0)
        cfg = SolverConfig(1.0, 2000, record_stride=1)
        assert stability_margin(small_inst, p.lam, p.alpha, cfg.eta) > 0
        traj = euler_solve(small_inst, y, p.lam, p.alpha, cfg)
        g = np.array([smoothed_g(x, small_inst, y, p) for x in traj.states])
        assert np.all(np.diff(g) <= 1e-9)

    def test_first_order_convergence(self, small_inst, small_obs):
        _, y = small_obs
        ref = euler_solve(small_inst, y, 1.0, 5.0, SolverConfig(0.5, 64000)).terminal
        errs = [np.linalg.norm(euler_solve(small_inst, y, 1.0, 5.0, SolverConfig(0.5, N)).terminal - ref)
                for N in (500, 1000, 2000)]
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.15)
        assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.15)

    def test_divergence_names_step(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StabilityWarning)
            with pytest.raises(DivergenceError) as info:
                euler_solve(scalar_inst(), [0.0], 0.0, 1.0, SolverConfig(10000.0, 1000), x0=[1.0])
        assert info.value.step >= 1
        assert "step" in str(info.value)

    def test_unstable_step_warns(self):
        with pytest.warns(StabilityWarning):
            traj = euler_solve(scalar_inst(), [0.0], 0.0, 1.0, SolverConfig(3.0, 1), x0=[1.0])
        assert not traj.stable

    def test_bad_shapes(self, small_inst, small_obs):
        _, y = small_obs
        with pytest.raises(ValueError):
            euler_solve(small_inst, y[:-1], 1.0, 1.0, SolverConfig(1.0, 10))
        with pytest.raises(ValueError):
            euler_solve(small_inst, y, 1.0, 1.0, SolverConfig(1.0, 10), x0=np.zeros(3))

    def test_csv(self, tmp_path, small_inst, small_obs):
        _, y = small_obs
        traj = euler_solve(small_inst, y, 1.0, 50.0, SolverConfig(0.1, 10))
        traj.to_csv(tmp_path / "t.csv")
        raw = (tmp_path / "t.csv").read_bytes()
        assert b"\r" not in raw
        header, data = read_csv(tmp_path / "t.csv")
        assert header == ["t"] + [f"x_{i}" for i in range(1, small_inst.n + 1)]
        np.testing.assert_array_equal(data[:, 1:], traj.states)


class TestStabilityMargin:
    def test_scalar(self):
        assert stability_margin(scalar_inst(), 0.0, 50.0, 1.0) == pytest.approx(1.0)
        assert stability_margin(scalar_inst(), 0.0, 50.0, 3.0) == pytest.approx(-1.0)

    def test_main_settings(self):
        inst = ProblemInstance.generate(64, 128, 0.1, 0.1, seed=0)
        assert 250 < inst.gram_norm < 500
        assert stability_margin(inst, 5.0, 50.0, 4.0 / 5000) > 0


class TestMseCurve:
    def test_zero_signal(self):
        inst = ProblemInstance.generate(5, 8, 0.0, 0.0, seed=0)
        curve = estimate_mse_curve(inst, 1.0, 50.0, SolverConfig(1.0, 50), 4, RngStream(0, 1))
        np.testing.assert_array_equal(curve.mse, 0.0)

    def test_single_trial_matches_squared_error(self, small_inst):
        rng = RngStream(3, 1)
        cfg = SolverConfig(0.5, 100, record_stride=10)
        curve = estimate_mse_curve(small_inst, 2.0, 50.0, cfg, 1, rng)
        ob = sample_batch(small_inst, rng, 1)
        traj = euler_solve(small_inst, ob.y[0], 2.0, 50.0, cfg)
        expected = [squared_error(x, ob.s[0]) for x in traj.states]
        np.testing.assert_allclose(curve.mse, expected, rtol=1e-12)

    def test_mean_of_trials(self, small_inst):
        rng = RngStream(4, 1)
        cfg = SolverConfig(0.5, 100)
        curve = estimate_mse_curve(small_inst, 2.0, 50.0, cfg, 5, rng)
        ob = sample_batch(small_inst, rng, 5)
        errs = [squared_error(euler_solve(small_inst, ob.y[i], 2.0, 50.0, cfg).terminal, ob.s[i]) for i in range(5)]
        assert curve.mse[-1] == pytest.approx(np.mean(errs), rel=1e-12)
        assert curve.trials == 5
        assert np.all(curve.mse >= 0)

    def test_deterministic(self, small_inst):
        cfg = SolverConfig(0.5, 100)
        a = estimate_mse_curve(small_inst, 1.0, 50.0, cfg, 3, RngStream(1, 1))
        b = estimate_mse_curve(small_inst, 1.0, 50.0, cfg, 3, RngStream(1, 1))
        np.testing.assert_array_equal(a.mse, b.mse)

    def test_rejects_zero_trials(self, small_inst):
        with pytest.raises(ValueError):
            estimate_mse_curve(small_inst, 1.0, 50.0, SolverConfig(1.0, 10), 0, RngStream(0))

    def test_at(self, small_inst):
        curve = estimate_mse_curve(small_inst, 1.0, 50.0, SolverConfig(1.0, 100), 2, RngStream(0))
        assert curve.at(1.0) == curve.mse[-1]
        assert curve.at(0.0) == curve.mse[0]
