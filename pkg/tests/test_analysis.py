import math

import numpy as np
import pytest

from sparseflow._csv import read_csv
from sparseflow.analysis import (
    ConvergenceWarning,
    closed_form_error,
    find_equilibrium,
    fit_log_slope,
    lambda_sweep,
    alpha_sweep,
    linearize,
    rho_curve,
    write_sweep_csv,
)
from sparseflow.flow import SolverConfig, estimate_mse_curve, euler_solve
from sparseflow.numerics import RngStream, sym_matexp
from sparseflow.objective import SmoothLassoParams
from sparseflow.problem import ProblemInstance, sample_batch

from conftest import scalar_inst


def bisect(f, lo, hi, iters=200):
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(lo) * f(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


class TestEquilibrium:
    def test_scalar_bisection_oracle(self):
        p = SmoothLassoParams(1.0, 50.0)
        root = bisect(lambda x: (x - 2.0) + math.tanh(50.0 * x), 0.5, 2.0)
        # the scalar problem decays at rate omega_1 = 1, so T_eq = 4 would leave e^-4
        eq = find_equilibrium(scalar_inst(), [2.0], p, T_eq=20.0, N_eq=20000)
        assert abs(eq.x[0] - root) <= 1e-6
        assert abs(eq.x[0] - 1.0) <= 1e-6
        assert eq.converged

    def test_zero_observation(self, small_inst):
        eq = find_equilibrium(small_inst, np.zeros(small_inst.m), SmoothLassoParams(1.0, 50.0))
        np.testing.assert_array_equal(eq.x, 0.0)
        assert eq.residual == 0.0

    def test_main_settings_residual(self):
        inst = ProblemInstance.generate(64, 128, 0.1, 0.1, seed=0)
        y = sample_batch(inst, RngStream(0, 1), 1).y[0]
        eq = find_equilibrium(inst, y, SmoothLassoParams(5.0, 50.0))
        assert eq.residual <= 1e-3

    def test_warns_when_not_converged(self, small_inst, small_obs):
        _, y = small_obs
        with pytest.warns(ConvergenceWarning):
            eq = find_equilibrium(small_inst, y, SmoothLassoParams(0.01, 50.0), T_eq=0.01, N_eq=10)
        assert not eq.converged


class TestLinearize:
    def test_identity(self):
        rep = linearize(ProblemInstance(np.eye(2)), SmoothLassoParams(1.0, 1.0), np.zeros(2))
        np.testing.assert_allclose(rep.B, 2 * np.eye(2))
        np.testing.assert_allclose(rep.omegas, [2.0, 2.0])

    def test_scalar(self):
        rep = linearize(scalar_inst(), SmoothLassoParams(1.0, 50.0), np.array([1.0]))
        assert rep.omega1 == pytest.approx(1.0 + 50.0 / math.cosh(50.0) ** 2, rel=1e-14)

    def test_lower_bound_random(self):
        rng = np.random.default_rng(0)
        for trial in range(100):
            m, n = rng.integers(1, 6, 2)
            inst = ProblemInstance(rng.standard_normal((m, n)))
            p = SmoothLassoParams(rng.uniform(0.1, 5), rng.uniform(0.5, 50))
            rep = linearize(inst, p, rng.standard_normal(n) * 0.1)
            assert rep.omega1_lower_bound <= rep.omega1 + 1e-10
            np.testing.assert_array_equal(rep.B, rep.B.T)

    def test_jacobi_agrees(self, small_inst):
        p = SmoothLassoParams(2.0, 5.0)
        x = np.linspace(-0.3, 0.3, small_inst.n)
        a = linearize(small_inst, p, x)
        b = linearize(small_inst, p, x, method="jacobi")
        np.testing.assert_allclose(a.omegas, b.omegas, atol=1e-10)

    def test_positive_at_real_equilibria(self, small_inst):
        p = SmoothLassoParams(1.5, 50.0)
        ob = sample_batch(small_inst, RngStream(2, 1), 5)
        for y in ob.y:
            rep = linearize(small_inst, p, find_equilibrium(small_inst, y, p, T_eq=20.0, N_eq=20000).x)
            assert rep.omega1 > 0

    def test_rejects_bad_state(self, small_inst):
        with pytest.raises(ValueError):
            linearize(small_inst, SmoothLassoParams(1, 1), np.full(small_inst.n, np.nan))


class TestClosedForm:
    def make_report(self, B):
        inst = ProblemInstance(np.linalg.cholesky(B).T)
        # x* far from the origin makes J vanish, so B equals the Gram matrix
        return linearize(inst, SmoothLassoParams(1e-300, 1.0), np.full(len(B), 1e3))

    def test_zero_time(self):
        rep = self.make_report(np.diag([1.0, 2.0]))
        np.testing.assert_allclose(closed_form_error(rep, [0.3, -0.4], 0.0), [0.3, -0.4])

    def test_diagonal(self):
        rep = self.make_report(np.diag([1.0, 2.0]))
        np.testing.assert_allclose(closed_form_error(rep, [1.0, 1.0], 1.0), [math.exp(-1), math.exp(-2)], rtol=1e-12)

    def test_matches_matexp(self, small_inst):
        rep = linearize(small_inst, SmoothLassoParams(1.0, 5.0), np.linspace(-0.2, 0.2, small_inst.n))
        e0 = np.arange(small_inst.n, dtype=float)
        np.testing.assert_allclose(closed_form_error(rep, e0, 0.7), sym_matexp(-rep.B, 0.7) @ e0, atol=1e-12)

    def test_matches_fine_euler(self):
        B = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 3.0]])
        rep = self.make_report(B)
        e0 = np.array([1.0, -1.0, 0.5])
        e = e0.copy()
        N = 100_000
        dt = 1.0 / N
        for _ in range(N):
            e = e - dt * (B @ e)
        assert np.max(np.abs(closed_form_error(rep, e0, 1.0) - e)) <= 1e-4

    def test_norm_decreasing(self, small_inst, small_obs):
        _, y = small_obs
        p = SmoothLassoParams(1.5, 50.0)
        rep = linearize(small_inst, p, find_equilibrium(small_inst, y, p).x)
        e0 = np.random.default_rng(0).standard_normal(small_inst.n)
        norms = [np.linalg.norm(closed_form_error(rep, e0, t)) for t in (0.0, 0.5, 1.0, 2.0)]
        assert all(a > b for a, b in zip(norms, norms[1:]))

    def test_dimension(self):
        rep = self.make_report(np.eye(2))
        with pytest.raises(ValueError):
            closed_form_error(rep, [1.0, 2.0, 3.0], 1.0)


class TestRho:
    def test_first_sample(self, small_inst, small_obs):
        _, y = small_obs
        p = SmoothLassoParams(1.5, 50.0)
        xstar = find_equilibrium(small_inst, y, p).x
        traj = euler_solve(small_inst, y, p.lam, p.alpha, SolverConfig(1.0, 1000))
        curve = rho_curve(traj, xstar, 2.0)
        assert curve.rho[0] == 1.0 and curve.theory[0] == 1.0
        np.testing.assert_allclose(curve.theory, np.exp(-2.0 * curve.times))

    def test_degenerate(self):
        traj = euler_solve(scalar_inst(), [2.0], 1.0, 50.0, SolverConfig(1.0, 100), x0=[1.0])
        with pytest.raises(ValueError):
            rho_curve(traj, [1.0], 1.0)

    def test_csv(self, tmp_path):
        traj = euler_solve(scalar_inst(), [0.0], 1.0, 1.0, SolverConfig(1.0, 10), x0=[1.0])
        rho_curve(traj, [0.0], 2.0).to_csv(tmp_path / "r.csv")
        header, data = read_csv(tmp_path / "r.csv")
        assert header == ["t", "rho", "theory"]
        assert data.shape == (11, 3)


class TestSlopeFit:
    def test_exact_exponential(self):
        t = np.linspace(0, 2, 101)
        assert fit_log_slope(t, 3.0 * np.exp(-1.7 * t)) == pytest.approx(-1.7, rel=1e-12)

    def test_window_uses_tail(self):
        t = np.linspace(0, 2, 201)
        v = np.where(t < 1, np.exp(-5 * t), np.exp(-5) * np.exp(-1.0 * (t - 1)))
        assert fit_log_slope(t, v, window=0.4) == pytest.approx(-1.0, rel=1e-9)

    def test_floor(self):
        t = np.linspace(0, 1, 11)
        v = np.exp(-t)
        v[-3:] = 0.0
        assert fit_log_slope(t, v, window=1.0) == pytest.approx(-1.0)

    def test_too_few(self):
        with pytest.raises(ValueError):
            fit_log_slope([0.0, 1.0], [1.0, 0.0])


class TestSweeps:
    def test_single_lambda_matches_mse_curve(self, small_inst):
        cfg = SolverConfig(1.0, 400)
        pts = lambda_sweep(small_inst, [1.5], 50.0, cfg, 6, RngStream(0, 1))
        curve = estimate_mse_curve(small_inst, 1.5, 50.0, cfg, 6, RngStream(0, 1))
        assert pts[0].mse_inf == pytest.approx(curve.mse[-1], rel=1e-12)

    def test_omega_increases_with_lambda_and_alpha(self, small_inst):
        cfg = SolverConfig(4.0, 4000)
        pts = lambda_sweep(small_inst, [0.5, 1.5, 3.0, 5.0], 50.0, cfg, 10, RngStream(1, 1))
        omegas = [p.omega1 for p in pts]
        assert omegas == sorted(omegas)
        pts = alpha_sweep(small_inst, 3.0, [5.0, 20.0, 50.0], cfg, 10, RngStream(1, 1))
        omegas = [p.omega1 for p in pts]
        assert omegas == sorted(omegas)

    def test_rejects_nonpositive(self, small_inst):
        with pytest.raises(ValueError):
            lambda_sweep(small_inst, [1.0, 0.0], 50.0, SolverConfig(1.0, 10), 2, RngStream(0))
        with pytest.raises(ValueError):
            alpha_sweep(small_inst, 1.0, [-1.0], SolverConfig(1.0, 10), 2, RngStream(0))

    def test_csv(self, tmp_path, small_inst):
        pts = lambda_sweep(small_inst, [1.0, 2.0], 50.0, SolverConfig(1.0, 200), 2, RngStream(0))
        write_sweep_csv(pts, tmp_path / "s.csv")
        header, data = read_csv(tmp_path / "s.csv")
        assert header == ["lambda", "mse_inf", "force_norm", "omega1"]
        np.testing.assert_array_equal(data[:, 0], [1.0, 2.0])
