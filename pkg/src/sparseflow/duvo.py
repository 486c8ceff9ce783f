"""Deep unfolded-variational optimization of RBF-parameterised controls.

A control ``u(t) = sum_i w_i phi(t - c_i)`` drives an ODE ``dx/dt = h(x, u, t)``
discretised by forward Euler on ``N`` bins of width ``eta``.  The cost

    J(w) = sum_k eta * F(x_k, u_k, t_k) + terminal(x_N)

is differentiated exactly through the unrolled recursion with a hand-written
reverse (adjoint) pass:

    a_N = d terminal / d x_N
    dJ/du_k = eta * (dh/du(x_k, u_k)^T a_{k+1} + dF/du(x_k, u_k))
    a_k = a_{k+1} + eta * (dh/dx(x_k, u_k)^T a_{k+1} + dF/dx(x_k, u_k))
    dJ/dw_i = sum_k phi(t_k - c_i) * dJ/du_k

Forward states are kept in memory, so no recomputation is needed.  The
weights are updated with Adam.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ._csv import write_csv
from .flow import DivergenceError, SolverConfig, stability_margin
from .numerics import RngStream
from .problem import ProblemInstance, sample_batch
from .schedule import RBFSchedule

__all__ = [
    "ControlDemoConfig",
    "ControlDemoResult",
    "MiniBatch",
    "ScalarControlSystem",
    "SparseRecoverySystem",
    "TrainConfig",
    "TrainState",
    "UnfoldedSystem",
    "adam_step",
    "control_demo",
    "draw_minibatch",
    "exact_control",
    "train_lambda_schedule",
    "unfold_grad",
    "unfold_loss",
    "unfold_value_and_grad",
]

log = logging.getLogger(__name__)


class UnfoldedSystem:
    """Batched dynamics and costs for the unrolled Euler recursion.

    States are arrays of shape ``(K, d)``; the scalar control is shared by
    all ``K`` rows.  Subclasses override :meth:`h` and :meth:`h_vjp` and
    whichever costs they use; the defaults are zero.
    """

    def h(self, x, u, t):
        raise NotImplementedError

    def h_vjp(self, x, u, t, a):
        """Return ``(dh/dx^T a, sum(dh/du * a))`` at ``(x, u, t)``."""
        raise NotImplementedError

    def running_cost(self, x, u, t) -> float:
        return 0.0

    def running_cost_grad(self, x, u, t):
        return 0.0, 0.0

    def terminal_cost(self, x) -> float:
        return 0.0

    def terminal_grad(self, x):
        return np.zeros_like(x)


def _forward(system: UnfoldedSystem, x0, u, eta, keep_states: bool):
    N = len(u)
    x = np.array(x0, dtype=float)
    states = np.empty((N + 1, *x.shape)) if keep_states else None
    J = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(N):
            t = eta * k
            if keep_states:
                states[k] = x
            J += eta * system.running_cost(x, u[k], t)
            x = x + eta * system.h(x, u[k], t)
            if not np.isfinite(x).all():
                rows = np.flatnonzero(~np.isfinite(x.reshape(x.shape[0], -1)).all(axis=1))
                raise DivergenceError(k + 1, int(rows[0]) if rows.size else None, "unfolded forward pass")
    if keep_states:
        states[N] = x
    return J + system.terminal_cost(x), x, states


def unfold_value_and_grad(system: UnfoldedSystem, x0, schedule: RBFSchedule, T: float, N: int):
    """Cost of the unrolled recursion and its exact gradient with respect to ``schedule.weights``."""
    eta = T / N
    times = eta * np.arange(N)
    basis = schedule.basis(times)
    u = basis @ schedule.weights
    J, xN, states = _forward(system, x0, u, eta, keep_states=True)

    a = system.terminal_grad(xN)
    dJ_du = np.empty(N)
    for k in range(N - 1, -1, -1):
        xk, t = states[k], eta * k
        ax, gu = system.h_vjp(xk, u[k], t, a)
        Fx, Fu = system.running_cost_grad(xk, u[k], t)
        dJ_du[k] = eta * (gu + Fu)
        a = a + eta * (ax + Fx)
    return J, basis.T @ dJ_du


class SparseRecoverySystem(UnfoldedSystem):
    """Recovery flow with the regularization weight as control; loss is the mean terminal squared error.

    ``h(x, u) = -(x A^T A - y A + max(u, 0) * tanh(alpha x))`` row-wise,
    matching :func:`sparseflow.flow.integrate_batch` step for step.
    """

    def __init__(self, inst: ProblemInstance, s, y, alpha: float):
        self.gram = inst.gram
        self.s = np.atleast_2d(np.asarray(s, dtype=float))
        self.b = np.atleast_2d(np.asarray(y, dtype=float)) @ inst.A
        self.alpha = alpha
        self.K = self.s.shape[0]

    def h(self, x, u, t):
        lam = max(u, 0.0)
        return -(x @ self.gram - self.b + lam * np.tanh(self.alpha * x))

    def h_vjp(self, x, u, t, a):
        th = np.tanh(self.alpha * x)
        lam = max(u, 0.0)
        ax = -(a @ self.gram + lam * self.alpha * (1.0 - th * th) * a)
        gu = -float(np.sum(th * a)) if u > 0 else 0.0
        return ax, gu

    def terminal_cost(self, x) -> float:
        d = x - self.s
        return float(np.sum(d * d)) / self.K

    def terminal_grad(self, x):
        return (2.0 / self.K) * (x - self.s)


class ScalarControlSystem(UnfoldedSystem):
    """``dx/dt = u`` with running cost ``x^2 + u^2``."""

    def h(self, x, u, t):
        return np.full_like(x, u)

    def h_vjp(self, x, u, t, a):
        return np.zeros_like(a), float(np.sum(a))

    def running_cost(self, x, u, t) -> float:
        return float(np.sum(x * x)) + u * u

    def running_cost_grad(self, x, u, t):
        return 2.0 * x, 2.0 * u


@dataclass(frozen=True)
class MiniBatch:
    s: np.ndarray
    y: np.ndarray

    @property
    def size(self) -> int:
        return self.s.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the regularization-schedule trainer.

    Adam's ``beta1``, ``beta2`` and ``eps`` default to the usual 0.9, 0.999, 1e-8.
    The RBF centers are ``rbf_spacing * i - rbf_offset`` for ``i = 1..rbf_count``.
    """

    target_time: float = 3.0
    N: int = 5000
    batch_size: int = 10
    iterations: int = 100
    learning_rate: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    alpha: float = 50.0
    rbf_spacing: float = 0.25
    rbf_offset: float = 0.5
    rbf_count: int = 20
    rbf_beta: float = 20.0
    init_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.N < 1 or self.iterations < 0 or self.rbf_count < 1:
            raise ValueError("batch_size, N and rbf_count must be >= 1 and iterations >= 0")
        if not (self.target_time > 0 and self.learning_rate > 0 and self.alpha > 0 and self.rbf_beta > 0):
            raise ValueError("target_time, learning_rate, alpha and rbf_beta must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam decay rates must lie in [0, 1)")

    @property
    def eta(self) -> float:
        return self.target_time / self.N

    def solver_config(self, record_stride: int | None = None) -> SolverConfig:
        return SolverConfig(self.target_time, self.N, record_stride)

    def initial_schedule(self) -> RBFSchedule:
        return RBFSchedule.uniform(
            self.rbf_count, self.rbf_spacing, self.rbf_offset, self.rbf_beta, self.init_weight
        )


@dataclass
class TrainState:
    w: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    step: int = 0
    loss_history: list = field(default_factory=list)

    @classmethod
    def fresh(cls, w) -> "TrainState":
        w = np.array(w, dtype=float)
        return cls(w, np.zeros_like(w), np.zeros_like(w))

    def to_csv(self, path) -> None:
        write_csv(path, ["iter", "loss"], [(i + 1, v) for i, v in enumerate(self.loss_history)])


def adam_step(state: TrainState, g, cfg) -> TrainState:
    """One bias-corrected Adam update; returns a new state.

    ``cfg`` needs ``learning_rate``, ``adam_beta1``, ``adam_beta2`` and ``adam_eps``.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != state.w.shape:
        raise ValueError(f"gradient shape {g.shape} does not match weights {state.w.shape}")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    t = state.step + 1
    m = b1 * state.adam_m + (1.0 - b1) * g
    v = b2 * state.adam_v + (1.0 - b2) * (g * g)
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    w = state.w - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return TrainState(w, m, v, t, list(state.loss_history))


def draw_minibatch(inst: ProblemInstance, rng: RngStream, K: int) -> MiniBatch:
    ob = sample_batch(inst, rng, K)
    return MiniBatch(ob.s, ob.y)


def _check_batch(inst, batch: MiniBatch):
    if batch.s.ndim != 2 or batch.s.shape[1] != inst.n or batch.y.shape != (batch.size, inst.m):
        raise ValueError("mini-batch is not dimensioned to the instance")


def unfold_value_and_grad_batch(inst, batch: MiniBatch, sched: RBFSchedule, cfg: TrainConfig):
    _check_batch(inst, batch)
    system = SparseRecoverySystem(inst, batch.s, batch.y, cfg.alpha)
    x0 = np.zeros((batch.size, inst.n))
    return unfold_value_and_grad(system, x0, sched, cfg.target_time, cfg.N)


def unfold_loss(inst: ProblemInstance, batch: MiniBatch, sched: RBFSchedule, cfg: TrainConfig) -> float:
    """Mean terminal squared error of the unrolled flow from ``x = 0`` over the batch."""
    _check_batch(inst, batch)
    system = SparseRecoverySystem(inst, batch.s, batch.y, cfg.alpha)
    eta = cfg.eta
    u = sched.values(eta * np.arange(cfg.N))
    J, _, _ = _forward(system, np.zeros((batch.size, inst.n)), u, eta, keep_states=False)
    return J


def unfold_grad(inst: ProblemInstance, batch: MiniBatch, sched: RBFSchedule, cfg: TrainConfig) -> np.ndarray:
    """Gradient of :func:`unfold_loss` with respect to the RBF weights."""
    return unfold_value_and_grad_batch(inst, batch, sched, cfg)[1]


def train_lambda_schedule(inst: ProblemInstance, cfg: TrainConfig, rng: RngStream, callback=None):
    """Train the RBF weights of the regularization schedule; iteration ``i`` uses batch ``rng.child(i)``.

    Returns the final :class:`TrainState` and the trained schedule.
    ``callback(i, loss, state)`` is invoked after every update if given.
    """
    sched = cfg.initial_schedule()
    state = TrainState.fresh(sched.weights)
    for i in range(cfg.iterations):
        sched = sched.with_weights(state.w)
        lam_max = sched.max_value(0.0, cfg.target_time)
        if stability_margin(inst, lam_max, cfg.alpha, cfg.eta) < 0:
            log.warning("iteration %d: step %.3g exceeds stability bound (lambda max %.3g)", i, cfg.eta, lam_max)
        batch = draw_minibatch(inst, rng.child(i), cfg.batch_size)
        try:
            loss, g = unfold_value_and_grad_batch(inst, batch, sched, cfg)
        except DivergenceError as exc:
            raise DivergenceError(exc.step, exc.row, f"training iteration {i}") from exc
        if not np.isfinite(loss) or not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite loss or gradient at training iteration {i}")
        state = adam_step(state, g, cfg)
        state.loss_history.append(loss)
        log.debug("iter %d loss %.6g", i, loss)
        if callback is not None:
            callback(i, loss, state)
    return state, sched.with_weights(state.w)


@dataclass(frozen=True)
class ControlDemoConfig:
    """Optimal control of ``dx/dt = u``, ``x(0) = 1``, cost ``int_0^T (x^2 + u^2) dt``."""

    T: float = 1.0
    N: int = 200
    iterations: int = 200
    learning_rate: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    rbf_spacing: float = 0.05
    rbf_first_center: float = -0.5
    rbf_count: int = 50
    rbf_beta: float = 20.0
    init_weight: float = 1.0
    x0: float = 1.0

    def __post_init__(self):
        if self.N < 1 or self.iterations < 0 or self.rbf_count < 1:
            raise ValueError("N and rbf_count must be >= 1 and iterations >= 0")
        if not (self.T > 0 and self.learning_rate > 0 and self.rbf_spacing > 0 and self.rbf_beta > 0):
            raise ValueError("T, learning_rate, rbf_spacing and rbf_beta must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam decay rates must lie in [0, 1)")

    def initial_schedule(self) -> RBFSchedule:
        offset = self.rbf_spacing - self.rbf_first_center
        return RBFSchedule.uniform(self.rbf_count, self.rbf_spacing, offset, self.rbf_beta, self.init_weight)


@dataclass
class ControlDemoResult:
    times: np.ndarray
    u_trained: np.ndarray
    u_exact: np.ndarray
    max_abs_error: float
    state: TrainState
    schedule: RBFSchedule

    def to_csv(self, path) -> None:
        write_csv(path, ["t", "u_trained", "u_exact"], np.column_stack([self.times, self.u_trained, self.u_exact]))


def exact_control(t, T: float = 1.0):
    """Optimal control of the scalar demo on ``[0, T]``: ``-sinh(T - t) / cosh(T)``."""
    return -np.sinh(T - np.asarray(t, dtype=float)) / np.cosh(T)


def control_demo(cfg: ControlDemoConfig = ControlDemoConfig()) -> ControlDemoResult:
    """Train the scalar optimal-control demo and compare with the exact optimum.

    The comparison grid is the ``N`` left bin edges where the control enters
    the discretised cost.
    """
    system = ScalarControlSystem()
    sched = cfg.initial_schedule()
    state = TrainState.fresh(sched.weights)
    x0 = np.full((1, 1), cfg.x0)
    for _ in range(cfg.iterations):
        sched = sched.with_weights(state.w)
        J, g = unfold_value_and_grad(system, x0, sched, cfg.T, cfg.N)
        state = adam_step(state, g, cfg)
        state.loss_history.append(J)
    sched = sched.with_weights(state.w)
    times = (cfg.T / cfg.N) * np.arange(cfg.N)
    u = sched.values(times)
    exact = exact_control(times, cfg.T)
    return ControlDemoResult(times, u, exact, float(np.max(np.abs(u - exact))), state, sched)


def with_overrides(cfg, **kw):
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
