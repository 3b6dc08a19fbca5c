"""Comparison methods: prox-linear outer steps and empirical risk minimisation by SGD.

A prox-linear step replaces each loss by its first-order model at x_t and
approximately solves

    min_x max_y  y^T (c(x_t) + grad c(x_t)(x - x_t)) - r(y) + ||x - x_t||^2 / (2 eta)

with a fixed budget of the stochastic mirror descent or variance-reduced
inner solver.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .geometry import floor_simplex, project
from .inner import OracleCounter, SaddleSubproblem, smd_solve, svrg_solve
from .outer import RunTrace, _row
from .problems import inner_max_closed_form


@dataclass
class PlConfig:
    """Prox-linear step length and inner budget.

    smd inner: ``inner_iters`` steps of size (``eta_x``, ``eta_y``) with
    ``batch`` samples each. svrg inner: ``stages`` stages of ``inner_iters``
    steps; ``eta_x``/``eta_y`` default to the values derived from the
    linearised constants. ``dual_init`` is ``"argmax"`` (exact dual maximiser
    of the model at x_t, costs n) or ``"uniform"``. ``lam`` is the dual
    proximal weight used by the svrg inner when the regulariser is not
    strongly convex.
    """

    eta: float
    inner: str = "smd"
    T_outer: int = 10
    inner_iters: int = 100
    eta_x: float | None = None
    eta_y: float | None = None
    batch: int = 1
    stages: int = 2
    dual_init: str = "argmax"
    lam: float = 1.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigurationError("prox-linear step eta must be positive")
        if self.inner not in ("smd", "svrg"):
            raise ConfigurationError(f"unknown inner solver {self.inner!r}")
        if self.dual_init not in ("argmax", "uniform"):
            raise ConfigurationError(f"unknown dual_init {self.dual_init!r}")
        if self.inner_iters < 2:
            raise ConfigurationError("inner_iters must be >= 2")
        if self.inner == "smd" and (self.eta_x is None or self.eta_y is None):
            raise ConfigurationError("the smd inner solver needs eta_x and eta_y")


def pl_step(problem, x_t, cfg: PlConfig, rng, counter: OracleCounter | None = None):
    """One prox-linear update x_t -> x_{t+1}."""
    if cfg.inner == "svrg" and not problem.smooth:
        raise ConfigurationError("the svrg inner solver needs a smooth instance")
    if not hasattr(problem, "linearized"):
        raise ConfigurationError("prox-linear steps need a per-point loss instance")
    x_t = np.asarray(x_t, dtype=float)
    model = problem.linearized(x_t)
    if cfg.dual_init == "argmax":
        y_bar = inner_max_closed_form(model.full_dual_payoff(x_t), problem.theta)[1]
        y_bar = floor_simplex(y_bar, problem.geom.floor)
        if counter is not None:
            counter.add_full()
    else:
        y_bar = problem.geom.center()
    if cfg.inner == "smd":
        sub = SaddleSubproblem(x_t, y_bar, cfg.eta)
        x_new, _ = smd_solve(model, sub, cfg.eta_x, cfg.eta_y, cfg.inner_iters, rng, counter, cfg.batch)
        return x_new
    lam = math.inf if model.constants.mu > 0 else cfg.lam
    sub = SaddleSubproblem(x_t, y_bar, cfg.eta, lam)
    overrides = {"J": cfg.inner_iters, "eta_x": cfg.eta_x, "eta_y": cfg.eta_y}
    return svrg_solve(model, sub, cfg.stages, counter, rng, overrides)


def pl_method(problem, x0, cfg: PlConfig, rng, hook=None, seed=None):
    """T_outer prox-linear steps; the output is the last iterate."""
    counter = OracleCounter(problem.n_components)
    x = project(problem.constraint, np.array(x0, dtype=float))
    rows, iterates = [], [x]
    for t in range(cfg.T_outer - 1):
        rows.append(_row(t, x, counter, hook))
        x = pl_step(problem, x, cfg, rng, counter)
        iterates.append(x)
    rows.append(_row(cfg.T_outer - 1, x, counter, hook))
    return RunTrace(rows, cfg.T_outer - 1, x, counter, None, seed, iterates, f"pl-{cfg.inner}")


@dataclass
class StepSchedule:
    """Piecewise-constant step sizes: ``values[k]`` is used from ``starts[k]`` on."""

    values: list
    starts: list = field(default_factory=lambda: [0])

    def __post_init__(self):
        if len(self.values) != len(self.starts) or not self.values:
            raise ConfigurationError("step schedule needs one start per value")
        if self.starts[0] != 0 or any(b <= a for a, b in zip(self.starts, self.starts[1:])):
            raise ConfigurationError("step schedule starts must begin at 0 and increase")
        if any(not v > 0 for v in self.values):
            raise ConfigurationError("step sizes must be positive")

    def at(self, k):
        idx = int(np.searchsorted(self.starts, k, side="right")) - 1
        return self.values[idx]


def erm_sgd(problem, x0, steps, schedule: StepSchedule, batch, rng, hook=None, log_every=None, seed=None):
    """Projected minibatch SGD on the average loss (1/N) sum_i l_i(x).

    A trace row is logged every ``log_every`` steps (default: once per data
    pass) and after the final step. The output is the last iterate.
    """
    loss = problem.loss
    N = loss.n_points
    if batch < 1:
        raise ConfigurationError("batch must be positive")
    log_every = max(1, N // batch) if log_every is None else int(log_every)
    counter = OracleCounter(N)
    x = project(problem.constraint, np.array(x0, dtype=float))
    rows, iterates = [], []
    t = 0
    for k in range(int(steps)):
        if k % log_every == 0:
            rows.append(_row(t, x, counter, hook))
            iterates.append(x)
            t += 1
        idx = rng.integers(N) if batch == 1 else rng.choice(N, size=min(batch, N), replace=False)
        _, g = loss.values_grads(np.atleast_1d(idx), x)
        x = project(problem.constraint, x - schedule.at(k) * g.mean(axis=0))
        counter.add_stochastic(np.size(idx))
    rows.append(_row(t, x, counter, hook))
    iterates.append(x)
    return RunTrace(rows, len(rows) - 1, x, counter, None, seed, iterates, "erm-sgd")
