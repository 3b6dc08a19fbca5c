"""Proximally guided outer loops.

Each outer iteration approximately solves the gamma-regularised saddle
subproblem anchored at the current iterate x_bar^(t):

* :func:`pg_smd` uses stochastic mirror descent, with the step/length
  schedule of case D1 (bounded domains) or D2 (strongly concave, linear in y);
* :func:`pg_svrg` uses the variance-reduced solver with a growing number of
  stages k_t.

Both return a :class:`RunTrace` whose output is the iterate at a uniformly
sampled index tau.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .data_io import TraceRow
from .errors import ConfigurationError
from .geometry import floor_simplex
from .inner import OracleCounter, SaddleSubproblem, smd_solve, svrg_inner_length, svrg_lambda, svrg_solve
from .problems import inner_max_closed_form

INF = math.inf

D1 = "D1"
D2 = "D2"
SVRG_MU_POSITIVE = "svrg-mu-positive"
SVRG_MU_ZERO = "svrg-mu-zero"


def default_gamma(rho):
    if not rho > 0:
        raise ConfigurationError("gamma = 1/(2 rho) needs rho > 0; supply gamma explicitly")
    return 1.0 / (2.0 * rho)


def resolve_gamma(constants, gamma=None):
    if gamma is None:
        return default_gamma(constants.rho)
    if not gamma > 0 or (constants.rho > 0 and not gamma < 1.0 / constants.rho):
        raise ConfigurationError("gamma must lie in (0, 1/rho)")
    return float(gamma)


# -- schedules ------------------------------------------------------------

@dataclass
class PgSchedule:
    """Per-iteration parameters of an outer loop.

    ``scale`` multiplies the prescribed step sizes (keys ``eta_x``/``eta_y``);
    ``C_k`` is the coefficient of the logarithm in k_t.
    """

    case: str
    T: int
    gamma: float
    constants: object
    scale: dict = field(default_factory=dict)
    C_k: float = 4.0
    svrg_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        c = self.constants
        if self.case == D1:
            c.require(["D_x", "D_y", "M_x", "M_y"], "case D1")
            if not (c.M_x > 0 and c.M_y > 0):
                raise ConfigurationError("case D1 needs positive M_x and M_y")
        elif self.case == D2:
            c.require(["M_c"], "case D2")
            if not c.mu > 0:
                raise ConfigurationError("case D2 needs mu > 0")
            if not c.rho > 0:
                raise ConfigurationError("case D2 needs rho > 0")
        elif self.case in (SVRG_MU_POSITIVE, SVRG_MU_ZERO):
            c.require(["L_x", "L_y", "D_x", "D_y"], "the variance-reduced outer loop")
        else:
            raise ConfigurationError(f"unknown schedule case {self.case!r}")
        unknown = set(self.scale) - {"eta_x", "eta_y"}
        if unknown:
            raise ConfigurationError(f"unknown step scale(s): {sorted(unknown)}")

    @property
    def mu_x(self):
        return 1.0 / self.gamma - self.constants.rho

    def at(self, t):
        c = self.constants
        sx = self.scale.get("eta_x", 1.0)
        sy = self.scale.get("eta_y", 1.0)
        if self.case == D1:
            j = (t + 2) ** 2
            root = math.sqrt(j)
            return {"t": t, "eta_x": sx * c.D_x / (c.M_x * root), "eta_y": sy * c.D_y / (c.M_y * root), "j": j}
        if self.case == D2:
            j = t + 32
            return {"t": t, "eta_x": sx * 60.0 / (c.rho * (j - 30)),
                    "eta_y": sy * 8.0 * c.M_c ** 2 * self.gamma / (c.mu ** 2 * j), "j": j}
        if self.case == SVRG_MU_POSITIVE:
            lam, mu_y = INF, c.mu
        else:
            lam = float(t + 2)
            mu_y = 1.0 / lam + c.mu
        mu_x = self.mu_x
        big = svrg_lambda(c.L_x, c.L_y, mu_x, mu_y)
        arg = (t + 1) ** 2 * (4.0 / (self.gamma * mu_x) + 1.0) * (0.25 + big / 2.0) * (
            mu_x * c.D_x ** 2 + mu_y * c.D_y ** 2)
        k = max(2, int(math.ceil(1.0 + self.C_k * math.log(arg))))
        row = {"t": t, "lambda": lam, "mu_y": mu_y, "Lambda": big, "k": k, "J": svrg_inner_length(big)}
        row.update({key: v for key, v in self.svrg_overrides.items() if v is not None})
        return row

    def table(self, T=None):
        T = self.T if T is None else T
        return [self.at(t) for t in range(max(T - 1, 0))]


def svrg_case(constants):
    return SVRG_MU_POSITIVE if constants.mu > 0 else SVRG_MU_ZERO


# -- traces -----------------------------------------------------------------

@dataclass
class RunTrace:
    rows: list
    tau: int
    x_out: np.ndarray
    counter: OracleCounter
    schedule: Optional[PgSchedule]
    seed: Optional[int] = None
    iterates: list = field(default_factory=list)
    solver: str = ""


def sample_output_index(T, rng):
    """tau uniform on {0, ..., T-1}."""
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    return int(rng.integers(T))


Hook = Callable[[int, np.ndarray, OracleCounter], dict]


def _row(t, x, counter, hook):
    extra = hook(t, x, counter) if hook is not None else {}
    return TraceRow(t=t, data_passes=counter.full_pass_equivalents, **extra)


def pg_smd(problem, x0, T, case, rng, hook: Hook = None, gamma=None, batch_size=1, scale=None, seed=None):
    """Proximally guided stochastic mirror descent.

    ``hook(t, x_bar_t, counter)`` may return extra TraceRow fields; it must not
    draw from ``rng``.
    """
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    if case not in (D1, D2):
        raise ConfigurationError(f"unknown case {case!r}; expected D1 or D2")
    if case == D2 and not getattr(problem, "linear_in_y", False):
        raise ConfigurationError("case D2 needs an instance that is linear in y")
    c = problem.constants_for_batch(batch_size) if hasattr(problem, "constants_for_batch") else problem.constants
    g = resolve_gamma(c, gamma)
    sched = PgSchedule(case, int(T), g, c, dict(scale or {}))
    counter = OracleCounter(problem.n_components)
    x = problem.constraint.project(np.array(x0, dtype=float))
    iterates = [x]
    rows = []
    center = problem.geom.center()
    for t in range(int(T) - 1):
        rows.append(_row(t, x, counter, hook))
        if case == D1:
            y_bar = center
        else:
            y_bar = inner_max_closed_form(problem.full_dual_payoff(x), problem.theta)[1]
            counter.add_full()
            y_bar = floor_simplex(y_bar, problem.geom.floor)
        p = sched.at(t)
        sub = SaddleSubproblem(x, y_bar, g)
        x, _ = smd_solve(problem, sub, p["eta_x"], p["eta_y"], p["j"], rng, counter, batch_size)
        iterates.append(x)
    rows.append(_row(int(T) - 1, x, counter, hook))
    tau = sample_output_index(int(T), rng)
    return RunTrace(rows, tau, iterates[tau], counter, sched, seed, iterates, f"pg-smd-{case.lower()}")


def pg_svrg(problem, x0, T, rng, hook: Hook = None, gamma=None, C_k=4.0, overrides=None, y_bar=None, seed=None):
    """Proximally guided variance-reduced method.

    ``overrides`` may fix ``eta_x``, ``eta_y`` or ``J`` for every inner call
    instead of the values derived from the constants.
    """
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    c = problem.constants
    g = resolve_gamma(c, gamma)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    sched = PgSchedule(svrg_case(c), int(T), g, c, C_k=float(C_k), svrg_overrides=overrides)
    counter = OracleCounter(problem.n_components)
    y_bar = problem.geom.center() if y_bar is None else np.asarray(y_bar, dtype=float)
    x = problem.constraint.project(np.array(x0, dtype=float))
    iterates = [x]
    rows = []
    for t in range(int(T) - 1):
        rows.append(_row(t, x, counter, hook))
        p = sched.at(t)
        sub = SaddleSubproblem(x, y_bar, g, p["lambda"])
        x = svrg_solve(problem, sub, p["k"], counter, rng, overrides)
        iterates.append(x)
    rows.append(_row(int(T) - 1, x, counter, hook))
    tau = sample_output_index(int(T), rng)
    return RunTrace(rows, tau, iterates[tau], counter, sched, seed, iterates, "pg-svrg")


# -- iteration-count advice ------------------------------------------------------

def theorem_T(problem, eps, mode, psi0=None, psi_star=0.0, x0=None):
    """Outer iteration count that the convergence analysis prescribes for accuracy eps.

    ``problem`` may be an instance or a bare ProblemConstants (then ``psi0``
    is required). ``mode`` is ``"D1"``, ``"D2"`` or ``"svrg"``; the svrg
    formula depends on whether mu > 0. The bounds assume gamma = 1/(2 rho).
    psi_star defaults to 0, a valid lower bound for nonnegative losses.
    """
    c = getattr(problem, "constants", problem)
    if psi0 is None:
        if not hasattr(problem, "psi"):
            raise ConfigurationError("psi0 is required when only constants are given")
        x0 = np.zeros(problem.p) if x0 is None else np.asarray(x0, dtype=float)
        psi0 = problem.psi(problem.constraint.project(x0))
    if not eps > 0:
        raise ConfigurationError("eps must be positive")
    gap = psi0 - psi_star
    rho = c.rho
    if not rho > 0:
        raise ConfigurationError("the iteration bound needs rho > 0")
    e2 = eps * eps

    def xlogx(a):
        return a * math.log(a) if a > 0 else 0.0

    if mode == D1:
        c.require(["D_x", "D_y", "M_x", "M_y", "Q_g", "Q_r"], "the case D1 bound")
        first = 12.0 * rho * (gap + 8.0 * rho * c.D_x ** 2 + 16.0 * c.Q_g + 16.0 * c.Q_r) / e2
        second = xlogx(336.0 * rho * (c.M_x * c.D_x + c.M_y * c.D_y) / e2)
    elif mode == D2:
        c.require(["M_x", "M_y", "M_c", "Q_g", "Q_r"], "the case D2 bound")
        if not c.mu > 0:
            raise ConfigurationError("the case D2 bound needs mu > 0")
        g = 1.0 / (2.0 * rho)
        first = 400.0 * rho * gap / e2
        inner = 300.0 * c.M_x ** 2 / rho + 20.0 * c.M_c ** 2 * c.M_y ** 2 * g / c.mu ** 2 + c.Q_g + c.Q_r
        second = xlogx(720.0 * rho * inner / e2)
    elif mode == "svrg":
        if c.mu > 0:
            return int(math.ceil(6.0 * rho * (gap + math.pi ** 2 / 6.0) / e2))
        c.require(["D_y"], "the variance-reduced bound")
        first = 12.0 * rho * (gap + math.pi ** 2 / 6.0) / e2
        second = xlogx(54.0 * rho * c.D_y ** 2 / e2)
    else:
        raise ConfigurationError(f"unknown mode {mode!r}")
    return int(math.ceil(max(first, second)))
