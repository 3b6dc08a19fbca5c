"""Solvers for the proximal saddle subproblem

    min_x max_y  f(x, y) - r(y) + g(x) + ||x - x_bar||^2 / (2 gamma) - V(y, y_bar) / lambda

* :func:`smd_solve`: stochastic mirror descent with iterate averaging
  (lambda = inf, any stochastic oracle).
* :func:`svrg_solve`: stage-wise variance-reduced primal-dual gradient method
  for smooth finite sums (lambda may be finite).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalError
from .geometry import ENTROPY, composite_mirror_step, floor_simplex, primal_prox_step, project

INF = math.inf


@dataclass(frozen=True)
class SaddleSubproblem:
    x_bar: np.ndarray
    y_bar: np.ndarray
    gamma: float
    lam: float = INF

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigurationError("gamma must be positive")
        if not self.lam > 0:
            raise ConfigurationError("lambda must be positive (inf allowed)")

    @property
    def inv_lam(self):
        return 0.0 if math.isinf(self.lam) else 1.0 / self.lam

    def mu_x(self, rho):
        return 1.0 / self.gamma - rho

    def mu_y(self, mu):
        return self.inv_lam + mu


@dataclass
class OracleCounter:
    """Oracle cost in stochastic-gradient units; a full evaluation costs n."""

    n: int
    stochastic_grad_calls: int = 0
    full_evaluations: int = 0

    def add_stochastic(self, k=1):
        self.stochastic_grad_calls += int(k)

    def add_full(self, times=1):
        self.full_evaluations += int(times)

    @property
    def equivalents(self):
        return self.stochastic_grad_calls + self.n * self.full_evaluations

    @property
    def full_pass_equivalents(self):
        return self.stochastic_grad_calls / self.n + self.full_evaluations

    data_passes = full_pass_equivalents

    def snapshot(self):
        return (self.stochastic_grad_calls, self.full_evaluations)


def _guard(x, y, j):
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise NumericalError("non-finite iterate", iteration=j,
                             diagnostics={"x": np.array(x), "y": np.array(y)})


def _check_pair(problem, sub):
    if problem.dual_reg.kind == "kl" and problem.geom.kind != ENTROPY:
        raise ConfigurationError("the kl-to-uniform regularizer requires the entropy geometry")
    if not sub.mu_x(problem.constants.rho) > 0:
        raise ConfigurationError("subproblem is not strongly convex in x: need 1/gamma > rho")


def smd_solve(problem, sub: SaddleSubproblem, eta_x, eta_y, J, rng, counter=None, batch_size=1):
    """Stochastic mirror descent on the gamma-regularised subproblem.

    Performs J-1 primal-dual steps from (x_bar, y_bar) and returns the average
    of the J primal iterates together with the last dual iterate.
    """
    if not math.isinf(sub.lam):
        raise ConfigurationError("stochastic mirror descent solves the lambda = inf subproblem only")
    if J < 2 or int(J) != J:
        raise ConfigurationError("J must be an integer >= 2")
    if not (eta_x > 0 and eta_y > 0):
        raise ConfigurationError("step sizes must be positive")
    _check_pair(problem, sub)
    J = int(J)

    fast = _smd_fast_path(problem, batch_size)
    if fast is not None:
        x_hat, y = fast(problem, sub, float(eta_x), float(eta_y), J, rng)
        if counter is not None:
            counter.add_stochastic((J - 1) * batch_size)
        return x_hat, y

    constraint, geom, reg = problem.constraint, problem.geom, problem.dual_reg
    x = np.array(sub.x_bar, dtype=float)
    y = np.array(sub.y_bar, dtype=float)
    x_sum = x.copy()
    for j in range(J - 1):
        gx, gy = problem.stoch_subgrad(x, y, batch_size, rng)
        x = primal_prox_step(constraint, x, gx, eta_x, sub.gamma, sub.x_bar)
        y = composite_mirror_step(geom, y, gy, eta_y, (), reg)
        _guard(x, y, j)
        x_sum += x
    if counter is not None:
        counter.add_stochastic((J - 1) * batch_size)
    return x_sum / J, y


def _smd_fast_path(problem, batch_size):
    """Loop specialised to single-sample steps on per-point DRO instances.

    It draws the same indices and performs the same arithmetic as the generic
    loop, but avoids per-step allocation and Python-level dispatch.
    """
    from .problems import DroProblem, QuadraticLoss, TruncatedLogisticLoss

    if batch_size != 1 or type(problem.loss) not in (QuadraticLoss, TruncatedLogisticLoss):
        return None
    if not isinstance(problem, DroProblem):
        return None
    return _smd_dro_single


def _smd_dro_single(problem, sub, eta_x, eta_y, J, rng):
    from . import _kernels as K
    from .problems import QuadraticLoss

    n = problem.n
    loss = problem.loss
    constraint, geom = problem.constraint, problem.geom
    theta = problem.dual_reg.theta
    inv_e, inv_g = 1.0 / eta_x, 1.0 / sub.gamma
    denom_x = inv_e + inv_g
    total = 1.0 / eta_y + theta
    if isinstance(loss, QuadraticLoss):
        kind, B, off, s, alpha = K.LOSS_QUADRATIC, loss.linear, loss.offset, loss.curvature, 1.0
    else:
        kind, B, off, s, alpha = K.LOSS_TRUNCATED_LOGISTIC, loss.signed, np.zeros(1), 0.0, loss.alpha
    ctype = {"free": K.CONSTRAINT_FREE, "ball": K.CONSTRAINT_BALL, "box": K.CONSTRAINT_BOX}[constraint.kind]
    lo = constraint.lo if constraint.kind == "box" else np.zeros(1)
    hi = constraint.hi if constraint.kind == "box" else np.zeros(1)
    radius = constraint.radius if constraint.kind == "ball" else 0.0

    x = np.array(sub.x_bar, dtype=float)
    y = np.array(sub.y_bar, dtype=float)
    idx = rng.integers(n, size=J - 1)
    x_sum, failed = K.smd_dro_kernel(
        kind, np.ascontiguousarray(B), np.asarray(off, dtype=float), float(s), float(alpha), x, y, idx,
        inv_e / denom_x, 1.0 / denom_x, (inv_g / denom_x) * np.asarray(sub.x_bar, dtype=float),
        ctype, float(radius), lo, hi, geom.kind == ENTROPY,
        (1.0 / eta_y) / total, 1.0 / total, theta * math.log(n) / total, geom.floor, eta_y)
    if failed >= 0:
        raise NumericalError("non-finite iterate", iteration=int(failed), diagnostics={"x": x, "y": y})
    return x_sum / J, y


def svrg_parameters(problem, sub: SaddleSubproblem):
    """Lambda, step sizes and inner length J prescribed for the subproblem."""
    c = problem.constants
    if not (np.isfinite(c.L_x) and np.isfinite(c.L_y)):
        raise ConfigurationError("variance-reduced solver needs finite L_x and L_y")
    mu_x = sub.mu_x(c.rho)
    mu_y = sub.mu_y(c.mu)
    if not (mu_x > 0 and mu_y > 0):
        raise ConfigurationError("variance-reduced solver needs mu_x > 0 and mu_y > 0")
    lam_big = svrg_lambda(c.L_x, c.L_y, mu_x, mu_y)
    # Lambda = 0 only when the components are constant; any step is then exact
    lam_step = lam_big if lam_big > 0 else 1.0
    return {
        "mu_x": mu_x,
        "mu_y": mu_y,
        "Lambda": lam_big,
        "eta_x": 1.0 / (mu_x * lam_step),
        "eta_y": 1.0 / (mu_y * lam_step),
        "J": svrg_inner_length(lam_big),
    }


def svrg_lambda(L_x, L_y, mu_x, mu_y):
    return 52.0 * max(L_x * L_x, L_y * L_y) / min(mu_x * mu_x, mu_y * mu_y)


def svrg_inner_length(lam_big):
    return int(math.ceil(1.0 + (1.5 + 3.0 * lam_big) * math.log(4.0)))


def svrg_solve(problem, sub: SaddleSubproblem, K, counter=None, rng=None, overrides=None, on_stage=None):
    """Variance-reduced stochastic primal-dual method on a smooth finite sum.

    Runs K-1 stages; each takes a full gradient at the reference point and J-1
    corrected single-component steps, and promotes the last inner iterate to
    the next reference point. ``overrides`` may replace ``eta_x``, ``eta_y``
    and ``J``. ``on_stage(k, x_ref, y_ref)`` is called for k = 0..K-1.
    """
    if K < 2 or int(K) != K:
        raise ConfigurationError("K must be an integer >= 2")
    if not problem.smooth:
        raise ConfigurationError("variance-reduced solver needs a smooth finite-sum instance")
    _check_pair(problem, sub)
    params = svrg_parameters(problem, sub)
    if overrides:
        unknown = set(overrides) - {"eta_x", "eta_y", "J"}
        if unknown:
            raise ConfigurationError(f"unknown solver override(s): {sorted(unknown)}")
        params.update({k: v for k, v in overrides.items() if v is not None})
    eta_x, eta_y, J = params["eta_x"], params["eta_y"], int(params["J"])
    if J < 2:
        raise ConfigurationError("J must be >= 2")
    rng = rng if rng is not None else np.random.default_rng()

    n = problem.n_components
    constraint, geom, reg = problem.constraint, problem.geom, problem.dual_reg
    anchors = [(sub.inv_lam, np.asarray(sub.y_bar, dtype=float))] if sub.inv_lam else []
    x_ref = np.array(sub.x_bar, dtype=float)
    y_ref = geom.center()
    if on_stage is not None:
        on_stage(0, x_ref, y_ref)
    for k in range(int(K) - 1):
        Gx, Gy = problem.full_grad(x_ref, y_ref)
        if counter is not None:
            counter.add_full()
        x, y = x_ref, y_ref
        ls = rng.integers(n, size=J - 1)
        for j in range(J - 1):
            l = int(ls[j])
            rx, ry = problem.component_grad(l, x_ref, y_ref)
            cx, cy = problem.component_grad(l, x, y)
            x_new = primal_prox_step(constraint, x, Gx - rx + cx, eta_x, sub.gamma, sub.x_bar)
            y = composite_mirror_step(geom, y, Gy - ry + cy, eta_y, anchors, reg)
            x = x_new
            _guard(x, y, j)
        if counter is not None:
            counter.add_stochastic(J - 1)
        x_ref, y_ref = x, y
        if on_stage is not None:
            on_stage(k + 1, x_ref, y_ref)
    return x_ref


def subproblem_value(problem, sub: SaddleSubproblem, x, y):
    """phi(x, y) = f(x,y) - r(y) + ||x - x_bar||^2/(2 gamma) - V(y, y_bar)/lambda."""
    from .geometry import bregman_divergence

    d = np.asarray(x) - sub.x_bar
    val = problem.value(x, y) + float(d @ d) / (2.0 * sub.gamma)
    if sub.inv_lam:
        val -= sub.inv_lam * bregman_divergence(problem.geom, y, sub.y_bar)
    return val


__all__ = [
    "SaddleSubproblem",
    "OracleCounter",
    "smd_solve",
    "svrg_solve",
    "svrg_parameters",
    "svrg_lambda",
    "svrg_inner_length",
    "subproblem_value",
    "project",
]
