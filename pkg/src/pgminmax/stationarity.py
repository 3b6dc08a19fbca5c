"""Objective values, the Moreau proximal point and the envelope gradient norm.

For gamma < 1/rho the function F(z) = psi(z) + ||z - x_bar||^2 / (2 gamma) is
(1/gamma - rho)-strongly convex, so prox_{gamma psi}(x_bar) is unique and

    grad psi_gamma(x_bar) = (x_bar - prox_{gamma psi}(x_bar)) / gamma.

With a KL dual regulariser psi is smooth and the prox is computed by projected
gradient descent with a constant step. With the plain simplex psi is a
pointwise maximum of smooth losses; the prox is then computed from the
epigraph form with SLSQP and certified by a KKT residual.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, nnls

from .errors import ConfigurationError, ConvergenceError
from .geometry import project
from .problems import inner_max_closed_form

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 100_000


@dataclass
class StationarityReport:
    gamma: float
    z: np.ndarray
    grad_norm: float
    psi_at_xbar: float
    psi_at_z: float
    iterations: int
    residual: float

    @property
    def envelope(self):
        """psi_gamma(x_bar) = psi(z) + ||z - x_bar||^2 / (2 gamma)."""
        return self.psi_at_z + 0.5 * self.gamma * self.grad_norm ** 2

    @property
    def grad_norm_sq(self):
        return self.grad_norm ** 2


@dataclass
class ProxResult:
    z: np.ndarray
    iterations: int
    residual: float
    objective_history: list


def psi_value(problem, x):
    """psi(x) = max_y f(x,y) - r(y) + g(x); +inf outside the constraint set."""
    return problem.psi(np.asarray(x, dtype=float))


def _check_gamma(problem, gamma):
    rho = problem.constants.rho
    if not gamma > 0 or gamma * rho >= 1.0:
        raise ConfigurationError("the proximal problem needs 0 < gamma < 1/rho")


def moreau_prox(problem, x_bar, gamma, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS, z0=None, record=False):
    """Minimiser of psi(z) + ||z - x_bar||^2 / (2 gamma) over the constraint set.

    Returns a :class:`ProxResult`; raises ConvergenceError if the residual does
    not reach ``tol`` within ``max_iters`` iterations.
    """
    _check_gamma(problem, gamma)
    x_bar = np.asarray(x_bar, dtype=float)
    if problem.theta > 0:
        return _prox_smooth(problem, x_bar, gamma, tol, max_iters, z0, record)
    return _prox_max(problem, x_bar, gamma, tol, max_iters, z0)


def _prox_smooth(problem, x_bar, gamma, tol, max_iters, z0, record):
    c = problem.constants
    if not np.isfinite(c.L_psi):
        raise ConfigurationError("smoothness bound L_psi is not finite")
    step = 1.0 / (c.L_psi + 1.0 / gamma)
    constraint = problem.constraint
    z = project(constraint, x_bar if z0 is None else np.asarray(z0, dtype=float))
    history = []
    residual = math.inf
    for k in range(1, int(max_iters) + 1):
        grad = problem.psi_grad(z) + (z - x_bar) / gamma
        z_new = project(constraint, z - step * grad)
        residual = float(np.linalg.norm(z_new - z)) / step
        if record:
            d = z - x_bar
            history.append(problem.psi(z) + float(d @ d) / (2 * gamma))
        if residual <= tol:
            return ProxResult(z, k, residual, history)
        z = z_new
    raise ConvergenceError(f"prox solve did not reach tol={tol:g} within {max_iters} iterations",
                           iterations=int(max_iters), residual=residual)


def _normal_cone_columns(constraint, z, tol=1e-9):
    cols = []
    if constraint.kind == "ball":
        nrm = float(np.linalg.norm(z))
        if nrm >= constraint.radius * (1 - tol):
            cols.append(z / nrm)
    elif constraint.kind == "box":
        for k in range(z.size):
            if z[k] >= constraint.hi[k] - tol * max(1.0, abs(constraint.hi[k])):
                e = np.zeros(z.size)
                e[k] = 1.0
                cols.append(e)
            if z[k] <= constraint.lo[k] + tol * max(1.0, abs(constraint.lo[k])):
                e = np.zeros(z.size)
                e[k] = -1.0
                cols.append(e)
    return cols


def max_kkt_residual(problem, x_bar, gamma, z, active_tol=1e-7):
    """dist(0, sum_A y_i grad c_i(z) + (z - x_bar)/gamma + N(z)) over y in the simplex on the active set."""
    c, J = problem.payoff_and_jacobian(z)
    top = float(c.max())
    active = np.flatnonzero(c >= top - active_tol * max(1.0, abs(top)))
    v = (z - x_bar) / gamma
    G = J[active].T
    N = _normal_cone_columns(problem.constraint, z)
    scale = max(1.0, float(np.abs(G).max()) if G.size else 1.0, float(np.abs(v).max()))
    w = 1e4 * scale
    cols = np.hstack([G, np.array(N).T]) if N else G
    sum_row = np.concatenate([np.ones(G.shape[1]), np.zeros(len(N))])
    A = np.vstack([cols, w * sum_row])
    b = np.concatenate([-v, [w]])
    coef, _ = nnls(A, b, maxiter=50 * A.shape[1])
    y = coef[: G.shape[1]]
    y = y / y.sum() if y.sum() > 0 else y
    resid = G @ y + v + (np.array(N).T @ coef[G.shape[1]:] if N else 0.0)
    return float(np.linalg.norm(resid))


def _prox_max(problem, x_bar, gamma, tol, max_iters, z0):
    constraint = problem.constraint
    p = problem.p
    start = project(constraint, x_bar if z0 is None else np.asarray(z0, dtype=float))

    def obj(w):
        d = w[:p] - x_bar
        return w[p] + float(d @ d) / (2 * gamma)

    def obj_grad(w):
        g = np.empty(p + 1)
        g[:p] = (w[:p] - x_bar) / gamma
        g[p] = 1.0
        return g

    cons = [{
        "type": "ineq",
        "fun": lambda w: w[p] - problem.full_dual_payoff(w[:p]),
        "jac": lambda w: np.hstack([-problem.payoff_and_jacobian(w[:p])[1], np.ones((problem.q, 1))]),
    }]
    bounds = None
    if constraint.kind == "ball":
        R2 = constraint.radius ** 2
        cons.append({"type": "ineq", "fun": lambda w: np.array([R2 - float(w[:p] @ w[:p])]),
                     "jac": lambda w: np.concatenate([-2 * w[:p], [0.0]])[None, :]})
    elif constraint.kind == "box":
        bounds = [(lo, hi) for lo, hi in zip(constraint.lo, constraint.hi)] + [(None, None)]
    w0 = np.concatenate([start, [float(problem.full_dual_payoff(start).max())]])
    res = minimize(obj, w0, jac=obj_grad, constraints=cons, bounds=bounds, method="SLSQP",
                   options={"ftol": 1e-15, "maxiter": int(min(max_iters, 10_000))})
    z = project(constraint, res.x[:p])
    residual = max_kkt_residual(problem, x_bar, gamma, z)
    if residual > tol:
        raise ConvergenceError(f"prox solve did not reach tol={tol:g} (KKT residual {residual:.3g})",
                               iterations=int(res.nit), residual=residual)
    return ProxResult(z, int(res.nit), residual, [])


def moreau_grad_norm(problem, x_bar, gamma, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS):
    """||grad psi_gamma(x_bar)|| = ||x_bar - prox_{gamma psi}(x_bar)|| / gamma."""
    z = moreau_prox(problem, x_bar, gamma, tol, max_iters).z
    return float(np.linalg.norm(np.asarray(x_bar, dtype=float) - z)) / gamma


def stationarity_report(problem, x_bar, gamma=None, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS):
    x_bar = np.asarray(x_bar, dtype=float)
    if gamma is None:
        rho = problem.constants.rho
        if not rho > 0:
            raise ConfigurationError("default gamma = 1/(2 rho) needs rho > 0")
        gamma = 1.0 / (2.0 * rho)
    res = moreau_prox(problem, x_bar, gamma, tol, max_iters)
    return StationarityReport(
        gamma=float(gamma),
        z=res.z,
        grad_norm=float(np.linalg.norm(x_bar - res.z)) / gamma,
        psi_at_xbar=psi_value(problem, x_bar),
        psi_at_z=psi_value(problem, res.z),
        iterations=res.iterations,
        residual=res.residual,
    )


def moreau_envelope(problem, x_bar, gamma, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS):
    z = moreau_prox(problem, x_bar, gamma, tol, max_iters).z
    d = z - np.asarray(x_bar, dtype=float)
    return psi_value(problem, z) + float(d @ d) / (2 * gamma)


__all__ = [
    "StationarityReport",
    "psi_value",
    "moreau_prox",
    "moreau_grad_norm",
    "moreau_envelope",
    "stationarity_report",
    "inner_max_closed_form",
]
