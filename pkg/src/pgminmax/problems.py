"""Weakly-convex-concave problem instances and the oracles the solvers consume.

Every instance here is linear in the dual variable:

    f(x, y) = y^T c(x),    c(x) = (1/n) sum_i c_i(x),

with c built from per-point losses. Two instances are provided:

* :class:`DroProblem` (distributionally robust learning): one dual coordinate
  per data point, c(x) = (l_1(x), ..., l_n(x)) and c_i(x) = n l_i(x) e_i.
* :class:`RobustMultiDist`: one dual coordinate per group of points, c_k(x)
  is the mean loss over group k.

Losses are pluggable (:class:`TruncatedLogisticLoss`, :class:`QuadraticLoss`)
and each reports bounds from which the regularity constants are derived.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np
from scipy.special import expit, logsumexp

from .errors import ConfigurationError, DomainError
from .geometry import ENTROPY, BregmanGeometry, DualRegularizer, PrimalConstraint

INF = math.inf


# -- scalar building blocks --------------------------------------------

def phi_alpha(s, alpha):
    """Truncation phi_alpha(s) = alpha log(1 + s/alpha)."""
    return alpha * np.log1p(np.asarray(s, dtype=float) / alpha)


def truncated_logistic(x, a, b, alpha):
    """Value and x-gradient of phi_alpha(log(1 + exp(-b a^T x)))."""
    if not alpha > 0:
        raise ConfigurationError("alpha must be positive")
    a = np.asarray(a, dtype=float)
    m = float(b) * float(np.dot(a, x))
    ell = float(np.logaddexp(0.0, -m))
    value = alpha * math.log1p(ell / alpha)
    slope = float(expit(-m)) / (1.0 + ell / alpha)
    return value, -float(b) * slope * a


def inner_max_closed_form(c, theta):
    """max_y y^T c - theta KL(y, 1/q) over the simplex, and its maximiser.

    theta = 0 is the plain simplex: the maximum coordinate, with the maximiser
    spread uniformly over tied coordinates.
    """
    c = np.asarray(c, dtype=float)
    q = c.size
    if theta < 0:
        raise ConfigurationError("theta must be nonnegative")
    if theta == 0:
        top = float(c.max())
        ties = c == top
        y = ties / ties.sum()
        return top, y
    z = c / theta
    lse = float(logsumexp(z))
    y = np.exp(z - lse)
    y /= y.sum()
    return theta * (lse - math.log(q)), y


# -- losses -------------------------------------------------------------

@dataclass(frozen=True)
class LossBounds:
    """Bounds on a family of per-point losses over a primal set.

    weak_convexity: lower curvature bound rho (l + rho/2 ||.||^2 is convex)
    lipschitz: sup ||grad l||
    smoothness: sup ||hess l|| (operator norm); inf when not smooth
    value: sup |l|
    """

    weak_convexity: float
    lipschitz: float
    smoothness: float
    value: float


class TruncatedLogisticLoss:
    """l_i(x) = phi_alpha(log(1 + exp(-b_i a_i^T x))) for rows a_i of ``features``."""

    smooth = True

    def __init__(self, features, labels, alpha):
        A = np.ascontiguousarray(features, dtype=float)
        b = np.asarray(labels, dtype=float).ravel()
        if A.ndim != 2 or A.shape[0] == 0:
            raise ConfigurationError("features must be a non-empty 2-d array")
        if b.shape[0] != A.shape[0]:
            raise ConfigurationError("labels and features disagree on the number of points")
        if not np.all(np.abs(b) == 1):
            raise ConfigurationError("labels must be +1 or -1")
        if not alpha > 0:
            raise ConfigurationError("alpha must be positive")
        self.features = A
        self.labels = b
        self.alpha = float(alpha)
        self.signed = A * b[:, None]
        self.row_norms = np.linalg.norm(A, axis=1)

    @property
    def n_points(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def _eval(self, S, x):
        m = S @ x
        ell = np.logaddexp(0.0, -m)
        vals = self.alpha * np.log1p(ell / self.alpha)
        slope = expit(-m) / (1.0 + ell / self.alpha)
        return vals, -slope[:, None] * S

    def values(self, x):
        ell = np.logaddexp(0.0, -(self.signed @ x))
        return self.alpha * np.log1p(ell / self.alpha)

    def grads(self, x):
        return self._eval(self.signed, x)[1]

    def values_grads(self, idx, x):
        return self._eval(self.signed[idx], x)

    def all_values_grads(self, x):
        return self._eval(self.signed, x)

    def bounds(self, constraint: PrimalConstraint):
        amax = float(self.row_norms.max())
        # (phi o l)'' = phi''(l) l'^2 + phi'(l) l'' with phi'' in [-1/alpha, 0],
        # phi' in (0, 1], |l'| <= |a|, 0 <= l'' <= |a|^2 / 4.
        rho = amax ** 2 / self.alpha
        smooth = amax ** 2 * (1.0 / self.alpha + 0.25)
        r = constraint.max_norm()
        value = float(phi_alpha(np.logaddexp(0.0, amax * r), self.alpha)) if np.isfinite(r) else INF
        return LossBounds(rho, amax, smooth, value)

    def subset(self, idx):
        return TruncatedLogisticLoss(self.features[idx], self.labels[idx], self.alpha)


class QuadraticLoss:
    """l_i(x) = (s/2)||x||^2 + B_i^T x + b_i; convex when s >= 0."""

    smooth = True

    def __init__(self, curvature, linear, offset):
        self.curvature = float(curvature)
        self.linear = np.atleast_2d(np.asarray(linear, dtype=float))
        self.offset = np.asarray(offset, dtype=float).ravel()
        if self.offset.shape[0] != self.linear.shape[0]:
            raise ConfigurationError("linear and offset terms disagree on the number of points")

    @property
    def n_points(self):
        return self.linear.shape[0]

    @property
    def dim(self):
        return self.linear.shape[1]

    def values(self, x):
        return 0.5 * self.curvature * float(x @ x) + self.linear @ x + self.offset

    def grads(self, x):
        return self.linear + self.curvature * x[None, :]

    def values_grads(self, idx, x):
        B = self.linear[idx]
        return 0.5 * self.curvature * float(x @ x) + B @ x + self.offset[idx], B + self.curvature * x[None, :]

    def all_values_grads(self, x):
        return self.values(x), self.grads(x)

    def bounds(self, constraint: PrimalConstraint):
        r = constraint.max_norm()
        s = abs(self.curvature)
        bmax = float(np.linalg.norm(self.linear, axis=1).max())
        lip = s * r + bmax if np.isfinite(r) else (bmax if s == 0 else INF)
        if np.isfinite(r):
            value = 0.5 * s * r * r + bmax * r + float(np.abs(self.offset).max())
        else:
            value = INF
        return LossBounds(max(0.0, -self.curvature), lip, s, value)


class LinearizedLoss:
    """First-order model l_i(x0) + grad l_i(x0)^T (x - x0) of another loss.

    Point values and gradients at x0 are computed on first use and memoised, so
    sampling an index costs one oracle call of the underlying loss.
    """

    smooth = True

    def __init__(self, base, x0):
        self.base = base
        self.x0 = np.array(x0, dtype=float)
        n = base.n_points
        self._v = np.zeros(n)
        self._g = np.zeros((n, base.dim))
        self._known = np.zeros(n, dtype=bool)
        self.evaluations = 0

    @property
    def n_points(self):
        return self.base.n_points

    @property
    def dim(self):
        return self.base.dim

    def _ensure(self, idx):
        idx = np.atleast_1d(idx)
        missing = idx[~self._known[idx]]
        if missing.size:
            missing = np.unique(missing)
            v, g = self.base.values_grads(missing, self.x0)
            self._v[missing] = v
            self._g[missing] = g
            self._known[missing] = True
            self.evaluations += missing.size

    def frozen(self, idx):
        self._ensure(idx)
        return self._v[idx], self._g[idx]

    def values_grads(self, idx, x):
        v, g = self.frozen(idx)
        return v + g @ (x - self.x0), g

    def values(self, x):
        return self.values_grads(np.arange(self.n_points), x)[0]

    def grads(self, x):
        return self.frozen(np.arange(self.n_points))[1]

    def all_values_grads(self, x):
        return self.values_grads(np.arange(self.n_points), x)

    def bounds(self, constraint: PrimalConstraint):
        b = self.base.bounds(constraint)
        value = b.value + b.lipschitz * constraint.diameter() if np.isfinite(b.value) else INF
        return LossBounds(0.0, b.lipschitz, 0.0, value)


# -- constants ----------------------------------------------------------

@dataclass(frozen=True)
class ProblemConstants:
    """Regularity constants of an instance; inf where no finite bound is known.

    ``L_psi`` is a smoothness bound for psi (finite only when theta > 0) used
    by the deterministic proximal solver.
    """

    rho: float
    mu: float
    M_x: float
    M_y: float
    M_c: float
    L_x: float
    L_y: float
    D_x: float
    D_y: float
    Q_g: float
    Q_r: float
    L_psi: float = INF

    def require(self, names, purpose):
        bad = [nm for nm in names if not np.isfinite(getattr(self, nm))]
        if bad:
            raise ConfigurationError(f"{purpose} needs finite constants: {', '.join(bad)}")

    def with_overrides(self, **kw):
        known = {f.name for f in fields(self)}
        unknown = set(kw) - known
        if unknown:
            raise ConfigurationError(f"unknown constant(s): {sorted(unknown)}")
        return replace(self, **kw)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


# -- problem instances --------------------------------------------------

class _LinearInY:
    """Shared behaviour of instances with f(x, y) = y^T c(x)."""

    linear_in_y = True

    constraint: PrimalConstraint
    dual_reg: DualRegularizer
    geom: BregmanGeometry

    @property
    def theta(self):
        return self.dual_reg.theta

    @property
    def smooth(self):
        return bool(getattr(self.loss, "smooth", False))

    def value(self, x, y):
        return float(np.dot(y, self.full_dual_payoff(x))) - self.dual_reg.value(y)

    def psi(self, x):
        if not self.constraint.contains(x, tol=1e-9):
            return INF
        return inner_max_closed_form(self.full_dual_payoff(x), self.theta)[0]

    def dual_argmax(self, x):
        return inner_max_closed_form(self.full_dual_payoff(x), self.theta)[1]

    def full_grad(self, x, y):
        c, J = self.payoff_and_jacobian(x)
        return y @ J, c

    def stoch_subgrad(self, x, y, batch_size, rng):
        return self.sampled_grad(self.sample(batch_size, rng), x, y)

    def psi_grad(self, x):
        """Danskin gradient sum_i y*_i grad c_i of the max part of psi."""
        c, J = self.payoff_and_jacobian(x)
        y = inner_max_closed_form(c, self.theta)[1]
        return y @ J

    def _dual_norm_factor(self, q):
        # ||v||_* for a vector with entries bounded by 1: l_inf (entropy) or l2
        return 1.0 if self.geom.kind == ENTROPY else math.sqrt(q)


class DroProblem(_LinearInY):
    """min_x max_y sum_i y_i l_i(x) - r(y) + g(x), one dual coordinate per point."""

    def __init__(self, loss, theta=0.0, constraint=None, geometry=ENTROPY, floor=1e-12, name="dro"):
        self.loss = loss
        self.n = loss.n_points
        if self.n == 0:
            raise ConfigurationError("empty dataset")
        self.p = loss.dim
        self.q = self.n
        self.constraint = constraint if constraint is not None else PrimalConstraint.free()
        self.dual_reg = DualRegularizer.from_theta(theta)
        self.geom = BregmanGeometry.entropy(self.q, floor) if geometry == ENTROPY else BregmanGeometry.euclidean(self.q)
        if self.dual_reg.kind == "kl" and self.geom.kind != ENTROPY:
            raise ConfigurationError("the kl-to-uniform regularizer requires the entropy geometry")
        self.name = name
        self._constants = None

    @property
    def n_components(self):
        return self.n

    # oracles
    def full_dual_payoff(self, x):
        return self.loss.values(np.asarray(x, dtype=float))

    def payoff_and_jacobian(self, x):
        return self.loss.all_values_grads(np.asarray(x, dtype=float))

    def component_grad(self, i, x, y):
        if not 0 <= i < self.n:
            raise IndexError(f"component index {i} out of range [0, {self.n})")
        v, g = self.loss.values_grads(np.array([i]), x)
        gy = np.zeros(self.q)
        gy[i] = self.n * v[0]
        return self.n * y[i] * g[0], gy

    def component_grads(self, idx, x, y):
        """Batched component gradients; returns (gx rows, dual indices, dual values)."""
        v, g = self.loss.values_grads(idx, x)
        return (self.n * y[idx])[:, None] * g, idx, self.n * v

    def sample(self, batch_size, rng):
        if batch_size < 1:
            raise ConfigurationError("batch size must be positive")
        if batch_size >= self.n:
            return np.arange(self.n)
        if batch_size == 1:
            return np.array([rng.integers(self.n)])
        return rng.choice(self.n, size=batch_size, replace=False)

    def sampled_grad(self, idx, x, y):
        v, g = self.loss.values_grads(idx, x)
        scale = self.n / len(idx)
        gy = np.zeros(self.q)
        gy[idx] = scale * v
        return scale * (y[idx] @ g), gy

    # constants
    @property
    def constants(self):
        if self._constants is None:
            self._constants = self.constants_for_batch(1)
        return self._constants

    def constants_for_batch(self, batch_size):
        n, B = self.n, min(batch_size, self.n)
        lb = self.loss.bounds(self.constraint)
        G, H, F = lb.lipschitz, lb.smoothness, lb.value
        dual = self._dual_norm_factor(n)
        # E||(n/B) sum_S y_s grad l_s||^2 <= G^2 (1 - 1/B + n/B)
        M_x = G * math.sqrt(1.0 - 1.0 / B + n / B) if np.isfinite(G) else INF
        if self.geom.kind == ENTROPY:
            M_y = (n / B) * F
        else:
            M_y = math.sqrt(n / B) * F
        theta = self.theta
        return ProblemConstants(
            rho=lb.weak_convexity,
            mu=self.dual_reg.strong_convexity(self.geom),
            M_x=M_x,
            M_y=M_y,
            M_c=G * dual,
            L_x=n * (H + G),
            L_y=n * G * dual,
            D_x=self.constraint.diameter(),
            D_y=self.geom.diameter(),
            Q_g=0.0,
            Q_r=self.dual_reg.oscillation(self.q),
            L_psi=H + 2.0 * G * G / theta if theta > 0 else INF,
        )

    def linearized(self, x0):
        """Same instance with every loss replaced by its first-order model at x0."""
        prob = DroProblem.__new__(DroProblem)
        prob.__dict__.update(self.__dict__)
        prob.loss = LinearizedLoss(self.loss, x0)
        prob._constants = None
        prob.name = f"{self.name}-linearized"
        return prob


class DroTruncatedLogistic(DroProblem):
    """Distributionally robust logistic regression with truncated losses."""

    def __init__(self, features, labels, alpha=2.0, theta=10.0, constraint=None, geometry=ENTROPY,
                 floor=1e-12, name="dro-truncated-logistic"):
        super().__init__(TruncatedLogisticLoss(features, labels, alpha), theta, constraint, geometry, floor, name)

    @property
    def alpha(self):
        return self.loss.alpha


class RobustMultiDist(_LinearInY):
    """min_x max_{y in simplex} sum_k y_k E_k[l(x)] over m groups of points."""

    def __init__(self, datasets, alpha=2.0, theta=0.0, constraint=None, geometry=ENTROPY, floor=1e-12,
                 name="robust-multi-dist"):
        if len(datasets) == 0:
            raise ConfigurationError("need at least one group")
        feats, labs, sizes = [], [], []
        for X, y in datasets:
            X = np.atleast_2d(np.asarray(X, dtype=float))
            if X.shape[0] == 0:
                raise ConfigurationError("empty dataset in group")
            feats.append(X)
            labs.append(np.asarray(y, dtype=float))
            sizes.append(X.shape[0])
        self.loss = TruncatedLogisticLoss(np.vstack(feats), np.concatenate(labs), alpha)
        self.sizes = np.array(sizes)
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.m = self.q = len(datasets)
        self.p = self.loss.dim
        self.constraint = constraint if constraint is not None else PrimalConstraint.free()
        self.dual_reg = DualRegularizer.from_theta(theta)
        self.geom = BregmanGeometry.entropy(self.q, floor) if geometry == ENTROPY else BregmanGeometry.euclidean(self.q)
        if self.dual_reg.kind == "kl" and self.geom.kind != ENTROPY:
            raise ConfigurationError("the kl-to-uniform regularizer requires the entropy geometry")
        self.name = name
        self._constants = None
        self._group_of = np.repeat(np.arange(self.m), self.sizes)

    @property
    def n_components(self):
        if np.any(self.sizes != self.sizes[0]):
            raise ConfigurationError("component access needs groups of equal size")
        return int(self.sizes[0])

    @property
    def n(self):
        return self.n_components

    def full_dual_payoff(self, x):
        v = self.loss.values(np.asarray(x, dtype=float))
        return np.bincount(self._group_of, weights=v, minlength=self.m) / self.sizes

    def payoff_and_jacobian(self, x):
        v, g = self.loss.all_values_grads(np.asarray(x, dtype=float))
        c = np.bincount(self._group_of, weights=v, minlength=self.m) / self.sizes
        J = np.zeros((self.m, self.p))
        np.add.at(J, self._group_of, g)
        return c, J / self.sizes[:, None]

    def _component_rows(self, i):
        return self.offsets[:-1] + i

    def component_grad(self, i, x, y):
        n = self.n_components
        if not 0 <= i < n:
            raise IndexError(f"component index {i} out of range [0, {n})")
        v, g = self.loss.values_grads(self._component_rows(i), x)
        return y @ g, v

    def sample(self, batch_size, rng):
        if batch_size < 1:
            raise ConfigurationError("batch size must be positive")
        picks = []
        for k in range(self.m):
            size = int(self.sizes[k])
            b = min(batch_size, size)
            local = rng.choice(size, size=b, replace=False) if b < size else np.arange(size)
            picks.append(self.offsets[k] + local)
        return picks

    def sampled_grad(self, picks, x, y):
        gx = np.zeros(self.p)
        gy = np.zeros(self.q)
        for k, rows in enumerate(picks):
            v, g = self.loss.values_grads(rows, x)
            gy[k] = v.mean()
            gx += y[k] * g.mean(axis=0)
        return gx, gy

    @property
    def constants(self):
        if self._constants is None:
            self._constants = self.constants_for_batch(1)
        return self._constants

    def constants_for_batch(self, batch_size):
        lb = self.loss.bounds(self.constraint)
        G, H, F = lb.lipschitz, lb.smoothness, lb.value
        dual = self._dual_norm_factor(self.m)
        theta = self.theta
        return ProblemConstants(
            rho=lb.weak_convexity,
            mu=self.dual_reg.strong_convexity(self.geom),
            M_x=G,
            M_y=F * dual,
            M_c=G * dual,
            L_x=H + G,
            L_y=G * dual,
            D_x=self.constraint.diameter(),
            D_y=self.geom.diameter(),
            Q_g=0.0,
            Q_r=self.dual_reg.oscillation(self.q),
            L_psi=H + 2.0 * G * G / theta if theta > 0 else INF,
        )


# -- module-level oracle functions ---------------------------------------

def stoch_subgrad(problem, x, y, batch_size, rng):
    """Unbiased stochastic (g_x, g_y) for f at (x, y)."""
    return problem.stoch_subgrad(np.asarray(x, dtype=float), np.asarray(y, dtype=float), batch_size, rng)


def component_grad(problem, i, x, y):
    """Gradients of the i-th finite-sum component (averaging over i gives the full gradient)."""
    return problem.component_grad(int(i), np.asarray(x, dtype=float), np.asarray(y, dtype=float))


def full_dual_payoff(problem, x):
    return problem.full_dual_payoff(np.asarray(x, dtype=float))


def weak_convexity_bound(problem):
    """rho such that f(., y) + rho/2 ||.||^2 is convex for every y in the simplex."""
    return problem.loss.bounds(problem.constraint).weak_convexity


def check_point(problem, x, y=None):
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.p,):
        raise DomainError(f"primal point must have shape ({problem.p},)")
    if y is not None:
        y = np.asarray(y, dtype=float)
        if y.shape != (problem.q,):
            raise DomainError(f"dual point must have shape ({problem.q},)")
    return x, y
