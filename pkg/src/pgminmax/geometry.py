"""Bregman geometry of the dual simplex and proximal steps for the primal block.

Two distance generating functions are supported on the probability simplex:

* ``entropy``: d(y) = sum_i y_i log y_i, paired with the l1 norm, so the
  Bregman divergence is the KL divergence.
* ``euclidean``: d(y) = 0.5 ||y||_2^2, paired with the l2 norm.

Every dual update used by the solvers is a *composite mirror step*

    argmin_y  -<y, g> + (1/eta) V(y, y0) + sum_k a_k V(y, y_k) + r(y)

which is available in closed form for both geometries.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError

EUCLIDEAN = "euclidean"
ENTROPY = "entropy"

DEFAULT_FLOOR = 1e-12


@dataclass(frozen=True)
class BregmanGeometry:
    """Distance generating function on the q-dimensional simplex.

    ``floor`` is the smallest coordinate an entropic iterate may take; it keeps
    iterates in the relative interior where grad d is finite. It is zero for the
    euclidean geometry, whose steps end in an exact simplex projection.
    """

    kind: str
    dim: int
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        if self.kind not in (EUCLIDEAN, ENTROPY):
            raise ConfigurationError(f"unknown geometry kind {self.kind!r}")
        if int(self.dim) < 1:
            raise ConfigurationError("geometry dimension must be positive")
        if self.kind == ENTROPY and not (0.0 < self.floor < 1.0 / self.dim):
            raise ConfigurationError("entropy floor must lie in (0, 1/q)")
        if self.kind == EUCLIDEAN and self.floor != 0.0:
            object.__setattr__(self, "floor", 0.0)

    @classmethod
    def entropy(cls, dim, floor=DEFAULT_FLOOR):
        return cls(ENTROPY, int(dim), floor)

    @classmethod
    def euclidean(cls, dim):
        return cls(EUCLIDEAN, int(dim), 0.0)

    # -- distance generating function -----------------------------------
    def dgf(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == EUCLIDEAN:
            return 0.5 * float(y @ y)
        pos = y > 0
        return float(np.sum(y[pos] * np.log(y[pos])))

    def grad_dgf(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == EUCLIDEAN:
            return y.copy()
        if np.any(y <= 0):
            raise DomainError("entropy gradient is undefined on the simplex boundary")
        return np.log(y) + 1.0

    def center(self):
        """argmin of d over the simplex (the uniform vector for both kinds)."""
        return np.full(self.dim, 1.0 / self.dim)

    def diameter(self):
        """D_y = sqrt(2 max d - 2 min d) over the simplex."""
        if self.kind == ENTROPY:
            return float(np.sqrt(2.0 * np.log(self.dim)))
        return float(np.sqrt(1.0 - 1.0 / self.dim))

    def norm(self, v):
        v = np.asarray(v, dtype=float)
        return float(np.abs(v).sum()) if self.kind == ENTROPY else float(np.linalg.norm(v))

    def dual_norm(self, v):
        v = np.asarray(v, dtype=float)
        return float(np.abs(v).max()) if self.kind == ENTROPY else float(np.linalg.norm(v))


@dataclass(frozen=True)
class PrimalConstraint:
    """Indicator g(x) of a closed convex set: free, origin-centred l2 ball, or box."""

    kind: str = "free"
    radius: float = np.inf
    lo: np.ndarray | None = field(default=None, compare=False)
    hi: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("free", "ball", "box"):
            raise ConfigurationError(f"unknown constraint kind {self.kind!r}")
        if self.kind == "ball" and not (0.0 < self.radius < np.inf):
            raise ConfigurationError("ball radius must be positive and finite")
        if self.kind == "box":
            if self.lo is None or self.hi is None:
                raise ConfigurationError("box constraint needs lo and hi")
            lo = np.asarray(self.lo, dtype=float)
            hi = np.asarray(self.hi, dtype=float)
            if lo.shape != hi.shape or np.any(lo > hi):
                raise ConfigurationError("box bounds must satisfy lo <= hi")
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)

    @classmethod
    def free(cls):
        return cls("free")

    @classmethod
    def ball(cls, radius):
        return cls("ball", float(radius))

    @classmethod
    def box(cls, lo, hi):
        return cls("box", np.inf, np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))

    def diameter(self):
        if self.kind == "ball":
            return 2.0 * self.radius
        if self.kind == "box":
            return float(np.linalg.norm(self.hi - self.lo))
        return np.inf

    def max_norm(self):
        """sup ||x||_2 over the set."""
        if self.kind == "ball":
            return self.radius
        if self.kind == "box":
            return float(np.linalg.norm(np.maximum(np.abs(self.lo), np.abs(self.hi))))
        return np.inf

    def contains(self, x, tol=1e-12):
        x = np.asarray(x, dtype=float)
        if self.kind == "ball":
            return float(np.linalg.norm(x)) <= self.radius * (1.0 + tol)
        if self.kind == "box":
            return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))
        return True

    def project(self, x):
        return project(self, x)


@dataclass(frozen=True)
class DualRegularizer:
    """r(y): the simplex indicator, or theta * KL(y, 1/q) on the simplex."""

    kind: str = "simplex"
    theta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("simplex", "kl"):
            raise ConfigurationError(f"unknown dual regularizer {self.kind!r}")
        if self.kind == "kl" and not self.theta > 0:
            raise ConfigurationError("kl-to-uniform regularizer needs theta > 0")
        if self.kind == "simplex" and self.theta != 0.0:
            object.__setattr__(self, "theta", 0.0)

    @classmethod
    def simplex(cls):
        return cls("simplex", 0.0)

    @classmethod
    def kl(cls, theta):
        return cls("kl", float(theta))

    @classmethod
    def from_theta(cls, theta):
        return cls.kl(theta) if theta > 0 else cls.simplex()

    def value(self, y):
        if self.kind == "simplex":
            return 0.0
        y = np.asarray(y, dtype=float)
        return self.theta * _kl_to_uniform(y)

    def strong_convexity(self, geom: BregmanGeometry):
        """mu such that r is mu-strongly convex w.r.t. the geometry's divergence."""
        if self.kind == "kl" and geom.kind == ENTROPY:
            return self.theta
        return 0.0

    def oscillation(self, q):
        """Q_r = max r - min r over the simplex."""
        return self.theta * float(np.log(q)) if self.kind == "kl" else 0.0


def _kl_to_uniform(y):
    q = y.size
    pos = y > 0
    return float(np.sum(y[pos] * np.log(q * y[pos])))


# -- divergences --------------------------------------------------------

_SERIES_K = np.arange(2, 24)
_SERIES_COEF = ((-1.0) ** _SERIES_K) / (_SERIES_K * (_SERIES_K - 1.0))


def _entropy_h(t):
    """h(t) = t log t - t + 1 >= 0, accurate near t = 1."""
    t = np.asarray(t, dtype=float)
    u = t - 1.0
    out = np.empty_like(t)
    near = np.abs(u) < 0.1
    if np.any(near):
        un = u[near]
        out[near] = np.polyval(np.concatenate([_SERIES_COEF[::-1], [0.0, 0.0]]), un)
    far = ~near
    if np.any(far):
        tf = t[far]
        with np.errstate(divide="ignore", invalid="ignore"):
            out[far] = np.where(tf > 0, tf * np.log(tf) - tf + 1.0, 1.0)
    return out


def bregman_divergence(geom: BregmanGeometry, y, y_ref):
    """V(y, y_ref) = d(y) - d(y_ref) - <grad d(y_ref), y - y_ref>.

    For the entropy the sum is evaluated coordinate-wise as
    ``y_ref_i * h(y_i / y_ref_i)`` with every term nonnegative, which avoids
    the cancellation of the textbook formula when y is close to y_ref.
    """
    y = np.asarray(y, dtype=float)
    y_ref = np.asarray(y_ref, dtype=float)
    if y.shape != y_ref.shape:
        raise DomainError("points must have equal shapes")
    if geom.kind == EUCLIDEAN:
        d = y - y_ref
        return 0.5 * float(d @ d)
    if np.any(y < 0):
        raise DomainError("entropy divergence needs nonnegative y")
    if np.any(y_ref <= 0):
        raise DomainError("reference point lies on the simplex boundary")
    return float(np.sum(y_ref * _entropy_h(y / y_ref)))


# -- simplex helpers ----------------------------------------------------

def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    k = idx[u - css / idx > 0][-1]
    tau = css[k - 1] / k
    return np.maximum(v - tau, 0.0)


def floor_simplex(y, floor):
    """Raise coordinates to ``floor`` and take the excess from the others.

    The result sums to one and every coordinate is >= floor (exactly, not just
    up to a renormalisation factor).
    """
    if floor <= 0:
        return y
    low = y < floor
    if not np.any(low):
        return y
    y = y.copy()
    deficit = float(np.sum(floor - y[low]))
    y[low] = floor
    slack = y[~low] - floor
    y[~low] -= deficit * slack / slack.sum()
    return y


def _validate_step(eta):
    if not (eta > 0) or not np.isfinite(eta):
        raise ConfigurationError(f"mirror step size must be positive and finite, got {eta!r}")


def composite_mirror_step(geom: BregmanGeometry, y0, g, eta, anchors: Iterable = (), reg: DualRegularizer | None = None):
    """argmin_y -<y,g> + V(y,y0)/eta + sum_k a_k V(y,y_k) + r(y) over the simplex.

    ``anchors`` is a sequence of ``(weight, point)`` pairs; zero weights are
    ignored (this is how an infinite dual proximal parameter is expressed).
    """
    _validate_step(eta)
    reg = reg if reg is not None else DualRegularizer.simplex()
    g = np.asarray(g, dtype=float)
    w0 = 1.0 / eta
    active = [(float(a), np.asarray(p, dtype=float)) for a, p in anchors if a != 0.0]
    if any(a < 0 for a, _ in active):
        raise ConfigurationError("anchor weights must be nonnegative")

    if geom.kind == ENTROPY:
        theta = reg.theta if reg.kind == "kl" else 0.0
        total = w0 + sum(a for a, _ in active) + theta
        with np.errstate(divide="ignore"):
            z = g + w0 * np.log(y0)
            for a, p in active:
                z = z + a * np.log(p)
        if theta:
            z = z - theta * np.log(geom.dim)
        z = z / total
        y = np.exp(z - z.max())
        y /= y.sum()
        return floor_simplex(y, geom.floor)

    if reg.kind == "kl":
        raise ConfigurationError("the kl-to-uniform regularizer requires the entropy geometry")
    total = w0 + sum(a for a, _ in active)
    v = g + w0 * np.asarray(y0, dtype=float)
    for a, p in active:
        v = v + a * p
    return project_simplex(v / total)


# -- primal block -------------------------------------------------------

def project(constraint: PrimalConstraint, x):
    """Euclidean projection onto the constraint set; identity when feasible."""
    x = np.asarray(x, dtype=float)
    if constraint.kind == "ball":
        nrm = float(np.linalg.norm(x))
        if nrm > constraint.radius:
            return x * (constraint.radius / nrm)
        return x
    if constraint.kind == "box":
        return np.clip(x, constraint.lo, constraint.hi)
    return x


def primal_prox_step(constraint: PrimalConstraint, x_j, g, eta_x, gamma, x_bar):
    """argmin_x <x,g> + ||x-x_j||^2/(2 eta_x) + ||x-x_bar||^2/(2 gamma) + g(x).

    Both quadratics are isotropic, so averaging followed by projection is exact.
    ``gamma = inf`` drops the anchor term.
    """
    if not (eta_x > 0) or not np.isfinite(eta_x):
        raise ConfigurationError(f"primal step size must be positive and finite, got {eta_x!r}")
    if not gamma > 0:
        raise ConfigurationError("gamma must be positive")
    inv_e = 1.0 / eta_x
    inv_g = 0.0 if np.isinf(gamma) else 1.0 / gamma
    x_u = (inv_e * np.asarray(x_j, dtype=float) + inv_g * np.asarray(x_bar, dtype=float) - g) / (inv_e + inv_g)
    return project(constraint, x_u)


def uniform(q):
    return np.full(int(q), 1.0 / int(q))


__all__: Sequence[str] = [
    "BregmanGeometry",
    "PrimalConstraint",
    "DualRegularizer",
    "bregman_divergence",
    "composite_mirror_step",
    "primal_prox_step",
    "project",
    "project_simplex",
    "floor_simplex",
    "uniform",
]
