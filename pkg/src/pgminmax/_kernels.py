"""Compiled inner loops for single-sample stochastic mirror descent on DRO instances.

The arithmetic mirrors the reference numpy implementation in
:mod:`pgminmax.inner`; tests compare the two on identical index sequences.
"""
import math

import numpy as np
from numba import njit

LOSS_QUADRATIC = 0
LOSS_TRUNCATED_LOGISTIC = 1

CONSTRAINT_FREE = 0
CONSTRAINT_BALL = 1
CONSTRAINT_BOX = 2


@njit(cache=True)
def _project_simplex(v):
    n = v.size
    u = np.sort(v)[::-1]
    css = 0.0
    tau = 0.0
    for k in range(n):
        css += u[k]
        t = (css - 1.0) / (k + 1)
        if u[k] - t > 0:
            tau = t
    out = np.empty(n)
    for k in range(n):
        out[k] = max(v[k] - tau, 0.0)
    return out


@njit(cache=True)
def _floor_simplex(y, floor):
    deficit = 0.0
    slack = 0.0
    for k in range(y.size):
        if y[k] < floor:
            deficit += floor - y[k]
        else:
            slack += y[k] - floor
    for k in range(y.size):
        if y[k] < floor:
            y[k] = floor
        else:
            y[k] -= deficit * (y[k] - floor) / slack


@njit(cache=True)
def smd_dro_kernel(loss_kind, B, off, s, alpha, x, y, idx, a_e, a_grad, anchor,
                   ctype, radius, lo, hi, entropy, w_prev, w_g, shift, floor, eta_y):
    """Run len(idx) steps in place on (x, y); return (sum of iterates, failed step or -1)."""
    n = y.size
    p = x.size
    x_sum = x.copy()
    ly = np.log(y) if entropy else np.empty(0)
    g = np.empty(p)
    for j in range(idx.size):
        i = idx[j]
        if loss_kind == LOSS_QUADRATIC:
            xx = 0.0
            bx = 0.0
            for k in range(p):
                xx += x[k] * x[k]
                bx += B[i, k] * x[k]
            v = 0.5 * s * xx + bx + off[i]
            for k in range(p):
                g[k] = B[i, k] + s * x[k]
        else:
            m = 0.0
            for k in range(p):
                m += B[i, k] * x[k]
            ell = max(-m, 0.0) + math.log1p(math.exp(-abs(m)))
            v = alpha * math.log1p(ell / alpha)
            if m > -700.0:
                sig = 1.0 / (1.0 + math.exp(m))
            else:
                sig = 1.0
            c = -sig / (1.0 + ell / alpha)
            for k in range(p):
                g[k] = c * B[i, k]
        scale = a_grad * n * y[i]
        for k in range(p):
            x[k] = a_e * x[k] + anchor[k] - scale * g[k]
        if ctype == CONSTRAINT_BALL:
            nrm = 0.0
            for k in range(p):
                nrm += x[k] * x[k]
            nrm = math.sqrt(nrm)
            if nrm > radius:
                for k in range(p):
                    x[k] *= radius / nrm
        elif ctype == CONSTRAINT_BOX:
            for k in range(p):
                x[k] = min(max(x[k], lo[k]), hi[k])

        if entropy:
            zmax = -np.inf
            for k in range(n):
                ly[k] = w_prev * ly[k] - shift
            ly[i] += w_g * n * v
            for k in range(n):
                if ly[k] > zmax:
                    zmax = ly[k]
            tot = 0.0
            for k in range(n):
                ly[k] -= zmax
                y[k] = math.exp(ly[k])
                tot += y[k]
            low = False
            for k in range(n):
                y[k] /= tot
                if y[k] < floor:
                    low = True
            if low:
                _floor_simplex(y, floor)
                for k in range(n):
                    ly[k] = math.log(y[k])
            else:
                lt = math.log(tot)
                for k in range(n):
                    ly[k] -= lt
        else:
            v_new = y.copy()
            v_new[i] += eta_y * n * v
            y[:] = _project_simplex(v_new)

        ok = True
        for k in range(p):
            if not math.isfinite(x[k]):
                ok = False
        if not ok or not math.isfinite(y.sum()):
            return x_sum, j
        for k in range(p):
            x_sum[k] += x[k]
    return x_sum, -1
