"""Compiled inner solvers for the quadratic (IRLS) model of the penalized loss.

Both minimise ``0.5 b'Hb - c'b + penalty(b)`` for a small dense ``H``.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def cd_elastic_net(H, c, beta, l1, l2, tol, max_sweeps):
    """Cyclic coordinate descent; ``beta`` is updated in place.

    Returns the number of sweeps, or -1 when ``max_sweeps`` is exhausted.
    """
    m = beta.shape[0]
    Hb = np.zeros(m)
    for j in range(m):
        if beta[j] != 0.0:
            for k in range(m):
                Hb[k] += H[k, j] * beta[j]
    for sweep in range(max_sweeps):
        max_change = 0.0
        for j in range(m):
            hjj = H[j, j]
            old = beta[j]
            r = c[j] - Hb[j] + hjj * old
            denom = hjj + l2[j]
            if denom <= 0.0:
                new = 0.0
            elif r > l1[j]:
                new = (r - l1[j]) / denom
            elif r < -l1[j]:
                new = (r + l1[j]) / denom
            else:
                new = 0.0
            d = new - old
            if d != 0.0:
                beta[j] = new
                for k in range(m):
                    Hb[k] += d * H[k, j]
                ch = denom * d * d
                if ch > max_change:
                    max_change = ch
        if max_change < tol:
            return sweep + 1
    return -1


@njit(cache=True)
def _group_objective(H, c, x, starts, lengths, thresh):
    m = x.shape[0]
    val = 0.0
    for i in range(m):
        s = 0.0
        for j in range(m):
            s += H[i, j] * x[j]
        val += x[i] * (0.5 * s - c[i])
    for g in range(starts.shape[0]):
        if thresh[g] > 0.0:
            nrm = 0.0
            for i in range(starts[g], starts[g] + lengths[g]):
                nrm += x[i] * x[i]
            val += thresh[g] * np.sqrt(nrm)
    return val


@njit(cache=True)
def _group_prox(v, starts, lengths, thresh, out):
    for g in range(starts.shape[0]):
        s, e = starts[g], starts[g] + lengths[g]
        if thresh[g] <= 0.0:
            for i in range(s, e):
                out[i] = v[i]
            continue
        nrm = 0.0
        for i in range(s, e):
            nrm += v[i] * v[i]
        nrm = np.sqrt(nrm)
        if nrm <= thresh[g]:
            for i in range(s, e):
                out[i] = 0.0
        else:
            f = 1.0 - thresh[g] / nrm
            for i in range(s, e):
                out[i] = f * v[i]


@njit(cache=True)
def _mapping_norm(H, c, x, starts, lengths, thresh, L, v, out):
    """Norm of the proximal gradient mapping at ``x`` (zero iff optimal)."""
    m = x.shape[0]
    for i in range(m):
        g = -c[i]
        for j in range(m):
            g += H[i, j] * x[j]
        v[i] = x[i] - g / L
    _group_prox(v, starts, lengths, thresh / L, out)
    res = 0.0
    for i in range(m):
        d = out[i] - x[i]
        res += d * d
    return L * np.sqrt(res)


@njit(cache=True)
def fista_group_lasso(H, c, theta, starts, lengths, thresh, L, tol, max_iter):
    """Accelerated proximal gradient with function-value restart.

    ``thresh`` holds the per-group penalty ``lambda * weight`` (0 means
    unpenalized).  Accepted iterates never increase the objective.  ``theta``
    is updated in place; returns iterations used or -1 on exhaustion.
    """
    m = theta.shape[0]
    x = theta.copy()
    y = theta.copy()
    xn = np.empty(m)
    v = np.empty(m)
    t = 1.0
    fx = _group_objective(H, c, x, starts, lengths, thresh)
    restarted = False
    for it in range(max_iter):
        for i in range(m):
            g = -c[i]
            for j in range(m):
                g += H[i, j] * y[j]
            v[i] = y[i] - g / L
        _group_prox(v, starts, lengths, thresh / L, xn)
        fn = _group_objective(H, c, xn, starts, lengths, thresh)
        if fn > fx + 1e-15 * abs(fx):
            if restarted:
                # a plain proximal step from x cannot increase the objective
                # beyond rounding; treat as converged
                for i in range(m):
                    theta[i] = x[i]
                return it + 1
            t = 1.0
            for i in range(m):
                y[i] = x[i]
            restarted = True
            continue
        restarted = False
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        mom = (t - 1.0) / tn
        for i in range(m):
            y[i] = xn[i] + mom * (xn[i] - x[i])
            x[i] = xn[i]
        fx = fn
        t = tn
        if it % 5 == 0 and _mapping_norm(H, c, x, starts, lengths, thresh, L, v, xn) < tol:
            for i in range(m):
                theta[i] = x[i]
            return it + 1
    for i in range(m):
        theta[i] = x[i]
    return -1


@njit(cache=True)
def group_norms(x, starts, lengths):
    out = np.empty(starts.shape[0])
    for g in range(starts.shape[0]):
        s = 0.0
        for i in range(starts[g], starts[g] + lengths[g]):
            s += x[i] * x[i]
        out[g] = np.sqrt(s)
    return out


@njit(cache=True)
def group_kkt(theta, grad, starts, lengths, thresh):
    """Largest group-wise violation of the optimality conditions."""
    worst = 0.0
    for g in range(starts.shape[0]):
        s, e = starts[g], starts[g] + lengths[g]
        nth = 0.0
        ng = 0.0
        for i in range(s, e):
            nth += theta[i] * theta[i]
            ng += grad[i] * grad[i]
        nth = np.sqrt(nth)
        ng = np.sqrt(ng)
        if thresh[g] <= 0.0:
            v = ng
        elif nth > 0.0:
            v = 0.0
            for i in range(s, e):
                d = grad[i] + thresh[g] * theta[i] / nth
                v += d * d
            v = np.sqrt(v)
        else:
            v = max(ng - thresh[g], 0.0)
        if v > worst:
            worst = v
    return worst
