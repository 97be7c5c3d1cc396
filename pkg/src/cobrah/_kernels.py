"""Compiled inner loops for the likelihood and UCB problems.

Candidates are z = (theta, b0, a0). States at observed rounds are evaluated
through stacked clipped-affine maps ``M`` of shape (n, 4, 2), see
``model.state_maps``. ``tmap`` is the (4, 2) map of the round being scored.
"""
import math

import numpy as np
from numba import njit

NLL = 0
UCB = 1

FIXED_RADIUS = 0
TUNED_RADIUS = 1


@njit(cache=True)
def softplus(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True)
def sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _component(alpha, beta, lo, hi, x0):
    v = alpha * x0 + beta
    if v <= lo:
        return lo, 0.0
    if v >= hi:
        return hi, 0.0
    return v, alpha


@njit(cache=True)
def _logit_at(M, k, z, nu, w0, w1):
    b, db = _component(M[k, 0, 0], M[k, 1, 0], M[k, 2, 0], M[k, 3, 0], z[1])
    a, da = _component(M[k, 0, 1], M[k, 1, 1], M[k, 2, 1], M[k, 3, 1], z[2])
    return nu * z[0] + w0 * b + w1 * a, w0 * db, w1 * da


@njit(cache=True)
def mean_nll(z, M, r, nu, w0, w1, want_grad, grad):
    """Average negative log-likelihood over observed rounds."""
    n = M.shape[0]
    f = 0.0
    g0 = 0.0
    g1 = 0.0
    g2 = 0.0
    for k in range(n):
        s, ds1, ds2 = _logit_at(M, k, z, nu, w0, w1)
        if r[k] > 0.5:
            f += softplus(-s)
        else:
            f += softplus(s)
        if want_grad:
            e = sigmoid(s) - r[k]
            g0 += nu * e
            g1 += ds1 * e
            g2 += ds2 * e
    if want_grad:
        grad[0] = g0 / n
        grad[1] = g1 / n
        grad[2] = g2 / n
    return f / n


@njit(cache=True)
def target_mean(z, tmap, nu, w0, w1, want_grad, grad):
    b, db = _component(tmap[0, 0], tmap[1, 0], tmap[2, 0], tmap[3, 0], z[1])
    a, da = _component(tmap[0, 1], tmap[1, 1], tmap[2, 1], tmap[3, 1], z[2])
    p = sigmoid(nu * z[0] + w0 * b + w1 * a)
    if want_grad:
        dp = p * (1.0 - p)
        grad[0] = dp * nu
        grad[1] = dp * w0 * db
        grad[2] = dp * w1 * da
    return p


@njit(cache=True)
def constraint(z, M, r, lnq, ln1mq, nu, w0, w1, radius, mode, cap, L, want_grad, grad, ell, dell):
    """Average trajectory KL to the fitted trajectory minus the allowed radius.

    Returns (violation, radius at z). ``ell``/``dell`` are scratch buffers of
    shapes (n,) and (n, 3).
    """
    n = M.shape[0]
    kl = 0.0
    k0 = 0.0
    k1 = 0.0
    k2 = 0.0
    lsum = 0.0
    for k in range(n):
        s, ds1, ds2 = _logit_at(M, k, z, nu, w0, w1)
        logp = -softplus(-s)
        log1mp = -softplus(s)
        p = math.exp(logp)
        kl += p * (logp - lnq[k]) + (1.0 - p) * (log1mp - ln1mq[k])
        if want_grad:
            dk = p * (1.0 - p) * (s - (lnq[k] - ln1mq[k]))
            k0 += dk * nu
            k1 += dk * ds1
            k2 += dk * ds2
        if mode == TUNED_RADIUS:
            if r[k] > 0.5:
                ell[k] = logp - lnq[k]
            else:
                ell[k] = log1mp - ln1mq[k]
            lsum += ell[k]
            if want_grad:
                de = r[k] - p
                dell[k, 0] = de * nu
                dell[k, 1] = de * ds1
                dell[k, 2] = de * ds2
    kl /= n
    rad = radius
    r0 = 0.0
    r1 = 0.0
    r2 = 0.0
    if mode == TUNED_RADIUS:
        if n < 2:
            rad = math.sqrt(cap * L)
        else:
            mean = lsum / n
            var = 0.0
            v0 = 0.0
            v1 = 0.0
            v2 = 0.0
            for k in range(n):
                dev = ell[k] - mean
                var += dev * dev
                if want_grad:
                    v0 += dev * dell[k, 0]
                    v1 += dev * dell[k, 1]
                    v2 += dev * dell[k, 2]
            var /= n - 1
            if var < cap:
                rad = math.sqrt(var * L)
                if want_grad and rad > 0.0:
                    scale = L / (rad * (n - 1))
                    r0 = scale * v0
                    r1 = scale * v1
                    r2 = scale * v2
            else:
                rad = math.sqrt(cap * L)
    if want_grad:
        grad[0] = k0 / n - r0
        grad[1] = k1 / n - r1
        grad[2] = k2 / n - r2
    return kl - rad, rad


@njit(cache=True)
def objective(kind, z, mu, want_grad, grad, M, r, lnq, ln1mq, tmap, nu, w0, w1,
              radius, mode, cap, L, ell, dell, work):
    """Value to minimise: mean NLL, or the penalised negative target mean."""
    if kind == NLL:
        return mean_nll(z, M, r, nu, w0, w1, want_grad, grad)
    h = target_mean(z, tmap, nu, w0, w1, want_grad, grad)
    f = -h
    if want_grad:
        for j in range(3):
            grad[j] = -grad[j]
    c, _ = constraint(z, M, r, lnq, ln1mq, nu, w0, w1, radius, mode, cap, L, want_grad, work, ell, dell)
    if c > 0.0:
        f += mu * c * c
        if want_grad:
            for j in range(3):
                grad[j] += 2.0 * mu * c * work[j]
    return f


@njit(cache=True)
def _gradient(kind, z, mu, fd, fd_step, grad, M, r, lnq, ln1mq, tmap, nu, w0, w1,
              radius, mode, cap, L, ell, dell, work, zz, scratch):
    if not fd:
        return objective(kind, z, mu, True, grad, M, r, lnq, ln1mq, tmap, nu, w0, w1,
                         radius, mode, cap, L, ell, dell, work)
    f = objective(kind, z, mu, False, scratch, M, r, lnq, ln1mq, tmap, nu, w0, w1,
                  radius, mode, cap, L, ell, dell, work)
    for j in range(3):
        for i in range(3):
            zz[i] = z[i]
        zz[j] = z[j] + fd_step
        fp = objective(kind, zz, mu, False, scratch, M, r, lnq, ln1mq, tmap, nu, w0, w1,
                       radius, mode, cap, L, ell, dell, work)
        zz[j] = z[j] - fd_step
        fm = objective(kind, zz, mu, False, scratch, M, r, lnq, ln1mq, tmap, nu, w0, w1,
                       radius, mode, cap, L, ell, dell, work)
        grad[j] = (fp - fm) / (2.0 * fd_step)
    return f


@njit(cache=True)
def descend(kind, z, mu, max_iter, step0, tol, fd, fd_step, M, r, lnq, ln1mq, tmap,
            nu, w0, w1, radius, mode, cap, L, ell, dell):
    """Projected gradient descent on [0,1]^3 with step halving on non-improvement.

    ``z`` is updated in place. Returns (value, converged).
    """
    grad = np.empty(3)
    work = np.empty(3)
    zz = np.empty(3)
    scratch = np.empty(3)
    trial = np.empty(3)
    for j in range(3):
        z[j] = min(max(z[j], 0.0), 1.0)
    f = _gradient(kind, z, mu, fd, fd_step, grad, M, r, lnq, ln1mq, tmap, nu, w0, w1,
                  radius, mode, cap, L, ell, dell, work, zz, scratch)
    step = step0
    converged = False
    for _ in range(max_iter):
        moved = 0.0
        for j in range(3):
            trial[j] = min(max(z[j] - step * grad[j], 0.0), 1.0)
            moved = max(moved, abs(trial[j] - z[j]))
        if moved == 0.0:
            converged = True
            break
        ft = objective(kind, trial, mu, False, scratch, M, r, lnq, ln1mq, tmap, nu, w0, w1,
                       radius, mode, cap, L, ell, dell, work)
        if ft < f:
            gain = f - ft
            for j in range(3):
                z[j] = trial[j]
            f = _gradient(kind, z, mu, fd, fd_step, grad, M, r, lnq, ln1mq, tmap, nu, w0, w1,
                          radius, mode, cap, L, ell, dell, work, zz, scratch)
            if gain < tol:
                converged = True
                break
            step *= 1.25
        else:
            step *= 0.5
            if step < 1e-12:
                converged = True
                break
    return f, converged


@njit(cache=True)
def fit_nll(starts, M, r, nu, w0, w1, max_iter, step0, tol, fd, fd_step):
    """Multi-start minimisation of the mean NLL. Returns (best z, mean nll, converged)."""
    n = M.shape[0]
    lnq = np.zeros(n)
    ell = np.zeros(1)
    dell = np.zeros((1, 3))
    tmap = np.zeros((4, 2))
    best = np.empty(3)
    best_f = np.inf
    best_conv = False
    z = np.empty(3)
    for s in range(starts.shape[0]):
        for j in range(3):
            z[j] = starts[s, j]
        f, conv = descend(NLL, z, 0.0, max_iter, step0, tol, fd, fd_step, M, r, lnq, lnq, tmap,
                          nu, w0, w1, 0.0, FIXED_RADIUS, 0.0, 0.0, ell, dell)
        if f < best_f:
            best_f = f
            best_conv = conv
            for j in range(3):
                best[j] = z[j]
    return best, best_f, best_conv


@njit(cache=True)
def maximise_target(starts, zhat, M, r, lnq, ln1mq, tmap, nu, w0, w1, radius, mode, cap, L,
                    max_iter, step0, tol, fd, fd_step, penalty0, penalty_rounds, feas_tol):
    """Largest target mean over candidates whose average KL to ``zhat`` stays
    within the radius. Quadratic penalty with doubling multiplier, then any
    remaining violation is removed by bisecting toward ``zhat`` (always feasible).
    Returns (best value, best z)."""
    n = M.shape[0]
    ell = np.empty(n)
    dell = np.empty((n, 3))
    work = np.empty(3)
    z = np.empty(3)
    zb = np.empty(3)
    best = zhat.copy()
    best_h = target_mean(zhat, tmap, nu, w0, w1, False, work)
    for s in range(starts.shape[0]):
        for j in range(3):
            z[j] = starts[s, j]
        mu = penalty0
        for _ in range(penalty_rounds):
            descend(UCB, z, mu, max_iter, step0, tol, fd, fd_step, M, r, lnq, ln1mq, tmap,
                    nu, w0, w1, radius, mode, cap, L, ell, dell)
            mu *= 2.0
        c, rad = constraint(z, M, r, lnq, ln1mq, nu, w0, w1, radius, mode, cap, L, False, work, ell, dell)
        if c > feas_tol * rad:
            lo = 0.0
            hi = 1.0
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                for j in range(3):
                    zb[j] = zhat[j] + mid * (z[j] - zhat[j])
                c, rad = constraint(zb, M, r, lnq, ln1mq, nu, w0, w1, radius, mode, cap, L, False,
                                    work, ell, dell)
                if c <= feas_tol * rad:
                    lo = mid
                else:
                    hi = mid
            for j in range(3):
                z[j] = zhat[j] + lo * (z[j] - zhat[j])
        h = target_mean(z, tmap, nu, w0, w1, False, work)
        if h > best_h:
            best_h = h
            for j in range(3):
                best[j] = z[j]
    return best_h, best
