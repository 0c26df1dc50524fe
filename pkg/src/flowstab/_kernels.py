"""Numba kernels shared by the single- and multi-commodity integrators.

The loop functions are plain Python and are compiled on import with
``numba.njit``. They take the flow evaluator as an argument, so the same
source also runs uncompiled for fields that contain Python callables.
"""

import numpy as np
from numba import njit

SAT, LINEAR, NODE, PHASE = 0, 1, 2, 3

OK, NEGATIVE_STATE, NON_FINITE, NO_FIXED_POINT = 0, 1, 2, 3


@njit(cache=True)
def builtin_flow(x, fp):
    kind, param, group, phase, n_groups, n_phases = fp
    n = x.shape[0]
    gsum = np.zeros(n_groups)
    psum = np.zeros(n_phases)
    for i in range(n):
        if group[i] >= 0:
            gsum[group[i]] += x[i]
        if phase[i] >= 0:
            psum[phase[i]] += x[i]
    out = np.empty(n)
    for i in range(n):
        k = kind[i]
        if k == SAT:
            out[i] = param[i] * -np.expm1(-x[i])
        elif k == LINEAR:
            out[i] = param[i] * x[i]
        elif k == NODE:
            out[i] = x[i] / (gsum[group[i]] + param[i])
        else:
            out[i] = psum[phase[i]] / (gsum[group[i]] + param[i])
    return out


@njit(cache=True)
def routed_inflow(R, z):
    """(R^T z)_i = sum_j R[j, i] z[j]."""
    n = z.shape[0]
    out = np.zeros(n)
    for j in range(n):
        zj = z[j]
        if zj != 0.0:
            for i in range(n):
                out[i] += R[j, i] * zj
    return out


@njit(cache=True)
def resolve_outflow(x, f, lam, R, zero_threshold, max_iter, tol):
    """Actual outflow on the zero set: z_i = min(f_i, lam_i + (R^T z)_i).

    Gauss-Seidel sweep from z_i = 0 on the active set. The map is monotone
    nondecreasing and bounded by f, so the iterates increase to the least
    fixed point. Returns (z, sweeps, last_change).
    """
    n = x.shape[0]
    z = f.copy()
    active = np.empty(n, dtype=np.int64)
    m = 0
    for i in range(n):
        if x[i] <= zero_threshold:
            active[m] = i
            m += 1
            z[i] = 0.0
    if m == 0:
        return z, 0, 0.0
    scale = 1.0
    for i in range(n):
        scale = max(scale, f[i], lam[i])
    change = np.inf
    sweeps = 0
    while sweeps < max_iter:
        sweeps += 1
        change = 0.0
        for a in range(m):
            i = active[a]
            inflow = lam[i]
            for j in range(n):
                inflow += R[j, i] * z[j]
            new = min(f[i], inflow)
            d = abs(new - z[i])
            if d > change:
                change = d
            z[i] = new
        if change <= tol * scale:
            break
    return z, sweeps, change


def rk4_loop(flow_fn, fp, lam_grid, lam_mean, x0, dt, n_steps, record_every, R,
             inclusion, zero_threshold, clamp_tol, max_iter, fp_tol):
    # lam_grid holds lambda at half steps for the stages; lam_mean[k] is the
    # exact mean of lambda over step k, so inflow mass is integrated exactly
    # even when lambda jumps inside a step
    n = x0.shape[0]
    n_rec = (n_steps + record_every - 1) // record_every + 1
    xs = np.empty((n_rec, n))
    zs = np.empty((n_rec, n))
    steps = np.empty(n_rec, dtype=np.int64)
    x = x0.copy()
    status = OK
    fail_step = -1
    fail_value = 0.0
    clamp_mass = 0.0
    worst_fp = 0
    r = 0
    k = 0
    while k <= n_steps:
        l1 = lam_grid[2 * k]
        xc = np.maximum(x, 0.0)
        z1 = flow_fn(xc, fp)
        if inclusion:
            z1, it, ch = resolve_outflow(xc, z1, l1, R, zero_threshold, max_iter, fp_tol)
            worst_fp = max(worst_fp, it)
            if it >= max_iter:
                status = NO_FIXED_POINT
                fail_step = k
                fail_value = ch
                break
        if k % record_every == 0 or k == n_steps:
            xs[r] = x
            zs[r] = z1
            steps[r] = k
            r += 1
        if k == n_steps:
            break
        l2 = lam_grid[2 * k + 1]
        l3 = lam_grid[2 * k + 2]
        k1 = l1 - z1 + routed_inflow(R, z1)

        xa = x + 0.5 * dt * k1
        xc = np.maximum(xa, 0.0)
        z2 = flow_fn(xc, fp)
        if inclusion:
            z2, it, ch = resolve_outflow(xc, z2, l2, R, zero_threshold, max_iter, fp_tol)
        k2 = l2 - z2 + routed_inflow(R, z2)

        xa = x + 0.5 * dt * k2
        xc = np.maximum(xa, 0.0)
        z3 = flow_fn(xc, fp)
        if inclusion:
            z3, it, ch = resolve_outflow(xc, z3, l2, R, zero_threshold, max_iter, fp_tol)
        k3 = l2 - z3 + routed_inflow(R, z3)

        xa = x + dt * k3
        xc = np.maximum(xa, 0.0)
        z4 = flow_fn(xc, fp)
        if inclusion:
            z4, it, ch = resolve_outflow(xc, z4, l3, R, zero_threshold, max_iter, fp_tol)

        zbar = (z1 + 2.0 * z2 + 2.0 * z3 + z4) / 6.0
        lbar = lam_mean[k]
        xn = x + dt * (lbar - zbar + routed_inflow(R, zbar))

        if inclusion:
            # Links offered service at zero mass hit zero with nonzero slope.
            # Cap their step-averaged outflow at the available mass so the
            # overshoot is not injected back as mass.
            for _ in range(4 * n + 4):
                changed = False
                for i in range(n):
                    if xn[i] < 0.0 and zbar[i] > 0.0:
                        zbar[i] -= min(-xn[i] / dt, zbar[i])
                        changed = True
                if not changed:
                    break
                xn = x + dt * (lbar - zbar + routed_inflow(R, zbar))

        bad = False
        for i in range(n):
            v = xn[i]
            if not np.isfinite(v):
                status = NON_FINITE
                fail_value = v
                bad = True
                break
            if v < 0.0:
                if v < -clamp_tol:
                    status = NEGATIVE_STATE
                    fail_value = v
                    bad = True
                    break
                clamp_mass -= v
                xn[i] = 0.0
        if bad:
            fail_step = k + 1
            break
        x = xn
        k += 1
    return xs[:r], zs[:r], steps[:r], status, fail_step, fail_value, clamp_mass, worst_fp


def mc_rk4_loop(flow_fn, fp, lam_grid, lam_mean, X0, dt, n_steps, record_every, Rs,
                zero_threshold, clamp_tol):
    """Perfectly mixed commodities sharing the aggregate outflow."""
    K, n = X0.shape
    n_rec = (n_steps + record_every - 1) // record_every + 1
    xs = np.empty((n_rec, K, n))
    zs = np.empty((n_rec, K, n))
    steps = np.empty(n_rec, dtype=np.int64)
    X = X0.copy()
    status = OK
    fail_step = -1
    fail_value = 0.0
    clamp_mass = 0.0
    r = 0
    k = 0
    while k <= n_steps:
        Xc = np.maximum(X, 0.0)
        agg = Xc.sum(axis=0)
        Z1 = split_outflow(Xc, agg, flow_fn(agg, fp), zero_threshold)
        if k % record_every == 0 or k == n_steps:
            xs[r] = X
            zs[r] = Z1
            steps[r] = k
            r += 1
        if k == n_steps:
            break
        K1 = commodity_rates(lam_grid[:, 2 * k], Z1, Rs)
        Xc = np.maximum(X + 0.5 * dt * K1, 0.0)
        agg = Xc.sum(axis=0)
        Z2 = split_outflow(Xc, agg, flow_fn(agg, fp), zero_threshold)
        K2 = commodity_rates(lam_grid[:, 2 * k + 1], Z2, Rs)
        Xc = np.maximum(X + 0.5 * dt * K2, 0.0)
        agg = Xc.sum(axis=0)
        Z3 = split_outflow(Xc, agg, flow_fn(agg, fp), zero_threshold)
        K3 = commodity_rates(lam_grid[:, 2 * k + 1], Z3, Rs)
        Xc = np.maximum(X + dt * K3, 0.0)
        agg = Xc.sum(axis=0)
        Z4 = split_outflow(Xc, agg, flow_fn(agg, fp), zero_threshold)
        K4 = commodity_rates(lam_grid[:, 2 * k + 2], Z4, Rs)
        lsimp = (lam_grid[:, 2 * k] + 4.0 * lam_grid[:, 2 * k + 1] + lam_grid[:, 2 * k + 2]) / 6.0
        Xn = X + dt * ((K1 + 2.0 * K2 + 2.0 * K3 + K4) / 6.0 - lsimp + lam_mean[:, k])
        bad = False
        for c in range(K):
            for i in range(n):
                v = Xn[c, i]
                if not np.isfinite(v):
                    status = NON_FINITE
                    fail_value = v
                    bad = True
                elif v < 0.0:
                    if v < -clamp_tol:
                        status = NEGATIVE_STATE
                        fail_value = v
                        bad = True
                    else:
                        clamp_mass -= v
                        Xn[c, i] = 0.0
        if bad:
            fail_step = k + 1
            break
        X = Xn
        k += 1
    return xs[:r], zs[:r], steps[:r], status, fail_step, fail_value, clamp_mass


@njit(cache=True)
def split_outflow(Xc, agg, f, zero_threshold):
    """Share aggregate outflow f in proportion to commodity mass; 0 on empty links."""
    K, n = Xc.shape
    Z = np.zeros((K, n))
    for i in range(n):
        if agg[i] > zero_threshold:
            for c in range(K):
                Z[c, i] = f[i] * Xc[c, i] / agg[i]
    return Z


@njit(cache=True)
def commodity_rates(lam, Z, Rs):
    K, n = Z.shape
    out = np.empty((K, n))
    for c in range(K):
        out[c] = lam[c] - Z[c] + routed_inflow(Rs[c], Z[c])
    return out


rk4_loop_jit = njit(rk4_loop)
mc_rk4_loop_jit = njit(mc_rk4_loop)
