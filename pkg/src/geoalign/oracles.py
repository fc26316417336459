"""Brute-force reference computations used by ``selftest`` and the test suite.

Nothing here shares code with the solvers it checks: medians are found by
enumerating candidates, linear systems are assembled pixel by pixel.
"""

from __future__ import annotations

import numpy as np


def _as2d(X, Y):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim == 1:
        X, Y = X[:, None], Y[:, None]
    return X, Y


def l1_min_1d(v, w):
    """``min_b sum w |b - v|`` by evaluating every candidate ``b = v_k``.

    Returns ``(b, value)``; ties go to the smallest ``b``.
    """
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    cand = np.unique(v)
    best_b, best_f = None, np.inf
    step = max(1, 4_000_000 // max(v.size, 1))
    for s in range(0, cand.size, step):
        c = cand[s:s + step]
        f = np.abs(c[:, None] - v[None, :]) @ w
        k = int(np.argmin(f))
        if f[k] < best_f:
            best_b, best_f = float(c[k]), float(f[k])
    return best_b, best_f


def scale_breakpoint_oracle(X, Y, w):
    """Scale-only optimum by evaluating the objective at every breakpoint."""
    X, Y = _as2d(X, Y)
    w = np.ones(X.shape[0]) if w is None else np.asarray(w, dtype=np.float64)
    x, y = X.ravel(), Y.ravel()
    ww = np.repeat(w, X.shape[1])
    nz = x != 0
    bps = np.unique(y[nz] / x[nz])
    best_a, best_f = None, np.inf
    for s in range(0, bps.size, 512):
        a = bps[s:s + 512]
        f = np.abs(a[:, None] * x[None, :] - y[None, :]) @ ww
        k = int(np.argmin(f))
        if f[k] < best_f:
            best_a, best_f = float(a[k]), float(f[k])
    return best_a, best_f


def _ternary(f, lo, hi, rel=1e-13, max_iter=400):
    for _ in range(max_iter):
        if hi - lo <= rel * abs(hi):
            break
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if f(m1) <= f(m2):
            hi = m2
        else:
            lo = m1
    return 0.5 * (lo + hi)


def scale_grid_oracle(X, Y, w, n_grid=10**6, lo=1e-3, hi=1e3):
    """Scale-only optimum by dense log-spaced grid search plus ternary refinement."""
    X, Y = _as2d(X, Y)
    w = np.ones(X.shape[0]) if w is None else np.asarray(w, dtype=np.float64)
    x, y = X.ravel(), Y.ravel()
    ww = np.repeat(w, X.shape[1])
    grid = np.geomspace(lo, hi, n_grid)
    vals = np.empty(n_grid)
    step = max(1, 2_000_000 // x.size)
    for s in range(0, n_grid, step):
        a = grid[s:s + step]
        vals[s:s + step] = np.abs(a[:, None] * x[None, :] - y[None, :]) @ ww
    k = int(np.argmin(vals))

    def f(a):
        return float(np.sum(ww * np.abs(a * x - y)))

    a = _ternary(f, grid[max(k - 1, 0)], grid[min(k + 1, n_grid - 1)])
    return a, f(a)


def profile_objective(X, Y, w, a):
    """``sum_axes min_b sum w |a x + b - y|`` with each inner minimum by enumeration."""
    X, Y = _as2d(X, Y)
    total = 0.0
    shifts = []
    for c in range(X.shape[1]):
        b, f = l1_min_1d(Y[:, c] - a * X[:, c], w)
        total += f
        shifts.append(b)
    return total, np.array(shifts)


def _profile_grid(X, Y, w, grid):
    """Vectorized profile values on a grid of scales (sort-based inner medians)."""
    out = np.zeros(grid.size)
    for c in range(X.shape[1]):
        R = Y[None, :, c] - grid[:, None] * X[None, :, c]
        order = np.argsort(R, axis=1)
        Rs = np.take_along_axis(R, order, axis=1)
        Ws = w[order]
        cum = np.cumsum(Ws, axis=1)
        k = np.argmax(cum >= 0.5 * cum[:, -1:], axis=1)
        med = Rs[np.arange(grid.size), k]
        out += (np.abs(Rs - med[:, None]) * Ws).sum(axis=1)
    return out


def scale_shift_grid_oracle(X, Y, w, n_grid=2000, lo=1e-3, hi=1e3):
    """Scale-and-shift optimum by a dense scale grid with exact inner shifts,
    followed by ternary refinement of the profile inside the best grid cell."""
    X, Y = _as2d(X, Y)
    w = np.ones(X.shape[0]) if w is None else np.asarray(w, dtype=np.float64)
    grid = np.geomspace(lo, hi, n_grid)
    vals = np.concatenate([_profile_grid(X, Y, w, grid[s:s + 256]) for s in range(0, n_grid, 256)])
    k = int(np.argmin(vals))

    def f(a):
        return float(_profile_grid(X, Y, w, np.array([a]))[0])

    a = _ternary(f, grid[max(k - 1, 0)], grid[min(k + 1, n_grid - 1)])
    val, shifts = profile_objective(X, Y, w, a)
    return a, shifts, val


def shift_breakpoint_oracle(X, Y, w):
    """Translation-only optimum: independent 1-D enumeration per axis."""
    X, Y = _as2d(X, Y)
    w = np.ones(X.shape[0]) if w is None else np.asarray(w, dtype=np.float64)
    b, f = zip(*(l1_min_1d(Y[:, c] - X[:, c], w) for c in range(X.shape[1])))
    return np.array(b), float(sum(f))


def l1_linprog_oracle(X, Y, w, variant="scale_shift"):
    """Solve the weighted-L1 alignment as a linear program (HiGHS).

    Returns ``(scale, shift, objective)``.
    """
    from scipy.optimize import linprog
    from scipy.sparse import coo_matrix, vstack

    X, Y = _as2d(X, Y)
    n, d = X.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=np.float64)
    m = n * d
    with_scale = variant in ("scale_shift", "scale_only")
    with_shift = variant in ("scale_shift", "shift_only")
    # variables: [a?] [b_0..b_{d-1}?] [e_0..e_{m-1}]
    ns = int(with_scale)
    nb = d if with_shift else 0
    nv = ns + nb + m
    rows = np.arange(m)
    cols, vals = [], []
    r_idx = []
    if with_scale:
        r_idx.append(rows)
        cols.append(np.zeros(m, int))
        vals.append(X.ravel())
    if with_shift:
        r_idx.append(rows)
        cols.append(ns + np.tile(np.arange(d), n))
        vals.append(np.ones(m))
    r_idx.append(rows)
    cols.append(ns + nb + rows)
    vals.append(-np.ones(m))
    r = np.concatenate(r_idx)
    c_ = np.concatenate(cols)
    v_ = np.concatenate(vals)
    upper = coo_matrix((v_, (r, c_)), shape=(m, nv))
    v_low = v_.copy()
    v_low[c_ < ns + nb] *= -1
    lower = coo_matrix((v_low, (r, c_)), shape=(m, nv))
    rhs = Y.ravel()
    if not with_scale:
        rhs_u = rhs - X.ravel()
    else:
        rhs_u = rhs
    A = vstack([upper, lower]).tocsr()
    b = np.concatenate([rhs_u, -rhs_u])
    cost = np.concatenate([np.zeros(ns + nb), np.repeat(w, d)])
    bounds = [(None, None)] * (ns + nb) + [(0, None)] * m
    res = linprog(cost, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if not res.success:
        raise RuntimeError(res.message)
    a = float(res.x[0]) if with_scale else 1.0
    shift = res.x[ns:ns + nb] if with_shift else np.zeros(d)
    return a, np.asarray(shift), float(res.fun)


def lsq_cramer_oracle(x, y):
    """Least-squares line fit from the 2x2 normal equations by Cramer's rule."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    sxx, sx, n = float(x @ x), float(x.sum()), float(x.size)
    sxy, sy = float(x @ y), float(y.sum())
    det = sxx * n - sx * sx
    a = (sxy * n - sx * sy) / det
    b = (sxx * sy - sx * sxy) / det
    return a, b


def sphere_scan(points, mask, center, radius):
    """Flat indices ``i`` in ``mask`` with ``||p_i - p_center|| <= radius``, by linear scan."""
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    M = np.asarray(mask, bool).ravel()
    c = P[center]
    out = []
    for i in range(P.shape[0]):
        if M[i] and np.sqrt(np.sum((P[i] - c) ** 2)) <= radius:
            out.append(i)
    return np.array(out, dtype=np.int64)


def poisson_dense(log_guide, log_known, unknown):
    """Dense direct solve of the log-depth Poisson completion.

    ``unknown`` is a boolean grid; every 4-neighbor edge with at least one
    unknown endpoint contributes ``(u_i - u_j - (g_i - g_j))^2``; known
    endpoints are fixed to ``log_known``. Returns the full log-depth grid.
    """
    H, W = unknown.shape
    idx = -np.ones((H, W), int)
    cells = [(r, c) for r in range(H) for c in range(W) if unknown[r, c]]
    for k, (r, c) in enumerate(cells):
        idx[r, c] = k
    n = len(cells)
    A = np.zeros((n, n))
    b = np.zeros(n)
    for k, (r, c) in enumerate(cells):
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr, cc = r + dr, c + dc
            if not (0 <= rr < H and 0 <= cc < W):
                continue
            A[k, k] += 1.0
            b[k] += log_guide[r, c] - log_guide[rr, cc]
            if unknown[rr, cc]:
                A[k, idx[rr, cc]] -= 1.0
            else:
                b[k] += log_known[rr, cc]
    sol = np.linalg.solve(A, b)
    out = np.array(log_known, dtype=np.float64, copy=True)
    for k, (r, c) in enumerate(cells):
        out[r, c] = sol[k]
    return out


def boundary_f1_recount(pred, gt, mask, thresholds=(5, 10, 15, 20, 25)):
    """Boundary F1 by explicit per-pixel loops over the four neighbor directions."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.asarray(mask, bool)
    H, W = gt.shape
    dirs = ((0, 1), (0, -1), (1, 0), (-1, 0))
    scores = []
    for t in thresholds:
        ratio = 1.0 + t / 100.0
        recalls, precisions = [], []
        for dr, dc in dirs:
            tp = n_pred = n_gt = 0
            for r in range(H):
                for c in range(W):
                    rr, cc = r + dr, c + dc
                    if not (0 <= rr < H and 0 <= cc < W):
                        continue
                    if not (mask[r, c] and mask[rr, cc]):
                        continue
                    e_p = pred[rr, cc] / pred[r, c] > ratio
                    e_g = gt[rr, cc] / gt[r, c] > ratio
                    tp += e_p and e_g
                    n_pred += e_p
                    n_gt += e_g
            if n_gt:
                recalls.append(tp / n_gt)
            if n_pred:
                precisions.append(tp / n_pred)
        rc = sum(recalls) / len(recalls) if recalls else 1.0
        pc = sum(precisions) / len(precisions) if precisions else 1.0
        scores.append(0.0 if rc + pc == 0 else 2 * rc * pc / (rc + pc))
    return 100.0 * float(np.mean(scores))
