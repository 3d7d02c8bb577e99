"""Compiled inner loop for box-with-budget responses.

For each row i solve  sum_j clip(w_ij (t_ij - mu), lo_ij, hi_ij) = budget_i.
The left side is nonincreasing and piecewise linear in mu, so a Newton step
lands on the exact root of the current linear piece.  The loop stops once the
free set at mu reproduces mu, and the row is then evaluated at the root of
that piece, so the answer is determined by the final free set alone, not by
the starting point.  Bisection on the exact bracket
[min_j(t_j - hi_j / w_j), max_j(t_j - lo_j / w_j)] guards the Newton steps.

The loops index the 2-D arrays directly; slicing out row views costs more
than the arithmetic for short rows.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def budget_rows(c, u, w, lo, hi, hw, lw, budget, mu, keep_rows=True):
    """Row-wise solutions with t_ij = -(c_ij + u_j).

    ``hw = hi / w`` and ``lw = lo / w`` are precomputed breakpoint offsets.

    Returns (solutions of shape (N, n), their column sums); with
    ``keep_rows=False`` the first entry is an empty array.  `mu` holds
    starting multipliers (NaN for none) and is overwritten with the solved
    ones.
    """
    N, n = c.shape
    t = np.empty(n)
    y = np.empty(n)
    free = np.empty(n)
    out = np.empty((N if keep_rows else 0, n))
    total = np.zeros(n)
    for i in range(N):
        for j in range(n):
            t[j] = -(c[i, j] + u[j])
        b = budget[i]
        m = mu[i]
        if m != m:
            # all-free root
            ws = 0.0
            wt = 0.0
            for j in range(n):
                ws += w[i, j]
                wt += w[i, j] * t[j]
            m = (wt - b) / ws
        m_lo = -np.inf
        m_hi = np.inf
        bracketed = False
        tol = 1e-14 * (1.0 + abs(b))
        evaluated = False
        for _ in range(300):
            g = 0.0
            fixed = 0.0
            ws = 0.0
            wt = 0.0
            # [p_lo, p_hi]: the mu-interval on which this free set is valid
            p_lo = -np.inf
            p_hi = np.inf
            for j in range(n):
                # branch-free: the clipped/free pattern is unpredictable
                v = w[i, j] * (t[j] - m)
                yc = min(max(v, lo[i, j]), hi[i, j])
                f = 1.0 if (v > lo[i, j]) & (v < hi[i, j]) else 0.0
                fixed += yc - f * yc
                ws += f * w[i, j]
                wt += f * w[i, j] * t[j]
                free[j] = f
                y[j] = yc
                g += yc
                bh = t[j] - hw[i, j]
                bl = t[j] - lw[i, j]
                # clipped high while mu <= bh, free on (bh, bl), clipped low after;
                # the piece ends at the nearest breakpoints on either side of mu
                p_hi = min(p_hi, min(bh if bh >= m else np.inf, bl if bl >= m else np.inf))
                p_lo = max(p_lo, max(bh if bh <= m else -np.inf, bl if bl <= m else -np.inf))
            if g > b:
                m_lo = m
            else:
                m_hi = m
            if ws > 0.0:
                cand = (wt - (b - fixed)) / ws
                if abs(g - b) <= tol or abs(cand - m) <= 1e-14 * (1.0 + abs(m)) or (
                    p_lo <= cand <= p_hi
                ):
                    # move the free coordinates onto the root of this piece
                    for j in range(n):
                        y[j] -= free[j] * w[i, j] * (cand - m)
                    m = cand
                    evaluated = True
                    break
                if m_lo < cand < m_hi:
                    m = cand
                    continue
            else:
                # no free coordinate: free the one whose breakpoint is next in
                # the direction of the root and solve that piece
                jb = -1
                best = np.inf
                for j in range(n):
                    if g > b and y[j] == hi[i, j] and hi[i, j] > lo[i, j]:
                        d = (t[j] - hi[i, j] / w[i, j]) - m
                    elif g < b and y[j] == lo[i, j] and hi[i, j] > lo[i, j]:
                        d = m - (t[j] - lo[i, j] / w[i, j])
                    else:
                        continue
                    if d < best:
                        best = d
                        jb = j
                if jb >= 0:
                    cand = t[jb] - (b - (fixed - y[jb])) / w[i, jb]
                    if m_lo < cand < m_hi:
                        m = cand
                        continue
            if not bracketed:
                a_min = np.inf
                b_max = -np.inf
                for j in range(n):
                    a_min = min(a_min, t[j] - hi[i, j] / w[i, j])
                    b_max = max(b_max, t[j] - lo[i, j] / w[i, j])
                m_lo = max(m_lo, a_min)
                m_hi = min(m_hi, b_max)
                bracketed = True
            if m_hi - m_lo <= 1e-15 * (1.0 + abs(m)):
                break
            m = 0.5 * (m_lo + m_hi)
        mu[i] = m
        if not evaluated:
            for j in range(n):
                y[j] = min(max(w[i, j] * (t[j] - m), lo[i, j]), hi[i, j])
        for j in range(n):
            total[j] += y[j]
            if keep_rows:
                out[i, j] = y[j]
    return out, total
