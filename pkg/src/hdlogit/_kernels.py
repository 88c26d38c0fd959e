"""Compiled coordinate-descent kernel.

Solves the weighted quadratic lasso

    min_b  (1/2n) sum_i w_i (u_i - x_i'b)^2 + sum_j pen_j |b_j|

working on the weighted residual ``resw_i = w_i (u_i - x_i'b)``, which
is updated in place together with ``b``. Both the IRLS subproblem of
the penalised logistic fit and the weighted least-squares lasso reduce
to this form.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _sweep(X, w, resw, b, pen, h, idx):
    n = X.shape[0]
    maxd = 0.0
    for k in range(idx.shape[0]):
        j = idx[k]
        hj = h[j]
        if hj <= 0.0:
            continue
        g = 0.0
        for i in range(n):
            g += X[i, j] * resw[i]
        g = g / n + hj * b[j]
        a = abs(g) - pen[j]
        if a > 0.0:
            new = a / hj if g > 0.0 else -a / hj
        else:
            new = 0.0
        delta = new - b[j]
        if delta != 0.0:
            for i in range(n):
                resw[i] -= w[i] * X[i, j] * delta
            b[j] = new
            ad = abs(delta) * np.sqrt(hj)
            if ad > maxd:
                maxd = ad
    return maxd


@njit(cache=True)
def cd_lasso(X, w, resw, b, pen, h, tol, max_passes):
    """Cyclic coordinate descent with active-set cycling.

    Returns ``(passes, converged)``. Convergence means a full sweep over
    every coordinate moved no coefficient by more than ``tol`` (measured
    in the curvature-scaled metric ``sqrt(h_j) |delta_j|``).
    """
    p = X.shape[1]
    everything = np.arange(p)
    passes = 0
    while passes < max_passes:
        maxd = _sweep(X, w, resw, b, pen, h, everything)
        passes += 1
        if maxd < tol:
            return passes, True
        active = np.flatnonzero(b != 0.0)
        while passes < max_passes:
            maxd = _sweep(X, w, resw, b, pen, h, active)
            passes += 1
            if maxd < tol:
                break
    return passes, False
