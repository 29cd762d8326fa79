"""Pure-numpy log-domain Sinkhorn kernel.

Drop-in fallback for the compiled extension ``protopart._ot_core``; both
expose ``sinkhorn_log_kernel`` with identical semantics. The iteration keeps
dual potentials phi (rows) and psi (columns) such that the transport plan is
``exp(phi[i] + psi[j] + sk[i, j])`` with ``sk = S / kappa``.
"""

from __future__ import annotations

import numpy as np


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def sinkhorn_log_kernel(sk: np.ndarray, max_iters: int, tol: float, hist: np.ndarray):
    """Run row/column scaling until the marginal residual drops below tol.

    sk    [N, K] similarity matrix already divided by kappa
    hist  preallocated float64 array of length max_iters; filled with the
          residual after each completed iteration

    Returns (phi, psi, iters_used, converged, residual).
    """
    n, k = sk.shape
    log_a = -np.log(n)
    log_b = -np.log(k)
    psi = np.zeros(k)
    iters = 0
    converged = False
    resid = np.inf
    for t in range(max_iters):
        phi = log_a - _logsumexp(sk + psi[None, :], axis=1)
        psi = log_b - _logsumexp(sk + phi[:, None], axis=0)
        log_plan = sk + phi[:, None] + psi[None, :]
        row_resid = np.max(np.abs(np.exp(_logsumexp(log_plan, axis=1)) - 1.0 / n))
        col_resid = np.max(np.abs(np.exp(_logsumexp(log_plan, axis=0)) - 1.0 / k))
        resid = max(row_resid, col_resid)
        hist[t] = resid
        iters = t + 1
        if resid < tol:
            converged = True
            break
    return phi, psi, iters, converged, resid
