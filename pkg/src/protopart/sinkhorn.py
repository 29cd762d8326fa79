"""Balanced entropic optimal-transport assignment of patches to prototypes.

Solves, over plans A with row sums 1/N and column sums 1/K,

    maximize  Tr(A^T S) + kappa * h(A)

where h is the entropy, via log-domain Sinkhorn scaling. The log domain
matters: at kappa = 0.005 the kernel exp(S/kappa) spans ~e400 of dynamic
range for |S| <= 1, which a linear-domain implementation cannot survive.

The inner iteration lives in a compiled extension when available
(``protopart._ot_core``) with a pure-numpy fallback selected at import;
set ``PROTOPART_FORCE_FALLBACK=1`` to force the fallback. See
``benchmarks/bench_sinkhorn.py`` for a speed comparison.

The solver is a pure function; per-class solves never share state.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParams, InvariantViolation, NumericalOverflow

if os.environ.get("PROTOPART_FORCE_FALLBACK"):
    from . import _ot_fallback as _kernel

    USING_EXTENSION = False
else:
    try:
        from . import _ot_core as _kernel  # type: ignore[no-redef]

        USING_EXTENSION = True
    except ImportError:  # pragma: no cover - depends on build environment
        from . import _ot_fallback as _kernel

        USING_EXTENSION = False


@dataclass(frozen=True)
class SinkhornConfig:
    """Solver knobs: entropic strength, iteration cap, marginal tolerance."""

    kappa: float = 0.05
    max_iters: int = 100
    marginal_tol: float = 1e-6

    def __post_init__(self):
        if not self.kappa > 0:
            raise InvalidParams(f"kappa must be > 0, got {self.kappa}")
        if self.max_iters < 1:
            raise InvalidParams(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.marginal_tol > 0:
            raise InvalidParams(f"marginal_tol must be > 0, got {self.marginal_tol}")


@dataclass(frozen=True)
class TransportPlan:
    """Soft assignment plan with its scaling vectors and solve diagnostics.

    plan[i, k] is the mass moved from patch i to prototype k; rows sum to
    1/N and columns to 1/K within ``marginal_tol``, and entrywise
    plan = diag(u) * exp(S/kappa) * diag(v).
    """

    plan: np.ndarray
    u: np.ndarray
    v: np.ndarray
    converged: bool
    iters_used: int
    residual: float
    residual_history: tuple[float, ...] = ()


@dataclass(frozen=True)
class HardAssignment:
    """One prototype index per patch, from per-row argmax of a plan."""

    assign: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.assign, dtype=np.int64)
        if a.ndim != 1:
            raise InvariantViolation("assignment must be a flat index vector")
        object.__setattr__(self, "assign", a)


def sinkhorn_plan(
    s: np.ndarray, cfg: SinkhornConfig, record_residuals: bool = False
) -> TransportPlan:
    """Solve the balanced entropic assignment for similarity matrix ``s`` [N, K].

    Iterates row/column scaling until the worst marginal deviation falls
    below ``cfg.marginal_tol`` or ``cfg.max_iters`` is hit (``converged``
    reports which). Raises NumericalOverflow if stabilization ever fails;
    unreachable in practice for |s| <= 1.
    """
    s = np.ascontiguousarray(np.asarray(s, dtype=np.float64))
    if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
        raise InvalidParams(f"similarity matrix must be [N>=1, K>=1], got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise InvalidParams("similarity matrix contains non-finite values")
    sk = s / cfg.kappa
    hist = np.empty(cfg.max_iters, dtype=np.float64)
    phi, psi, iters, converged, resid = _kernel.sinkhorn_log_kernel(
        sk, cfg.max_iters, cfg.marginal_tol, hist
    )
    phi = np.asarray(phi)
    psi = np.asarray(psi)
    # Gauge freedom: shifting phi by a constant and psi by its negative
    # leaves the plan unchanged; center the two to keep u and v away from
    # overflow/underflow when kappa is small.
    shift = 0.5 * (np.mean(psi) - np.mean(phi))
    phi = phi + shift
    psi = psi - shift
    plan = np.exp(sk + phi[:, None] + psi[None, :])
    u = np.exp(phi)
    v = np.exp(psi)
    # The plan itself is computed in the log domain and stays finite, but
    # the diag(u) exp(S/kappa) diag(v) factorization must be representable
    # too: reject when exp(S/kappa) overflows or a scaling vector
    # underflows to zero. Unreachable for |S| <= 1 and kappa >= 0.005.
    if (
        not (np.all(np.isfinite(plan)) and np.all(np.isfinite(u)) and np.all(np.isfinite(v)))
        or np.max(sk) > 700.0
        or np.any(u == 0.0)
        or np.any(v == 0.0)
    ):
        raise NumericalOverflow("sinkhorn scaling left the representable range")
    return TransportPlan(
        plan=plan,
        u=u,
        v=v,
        converged=bool(converged),
        iters_used=int(iters),
        residual=float(resid),
        residual_history=tuple(hist[:iters]) if record_residuals else (),
    )


def harden_assignment(plan: TransportPlan) -> HardAssignment:
    """Per-row argmax of the soft plan; ties resolve to the lowest index."""
    return HardAssignment(assign=np.argmax(plan.plan, axis=1))


def assignment_objective(assign: HardAssignment, s: np.ndarray) -> float:
    """Total similarity collected by a hard assignment: sum_i s[i, assign[i]]."""
    s = np.asarray(s, dtype=np.float64)
    idx = assign.assign
    if idx.shape[0] != s.shape[0]:
        raise InvalidParams(
            f"assignment length {idx.shape[0]} does not match N={s.shape[0]}"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= s.shape[1]):
        raise InvalidParams("assignment index out of range")
    return float(s[np.arange(s.shape[0]), idx].sum())
