"""Entropic optimal transport by alternating KL projections (Sinkhorn scaling).

The entropic problem ``min <C, g> + eps * sum(g log g - g)`` over plans with
marginals ``mu`` and ``nu`` is the KL projection of the Gibbs kernel
``exp(-C/eps)`` onto the transport polytope. Projecting alternately onto the
row and column constraint sets is a diagonal scaling; here the scalings are
stored as log-potentials ``f, g`` with ``plan = exp((f_i + g_j - C_ij)/eps)``
so that small ``eps`` does not underflow.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import logsumexp, xlogy

from .convex import Functional, as_vector, bregman, make_pair
from .errors import DimensionMismatch, DomainError, EmptySupport, MaxIterExceeded, TooLarge

WEIGHT_TOL = 1e-12


@dataclass
class DiscreteMeasure:
    weights: np.ndarray
    support: Optional[Sequence] = None

    def __post_init__(self):
        w = as_vector(self.weights, "weights")
        if np.any(w < 0):
            raise DomainError("weights must be non-negative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL * max(1, w.size):
            raise DomainError(f"weights sum to {w.sum():.15g}, not 1")
        self.weights = w
        if self.support is not None and len(self.support) != w.size:
            raise DimensionMismatch("support and weights differ in length")

    @classmethod
    def uniform(cls, n, support=None):
        return cls(np.full(n, 1.0 / n), support)

    @property
    def size(self):
        return self.weights.size


@dataclass
class TransportPlan:
    matrix: np.ndarray
    row_residual: float
    col_residual: float
    cost: float
    kl_objective: float
    iterations: int
    eps: float
    converged: bool = True
    row_index: Optional[np.ndarray] = None
    col_index: Optional[np.ndarray] = None
    dual_history: List[float] = field(default_factory=list, repr=False)
    log_history: List[np.ndarray] = field(default_factory=list, repr=False)

    def summary(self):
        return {
            "cost": self.cost,
            "kl_objective": self.kl_objective,
            "iterations": self.iterations,
            "residuals": {"row": self.row_residual, "col": self.col_residual},
            "eps": self.eps,
            "converged": self.converged,
        }

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            for row in self.matrix:
                wr.writerow([repr(float(x)) for x in row])

    def write_summary(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.summary(), fh, indent=1)
            fh.write("\n")


def _check_cost(C, n, m):
    C = np.asarray(C, dtype=float)
    if C.shape != (n, m):
        raise DimensionMismatch(f"cost matrix is {C.shape}, marginals need ({n}, {m})")
    if not np.all(np.isfinite(C)):
        raise DomainError("cost matrix must be finite")
    return C


def gibbs_kernel(C, eps):
    """``exp(-C/eps)`` entrywise; may underflow, the solver never forms it."""
    if eps <= 0:
        raise DomainError("eps must be positive")
    return np.exp(-np.asarray(C, dtype=float) / eps)


def kl_to_kernel(log_plan, C, eps):
    """``KL(plan, exp(-C/eps))`` from the log of the plan (zeros allowed)."""
    P = np.exp(log_plan)
    return float(np.sum(xlogy(P, P) + P * C / eps) - P.sum() + np.exp(logsumexp(-C / eps)))


def kl_between(log_a, log_b):
    """Generalized KL ``sum a log(a/b) - a + b`` of two positive arrays given in log form."""
    a = np.exp(log_a)
    return float(np.sum(a * (log_a - log_b) - a + np.exp(log_b)))


def _dual_value(f, g, a, b, Cr, eps):
    lp = (f[:, None] + g[None, :] - Cr) / eps
    with np.errstate(over="ignore"):  # a wild trial step gives -inf, which the line search rejects
        return float(f @ a + g @ b - eps * np.exp(logsumexp(lp)))


def _newton_dual_step(f, g, a, b, Cr, eps):
    """One damped Newton ascent step on the dual, gauge ``g[-1]`` fixed.

    Returns the new potentials, or ``None`` if no ascent was found.
    """
    n, m = f.size, g.size
    P = np.exp((f[:, None] + g[None, :] - Cr) / eps)
    r, c = P.sum(axis=1), P.sum(axis=0)
    grad = np.concatenate([a - r, (b - c)[:-1]])
    H = np.zeros((n + m - 1, n + m - 1))
    H[:n, :n] = np.diag(r)
    H[:n, n:] = P[:, :-1]
    H[n:, :n] = P[:, :-1].T
    H[n:, n:] = np.diag(c[:-1])
    try:
        d = eps * np.linalg.solve(H, grad)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(d)):
        return None
    phi0 = _dual_value(f, g, a, b, Cr, eps)
    slope = float(grad @ d)
    step = 1.0
    while step > 1e-10:
        fn = f + step * d[:n]
        gn = g.copy()
        gn[:-1] += step * d[n:]
        if _dual_value(fn, gn, a, b, Cr, eps) >= phi0 + 1e-4 * step * slope:
            return fn, gn
        step *= 0.5
    return None


def sinkhorn(mu: DiscreteMeasure, nu: DiscreteMeasure, C, eps, tol=1e-9, max_iter=100000,
             keep_history=False, newton_every=50) -> TransportPlan:
    """Entropic transport plan by log-domain Sinkhorn sweeps.

    Each sweep projects onto the row constraints, then onto the column
    constraints; iteration stops when the row-marginal residual (sup norm)
    after a sweep is ``<= tol`` (columns are then exact up to round-off).

    Parameters
    ----------
    keep_history : bool
        Record, per sweep, the dual objective ``<f, mu> + <g, nu> - eps*sum(plan)``
        and the log plan.
    newton_every : int or None
        For small ``eps`` plain sweeps converge at a rate close to 1. Every
        ``newton_every`` sweeps a damped Newton ascent step on the (smooth,
        concave) dual is attempted before the next sweep; it has the same
        fixed point. ``None`` gives plain alternating projections.

    Raises
    ------
    EmptySupport
        All mass of one marginal is zero.
    MaxIterExceeded
        ``partial`` is the unconverged plan with its residuals.
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    n, m = mu.size, nu.size
    C_full = _check_cost(C, n, m)
    ri = np.flatnonzero(mu.weights > 0)
    ci = np.flatnonzero(nu.weights > 0)
    if ri.size == 0 or ci.size == 0:
        raise EmptySupport("a marginal has no positive atoms")
    a, b = mu.weights[ri], nu.weights[ci]
    Cr = C_full[np.ix_(ri, ci)]
    la, lb = np.log(a), np.log(b)
    f = np.zeros(ri.size)
    g = np.zeros(ci.size)
    dual_hist, log_hist = [], []
    converged = False
    it = 0
    logP = None
    for it in range(1, max_iter + 1):
        if newton_every and it % newton_every == 0:
            nxt = _newton_dual_step(f, g, a, b, Cr, eps)
            if nxt is not None:
                f, g = nxt
        f = eps * (la - logsumexp((g[None, :] - Cr) / eps, axis=1))
        g = eps * (lb - logsumexp((f[:, None] - Cr) / eps, axis=0))
        logP = (f[:, None] + g[None, :] - Cr) / eps
        P = np.exp(logP)
        r_res = float(np.max(np.abs(P.sum(axis=1) - a)))
        c_res = float(np.max(np.abs(P.sum(axis=0) - b)))
        if keep_history:
            dual_hist.append(float(f @ a + g @ b - eps * P.sum()))
            log_hist.append(logP)
        if r_res <= tol and c_res <= tol:
            converged = True
            break

    full = np.zeros((n, m))
    full[np.ix_(ri, ci)] = P
    plan = TransportPlan(
        matrix=full,
        row_residual=float(np.max(np.abs(full.sum(axis=1) - mu.weights))),
        col_residual=float(np.max(np.abs(full.sum(axis=0) - nu.weights))),
        cost=float(np.sum(P * Cr)),
        kl_objective=kl_to_kernel(logP, Cr, eps),
        iterations=it,
        eps=eps,
        converged=converged,
        row_index=ri,
        col_index=ci,
        dual_history=dual_hist,
        log_history=log_hist,
    )
    if not converged:
        raise MaxIterExceeded(f"marginal residuals {r_res:.3e}/{c_res:.3e} after {max_iter} sweeps",
                              partial=plan)
    return plan


def projection_distances(plan: TransportPlan):
    """``KL(final plan, plan after sweep k)`` for every recorded sweep.

    Alternating KL projections onto affine sets never move away from the
    limit, so this sequence is non-increasing.
    """
    final = plan.log_history[-1]
    return [kl_between(final, lp) for lp in plan.log_history]


def exact_ot_bruteforce(mu: DiscreteMeasure, nu: DiscreteMeasure, C):
    """Optimal assignment for uniform equal-size marginals by enumeration.

    Returns ``(cost, perm)`` with ``perm[i]`` the target of source ``i``; the
    first minimizer in lexicographic order is kept.
    """
    n = mu.size
    if nu.size != n:
        raise DimensionMismatch("assignment oracle needs equal sizes")
    if n > 9:
        raise TooLarge(f"{n}! permutations is too many (n <= 9)")
    if not (np.allclose(mu.weights, 1.0 / n, rtol=0, atol=WEIGHT_TOL)
            and np.allclose(nu.weights, 1.0 / n, rtol=0, atol=WEIGHT_TOL)):
        raise DomainError("assignment oracle needs uniform marginals")
    C = _check_cost(C, n, n)
    rows = np.arange(n)
    best, best_perm = math.inf, None
    for perm in itertools.permutations(range(n)):
        c = float(np.sum(C[rows, perm]))
        if c < best:
            best, best_perm = c, perm
    return best / n, tuple(best_perm)


def bregman_cost_matrix(J: Functional, points_u, points_v):
    """``C[i, j] = D_J(v_i, u_j)`` using the gradient of ``J`` at ``u_j``."""
    pairs = [make_pair(J, u, J.subgradient(u)) for u in points_u]
    C = np.empty((len(points_v), len(points_u)))
    for i, v in enumerate(points_v):
        for j, pr in enumerate(pairs):
            C[i, j] = bregman(J, v, pr)
    return C
