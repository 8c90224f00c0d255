"""Quadratic-fidelity variational regularization and its Bregman error identities.

Problems have the form ``min_u 0.5*||K u - f||^2 + alpha * R(u)``. At a
minimizer the dual witness ``w = (f - K u) / alpha`` satisfies
``p = K^T w in dR(u)``; solutions carry ``(u, p, w)`` and a KKT residual so the
error identities below can be checked exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

from .convex import (SquaredL2, TV1D, WeightedL1, as_vector, make_pair,
                     symmetric_bregman)
from .errors import (DimensionMismatch, DomainError, Infeasible, MaxIterExceeded,
                     NotCertified, RankDeficient, UnsupportedFunctional, BoundViolated)
from .operators import LinOp, SignedSupport, RANK_TOL


@dataclass
class RegProblem:
    K: LinOp
    f: np.ndarray
    alpha: float
    R: object

    def __post_init__(self):
        self.f = as_vector(self.f, "f")
        if self.f.size != self.K.shape[0]:
            raise DimensionMismatch(f"data length {self.f.size} != operator rows {self.K.shape[0]}")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise DomainError("alpha must be positive")

    def objective(self, u):
        r = self.K.matrix @ u - self.f
        return 0.5 * float(np.dot(r, r)) + self.alpha * self.R(u)


@dataclass
class RegSolution:
    u: np.ndarray
    p: np.ndarray
    w: np.ndarray
    objective: float
    kkt_residual: float
    certified: bool
    iterations: int = 0
    problem: Optional[RegProblem] = field(default=None, repr=False)

    def pair(self):
        return make_pair(self.problem.R, self.u, self.p)


def _finish(problem, u, p, w, kkt, tol, iterations):
    return RegSolution(u=u, p=p, w=w, objective=problem.objective(u), kkt_residual=kkt,
                       certified=bool(kkt <= tol), iterations=iterations, problem=problem)


# ---------------------------------------------------------------------------
# squared l2: closed form


def _solve_l2(problem, tol):
    K = problem.K.matrix
    n = K.shape[1]
    # stacked least squares [K; sqrt(alpha) I] u = [f; 0]
    A = np.vstack([K, np.sqrt(problem.alpha) * np.eye(n)])
    b = np.concatenate([problem.f, np.zeros(n)])
    Q, Rm = np.linalg.qr(A, mode="reduced")
    u = sla.solve_triangular(Rm, Q.T @ b)
    w = (problem.f - K @ u) / problem.alpha
    kkt = float(np.max(np.abs(u - K.T @ w)))
    return _finish(problem, u, u.copy(), w, kkt, tol, 1)


# ---------------------------------------------------------------------------
# weighted l1: FISTA with support polishing


def _l1_kkt(K, f, alpha, wts, u):
    w = (f - K @ u) / alpha
    v = K.T @ w
    nz = u != 0
    res = np.where(nz, np.abs(v - wts * np.sign(u)), np.maximum(np.abs(v) - wts, 0.0))
    p = np.where(nz, wts * np.sign(u), np.clip(v, -wts, wts))
    return float(res.max()), p, w


def _l1_polish(K, f, alpha, wts, u):
    """Re-solve exactly on the sign pattern of ``u``; ``None`` if the pattern is wrong."""
    idx = np.flatnonzero(u)
    out = np.zeros_like(u)
    if idx.size:
        if idx.size > K.shape[0]:
            return None
        s = np.sign(u[idx])
        Q, Rm = np.linalg.qr(K[:, idx], mode="reduced")
        d = np.abs(np.diag(Rm))
        if d.min() <= RANK_TOL * d.max():
            return None
        # K_S^T (K_S x - f) + alpha * w_S * s = 0
        y = sla.solve_triangular(Rm, alpha * wts[idx] * s, trans="T")
        x = sla.solve_triangular(Rm, Q.T @ f - y)
        if np.any(np.sign(x) != s):
            return None
        out[idx] = x
    return out


def _solve_l1(problem, tol, max_iter, x0):
    K = problem.K.matrix
    f, alpha = problem.f, problem.alpha
    n = K.shape[1]
    wts = problem.R._w(n)

    best = None

    def consider(u, it):
        nonlocal best
        kkt, p, w = _l1_kkt(K, f, alpha, wts, u)
        if best is None or kkt < best[0]:
            best = (kkt, u, p, w, it)
        return kkt <= tol

    if x0 is not None:
        x0 = as_vector(x0, "x0")
        cand = _l1_polish(K, f, alpha, wts, x0)
        if cand is not None and consider(cand, 0):
            return _finish(problem, best[1], best[2], best[3], best[0], tol, 0)
        u = x0.copy()
    else:
        u = np.zeros(n)
    if consider(u, 0):
        return _finish(problem, best[1], best[2], best[3], best[0], tol, 0)

    L = problem.K.opnorm() ** 2
    if L == 0.0:
        return _finish(problem, u, *(_l1_kkt(K, f, alpha, wts, u)[1:]), 0.0, tol, 0)
    step = 1.0 / L
    y = u.copy()
    t = 1.0
    last_pattern = None
    for it in range(1, max_iter + 1):
        g = K.T @ (K @ y - f)
        x = y - step * g
        u_new = np.sign(x) * np.maximum(np.abs(x) - step * alpha * wts, 0.0)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        # adaptive restart when momentum points uphill
        if np.dot(y - u_new, u_new - u) > 0:
            t_new = 1.0
            y = u_new.copy()
        else:
            y = u_new + ((t - 1.0) / t_new) * (u_new - u)
        u, t = u_new, t_new
        if it % 10 == 0:
            if consider(u, it):
                break
            pattern = np.sign(u)
            if last_pattern is not None and np.array_equal(pattern, last_pattern):
                cand = _l1_polish(K, f, alpha, wts, u)
                if cand is not None and consider(cand, it):
                    break
            last_pattern = pattern
    kkt, u, p, w, it = best
    sol = _finish(problem, u, p, w, kkt, tol, it)
    if not sol.certified:
        raise MaxIterExceeded(f"l1 solver stopped at KKT residual {kkt:.3e} > {tol:.1e}", partial=sol)
    return sol


# ---------------------------------------------------------------------------
# 1-D total variation: primal-dual splitting with piecewise-constant polishing


def _tv_kkt(K, f, alpha, R, u):
    """Return ``(residual, p, w)``; the residual is measured on the dual field phi."""
    n = u.size
    w = (f - K @ u) / alpha
    v = K.T @ w
    phi, mismatch = R.dual_field(v)
    jumps = R.grad(u)
    on = jumps != 0
    s = np.sign(jumps)
    res = np.where(on, np.abs(phi - s), np.maximum(np.abs(phi) - 1.0, 0.0))
    kkt = max(float(res.max()) if res.size else 0.0, mismatch)
    phi_c = np.where(on, s, np.clip(phi, -1.0, 1.0))
    p = R.grad_adjoint(phi_c, n)
    return kkt, p, w


def _tv_polish(K, f, alpha, R, u, thr):
    n = u.size
    d = np.diff(u)
    jump = np.abs(d) > thr
    seg = np.concatenate([[0], np.cumsum(jump)])
    B = np.zeros((n, seg[-1] + 1))
    B[np.arange(n), seg] = 1.0
    sigma = np.where(jump, np.sign(d), 0.0)
    lin = alpha * (B.T @ R.grad_adjoint(sigma, n))
    KB = K @ B
    Q, Rm = np.linalg.qr(KB, mode="reduced")
    dg = np.abs(np.diag(Rm))
    if dg.min() <= RANK_TOL * dg.max():
        return None
    y = sla.solve_triangular(Rm, lin, trans="T")
    c = sla.solve_triangular(Rm, Q.T @ f - y)
    out = B @ c
    dd = np.diff(out)
    if np.any(np.sign(dd[jump]) != sigma[jump]):
        return None
    return out


def _solve_tv(problem, tol, max_iter, x0):
    K = problem.K.matrix
    f, alpha, R = problem.f, problem.alpha, problem.R
    n = K.shape[1]
    u = np.zeros(n) if x0 is None else as_vector(x0, "x0").copy()
    best = None

    def consider(cand, it):
        nonlocal best
        kkt, p, w = _tv_kkt(K, f, alpha, R, cand)
        if best is None or kkt < best[0]:
            best = (kkt, cand, p, w, it)
        return kkt <= tol

    if n == 1 or consider(u, 0):
        if n == 1:
            # TV vanishes; plain least squares
            u = np.linalg.lstsq(K, f, rcond=None)[0]
            consider(u, 0)
        return _finish(problem, best[1], best[2], best[3], best[0], tol, 0)

    # ||D||^2 <= 4/h^2 ; tau * sigma * ||D||^2 < 1
    dn = 2.0 / R.h
    tau = sigma = 0.99 / dn
    cho = sla.cho_factor(np.eye(n) + tau * (K.T @ K))
    Ktf = K.T @ f
    phi = np.zeros(n - 1)
    ubar = u.copy()
    for it in range(1, max_iter + 1):
        phi = np.clip(phi + sigma * R.grad(ubar), -alpha, alpha)
        u_new = sla.cho_solve(cho, u - tau * R.grad_adjoint(phi, n) + tau * Ktf)
        ubar = 2.0 * u_new - u
        u = u_new
        if it % 50 == 0:
            if consider(u, it):
                break
            scale = 1.0 + np.max(np.abs(u))
            done = False
            for thr in (1e-4, 1e-6, 1e-8):
                cand = _tv_polish(K, f, alpha, R, u, thr * scale)
                if cand is not None and consider(cand, it):
                    done = True
                    break
            if done:
                break
    kkt, u, p, w, it = best
    sol = _finish(problem, u, p, w, kkt, tol, it)
    if not sol.certified:
        raise MaxIterExceeded(f"TV solver stopped at KKT residual {kkt:.3e} > {tol:.1e}", partial=sol)
    return sol


def kkt_floor(problem):
    """``16 eps ||K|| ||f|| / alpha``: round-off in ``K^T (f - K u)`` divided by ``alpha``."""
    eps = np.finfo(float).eps
    return 16.0 * eps * problem.K.opnorm() * float(np.linalg.norm(problem.f)) / problem.alpha


def solve(problem: RegProblem, tol=1e-10, max_iter=200000, x0=None) -> RegSolution:
    """Minimize ``0.5*||K u - f||^2 + alpha*R(u)`` to KKT residual ``tol``.

    Closed form for :class:`SquaredL2`; accelerated proximal gradient (step
    ``1/||K||^2``) for :class:`WeightedL1`; primal-dual splitting for
    :class:`TV1D`. The first-order solvers periodically re-solve exactly on
    the detected sign/jump pattern and accept that candidate only if its KKT
    residual is below ``tol``. ``x0`` is an optional warm start.

    ``tol`` is never taken below :func:`kkt_floor`, the resolution of the
    dual variable ``K^T (f - K u) / alpha`` in double precision.

    Raises
    ------
    MaxIterExceeded
        With the best, non-certified iterate attached as ``partial``.
    """
    tol = max(tol, kkt_floor(problem))
    R = problem.R
    if isinstance(R, SquaredL2):
        return _solve_l2(problem, tol)
    if isinstance(R, WeightedL1):
        return _solve_l1(problem, tol, max_iter, x0)
    if isinstance(R, TV1D):
        return _solve_tv(problem, tol, max_iter, x0)
    raise UnsupportedFunctional(f"no solver for {getattr(R, 'kind', R)!r}")


# ---------------------------------------------------------------------------
# error identities


class ErrorIdentity(NamedTuple):
    T1: float
    T2: float
    T3: float
    rhs: float
    residual: float

    @property
    def terms(self):
        return (self.T1, self.T2, self.T3)


class OneSidedBounds(NamedTuple):
    residual_form: bool
    dual_form: bool
    bregman_form: bool


def _require_certified(*sols):
    for s in sols:
        if not s.certified:
            raise NotCertified(f"solution has KKT residual {s.kkt_residual:.3e}")


def bregman_error_identity(sol, sol_tilde, f, f_tilde, alpha) -> ErrorIdentity:
    """Terms of ``||K(u - u~)||^2 + 2 alpha D_sym + alpha^2 ||w - w~||^2 = ||f - f~||^2``."""
    _require_certified(sol, sol_tilde)
    K = sol.problem.K.matrix
    R = sol.problem.R
    f = as_vector(f, "f")
    f_tilde = as_vector(f_tilde, "f_tilde")
    du = K @ (sol.u - sol_tilde.u)
    T1 = float(np.dot(du, du))
    T2 = 2.0 * alpha * symmetric_bregman(R, sol.pair(), sol_tilde.pair())
    dw = sol.w - sol_tilde.w
    T3 = alpha ** 2 * float(np.dot(dw, dw))
    df = f - f_tilde
    rhs = float(np.dot(df, df))
    return ErrorIdentity(T1, T2, T3, rhs, abs(T1 + T2 + T3 - rhs))


def one_sided_bounds(sol, sol_tilde, f, f_tilde, alpha, tol=1e-8) -> OneSidedBounds:
    """Young-inequality corollaries of the identity.

    Checks ``T1 + T2 <= rhs``, ``T2 + T3 <= rhs`` and
    ``D_sym <= ||f - f~||^2 / (2 alpha)``, each with slack ``tol*(1 + rhs)``.
    """
    e = bregman_error_identity(sol, sol_tilde, f, f_tilde, alpha)
    slack = tol * (1.0 + e.rhs)
    dsym = e.T2 / (2.0 * alpha)
    return OneSidedBounds(
        residual_form=e.T1 + e.T2 <= e.rhs + slack,
        dual_form=e.T2 + e.T3 <= e.rhs + slack,
        bregman_form=dsym <= e.rhs / (2.0 * alpha) + slack,
    )


# ---------------------------------------------------------------------------
# source condition


@dataclass
class SourceTriple:
    u_star: np.ndarray
    w_star: np.ndarray
    p_star: np.ndarray
    margin: float
    support: SignedSupport

    def pair(self, R=None):
        return make_pair(R if R is not None else WeightedL1(1.0), self.u_star, self.p_star)


def make_source_triple(K, support, rng_seed=0, margin=0.1, magnitudes=None) -> SourceTriple:
    """Sparse ``u*`` with the given signed support and a dual certificate ``w*``.

    ``R`` is the unweighted l1 norm. Magnitudes default to uniform draws in
    ``[1, 2]`` from ``numpy.random.default_rng(rng_seed)``. The certificate is
    the least-norm solution of ``(K^T w)_S = signs``; if that violates
    ``||(K^T w)_{S^c}||_inf <= 1 - margin`` a linear program minimizing the
    off-support magnitude is tried before giving up.

    Raises
    ------
    Infeasible
        No certificate with the requested margin exists.
    """
    M, N = K.shape
    idx = np.array(support.indices, dtype=int)
    s = np.array([support.signs[i] for i in idx], dtype=float)
    if magnitudes is None:
        magnitudes = np.random.default_rng(rng_seed).uniform(1.0, 2.0, idx.size)
    magnitudes = np.asarray(magnitudes, dtype=float)
    if magnitudes.shape != idx.shape or np.any(magnitudes <= 0):
        raise DomainError("magnitudes must be positive, one per support index")
    u_star = np.zeros(N)
    u_star[idx] = s * magnitudes
    off = np.setdiff1d(np.arange(N), idx)
    A = K.matrix
    if idx.size:
        from .operators import check_full_rank
        check_full_rank(K, idx)
        w = np.linalg.lstsq(A[:, idx].T, s, rcond=None)[0]
    else:
        w = np.zeros(M)

    def off_max(w):
        return float(np.max(np.abs(A[:, off].T @ w))) if off.size else 0.0

    if off_max(w) > 1.0 - margin and idx.size:
        # variables (w, t): min t  s.t.  A_S^T w = s,  |A_off^T w| <= t
        c = np.zeros(M + 1)
        c[-1] = 1.0
        Aoff = A[:, off].T
        A_ub = np.block([[Aoff, -np.ones((off.size, 1))], [-Aoff, -np.ones((off.size, 1))]])
        b_ub = np.zeros(2 * off.size)
        A_eq = np.hstack([A[:, idx].T, np.zeros((idx.size, 1))])
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=s,
                      bounds=[(None, None)] * M + [(0, None)], method="highs")
        if res.status == 0:
            w_lp = res.x[:M]
            if off_max(w_lp) < off_max(w):
                w = w_lp
    achieved = 1.0 - off_max(w)
    if achieved < margin:
        raise Infeasible(f"best dual certificate has margin {achieved:.3g} < {margin:.3g}")
    p = A.T @ w
    triple = SourceTriple(u_star=u_star, w_star=w, p_star=p, margin=achieved, support=support)
    triple.pair()
    return triple


# ---------------------------------------------------------------------------
# convergence-rate study


@dataclass
class RateRow:
    delta: float
    alpha: float
    bregman_distance: float
    bound: float
    residual_norm: float
    direction: np.ndarray = field(repr=False)


@dataclass
class RateTable:
    rows: List[RateRow]
    seed: int

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["delta", "alpha", "bregman_distance", "bound", "residual_norm"])
            for r in self.rows:
                wr.writerow([repr(float(x)) for x in
                             (r.delta, r.alpha, r.bregman_distance, r.bound, r.residual_norm)])


def noise_direction(m, seed, row):
    """Unit vector for row ``row``: normal draws from ``default_rng([seed, row])``."""
    e = np.random.default_rng([seed, row]).standard_normal(m)
    return e / np.linalg.norm(e)


def rate_study(K, triple, noise_levels: Sequence[float],
               alpha_rule: Optional[Callable[[float], float]] = None,
               seed=0, tol=1e-10) -> RateTable:
    """Measured ``D_R^{p_alpha, p*}(u_alpha, u*)`` against ``delta^2/alpha + alpha*||w*||^2``.

    ``alpha_rule`` defaults to ``alpha = delta``. A row with ``alpha = 0`` (only
    possible for ``delta = 0``) is the exact-data limit ``u_alpha = u*`` and
    records a zero distance.

    Raises
    ------
    BoundViolated
        Some row exceeds its bound; the table is attached as ``report``.
    """
    if alpha_rule is None:
        alpha_rule = lambda d: d  # noqa: E731
    R = WeightedL1(1.0)
    w_norm2 = float(np.dot(triple.w_star, triple.w_star))
    f_exact = K.apply(triple.u_star)
    rows = []
    for i, delta in enumerate(noise_levels):
        if delta < 0:
            raise DomainError("noise levels must be non-negative")
        e = noise_direction(K.shape[0], seed, i)
        f = f_exact + delta * e
        alpha = float(alpha_rule(delta))
        if alpha == 0.0 and delta == 0.0:
            D, res = 0.0, 0.0
        else:
            sol = solve(RegProblem(K, f, alpha, R), tol=tol)
            D = symmetric_bregman(R, sol.pair(), triple.pair(R))
            res = float(np.linalg.norm(K.apply(sol.u) - f))
        bound = delta ** 2 / alpha + alpha * w_norm2 if alpha > 0 else 0.0
        rows.append(RateRow(float(delta), alpha, D, bound, res, e))
    table = RateTable(rows, seed)
    for r in rows:
        if r.bregman_distance > r.bound * (1 + 1e-12) + 1e-12:
            raise BoundViolated(f"delta={r.delta}: D={r.bregman_distance:.3e} > bound {r.bound:.3e}",
                                report=table)
    return table
