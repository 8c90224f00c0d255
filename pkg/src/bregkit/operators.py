"""Dense linear operators and constrained least-squares kernels."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
import scipy.linalg as sla

from .convex import as_vector
from .errors import DimensionMismatch, DomainError, NonConvergence, RankDeficient

RANK_TOL = 1e-10


class LinOp:
    """Dense matrix ``K : R^N -> R^M`` with its adjoint."""

    def __init__(self, matrix):
        A = np.atleast_2d(np.asarray(matrix, dtype=float))
        if A.ndim != 2 or A.size == 0:
            raise DimensionMismatch("operator matrix must be a non-empty 2-D array")
        if not np.all(np.isfinite(A)):
            raise DomainError("operator has non-finite entries")
        self.matrix = A
        self._opnorm = None

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n))

    @classmethod
    def gaussian(cls, m, n, seed):
        """``m x n`` matrix with i.i.d. ``N(0, 1/m)`` entries (unit-norm columns on average)."""
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((m, n)) / np.sqrt(m))

    @property
    def shape(self):
        return self.matrix.shape

    def __call__(self, u):
        return self.apply(u)

    def apply(self, u):
        u = as_vector(u)
        if u.size != self.shape[1]:
            raise DimensionMismatch(f"operator expects length {self.shape[1]}, got {u.size}")
        return self.matrix @ u

    def adjoint(self, w):
        w = as_vector(w, "w")
        if w.size != self.shape[0]:
            raise DimensionMismatch(f"adjoint expects length {self.shape[0]}, got {w.size}")
        return self.matrix.T @ w

    apply_adjoint = adjoint

    def opnorm(self, iters=1000, tol=1e-12, seed=0):
        """Spectral norm by power iteration on ``K^T K``."""
        if self._opnorm is None:
            x = np.random.default_rng(seed).standard_normal(self.shape[1])
            x /= np.linalg.norm(x)
            lam = 0.0
            for _ in range(iters):
                y = self.matrix.T @ (self.matrix @ x)
                new = np.linalg.norm(y)
                if new == 0.0:
                    break
                x = y / new
                if abs(new - lam) <= tol * new:
                    lam = new
                    break
                lam = new
            self._opnorm = float(np.sqrt(lam))
        return self._opnorm

    def columns(self, idx):
        return self.matrix[:, idx]

    def __repr__(self):
        return f"LinOp(shape={self.shape})"


def apply(K, u):
    return K.apply(u)


def apply_adjoint(K, w):
    return K.adjoint(w)


@dataclass(frozen=True)
class SignedSupport:
    """Index set ``S`` with a prescribed sign on every index."""

    signs: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for i, s in self.signs.items():
            if s not in (-1, 1):
                raise DomainError(f"sign of index {i} must be +1 or -1, got {s}")

    @classmethod
    def from_vector(cls, u, tol=0.0):
        u = np.asarray(u, dtype=float)
        return cls({int(i): int(np.sign(u[i])) for i in np.flatnonzero(np.abs(u) > tol)})

    @property
    def indices(self) -> Tuple[int, ...]:
        return tuple(sorted(self.signs))

    def sign_vector(self, n):
        s = np.zeros(n)
        for i, v in self.signs.items():
            s[i] = v
        return s

    def __len__(self):
        return len(self.signs)


def _lstsq_qr(A, b, rank_tol=RANK_TOL):
    """Least squares via economic QR; refuses numerically rank-deficient blocks."""
    Q, R = np.linalg.qr(A, mode="reduced")
    d = np.abs(np.diag(R))
    if d.size and d.min() <= rank_tol * d.max():
        raise RankDeficient(f"column block is rank deficient (min|R_ii|/max|R_ii| = {d.min() / d.max():.2e})")
    return sla.solve_triangular(R, Q.T @ b)


def check_full_rank(K, idx, rank_tol=RANK_TOL):
    if len(idx) == 0:
        return
    if len(idx) > K.shape[0]:
        raise RankDeficient(f"{len(idx)} columns cannot be independent in R^{K.shape[0]}")
    R = np.linalg.qr(K.columns(list(idx)), mode="r")
    d = np.abs(np.diag(R))
    if d.min() <= rank_tol * d.max():
        raise RankDeficient("restricted columns are rank deficient")


def lsq_objective(K, f, u):
    r = K.matrix @ u - f
    return 0.5 * float(np.dot(r, r))


def sign_constrained_lsq(K, f, ss, tol=1e-9, max_iter=None, history=None):
    """Minimize ``0.5*||K u - f||^2`` over ``u`` supported on ``S`` with ``sign(u_i) in {0, s_i}``.

    With ``x_i = s_i u_i`` this is a non-negative least-squares problem on the
    sign-flipped columns. It is solved by a Lawson-Hanson active-set loop that
    starts from the whole of ``S`` as the free set: unconstrained QR least
    squares on the free set, a step back to the feasible segment that clamps
    the first sign violators to zero, and re-admission of clamped indices whose
    KKT multiplier is negative. Objective values never increase.

    Parameters
    ----------
    K : LinOp
    f : array
    ss : SignedSupport
    tol : float
        Slack for the KKT sign test ``s_i * dG/du_i >= -tol`` at clamped indices.
    max_iter : int, optional
        Defaults to ``3 * |S| + 10``.
    history : list, optional
        If given, objective values after each outer step are appended.

    Returns
    -------
    u : ndarray
    """
    f = as_vector(f, "f")
    M, N = K.shape
    if f.size != M:
        raise DimensionMismatch(f"data length {f.size} does not match operator rows {M}")
    idx = np.array(ss.indices, dtype=int)
    u = np.zeros(N)
    if idx.size == 0:
        return u
    if idx.max() >= N or idx.min() < 0:
        raise DimensionMismatch("support index out of range")
    check_full_rank(K, idx)
    s = np.array([ss.signs[i] for i in idx], dtype=float)
    A = K.matrix[:, idx] * s          # columns for x = s * u_S
    n = idx.size
    if max_iter is None:
        max_iter = 3 * n + 10

    x = np.zeros(n)
    free = np.ones(n, dtype=bool)
    scale = 1.0 + np.linalg.norm(A.T @ f, np.inf)
    for _ in range(max_iter):
        # inner loop: move from feasible x towards the free-set LS solution
        while True:
            z = np.zeros(n)
            if free.any():
                z[free] = _lstsq_qr(A[:, free], f)
            bad = free & (z <= 0)
            if not bad.any():
                x = z
                break
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(bad, x / (x - z), np.inf)
            ratios = np.nan_to_num(ratios, nan=0.0, posinf=np.inf)
            alpha = min(1.0, float(np.min(ratios)))
            x = x + alpha * (z - x)
            hit = bad & (ratios <= alpha)
            x[hit] = 0.0
            free &= ~hit
        if history is not None:
            history.append(0.5 * float(np.sum((A @ x - f) ** 2)))
        # KKT: gradient in x must be >= 0 on clamped coordinates
        grad = A.T @ (A @ x - f)
        clamped = ~free
        if not clamped.any() or grad[clamped].min() >= -tol * scale:
            u[idx] = s * x
            return u
        j = np.flatnonzero(clamped)[np.argmin(grad[clamped])]
        free[j] = True
    raise NonConvergence("active-set loop did not terminate")


def kkt_violation(K, f, u, ss):
    """Largest violation of the KKT conditions of :func:`sign_constrained_lsq`."""
    g = K.matrix.T @ (K.matrix @ u - f)
    s = ss.sign_vector(K.shape[1])
    nz = u != 0
    on = s != 0
    viol = 0.0
    if nz.any():
        viol = max(viol, float(np.max(np.abs(g[nz]))))
        viol = max(viol, float(np.max(np.maximum(0.0, -s[nz] * u[nz]))))
    zero_on = on & ~nz
    if zero_on.any():
        viol = max(viol, float(np.max(np.maximum(0.0, -s[zero_on] * g[zero_on]))))
    if np.any(u[~on] != 0):
        viol = np.inf
    return viol


# ---------------------------------------------------------------------------
# CSV I/O: no header, comma separated, LF line endings

def read_matrix_csv(path):
    path = Path(path)
    A = np.loadtxt(path, delimiter=",", ndmin=2)
    return A


def read_vector_csv(path):
    A = read_matrix_csv(path)
    return A.reshape(-1)


def format_float(x):
    return repr(float(x))


def write_matrix_csv(path, A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        for row in A:
            fh.write(",".join(format_float(x) for x in row) + "\n")


def write_vector_csv(path, v):
    write_matrix_csv(path, np.asarray(v, dtype=float).reshape(-1, 1))
