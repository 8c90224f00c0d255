"""Bregman iteration for quadratic fidelity with discrepancy-principle stopping."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

from .convex import as_vector, bregman, make_pair
from .errors import DomainError, MaxIterExceeded
from .variational import RegProblem, solve

log = logging.getLogger(__name__)


@dataclass
class BregmanState:
    k: int
    u: np.ndarray
    p: np.ndarray
    w: np.ndarray
    residual: float


@dataclass(frozen=True)
class Discrepancy:
    """Stop at the first ``k`` with ``||K u_k - f|| <= tau * delta``.

    ``delta`` is the caller's noise estimate; it is never inferred. With
    ``delta = 0`` the threshold is relaxed to ``atol * (1 + ||f||)``.
    """

    delta: float
    tau: float = 1.0
    atol: float = 1e-9

    def __post_init__(self):
        if self.delta < 0 or self.tau < 1:
            raise DomainError("need delta >= 0 and tau >= 1")

    def satisfied(self, state, f_norm):
        return state.residual <= max(self.tau * self.delta, self.atol * (1.0 + f_norm))


@dataclass(frozen=True)
class FixedIterations:
    n: int

    def satisfied(self, state, f_norm):
        return state.k >= self.n


StoppingRule = Union[Discrepancy, FixedIterations]


def initial_state(K, f):
    """``u_0 = 0`` minimizes every supported regularizer, so ``p_0 = 0``."""
    f = as_vector(f, "f")
    m, n = K.shape
    return BregmanState(0, np.zeros(n), np.zeros(n), np.zeros(m), float(np.linalg.norm(f)))


def step(K, f, alpha, R, state, tol=1e-10, max_iter=200000):
    """One Bregman step ``u_{k+1} = argmin 0.5||Ku - f||^2 + alpha D_R^{p_k}(u, u_k)``.

    With ``p_k = K^T w_k`` the step is an ordinary variational solve with the
    augmented data ``f + alpha w_k``; the dual witness of that solve is
    ``w_{k+1} = w_k + (f - K u_{k+1}) / alpha``.
    """
    f = as_vector(f, "f")
    f_k = f + alpha * state.w
    sol = solve(RegProblem(K, f_k, alpha, R), tol=tol, max_iter=max_iter, x0=state.u)
    res = float(np.linalg.norm(K.matrix @ sol.u - f))
    return BregmanState(state.k + 1, sol.u, sol.p, sol.w, res)


def step_explicit(K, f, alpha, R, state, tol=1e-12, max_iter=500000):
    """Same step computed from the Bregman objective itself.

    Plain proximal gradient on ``0.5||Ku - f||^2 - alpha <p_k, u> + alpha R(u)``
    followed by the subgradient update ``p_{k+1} = p_k + K^T (f - K u_{k+1}) / alpha``.
    Independent of :func:`step`; used to cross-check it.
    """
    f = as_vector(f, "f")
    A = K.matrix
    L = K.opnorm() ** 2
    u = state.u.copy()
    for _ in range(max_iter):
        g = A.T @ (A @ u - f) - alpha * state.p
        u_new = R.prox(u - g / L, alpha / L)
        if np.max(np.abs(u_new - u)) <= tol:
            u = u_new
            break
        u = u_new
    else:
        raise MaxIterExceeded("explicit Bregman step did not converge")
    r = f - A @ u
    w = state.w + r / alpha
    return BregmanState(state.k + 1, u, A.T @ w, w, float(np.linalg.norm(r)))


def run(K, f, alpha, R, stop: StoppingRule, max_iter=100, tol=1e-10) -> List[BregmanState]:
    """Iterate from ``u_0 = 0`` until ``stop`` holds; returns the full history.

    Raises
    ------
    MaxIterExceeded
        ``partial`` holds the history computed so far.
    """
    f = as_vector(f, "f")
    f_norm = float(np.linalg.norm(f))
    state = initial_state(K, f)
    history = [state]
    while not stop.satisfied(state, f_norm):
        if state.k >= max_iter:
            raise MaxIterExceeded(f"stopping rule not met after {max_iter} iterations", partial=history)
        state = step(K, f, alpha, R, state, tol=tol)
        log.debug("k=%d residual=%.3e", state.k, state.residual)
        history.append(state)
    return history


def bregman_to_truth(R, state, u_true):
    """``D_R^{p_k}(u*, u_k)``."""
    return bregman(R, u_true, make_pair(R, state.u, state.p))


def history_rows(history, R, truth=None):
    rows = []
    for s in history:
        row = {"k": s.k, "residual": s.residual, "R_value": R(s.u)}
        if truth is not None:
            row["bregman_to_truth"] = bregman_to_truth(R, s, truth)
        rows.append(row)
    return rows


def write_history_csv(path, history, R, truth=None):
    rows = history_rows(history, R, truth)
    cols = ["k", "residual", "R_value"] + (["bregman_to_truth"] if truth is not None else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(cols)
        for r in rows:
            wr.writerow([r["k"]] + [repr(float(r[c])) for c in cols[1:]])
