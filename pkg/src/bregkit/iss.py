"""Exact inverse scale space flow for the l1 norm with quadratic data term.

For ``G(u) = 0.5*||K u - f||^2`` and ``R = ||.||_1`` the flow
``dp/dt = -grad G(u(t))``, ``p(t) in d||u(t)||_1`` has piecewise-constant
``u`` and piecewise-linear ``p``. Breakpoint times are solved for in closed
form: between breakpoints each ``p_i`` moves linearly, and the next breakpoint
is the first time a coordinate reaches ``|p_i| = 1``. At a breakpoint the new
state is the least-squares fit subject to the sign pattern that ``p`` imposes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .convex import as_vector
from .errors import Degenerate, DomainError, MaxBreakpointsExceeded, NotMinimizer
from .operators import SignedSupport, sign_constrained_lsq

P_TOL = 1e-10


@dataclass
class ISSTrajectory:
    """Breakpoints ``0 = t_0 < t_1 < ... < t_n`` with states, duals and slopes.

    ``states[k]`` is ``u`` on ``[t_k, t_{k+1})``, ``duals[k] = p(t_k)`` and
    ``slopes[k] = -grad G(states[k])`` is the velocity of ``p`` on that interval.
    """

    times: np.ndarray
    states: np.ndarray
    duals: np.ndarray
    slopes: np.ndarray
    supports: List[SignedSupport] = field(default_factory=list)
    terminal: bool = False

    @property
    def n_breakpoints(self):
        return len(self.times) - 1

    def index_at(self, t):
        if t < 0:
            raise DomainError("time must be non-negative")
        return int(np.searchsorted(self.times, t, side="right") - 1)

    def u_at(self, t):
        return self.states[self.index_at(t)]

    def p_at(self, t):
        k = self.index_at(t)
        return self.duals[k] + (t - self.times[k]) * self.slopes[k]

    def to_json(self):
        return {
            "breakpoints": self.times[1:].tolist(),
            "times": self.times.tolist(),
            "states": self.states.tolist(),
            "duals": self.duals.tolist(),
            "slopes": self.slopes.tolist(),
            "supports": [{str(i): s for i, s in sup.signs.items()} for sup in self.supports],
            "terminal": self.terminal,
        }

    def write_json(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_json(), fh, indent=1)
            fh.write("\n")

    def write_csv(self, path):
        """One row per breakpoint: ``t, u_1, ..., u_N``."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            for t, u in zip(self.times, self.states):
                wr.writerow([repr(float(t))] + [repr(float(x)) for x in u])


def iss_solve(K, f, max_breakpoints=10000, tol=1e-10) -> ISSTrajectory:
    """Exact l1 inverse scale space trajectory starting from ``u = p = 0``.

    Parameters
    ----------
    K : LinOp
    f : array
    max_breakpoints : int
    tol : float
        Terminal test ``||K^T (K u - f)||_inf <= tol * (1 + ||K^T f||_inf)``;
        ``|p_i| = 1`` is detected to within :data:`P_TOL`.

    Raises
    ------
    MaxBreakpointsExceeded
        ``partial`` is the trajectory so far.
    Degenerate
        No coordinate can reach the boundary although ``u`` is not optimal.
    """
    f = as_vector(f, "f")
    A = K.matrix
    N = A.shape[1]
    u = np.zeros(N)
    p = np.zeros(N)
    t = 0.0
    s = A.T @ f
    gtol = tol * (1.0 + np.max(np.abs(s)))
    times, states, duals, slopes, supports = [0.0], [u], [p], [s], [SignedSupport({})]

    def pack(terminal):
        return ISSTrajectory(np.array(times), np.array(states), np.array(duals),
                             np.array(slopes), supports, terminal)

    while np.max(np.abs(s)) > gtol:
        if len(times) > max_breakpoints:
            raise MaxBreakpointsExceeded(f"more than {max_breakpoints} breakpoints", partial=pack(False))
        # time for each coordinate to reach the boundary it is heading to
        target = np.sign(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            dt = np.where(s != 0, (target - p) / s, np.inf)
        # coordinates already sitting on that boundary do not cross again
        dt[np.abs(target - p) <= P_TOL] = np.inf
        dmin = float(np.min(dt))
        if not np.isfinite(dmin):
            raise Degenerate(f"gradient {np.max(np.abs(s)):.3e} is nonzero but no coordinate can cross")
        t = t + dmin
        p = p + dmin * s
        hit = dt <= dmin + P_TOL * max(1.0, dmin)
        p[hit] = target[hit]
        on = np.abs(p) >= 1.0 - P_TOL
        p[on] = np.sign(p[on])
        ss = SignedSupport({int(i): int(p[i]) for i in np.flatnonzero(on)})
        u = sign_constrained_lsq(K, f, ss)
        s = A.T @ (f - A @ u)
        times.append(t)
        states.append(u)
        duals.append(p.copy())
        slopes.append(s)
        supports.append(ss)
    slopes[-1] = np.zeros(N)
    return pack(True)


@dataclass
class SpectralFilter:
    """Weights ``w(t)`` in ``[0, 1]`` applied to the jumps of an ISS trajectory."""

    weight: Callable[[float], float]
    label: str = "custom"

    @classmethod
    def constant(cls, c):
        if not 0 <= c <= 1:
            raise DomainError("filter weights must lie in [0, 1]")
        return cls(lambda t: c, f"constant:{c}")

    @classmethod
    def indicator(cls, lo, hi):
        """``w(t) = 1`` for ``lo <= t < hi``, else 0."""
        return cls(lambda t: 1.0 if lo <= t < hi else 0.0, f"indicator:{lo}:{hi}")

    @classmethod
    def table(cls, edges: Sequence[float], values: Sequence[float]):
        """Piecewise constant: ``values[j]`` on ``[edges[j], edges[j+1])``; zero outside."""
        edges = np.asarray(edges, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.size != edges.size - 1 or np.any(np.diff(edges) <= 0):
            raise DomainError("need increasing edges and one value per interval")
        if np.any((values < 0) | (values > 1)):
            raise DomainError("filter weights must lie in [0, 1]")

        def w(t):
            j = np.searchsorted(edges, t, side="right") - 1
            return float(values[j]) if 0 <= j < values.size else 0.0

        return cls(w, "table")

    @classmethod
    def parse(cls, text):
        """``"constant:c"``, ``"indicator:lo:hi"`` (``hi`` may be ``inf``)."""
        kind, *args = text.split(":")
        if kind == "constant":
            return cls.constant(float(args[0]))
        if kind == "indicator":
            return cls.indicator(float(args[0]), float(args[1]))
        raise DomainError(f"unknown filter {text!r}")


def spectral_filter(traj: ISSTrajectory, filt: SpectralFilter):
    """``u_0 + sum_k w(t_k) (u(t_k) - u(t_{k-1}))``.

    For a truncated (non-terminal) trajectory only the recorded jumps
    contribute; no tail is extrapolated.
    """
    out = traj.states[0].copy()
    for k in range(1, len(traj.times)):
        wk = float(filt.weight(traj.times[k]))
        if not 0.0 <= wk <= 1.0:
            raise DomainError(f"filter weight {wk} at t={traj.times[k]} outside [0, 1]")
        out += wk * (traj.states[k] - traj.states[k - 1])
    return out


@dataclass
class DecayRow:
    t: float
    lhs: float
    rhs: float

    @property
    def holds(self):
        return self.lhs <= self.rhs * (1.0 + 1e-12) + 1e-12


def decay_check(K, f, traj: ISSTrajectory, u_min=None, tol=1e-8) -> List[DecayRow]:
    """``G(u(t_k)) - G(u_min) <= ||u_min||_1 / t_k`` at every breakpoint ``t_k > 0``.

    ``u_min`` defaults to the terminal state of ``traj``.

    Raises
    ------
    NotMinimizer
        ``||K^T (K u_min - f)||_inf`` exceeds ``tol * (1 + ||K^T f||_inf)``.
    """
    f = as_vector(f, "f")
    A = K.matrix
    if u_min is None:
        u_min = traj.states[-1]
    u_min = as_vector(u_min, "u_min")
    grad = A.T @ (A @ u_min - f)
    if np.max(np.abs(grad)) > tol * (1.0 + np.max(np.abs(A.T @ f))):
        raise NotMinimizer(f"gradient norm {np.max(np.abs(grad)):.3e} at u_min")

    def G(u):
        r = A @ u - f
        return 0.5 * float(np.dot(r, r))

    g_min = G(u_min)
    l1 = float(np.sum(np.abs(u_min)))
    return [DecayRow(float(t), G(u) - g_min, l1 / t)
            for t, u in zip(traj.times[1:], traj.states[1:])]
