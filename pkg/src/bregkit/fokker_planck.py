"""Linear Fokker-Planck equation in 1-D with relative-entropy tracking.

Solves ``du/dt = d/dx (du/dx + u F)`` with unit diffusion on a uniform grid,
either periodic (a ring, where a constant drift is a genuinely non-potential
force) or an interval with no-flux walls. Face fluxes use exponential fitting
(Scharfetter-Gummel)::

    J_{i+1/2} = (B(F h) u_i - B(-F h) u_{i+1}) / h,     B(z) = z / (e^z - 1)

and time stepping is implicit Euler. The step matrix is column stochastic with
a positive inverse, so mass and positivity are preserved and the relative
entropy to the stationary state cannot increase.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import List

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import xlogy

from .convex import BoltzmannEntropy, bregman, make_pair
from .errors import (DomainError, MonotonicityViolation, NegativeDensity,
                     SingularSystem, StepFailure)


def bernoulli(z):
    """``z / (exp(z) - 1)`` with the removable singularity at 0 filled in."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    small = np.abs(z) < 1e-8
    zs = z[~small]
    out[~small] = zs / np.expm1(zs)
    out[small] = 1.0 - 0.5 * z[small]
    return out


@dataclass(frozen=True)
class Grid1D:
    L: float
    n: int
    topology: str = "periodic"

    def __post_init__(self):
        if self.L <= 0 or self.n < 4:
            raise DomainError("need L > 0 and n >= 4")
        if self.topology not in ("periodic", "interval"):
            raise DomainError(f"topology must be 'periodic' or 'interval', got {self.topology!r}")

    @property
    def h(self):
        return self.L / self.n

    @property
    def centers(self):
        return (np.arange(self.n) + 0.5) * self.h

    @property
    def faces(self):
        """Right face of every cell (the last one is a wall on an interval)."""
        return (np.arange(self.n) + 1.0) * self.h


@dataclass
class GridFunction:
    values: np.ndarray
    grid: Grid1D

    @property
    def mass(self):
        return float(np.sum(self.values) * self.grid.h)


@dataclass
class FPProblem:
    """``force[i]`` is ``F`` on the right face of cell ``i``."""

    grid: Grid1D
    force: np.ndarray

    def __post_init__(self):
        F = np.broadcast_to(np.asarray(self.force, dtype=float), (self.grid.n,)).copy()
        if not np.all(np.isfinite(F)):
            raise DomainError("force must be finite")
        self.force = F

    @classmethod
    def from_potential(cls, grid, V):
        """Force ``F = V'`` sampled by differences of ``V`` between cell centres."""
        x = grid.centers
        F = np.empty(grid.n)
        F[:-1] = (V(x[1:]) - V(x[:-1])) / grid.h
        F[-1] = (V(x[0] + grid.L) - V(x[-1])) / grid.h if grid.topology == "periodic" else 0.0
        return cls(grid, F)

    @classmethod
    def from_dict(cls, d):
        grid = Grid1D(float(d["L"]), int(d["n"]), d.get("topology", "periodic"))
        return cls(grid, d.get("force", 0.0))

    def generator(self):
        """Sparse ``A`` with ``du/dt = -A u``; columns sum to zero."""
        g = self.grid
        n, h = g.n, g.h
        bp = bernoulli(self.force * h) / h ** 2     # outflow coefficient to the right
        bm = bernoulli(-self.force * h) / h ** 2    # inflow from the right neighbour
        if g.topology == "interval":
            bp = bp.copy()
            bm = bm.copy()
            bp[-1] = 0.0
            bm[-1] = 0.0
        rows, cols, vals = [], [], []
        for i in range(n):
            j = (i + 1) % n
            if bp[i] == 0.0 and bm[i] == 0.0:
                continue
            # flux J_i = bp_i u_i - bm_i u_j leaves i, enters j
            rows += [i, i, j, j]
            cols += [i, j, i, j]
            vals += [bp[i], -bm[i], -bp[i], bm[i]]
        return sp.csc_matrix((vals, (rows, cols)), shape=(n, n))


def steady_state(prob: FPProblem) -> GridFunction:
    """Discrete stationary density, normalized to unit mass."""
    g = prob.grid
    A = prob.generator().tolil()
    A[0, :] = g.h
    b = np.zeros(g.n)
    b[0] = 1.0
    try:
        u = spla.spsolve(A.tocsc(), b)
    except RuntimeError as exc:  # pragma: no cover - singular factorization
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(u)) or np.any(u <= 0):
        raise SingularSystem("stationary system produced a non-positive density")
    return GridFunction(u, g)


def evolve(prob: FPProblem, u0: GridFunction, dt: float, T: float) -> List[GridFunction]:
    """Implicit Euler from ``u0`` up to time ``T`` (``round(T/dt)`` steps).

    Returns every state including the initial one.

    Raises
    ------
    NegativeDensity
        A cell went negative; never clipped.
    """
    if dt <= 0 or T < 0:
        raise DomainError("need dt > 0 and T >= 0")
    g = prob.grid
    u = np.asarray(u0.values, dtype=float)
    if u.shape != (g.n,) or np.any(u < 0):
        raise DomainError("initial density must be non-negative with one value per cell")
    steps = int(round(T / dt))
    try:
        lu = spla.splu((sp.identity(g.n, format="csc") + dt * prob.generator()).tocsc())
    except RuntimeError as exc:
        raise StepFailure(str(exc)) from exc
    out = [GridFunction(u.copy(), g)]
    for k in range(steps):
        u = lu.solve(u)
        if not np.all(np.isfinite(u)):
            raise StepFailure(f"non-finite density at step {k + 1}")
        if np.min(u) < 0:
            raise NegativeDensity(f"negative density {np.min(u):.3e} at step {k + 1}")
        out.append(GridFunction(u, g))
    return out


def relative_entropy(u: GridFunction, u_inf: GridFunction) -> float:
    """``h * sum(u log(u/u_inf) + u_inf - u)``, the entropy Bregman distance."""
    ui = np.asarray(u_inf.values, dtype=float)
    if np.any(ui <= 0):
        raise DomainError("reference density must be strictly positive")
    v = np.asarray(u.values, dtype=float)
    if np.any(v < 0):
        raise DomainError("density must be non-negative")
    return float(u.grid.h * np.sum(xlogy(v, v) - v * np.log(ui) + ui - v))


def relative_entropy_via_bregman(u: GridFunction, u_inf: GridFunction) -> float:
    """Same quantity routed through :func:`bregkit.convex.bregman`."""
    E = BoltzmannEntropy()
    pair = make_pair(E, u_inf.values, np.log(u_inf.values))
    return u.grid.h * bregman(E, u.values, pair)


@dataclass
class DissipationReport:
    t: np.ndarray
    entropy: np.ndarray
    dissipation: np.ndarray
    rate: float

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "entropy", "dissipation"])
            for row in zip(self.t, self.entropy, self.dissipation):
                wr.writerow([repr(float(x)) for x in row])


def fit_decay_rate(t, D, floor=1e-13, tail=0.5):
    """Exponential rate from a least-squares fit of ``log D`` on the last ``tail`` fraction
    of the samples that stay above ``floor``."""
    t = np.asarray(t)
    D = np.asarray(D)
    keep = D > floor
    t, D = t[keep], D[keep]
    if t.size < 4:
        return math.nan
    start = int(t.size * (1.0 - tail))
    slope = np.polyfit(t[start:], np.log(D[start:]), 1)[0]
    return float(-slope)


def dissipation_report(states, u_inf, dt, atol=1e-12, check=True) -> DissipationReport:
    """Relative entropy along a trajectory, its discrete dissipation and tail decay rate.

    Raises
    ------
    MonotonicityViolation
        The entropy increased by more than ``atol`` at some step (reported).
    """
    D = np.array([relative_entropy(s, u_inf) for s in states])
    t = dt * np.arange(D.size)
    diss = np.full(D.size, np.nan)
    diss[1:] = -(D[1:] - D[:-1]) / dt
    if check:
        bad = np.flatnonzero(D[1:] > D[:-1] + atol)
        if bad.size:
            k = int(bad[0]) + 1
            raise MonotonicityViolation(f"relative entropy increased at step {k}", step=k)
    return DissipationReport(t, D, diss, fit_decay_rate(t, D))


def problem_from_json(path):
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return FPProblem.from_dict(d), float(d.get("dt", 1e-4)), float(d.get("T", 0.1))
