"""P1 finite elements for the 1-D p-Laplace energy on ``[0, 1]``.

The energy of a continuous piecewise-linear ``u`` with ``u(0) = u(1) = 0`` is::

    E(u) = (1/p) * integral |u'|^p  -  integral f u

The first term is integrated exactly (``u'`` is constant on each element), the
load term by the trapezoidal rule. Minimizers over a coarse P1 space are
closest, in the Bregman distance of the gradient term, to the true minimizer;
:func:`bregman_projection_check` tests this against a fine-mesh reference.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy.linalg import solve_banded

from .errors import DomainError, MaxIterExceeded, MeshMismatch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Mesh1D:
    """Uniform mesh of ``[0, 1]`` with ``m`` elements."""

    m: int

    def __post_init__(self):
        if self.m < 2:
            raise DomainError("mesh needs at least 2 elements")

    @property
    def h(self):
        return 1.0 / self.m

    @property
    def nodes(self):
        return np.linspace(0.0, 1.0, self.m + 1)

    @property
    def interior(self):
        return self.nodes[1:-1]


@dataclass
class P1Function:
    """Values at the ``m - 1`` interior nodes; zero on the boundary."""

    values: np.ndarray
    mesh: Mesh1D

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size != self.mesh.m - 1:
            raise MeshMismatch(f"{self.values.size} values for a mesh with {self.mesh.m - 1} interior nodes")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("nodal values must be finite")

    @property
    def full(self):
        return np.concatenate(([0.0], self.values, [0.0]))

    def prolong(self, fine: Mesh1D) -> "P1Function":
        """Exact interpolation onto a nested finer mesh."""
        if fine.m % self.mesh.m:
            raise MeshMismatch(f"mesh with {fine.m} elements does not refine {self.mesh.m}")
        return P1Function(np.interp(fine.interior, self.mesh.nodes, self.full), fine)


Load = Union[float, Callable[[np.ndarray], np.ndarray]]


@dataclass
class PLaplaceProblem:
    """Exponent ``p >= 2`` and load ``f`` (constant, callable, or nodal samples on ``[0, 1]``)."""

    p: float
    f: Load = 1.0
    quadrature: str = "trapezoid"

    def __post_init__(self):
        if not self.p >= 2:
            raise DomainError(f"exponent must be >= 2, got {self.p}")
        if self.quadrature != "trapezoid":
            raise DomainError(f"unknown quadrature {self.quadrature!r}")
        if not callable(self.f):
            arr = np.asarray(self.f, dtype=float)
            if arr.ndim == 0:
                c = float(arr)
                self.f = lambda x, c=c: np.full_like(np.asarray(x, dtype=float), c)
            else:
                grid = np.linspace(0.0, 1.0, arr.size)
                self.f = lambda x, g=grid, a=arr: np.interp(x, g, a)

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["p"]), d.get("f", 1.0))

    def load(self, mesh: Mesh1D):
        """Trapezoidal load vector ``h * f(x_j)`` at interior nodes."""
        return mesh.h * np.asarray(self.f(mesh.interior), dtype=float)


def _slopes(u: P1Function):
    return np.diff(u.full) / u.mesh.h


def gradient_energy(p, u: P1Function):
    """``(1/p) * integral |u'|^p``, exact for P1."""
    s = _slopes(u)
    return float(u.mesh.h * np.sum(np.abs(s) ** p) / p)


def energy(prob: PLaplaceProblem, u: P1Function) -> float:
    return gradient_energy(prob.p, u) - float(np.dot(prob.load(u.mesh), u.values))


def energy_gradient(prob, u: P1Function):
    s = _slopes(u)
    flux = np.abs(s) ** (prob.p - 2) * s
    return flux[:-1] - flux[1:] - prob.load(u.mesh)


def _element_stiffness(prob, u, mu):
    s = _slopes(u)
    return ((prob.p - 1) * np.abs(s) ** (prob.p - 2) + mu) / u.mesh.h


def _tridiag_solve(k, rhs):
    """Solve the assembled system for element coefficients ``k`` (length m)."""
    n = rhs.size
    ab = np.zeros((3, n))
    ab[1] = k[:-1] + k[1:]
    ab[0, 1:] = -k[1:-1]
    ab[2, :-1] = -k[1:-1]
    return solve_banded((1, 1), ab, rhs)


def linear_solution(prob: PLaplaceProblem, mesh: Mesh1D) -> P1Function:
    """The ``p = 2`` Galerkin solution from one banded solve."""
    return P1Function(_tridiag_solve(np.full(mesh.m, 1.0 / mesh.h), prob.load(mesh)), mesh)


@dataclass
class NewtonInfo:
    iterations: int
    grad_norm: float
    energies: List[float] = field(default_factory=list)


def solve_galerkin(prob: PLaplaceProblem, mesh: Mesh1D, tol=1e-10, max_iter=200, info=None) -> P1Function:
    """Minimize the discrete energy by damped Newton with Armijo backtracking.

    The Hessian is tridiagonal with element weights ``(p-1)|u'|^(p-2)/h``;
    elements where ``u'`` vanishes make it singular for ``p > 2``, so a
    multiple of the linear stiffness matrix proportional to the current
    gradient size is added. Starts from the ``p = 2`` solution.

    Parameters
    ----------
    tol : float
        Stop when ``max |dE/du_j| / h <= tol``.
    info : NewtonInfo, optional
        Filled with iteration count, final gradient norm and the energy history.

    Raises
    ------
    MaxIterExceeded
        ``partial`` holds the last iterate.
    """
    u = linear_solution(prob, mesh)
    if prob.p == 2:
        g = energy_gradient(prob, u)
        if info is not None:
            info.iterations, info.grad_norm = 0, float(np.max(np.abs(g), initial=0.0) / mesh.h)
            info.energies.append(energy(prob, u))
        return u
    E = energy(prob, u)
    energies = [E]
    gn = np.inf
    for it in range(max_iter + 1):
        g = energy_gradient(prob, u)
        gn = float(np.max(np.abs(g), initial=0.0) / mesh.h)
        if gn <= tol:
            break
        if it == max_iter:
            raise MaxIterExceeded(f"gradient norm {gn:.3e} after {max_iter} Newton steps", partial=u)
        mu = min(1.0, gn)
        d = -_tridiag_solve(_element_stiffness(prob, u, mu), g)
        slope = float(np.dot(g, d))
        step = 1.0
        while True:
            trial = P1Function(u.values + step * d, mesh)
            Et = energy(prob, trial)
            if Et <= E + 1e-4 * step * slope or step < 1e-12:
                break
            step *= 0.5
        if Et > E:
            # round-off floor: no representable decrease left
            break
        u, E = trial, Et
        energies.append(E)
        log.debug("newton %d: |g|=%.3e step=%.3g E=%.15g", it, gn, step, E)
    if info is not None:
        info.iterations, info.grad_norm, info.energies = len(energies) - 1, gn, energies
    return u


def bregman_energy_distance(prob, w: P1Function, u_ref: P1Function) -> float:
    """``J(w) - J(u_ref) - <f, w - u_ref>`` on the mesh of ``u_ref``.

    Equals ``E(w) - E(u_ref)``; it is the Bregman distance of ``J`` at
    ``u_ref`` with subgradient ``f`` (exact when ``u_ref`` is the minimizer).
    """
    if w.mesh != u_ref.mesh:
        raise MeshMismatch("distance needs both functions on the same mesh")
    return energy(prob, w) - energy(prob, u_ref)


@dataclass
class ProjectionRow:
    candidate: int
    D_value: float
    passed: bool


@dataclass
class ProjectionReport:
    D_uh: float
    tol_ref: float
    rows: List[ProjectionRow]

    @property
    def passed(self):
        return all(r.passed for r in self.rows)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["candidate", "D_value", "passed"])
            for r in self.rows:
                wr.writerow([r.candidate, repr(r.D_value), str(r.passed).lower()])


def bregman_projection_check(prob, u_ref: P1Function, u_h: P1Function,
                             candidates: Sequence[P1Function], base_tol=1e-6) -> ProjectionReport:
    """Compare ``D(u_h, u_ref)`` with ``D(v, u_ref)`` for each coarse candidate ``v``.

    Everything is prolonged to the reference mesh. The slack is
    ``base_tol + |E_fine(u_h) - E_coarse(u_h)|``: the part of the fine-mesh
    energy that the coarse problem does not see (load quadrature).
    Row ``0`` is ``u_h`` itself.
    """
    fine, coarse = u_ref.mesh, u_h.mesh
    if fine.m < 8 * coarse.m:
        raise MeshMismatch(f"reference mesh ({fine.m}) must be at least 8x finer than {coarse.m}")
    uh_f = u_h.prolong(fine)
    tol_ref = base_tol + abs(energy(prob, uh_f) - energy(prob, u_h))
    d_uh = bregman_energy_distance(prob, uh_f, u_ref)
    rows = [ProjectionRow(0, d_uh, True)]
    for i, v in enumerate(candidates, start=1):
        if v.mesh != coarse:
            raise MeshMismatch(f"candidate {i} is not on the coarse mesh")
        dv = bregman_energy_distance(prob, v.prolong(fine), u_ref)
        rows.append(ProjectionRow(i, dv, d_uh <= dv + tol_ref))
    return ProjectionReport(d_uh, tol_ref, rows)


def random_candidates(u_h: P1Function, count, seed=0, scale=None):
    """``u_h`` plus Gaussian nodal noise (default scale 10% of ``max|u_h|``)."""
    rng = np.random.default_rng(seed)
    if scale is None:
        scale = 0.1 * max(float(np.max(np.abs(u_h.values))), 1e-3)
    return [P1Function(u_h.values + scale * rng.standard_normal(u_h.values.size), u_h.mesh)
            for _ in range(count)]


def refinement_study(prob, ms: Sequence[int], m_ref: int, tol=1e-10):
    """``(m, D(u_h, u_ref))`` for each coarse size; reported, not asserted."""
    fine = Mesh1D(m_ref)
    u_ref = solve_galerkin(prob, fine, tol=tol)
    out = []
    for m in ms:
        u_h = solve_galerkin(prob, Mesh1D(m), tol=tol)
        out.append((m, bregman_energy_distance(prob, u_h.prolong(fine), u_ref)))
    return out


def problem_from_json(path):
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return PLaplaceProblem.from_dict(d), Mesh1D(int(d.get("m", 16)))
