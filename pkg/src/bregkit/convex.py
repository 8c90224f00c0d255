"""Convex functionals, subgradient certificates and Bregman distances.

Every functional lives on ``R^N`` with the Euclidean pairing and exposes

* evaluation (``J(u)``),
* a deterministic subgradient selection,
* a closed-form convex conjugate (``+inf`` outside its domain),
* a proximal map.

A :class:`SubgradientPair` ``(u, p)`` is trusted only after its Fenchel-Young
gap ``J(u) + J*(p) - <p, u>`` has been checked to vanish.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import wrightomega, xlogy

from .errors import (CertError, ConjugateUnavailable, DimensionMismatch,
                     DomainError, NotDifferentiable, UnsupportedFunctional)

TOL_CERT = 1e-10

# slack used for membership in the dual balls of one-homogeneous functionals
_BALL_TOL = 1e-12


def as_vector(u, name="u"):
    """Return ``u`` as a finite 1-D float array."""
    arr = np.atleast_1d(np.asarray(u, dtype=float))
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionMismatch(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    return arr


class Functional:
    """Base class. Subclasses override the numerical hooks."""

    kind = "abstract"
    one_homogeneous = False

    def __call__(self, u):
        u = as_vector(u)
        self._check_domain(u)
        return float(self._value(u))

    def in_domain(self, u):
        return True

    def _check_domain(self, u, name="u"):
        if not self.in_domain(u):
            raise DomainError(f"{name} lies outside the domain of {self.kind}")

    def subgradient(self, u):
        """Deterministic element of the subdifferential at ``u``."""
        raise NotImplementedError

    def conjugate(self, p):
        """Convex conjugate ``J*(p)``; ``inf`` outside its effective domain."""
        raise ConjugateUnavailable(f"{self.kind} has no conjugate")

    def prox(self, x, tau):
        """``argmin_u tau*J(u) + 0.5*||u - x||^2``."""
        raise NotImplementedError

    def to_dict(self):
        return {"kind": self.kind}

    def _value(self, u):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class SquaredL2(Functional):
    """``J(u) = 0.5 * ||u||^2``; self-conjugate."""

    kind = "squared_l2"

    def _value(self, u):
        return 0.5 * np.dot(u, u)

    def subgradient(self, u):
        return as_vector(u).copy()

    def conjugate(self, p):
        p = as_vector(p, "p")
        return 0.5 * float(np.dot(p, p))

    def prox(self, x, tau):
        return as_vector(x, "x") / (1.0 + tau)


class WeightedL1(Functional):
    """``J(u) = sum_i w_i |u_i|`` with positive weights.

    The conjugate is the indicator of the box ``|p_i| <= w_i``. At ``u_i = 0``
    the selected subgradient entry is 0 (the minimal-norm choice).
    """

    kind = "weighted_l1"
    one_homogeneous = True

    def __init__(self, weights=1.0):
        w = np.asarray(weights, dtype=float)
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise DomainError("weights must be finite and positive")
        self.weights = w

    def _w(self, n):
        if self.weights.ndim == 0:
            return np.full(n, float(self.weights))
        if self.weights.shape != (n,):
            raise DimensionMismatch(
                f"weights have shape {self.weights.shape}, vector has length {n}")
        return self.weights

    def _value(self, u):
        return np.dot(self._w(u.size), np.abs(u))

    def subgradient(self, u):
        u = as_vector(u)
        return self._w(u.size) * np.sign(u)

    def in_ball(self, p):
        p = as_vector(p, "p")
        w = self._w(p.size)
        return bool(np.all(np.abs(p) <= w * (1.0 + _BALL_TOL) + _BALL_TOL))

    def conjugate(self, p):
        return 0.0 if self.in_ball(p) else np.inf

    def prox(self, x, tau):
        x = as_vector(x, "x")
        thr = tau * self._w(x.size)
        return np.sign(x) * np.maximum(np.abs(x) - thr, 0.0)

    def to_dict(self):
        w = self.weights
        return {"kind": self.kind, "weights": w.tolist() if w.ndim else float(w)}

    def __repr__(self):
        return f"WeightedL1(weights={self.weights!r})"


class BoltzmannEntropy(Functional):
    """``J(u) = sum_i u_i log u_i + 1 - u_i`` on ``u >= 0`` (with ``0 log 0 = 0``).

    Its Bregman distance is the Kullback-Leibler divergence and its conjugate
    is ``J*(p) = sum_i exp(p_i) - 1``.
    """

    kind = "boltzmann_entropy"

    def in_domain(self, u):
        return bool(np.all(u >= 0))

    def _value(self, u):
        return np.sum(xlogy(u, u) + 1.0 - u)

    def subgradient(self, u):
        u = as_vector(u)
        self._check_domain(u)
        if np.any(u == 0):
            raise NotDifferentiable("entropy has an empty subdifferential at zero entries")
        return np.log(u)

    def conjugate(self, p):
        p = as_vector(p, "p")
        return float(np.sum(np.expm1(p)))

    def prox(self, x, tau):
        # tau*log(u) + u = x  <=>  u = tau * W(exp(x/tau)/tau)
        x = as_vector(x, "x")
        return tau * np.real(wrightomega(x / tau - np.log(tau)))


class TV1D(Functional):
    """Discrete one-dimensional total variation ``J(u) = ||D u||_1``.

    ``D`` is the forward difference divided by the grid spacing ``h``, so
    ``J(u) = sum_i |u_{i+1} - u_i| / h``. The conjugate is the indicator of
    ``{D^T phi : ||phi||_inf <= 1}``; membership is decided by recovering
    ``phi`` from ``p`` with a cumulative sum (``D^T`` is injective and its
    range is the mean-zero vectors).
    """

    kind = "tv1d"
    one_homogeneous = True

    def __init__(self, h=1.0):
        if not (np.isfinite(h) and h > 0):
            raise DomainError("grid spacing h must be positive")
        self.h = float(h)

    def grad(self, u):
        return np.diff(u) / self.h

    def grad_adjoint(self, phi, n):
        out = np.zeros(n)
        out[:-1] -= phi
        out[1:] += phi
        return out / self.h

    def _value(self, u):
        return np.sum(np.abs(self.grad(u)))

    def subgradient(self, u):
        u = as_vector(u)
        return self.grad_adjoint(np.sign(self.grad(u)), u.size)

    def dual_field(self, p):
        """Return ``(phi, mismatch)`` with ``D^T phi = p`` up to ``mismatch``.

        ``mismatch`` is ``h * |sum(p)|``, the part of ``p`` outside the range
        of ``D^T``.
        """
        p = as_vector(p, "p")
        c = -self.h * np.cumsum(p)
        return c[:-1], abs(c[-1])

    def in_ball(self, p):
        phi, mismatch = self.dual_field(p)
        scale = 1.0 + self.h * np.sum(np.abs(p))
        if mismatch > 1e-12 * scale:
            return False
        return bool(phi.size == 0 or np.max(np.abs(phi)) <= 1.0 + _BALL_TOL * scale)

    def conjugate(self, p):
        return 0.0 if self.in_ball(p) else np.inf

    def prox(self, x, tau, tol=1e-12, max_iter=100000):
        """Dual projected gradient; accurate to ``tol`` in the dual increment."""
        x = as_vector(x, "x")
        n = x.size
        if n == 1:
            return x.copy()
        # ||D||^2 <= 4 / h^2
        step = self.h ** 2 / 4.0
        phi = np.zeros(n - 1)
        for _ in range(max_iter):
            u = x - tau * self.grad_adjoint(phi, n)
            new = np.clip(phi + step / tau * self.grad(u), -1.0, 1.0)
            if np.max(np.abs(new - phi)) <= tol:
                phi = new
                break
            phi = new
        return x - tau * self.grad_adjoint(phi, n)

    def to_dict(self):
        return {"kind": self.kind, "h": self.h}

    def __repr__(self):
        return f"TV1D(h={self.h})"


def functional_from_dict(spec):
    """Inverse of ``Functional.to_dict``; also accepts short names."""
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind")
    aliases = {"l2": "squared_l2", "l1": "weighted_l1", "entropy": "boltzmann_entropy",
               "kl": "boltzmann_entropy", "tv": "tv1d"}
    kind = aliases.get(kind, kind)
    if kind == "squared_l2":
        return SquaredL2()
    if kind == "weighted_l1":
        return WeightedL1(spec.get("weights", 1.0))
    if kind == "boltzmann_entropy":
        return BoltzmannEntropy()
    if kind == "tv1d":
        return TV1D(spec.get("h", 1.0))
    raise UnsupportedFunctional(f"unknown functional kind {kind!r}")


# ---------------------------------------------------------------------------
# certificates


def duality_gap(J, u, p):
    """Fenchel-Young gap ``J(u) + J*(p) - <p, u>`` (zero iff ``p`` in dJ(u))."""
    u = as_vector(u)
    p = as_vector(p, "p")
    if u.shape != p.shape:
        raise DimensionMismatch("u and p differ in length")
    return J(u) + J.conjugate(p) - float(np.dot(p, u))


def cert_tolerance(J, u, tol=None):
    tol = TOL_CERT if tol is None else tol
    return tol * (1.0 + abs(J(u)))


@dataclass(frozen=True, eq=False)
class SubgradientPair:
    """A point ``u`` together with a subgradient ``p`` of ``functional`` at ``u``."""

    u: np.ndarray
    p: np.ndarray
    functional: Functional

    def gap(self):
        return duality_gap(self.functional, self.u, self.p)

    def certify(self, tol=None):
        """Raise :class:`CertError` unless the duality gap vanishes; return the gap."""
        g = self.gap()
        bound = cert_tolerance(self.functional, self.u, tol)
        if not np.isfinite(g) or abs(g) > bound:
            raise CertError(f"duality gap {g:.3e} exceeds {bound:.3e}", gap=g)
        return g

    def is_certified(self, tol=None):
        try:
            self.certify(tol)
        except CertError:
            return False
        return True


def make_pair(J, u, p, tol=None):
    """Build and certify a :class:`SubgradientPair`."""
    u = as_vector(u)
    p = as_vector(p, "p")
    pair = SubgradientPair(u, p, J)
    pair.certify(tol)
    return pair


def subgradient_select(J, u):
    """Certified pair at ``u`` using the functional's deterministic selection.

    The rules are ``p = u`` for :class:`SquaredL2`, ``p_i = w_i sign(u_i)`` with
    ``0 -> 0`` for :class:`WeightedL1`, ``p = log u`` for the entropy (fails at
    zero entries) and ``D^T sign(D u)`` for :class:`TV1D`.
    """
    u = as_vector(u)
    J._check_domain(u)
    return make_pair(J, u, J.subgradient(u))


# ---------------------------------------------------------------------------
# Bregman distances


def _check_same_length(*vecs):
    n = vecs[0].size
    if any(v.size != n for v in vecs):
        raise DimensionMismatch("vectors differ in length")


def bregman(J, v, pair, tol=None):
    """``D_J^p(v, u) = J(v) - J(u) - <p, v - u>`` for a certified ``pair = (u, p)``."""
    v = as_vector(v, "v")
    _check_same_length(v, pair.u)
    J._check_domain(v, "v")
    pair.certify(tol)
    if isinstance(J, BoltzmannEntropy):
        # conjugate form J(v) + J*(p) - <p, v>, written as a sum of KL terms
        # (v log v - v p, not v log(v / e^p), which underflows for tiny v)
        ep = np.exp(pair.p)
        return float(np.sum(xlogy(v, v) - v * pair.p + ep - v))
    return J(v) - J(pair.u) - float(np.dot(pair.p, v - pair.u))


def symmetric_bregman(J, pair_u, pair_v, tol=None):
    """``<p - q, u - v>`` = sum of the two one-sided distances."""
    _check_same_length(pair_u.u, pair_v.u)
    pair_u.certify(tol)
    pair_v.certify(tol)
    return float(np.dot(pair_u.p - pair_v.p, pair_u.u - pair_v.u))


def conjugate_bregman(J, p, pair_v):
    """``D_{J*}^v(p, q) = J*(p) - J*(q) - <v, p - q>`` where ``pair_v = (v, q)``."""
    p = as_vector(p, "p")
    return J.conjugate(p) - J.conjugate(pair_v.p) - float(np.dot(pair_v.u, p - pair_v.p))


def dual_bregman_residual(J, pair_u, pair_v, tol=None):
    """``|D_J^p(v, u) - D_{J*}^v(p, q)|``; vanishes for certified pairs."""
    primal = bregman(J, pair_v.u, pair_u, tol)
    pair_v.certify(tol)
    dual = conjugate_bregman(J, pair_u.p, pair_v)
    return abs(primal - dual)


def shifted_conjugate(J, pair_v, p):
    """Conjugate of ``u -> D_J^q(u, v)`` at ``p``: ``J*(p + q) - J*(q)``.

    Returns ``inf`` when ``p + q`` leaves the domain of ``J*``.
    """
    p = as_vector(p, "p")
    _check_same_length(p, pair_v.p)
    pair_v.certify()
    shifted = J.conjugate(p + pair_v.p)
    if not np.isfinite(shifted):
        return np.inf
    return shifted - J.conjugate(pair_v.p)


def infconv_bregman(J, u, pair1, pair2) -> Tuple[float, np.ndarray]:
    """Infimal convolution ``inf_v D^{p1}(u - v, u1) + D^{p2}(v, u2)``.

    Solved exactly coordinate by coordinate for the separable functionals:
    the quadratic and entropic cases have closed-form minimizers, and for the
    weighted l1 norm the objective is piecewise linear in each ``v_i`` with
    kinks at ``0`` and ``u_i`` only, so one of the two kinks is optimal (ties
    go to ``v_i = 0``).
    """
    u = as_vector(u)
    _check_same_length(u, pair1.u, pair2.u)
    pair1.certify()
    pair2.certify()
    p1, p2 = pair1.p, pair2.p
    if isinstance(J, SquaredL2):
        v = 0.5 * (u - p1 + p2)
    elif isinstance(J, BoltzmannEntropy):
        J._check_domain(u)
        # log v - log(u - v) = p2 - p1
        v = u / (1.0 + np.exp(p1 - p2))
    elif isinstance(J, WeightedL1):
        w = J._w(u.size)

        def coord_cost(vi):
            x = u - vi
            return (w * np.abs(x) - p1 * x) + (w * np.abs(vi) - p2 * vi)

        zero = np.zeros_like(u)
        c0, cu = coord_cost(zero), coord_cost(u)
        v = np.where(cu < c0, u, zero)
    else:
        raise UnsupportedFunctional(f"infimal convolution needs a separable functional, got {J.kind}")
    value = bregman(J, u - v, pair1) + bregman(J, v, pair2)
    return value, v


def is_subgradient(J, u, p, tol=None):
    """True when ``p`` passes the duality-gap test at ``u``."""
    return SubgradientPair(as_vector(u), as_vector(p, "p"), J).is_certified(tol)


def bregman_functional_gap(J, pair0, v, r, tol=None) -> Optional[float]:
    """Fenchel-Young gap of ``H(x) = D_J^{p0}(x, u0)`` at ``(v, r)``.

    ``H*`` is evaluated with :func:`shifted_conjugate`; a vanishing gap
    certifies ``r`` as a subgradient of ``H`` at ``v``.
    """
    v = as_vector(v, "v")
    r = as_vector(r, "r")
    hv = bregman(J, v, pair0, tol)
    hstar = shifted_conjugate(J, pair0, r)
    return hv + hstar - float(np.dot(r, v))
