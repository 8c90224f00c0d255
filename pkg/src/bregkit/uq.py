"""Monte-Carlo check of the expected Bregman-distance error under Gaussian noise.

Data are ``f = K u* + eta`` with i.i.d. ``N(0, sigma^2)`` entries and the
estimate minimizes ``||K u - f||^2 / (2 sigma^2) + alpha ||u||_1``, i.e. an
ordinary l1 problem with regularization ``alpha * sigma^2``. When ``u*``
satisfies a source condition ``p* = K^T w*`` the optimality conditions give,
for every noise draw,::

    ||K(u - u*)||^2 + 2 alpha sigma^2 D_sym + alpha^2 sigma^4 ||w - w*||^2
        = ||eta - alpha sigma^2 w*||^2

whose expectation ``sigma^2 M + alpha^2 sigma^4 ||w*||^2`` bounds the mean
symmetric Bregman distance by ``M / (2 alpha) + alpha sigma^2 ||w*||^2 / 2``.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .convex import WeightedL1, symmetric_bregman
from .errors import BoundViolated, DomainError
from .variational import RegProblem, solve

CI_Z = 1.959963984540054    # two-sided 95% normal quantile
IDENTITY_RTOL = 1e-6
SE_LIMIT = 4.0


@dataclass(frozen=True)
class NoiseModel:
    sigma: float
    seed: int

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    def draw(self, m, sample_index):
        """Noise vector for one sample.

        The stream is ``PCG64(SeedSequence(seed, spawn_key=(sample_index,)))``,
        so it depends only on the seed and the index, never on scheduling.
        """
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(sample_index),))
        return self.sigma * np.random.Generator(np.random.PCG64(ss)).standard_normal(m)


class SampleResult(NamedTuple):
    D_sym: float
    T1: float
    T3: float
    eta_norm_sq: float


def sample_solve(K, triple, noise: NoiseModel, alpha, sample_index, tol=1e-12) -> SampleResult:
    """Solve one noisy instance and return the terms of the per-sample identity.

    ``eta_norm_sq`` is ``||eta - alpha sigma^2 w*||^2``.
    """
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    a_eff = alpha * noise.sigma ** 2
    R = WeightedL1(1.0)
    eta = noise.draw(K.shape[0], sample_index)
    f = K.apply(triple.u_star) + eta
    sol = solve(RegProblem(K, f, a_eff, R), tol=tol)
    D = symmetric_bregman(R, sol.pair(), triple.pair(R))
    Kd = K.apply(sol.u - triple.u_star)
    dw = sol.w - triple.w_star
    shifted = eta - a_eff * triple.w_star
    return SampleResult(float(D), float(Kd @ Kd), float(a_eff ** 2 * (dw @ dw)), float(shifted @ shifted))


def optimal_alpha(M, sigma, w_norm):
    """Minimizer ``sqrt(M / (sigma^2 ||w*||^2))`` of the expected bound."""
    return math.sqrt(M / (sigma ** 2 * w_norm ** 2))


def expected_bound(M, sigma, alpha, w_norm):
    return M / (2 * alpha) + alpha * sigma ** 2 * w_norm ** 2 / 2


def thread_count():
    """``BREGKIT_THREADS`` (0 or unset = number of CPUs)."""
    raw = os.environ.get("BREGKIT_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise DomainError(f"BREGKIT_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise DomainError("BREGKIT_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


@dataclass
class MCReport:
    seed: int
    n_samples: int
    sigma: float
    alpha: float
    M: int
    mean_bregman: float
    ci: float
    bound: float
    lhs_mean: float
    lhs_se: float
    rhs: float
    max_identity_error: float
    passed: bool

    @property
    def ci_halfwidth(self):
        return self.ci

    def to_dict(self):
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d

    def write_json(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


def expected_bound_check(K, triple, noise: NoiseModel, alpha, n_samples, threads=None, tol=1e-12,
                         raise_on_fail=True) -> MCReport:
    """Mean symmetric Bregman distance over ``n_samples`` draws against its bound.

    Passes when (i) the per-sample identity holds to ``1e-6`` relative on every
    sample, (ii) ``mean - 95% CI half-width <= bound`` and (iii) the sample mean
    of the identity's left side is within 4 standard errors of its expectation.

    Raises
    ------
    BoundViolated
        Any check failed; the report is attached.
    """
    if n_samples < 2:
        raise DomainError("need at least two samples")
    n_threads = thread_count() if threads is None else max(1, int(threads))
    idx = range(n_samples)
    run = lambda i: sample_solve(K, triple, noise, alpha, i, tol=tol)  # noqa: E731
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as ex:
            results = list(ex.map(run, idx))
        # map preserves index order, so the aggregation below is schedule independent
    else:
        results = [run(i) for i in idx]
    arr = np.array(results)
    D, T1, T3, sq = arr.T
    a_eff = alpha * noise.sigma ** 2
    lhs = T1 + 2 * a_eff * D + T3
    id_err = float(np.max(np.abs(lhs - sq) / np.maximum(sq, np.finfo(float).tiny)))
    M = K.shape[0]
    w2 = float(triple.w_star @ triple.w_star)
    mean = float(np.sum(D) / n_samples)
    ci = CI_Z * float(np.std(D, ddof=1)) / math.sqrt(n_samples)
    bound = expected_bound(M, noise.sigma, alpha, math.sqrt(w2))
    lhs_mean = float(np.sum(lhs) / n_samples)
    lhs_se = float(np.std(lhs, ddof=1)) / math.sqrt(n_samples)
    rhs = noise.sigma ** 2 * M + a_eff ** 2 * w2
    ok = (id_err <= IDENTITY_RTOL and mean - ci <= bound
          and abs(lhs_mean - rhs) <= SE_LIMIT * lhs_se)
    rep = MCReport(int(noise.seed), n_samples, noise.sigma, float(alpha), M, mean, ci, bound,
                   lhs_mean, lhs_se, rhs, id_err, bool(ok))
    if raise_on_fail and not ok:
        raise BoundViolated("expected Bregman-distance check failed", report=rep)
    return rep
