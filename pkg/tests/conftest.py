"""Shared generators for randomized tests."""

import numpy as np
import pytest

from bregkit.convex import BoltzmannEntropy, SquaredL2, TV1D, WeightedL1, make_pair
from bregkit.errors import Infeasible
from bregkit.operators import LinOp, SignedSupport
from bregkit.variational import make_source_triple


def random_pair(J, rng, n):
    """A point ``u`` and an arbitrary (not canonical) subgradient of ``J`` there."""
    if isinstance(J, SquaredL2):
        u = rng.normal(size=n)
        return make_pair(J, u, u.copy())
    if isinstance(J, WeightedL1):
        w = J._w(n)
        u = rng.normal(size=n) * (rng.random(n) < 0.6)
        p = np.where(u != 0, w * np.sign(u), rng.uniform(-1, 1, n) * w)
        return make_pair(J, u, p)
    if isinstance(J, BoltzmannEntropy):
        u = np.exp(rng.normal(size=n))
        return make_pair(J, u, np.log(u))
    if isinstance(J, TV1D):
        # piecewise constant with a few jumps; free dual entries on flat steps
        jumps = rng.normal(size=n - 1) * (rng.random(n - 1) < 0.4)
        u = np.cumsum(np.concatenate([[rng.normal()], jumps]))
        d = np.diff(u)
        phi = np.where(d != 0, np.sign(d), rng.uniform(-1, 1, n - 1))
        return make_pair(J, u, J.grad_adjoint(phi, n))
    raise TypeError(J)


def all_functionals(rng=None):
    rng = rng or np.random.default_rng(0)
    return [SquaredL2(), WeightedL1(1.0), WeightedL1(rng.uniform(0.5, 2.0, 6)),
            BoltzmannEntropy(), TV1D(0.5)]


def source_instance(seed, m=10, n=25, k=3, margin=0.1, max_tries=200):
    """Gaussian ``m x n`` operator with a ``k``-sparse truth satisfying the source condition.

    Seeds whose draw admits no certificate of the requested margin are skipped:
    the search moves on to ``seed + 1000``, ``seed + 2000``, ... deterministically.
    """
    for j in range(max_tries):
        s = seed + 1000 * j
        rng = np.random.default_rng(s)
        K = LinOp.gaussian(m, n, s)
        idx = rng.choice(n, size=k, replace=False)
        signs = rng.choice([-1, 1], size=k)
        ss = SignedSupport({int(i): int(g) for i, g in zip(idx, signs)})
        try:
            return K, make_source_triple(K, ss, rng_seed=s, margin=margin)
        except Infeasible:
            continue
    raise RuntimeError("no feasible source instance found")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: s[6:9]):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
