import json

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from bregkit.convex import BoltzmannEntropy, SquaredL2
from bregkit.entropic_ot import (DiscreteMeasure, bregman_cost_matrix, exact_ot_bruteforce,
                                 gibbs_kernel, kl_to_kernel, projection_distances, sinkhorn)
from bregkit.errors import DimensionMismatch, DomainError, MaxIterExceeded, TooLarge

SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


def random_instance(rng, n):
    x, y = rng.uniform(size=(n, 2)), rng.uniform(size=(n, 2))
    C = ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)
    return DiscreteMeasure.uniform(n), DiscreteMeasure.uniform(n), C


@pytest.mark.parametrize("eps", [1.0, 0.1, 0.02])
def test_two_point_closed_form(eps):
    u = DiscreteMeasure.uniform(2)
    plan = sinkhorn(u, u, SWAP, eps)
    # plan is [[a, b], [b, a]] with a + b = 1/2 and b / a = exp(-1/eps)
    b = 0.5 / (1 + np.exp(1 / eps))
    assert plan.cost == pytest.approx(2 * b, rel=1e-10)
    np.testing.assert_allclose(plan.matrix, [[0.5 - b, b], [b, 0.5 - b]], rtol=1e-10)


def test_marginals_and_kernel_structure(rng):
    mu = DiscreteMeasure(rng.dirichlet(np.ones(5)))
    nu = DiscreteMeasure(rng.dirichlet(np.ones(7)))
    C = rng.uniform(size=(5, 7))
    plan = sinkhorn(mu, nu, C, 0.05, tol=1e-10)
    assert plan.row_residual <= 1e-8 and plan.col_residual <= 1e-8
    # optimal plan is a diagonal scaling of the Gibbs kernel: rank one after division
    R = plan.matrix / gibbs_kernel(C, 0.05)
    assert np.linalg.matrix_rank(R, tol=1e-8 * R.max()) == 1


def test_newton_acceleration_reaches_same_plan(rng):
    mu, nu, C = random_instance(rng, 5)
    a = sinkhorn(mu, nu, C, 0.05, tol=1e-11)
    b = sinkhorn(mu, nu, C, 0.05, tol=1e-11, newton_every=None)
    np.testing.assert_allclose(a.matrix, b.matrix, atol=1e-9)


@pytest.mark.parametrize("n", [5, 6])
def test_small_eps_cost_close_to_assignment(n):
    rng = np.random.default_rng(100 + n)
    mu, nu, C = random_instance(rng, n)
    best, perm = exact_ot_bruteforce(mu, nu, C)
    r, c = linear_sum_assignment(C)
    assert best == pytest.approx(C[r, c].sum() / n, rel=1e-12)
    plan = sinkhorn(mu, nu, C, 0.005)
    assert plan.row_residual <= 1e-8 and plan.col_residual <= 1e-8
    assert abs(plan.cost - best) <= 0.01 * best


def test_monotone_quantities_along_sweeps(rng):
    for _ in range(5):
        mu, nu, C = random_instance(rng, 4)
        plan = sinkhorn(mu, nu, C, 0.1, keep_history=True, newton_every=None)
        d = projection_distances(plan)
        assert all(y <= x + 1e-12 for x, y in zip(d, d[1:]))
        assert all(y >= x - 1e-12 for x, y in zip(plan.dual_history, plan.dual_history[1:]))
        assert plan.kl_objective >= 0


def test_transpose_symmetry(rng):
    mu = DiscreteMeasure(rng.dirichlet(np.ones(4)))
    nu = DiscreteMeasure(rng.dirichlet(np.ones(3)))
    C = rng.uniform(size=(4, 3))
    a = sinkhorn(mu, nu, C, 0.1, tol=1e-12)
    b = sinkhorn(nu, mu, C.T, 0.1, tol=1e-12)
    np.testing.assert_allclose(a.matrix, b.matrix.T, atol=1e-10)


def test_zero_weight_atoms_get_zero_rows():
    mu = DiscreteMeasure([0.5, 0.0, 0.5])
    nu = DiscreteMeasure.uniform(2)
    plan = sinkhorn(mu, nu, np.ones((3, 2)), 0.1)
    np.testing.assert_array_equal(plan.matrix[1], 0.0)
    np.testing.assert_allclose(plan.matrix, [[0.25, 0.25], [0, 0], [0.25, 0.25]], atol=1e-12)


def test_kl_to_kernel_matches_direct_formula(rng):
    C = rng.uniform(size=(3, 3))
    P = rng.dirichlet(np.ones(9)).reshape(3, 3)
    K = np.exp(-C / 0.3)
    direct = np.sum(P * np.log(P / K) - P + K)
    assert kl_to_kernel(np.log(P), C, 0.3) == pytest.approx(direct, rel=1e-12)


def test_errors():
    with pytest.raises(DomainError):
        DiscreteMeasure([0.5, 0.6])
    with pytest.raises(DomainError):
        DiscreteMeasure([1.5, -0.5])
    u = DiscreteMeasure.uniform(2)
    with pytest.raises(DimensionMismatch):
        sinkhorn(u, u, np.ones((3, 2)), 0.1)
    with pytest.raises(DomainError):
        sinkhorn(u, u, SWAP, 0.0)
    with pytest.raises(MaxIterExceeded) as exc:
        sinkhorn(*random_instance(np.random.default_rng(0), 4), 0.01, max_iter=2, newton_every=None)
    assert not exc.value.partial.converged
    with pytest.raises(TooLarge):
        exact_ot_bruteforce(DiscreteMeasure.uniform(10), DiscreteMeasure.uniform(10), np.zeros((10, 10)))


def test_bregman_cost_matrices():
    pts = [np.array([1.0]), np.array([2.0])]
    C = bregman_cost_matrix(BoltzmannEntropy(), pts, pts)
    np.testing.assert_allclose(C, [[0, 1 - np.log(2)], [2 * np.log(2) - 1, 0]], atol=1e-14)
    C2 = bregman_cost_matrix(SquaredL2(), pts, pts)
    np.testing.assert_allclose(C2, [[0, 0.5], [0.5, 0]], atol=1e-14)


def test_outputs(tmp_path):
    u = DiscreteMeasure.uniform(2)
    plan = sinkhorn(u, u, SWAP, 0.1)
    plan.write_csv(tmp_path / "plan.csv")
    plan.write_summary(tmp_path / "s.json")
    assert len((tmp_path / "plan.csv").read_text().splitlines()) == 2
    s = json.loads((tmp_path / "s.json").read_text())
    assert set(s) == {"cost", "kl_objective", "iterations", "residuals", "eps", "converged"}


def test_entropic_cost_dominates_exact_cost_and_converges():
    rng = np.random.default_rng(21)
    for n in (4, 5, 6):
        mu, nu, C = random_instance(rng, n)
        best, _ = exact_ot_bruteforce(mu, nu, C)
        gaps = [sinkhorn(mu, nu, C, eps).cost - best for eps in (1.0, 0.1, 0.01, 0.005)]
        assert min(gaps) >= -1e-12
        assert gaps[-1] < gaps[0] and gaps[-1] <= 0.01 * best


def test_kl_to_gibbs_kernel_is_not_monotone_across_sweeps():
    # documents why the sweep diagnostics track KL to the limit plan instead
    rng = np.random.default_rng(0)
    found = False
    for _ in range(20):
        mu = DiscreteMeasure(rng.dirichlet(np.ones(4)))
        nu = DiscreteMeasure(rng.dirichlet(np.ones(3)))
        C = rng.uniform(size=(4, 3))
        plan = sinkhorn(mu, nu, C, 0.1, keep_history=True, newton_every=None)
        k = [kl_to_kernel(lp, C, 0.1) for lp in plan.log_history]
        found |= any(b > a + 1e-12 for a, b in zip(k, k[1:]))
    assert found
