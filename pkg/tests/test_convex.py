import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bregkit.convex import (BoltzmannEntropy, SquaredL2, TV1D, WeightedL1, bregman,
                            bregman_functional_gap, conjugate_bregman, dual_bregman_residual,
                            duality_gap, functional_from_dict, infconv_bregman, is_subgradient,
                            make_pair, shifted_conjugate, subgradient_select, symmetric_bregman)
from bregkit.errors import (CertError, DimensionMismatch, DomainError, NotDifferentiable,
                            UnsupportedFunctional)

from conftest import all_functionals, random_pair

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


# ---------------------------------------------------------------------------
# worked values


def test_quadratic_distance_is_half_squared_norm():
    J = SquaredL2()
    assert bregman(J, [0, 1], make_pair(J, [1, 0], [1, 0])) == pytest.approx(1.0, abs=1e-15)


def test_l1_distance_raw_definition_against_sign_split_formula():
    J = WeightedL1(1.0)
    u, p, v = np.array([2.0, 0.0]), np.array([1.0, 0.5]), np.array([1.0, -3.0])
    D = bregman(J, v, make_pair(J, u, p))
    # sum over coordinates of (1 - p_i)|v_i| for v_i >= 0 and (1 + p_i)|v_i| for v_i < 0
    split = sum((1 - pi) * abs(vi) if vi >= 0 else (1 + pi) * abs(vi) for pi, vi in zip(p, v))
    assert D == pytest.approx(4.5, abs=1e-14)
    assert split == pytest.approx(4.5, abs=1e-14)


def test_entropy_distance_is_kl():
    J = BoltzmannEntropy()
    u = np.array([1.0, 2.0])
    assert bregman(J, u, make_pair(J, u, np.log(u))) == pytest.approx(0.0, abs=1e-15)
    v = np.array([2.0, 1.0])
    kl = float(np.sum(v * np.log(v / u) + u - v))
    D = bregman(J, v, make_pair(J, u, [0.0, math.log(2)]))
    assert D == pytest.approx(math.log(2), abs=1e-14)
    assert D == pytest.approx(kl, abs=1e-14)


def test_entropy_distance_allows_zero_entries_in_first_argument():
    J = BoltzmannEntropy()
    pair = make_pair(J, [1.0, 2.0], [0.0, math.log(2)])
    assert bregman(J, [0.0, 2.0], pair) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(DomainError):
        bregman(J, [-1.0, 2.0], pair)


def test_symmetric_distance_examples():
    J = SquaredL2()
    pu, pv = make_pair(J, [1, 0], [1, 0]), make_pair(J, [0, 1], [0, 1])
    assert symmetric_bregman(J, pu, pv) == pytest.approx(2.0)
    assert symmetric_bregman(J, pu, pu) == 0.0
    L1 = WeightedL1(1.0)
    a, b = make_pair(L1, [2, 0], [1, 0.5]), make_pair(L1, [1, -3], [1, -1])
    s = symmetric_bregman(L1, a, b)
    assert s == pytest.approx(4.5)
    assert s == pytest.approx(bregman(L1, b.u, a) + bregman(L1, a.u, b), rel=1e-10)


def test_dual_residual_examples():
    J = SquaredL2()
    assert dual_bregman_residual(J, make_pair(J, [1, 0], [1, 0]), make_pair(J, [0, 1], [0, 1])) <= 1e-12
    E = BoltzmannEntropy()
    u, v = np.array([1.0, 2.0]), np.array([2.0, 1.0])
    assert dual_bregman_residual(E, make_pair(E, u, np.log(u)), make_pair(E, v, np.log(v))) <= 1e-10
    L1 = WeightedL1(1.0)
    a, b = make_pair(L1, [2, 0], [1, 0.5]), make_pair(L1, [1, -3], [1, -1])
    assert dual_bregman_residual(L1, a, b) <= 1e-12
    # reduction for one-homogeneous J: D = <q - p, v>
    assert bregman(L1, b.u, a) == pytest.approx(float(np.dot(b.p - a.p, b.u)), abs=1e-12)


def test_shifted_conjugate_examples():
    J = SquaredL2()
    pv = make_pair(J, [1, 1], [1, 1])
    assert shifted_conjugate(J, pv, [0, 0]) == 0.0
    assert shifted_conjugate(J, pv, [1, 0]) == pytest.approx(1.5)
    L1 = WeightedL1(1.0)
    assert shifted_conjugate(L1, make_pair(L1, [1, 0], [1, 0]), [0.5, 0]) == math.inf


def test_infconv_l1_scalar_examples():
    L1 = WeightedL1(1.0)
    p1, p2 = make_pair(L1, [1.0], [1.0]), make_pair(L1, [-1.0], [-1.0])
    val, v = infconv_bregman(L1, [3.0], p1, p2)
    assert val == pytest.approx(0.0, abs=1e-15) and v[0] == 0.0
    val, v = infconv_bregman(L1, [-3.0], p1, p2)
    assert val == pytest.approx(0.0, abs=1e-15) and v[0] == -3.0
    # plain distances for contrast
    assert bregman(L1, [3.0], p1) == pytest.approx(0.0)
    assert bregman(L1, [-3.0], p1) == pytest.approx(6.0)
    val, _ = infconv_bregman(L1, [1.0], p1, p1)
    assert val == pytest.approx(0.0, abs=1e-15)


def _scalar_distance(kind, x, u, p):
    if kind == "l2":
        return 0.5 * (x - u) ** 2
    # entropy with p = log u
    return x * np.log(x / u) + u - x


def test_infconv_closed_forms_agree_with_grid(rng):
    for J, kind in ((SquaredL2(), "l2"), (BoltzmannEntropy(), "kl")):
        for _ in range(10):
            pa, pb = random_pair(J, rng, 1), random_pair(J, rng, 1)
            u = np.array([abs(rng.normal()) + 0.5])
            val, v = infconv_bregman(J, u, pa, pb)
            grid = np.linspace(-6.0, 6.0, 200001) if kind == "l2" else np.linspace(0, u[0], 200001)[1:-1]
            cost = (_scalar_distance(kind, u[0] - grid, pa.u[0], pa.p[0])
                    + _scalar_distance(kind, grid, pb.u[0], pb.p[0]))
            assert val <= cost.min() + 1e-9
            assert val == pytest.approx(cost.min(), abs=1e-6)


def test_infconv_tv_is_unsupported():
    J = TV1D()
    pair = subgradient_select(J, [0.0, 1.0])
    with pytest.raises(UnsupportedFunctional):
        infconv_bregman(J, [1.0, 1.0], pair, pair)


def test_subgradient_selection_rules():
    assert np.array_equal(subgradient_select(SquaredL2(), [3, 1]).p, [3, 1])
    assert np.array_equal(subgradient_select(WeightedL1(1.0), [2, 0]).p, [1, 0])
    np.testing.assert_allclose(subgradient_select(BoltzmannEntropy(), [1, math.e]).p, [0, 1], atol=1e-15)
    with pytest.raises(NotDifferentiable):
        subgradient_select(BoltzmannEntropy(), [0.0, 1.0])
    assert isinstance(NotDifferentiable("x"), DomainError)


def test_certificate_rejects_wrong_subgradient():
    with pytest.raises(CertError):
        make_pair(WeightedL1(1.0), [2, 0], [0.5, 0])
    with pytest.raises(CertError):
        make_pair(WeightedL1(1.0), [2, 0], [1, 1.5])
    with pytest.raises(CertError):
        make_pair(TV1D(), [0, 1, 1], [0.5, 0, 0])  # not mean zero
    with pytest.raises(CertError):
        make_pair(SquaredL2(), [1, 2], [1, 2.001])


def test_dimension_and_domain_errors():
    J = SquaredL2()
    with pytest.raises(DimensionMismatch):
        bregman(J, [1, 2, 3], make_pair(J, [1, 0], [1, 0]))
    with pytest.raises(DomainError):
        J([np.nan, 1])
    with pytest.raises(DomainError):
        WeightedL1([1.0, -1.0])
    with pytest.raises(DomainError):
        TV1D(0.0)
    with pytest.raises(UnsupportedFunctional):
        functional_from_dict({"kind": "huber"})


def test_functional_roundtrip_through_dict():
    for J in all_functionals():
        K = functional_from_dict(J.to_dict())
        x = np.linspace(0.1, 1.2, 6)
        assert K(x) == pytest.approx(J(x))


def test_tv_value_and_subgradient():
    J = TV1D(0.5)
    u = np.array([0.0, 1.0, 1.0, -1.0])
    assert J(u) == pytest.approx((1 + 0 + 2) / 0.5)
    pair = subgradient_select(J, u)
    assert abs(pair.gap()) <= 1e-12
    assert abs(np.sum(pair.p)) <= 1e-15


# ---------------------------------------------------------------------------
# properties over random certified pairs


@pytest.mark.parametrize("J", all_functionals(), ids=lambda J: repr(J)[:24])
def test_nonnegativity_and_duality_on_random_pairs(J, rng):
    for _ in range(40):
        a, b = random_pair(J, rng, 6), random_pair(J, rng, 6)
        D = bregman(J, b.u, a)
        assert D >= -1e-10 * (1 + abs(J(a.u)))
        assert dual_bregman_residual(J, a, b) <= 1e-8 * (1 + D)
        s = symmetric_bregman(J, a, b)
        assert s == pytest.approx(bregman(J, b.u, a) + bregman(J, a.u, b), rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("J", all_functionals(), ids=lambda J: repr(J)[:24])
def test_selection_always_certifies(J, rng):
    for _ in range(30):
        u = random_pair(J, rng, 6).u
        assert subgradient_select(J, u).is_certified()


@pytest.mark.parametrize("J", all_functionals(), ids=lambda J: repr(J)[:24])
def test_zero_distance_iff_shared_subgradient(J, rng):
    for _ in range(30):
        a = random_pair(J, rng, 6)
        # a second point sharing the subgradient (positive rescaling for the
        # one-homogeneous functionals) and a generic one
        shared = 2.5 * a.u if J.one_homogeneous else a.u.copy()
        for v in (shared, random_pair(J, rng, 6).u):
            D = bregman(J, v, a)
            cert = is_subgradient(J, v, a.p)
            assert (D <= 1e-10) <= cert
            assert cert <= (D <= 1e-10 * (1 + abs(J(v))))
        assert is_subgradient(J, shared, a.p)


@pytest.mark.parametrize("J", all_functionals(), ids=lambda J: repr(J)[:24])
def test_subdifferential_shift(J, rng):
    """``q - p`` is a subgradient of ``x -> D^p(x, u0)`` at ``v`` when ``q`` is one of ``J`` at ``v``."""
    for _ in range(20):
        a, b = random_pair(J, rng, 6), random_pair(J, rng, 6)
        gap = bregman_functional_gap(J, a, b.u, b.p - a.p)
        assert abs(gap) <= 1e-9 * (1 + abs(J(b.u)))


@pytest.mark.parametrize("J", [WeightedL1(1.0), WeightedL1([0.5, 1, 2, 1, 3]), TV1D(), TV1D(0.1)],
                         ids=repr)
def test_one_homogeneous_reduction_and_orientation(J, rng):
    for _ in range(30):
        a = random_pair(J, rng, 5)
        v = rng.normal(size=5)
        assert bregman(J, v, a) == pytest.approx(J(v) - float(np.dot(a.p, v)), rel=1e-12, abs=1e-12)
        pair = subgradient_select(J, a.u)
        t = rng.uniform(0.1, 3.0)
        assert bregman(J, t * a.u, pair) == pytest.approx(0.0, abs=1e-12 * (1 + J(a.u)))
        assert bregman(J, -t * a.u, pair) == pytest.approx(2 * J(-t * a.u), rel=1e-12, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite),
       arrays(float, 4, elements=finite))
def test_convexity_in_first_argument(u, v1, v2):
    for J in (SquaredL2(), WeightedL1(1.0), TV1D()):
        pair = subgradient_select(J, u)
        mid = bregman(J, 0.5 * (v1 + v2), pair)
        assert mid <= 0.5 * (bregman(J, v1, pair) + bregman(J, v2, pair)) + 1e-9 * (1 + abs(mid))


def test_entropy_distance_to_subnormal_point_is_finite():
    E = BoltzmannEntropy()
    pair = subgradient_select(E, np.full(3, 2.0))
    assert bregman(E, np.full(3, 5e-324), pair) == pytest.approx(6.0)


@settings(max_examples=60, deadline=None)
@given(arrays(float, 5, elements=st.floats(1e-3, 50)), arrays(float, 5, elements=st.floats(0, 50)))
def test_entropy_conjugate_form_matches_raw_definition(u, v):
    E = BoltzmannEntropy()
    pair = subgradient_select(E, u)
    raw = E(v) - E(u) - float(np.dot(pair.p, v - u))
    assert bregman(E, v, pair) == pytest.approx(raw, rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(arrays(float, 6, elements=finite), st.floats(0.01, 5))
def test_prox_is_optimal(x, tau):
    for J in (SquaredL2(), WeightedL1(1.0), TV1D()):
        y = J.prox(x, tau)
        # optimality: (x - y)/tau in dJ(y)
        assert duality_gap(J, y, (x - y) / tau) <= 1e-7 * (1 + J(y))


def test_entropy_prox_is_optimal(rng):
    E = BoltzmannEntropy()
    for _ in range(50):
        x = rng.normal(size=4) * 3
        tau = rng.uniform(0.05, 3)
        y = E.prox(x, tau)
        np.testing.assert_allclose(y + tau * np.log(y), x, atol=1e-10)


def test_l1_conjugate_pair_identity_reduces(rng):
    """For weighted l1 both sides of the duality identity equal <q - p, v>."""
    J = WeightedL1(rng.uniform(0.5, 2, 4))
    for _ in range(30):
        a, b = random_pair(J, rng, 4), random_pair(J, rng, 4)
        assert conjugate_bregman(J, a.p, b) == pytest.approx(float(np.dot(b.p - a.p, b.u)), abs=1e-12)
