import json

import numpy as np
import pytest

from bregkit.errors import BoundViolated, DomainError
from bregkit.operators import LinOp, SignedSupport
from bregkit.uq import (NoiseModel, expected_bound, expected_bound_check, optimal_alpha,
                        sample_solve, thread_count)
from bregkit.variational import make_source_triple

K4 = LinOp.identity(4)
TRIPLE = make_source_triple(K4, SignedSupport({0: 1}), magnitudes=[2.0])


def test_triple_for_identity_example():
    np.testing.assert_array_equal(TRIPLE.u_star, [2, 0, 0, 0])
    np.testing.assert_array_equal(TRIPLE.w_star, [1, 0, 0, 0])


def test_optimal_alpha_minimizes_bound():
    a = optimal_alpha(4, 0.1, 1.0)
    assert a == pytest.approx(20.0)
    assert expected_bound(4, 0.1, a, 1.0) == pytest.approx(0.2)
    for b in (a * 0.9, a * 1.1):
        assert expected_bound(4, 0.1, b, 1.0) > expected_bound(4, 0.1, a, 1.0)


def test_noise_streams_depend_only_on_seed_and_index():
    n = NoiseModel(0.1, 42)
    np.testing.assert_array_equal(n.draw(4, 7), n.draw(4, 7))
    assert not np.array_equal(n.draw(4, 7), n.draw(4, 8))
    ss = np.random.SeedSequence(42, spawn_key=(7,))
    np.testing.assert_array_equal(n.draw(4, 7), 0.1 * np.random.Generator(np.random.PCG64(ss)).standard_normal(4))


def test_per_sample_identity():
    noise = NoiseModel(0.1, 3)
    for i in range(50):
        r = sample_solve(K4, TRIPLE, noise, 20.0, i)
        a = 20.0 * 0.01
        lhs = r.T1 + 2 * a * r.D_sym + r.T3
        assert lhs == pytest.approx(r.eta_norm_sq, rel=1e-6)
        assert r.D_sym >= 0


def test_per_sample_identity_gaussian_operator():
    K = LinOp.gaussian(10, 20, 1)
    idx = np.random.default_rng(1).choice(20, 2, replace=False)
    tri = make_source_triple(K, SignedSupport({int(i): 1 for i in idx}), rng_seed=1)
    noise = NoiseModel(0.05, 9)
    for i in range(10):
        r = sample_solve(K, tri, noise, 5.0, i)
        assert r.T1 + 2 * 5.0 * 0.0025 * r.D_sym + r.T3 == pytest.approx(r.eta_norm_sq, rel=1e-6)


def test_monte_carlo_bound_and_replay(monkeypatch):
    noise = NoiseModel(0.1, 2024)
    a = optimal_alpha(4, 0.1, 1.0)
    rep = expected_bound_check(K4, TRIPLE, noise, a, 400, threads=1)
    assert rep.passed and rep.mean_bregman - rep.ci <= rep.bound
    assert abs(rep.lhs_mean - rep.rhs) <= 4 * rep.lhs_se
    rep4 = expected_bound_check(K4, TRIPLE, noise, a, 400, threads=4)
    assert rep.to_dict() == rep4.to_dict()
    monkeypatch.setenv("BREGKIT_THREADS", "3")
    assert thread_count() == 3
    assert expected_bound_check(K4, TRIPLE, noise, a, 400).to_dict() == rep.to_dict()


def test_vanishing_noise_limit():
    sigma = 1e-8
    a = optimal_alpha(4, sigma, 1.0)
    rep = expected_bound_check(K4, TRIPLE, NoiseModel(sigma, 1), a, 50, threads=1)
    assert rep.passed and rep.mean_bregman <= rep.bound


def test_failed_bound_raises_with_report(monkeypatch):
    import bregkit.uq as uq
    monkeypatch.setattr(uq, "expected_bound", lambda *a: -1.0)
    with pytest.raises(BoundViolated) as exc:
        uq.expected_bound_check(K4, TRIPLE, NoiseModel(0.1, 5), 20.0, 20, threads=1)
    rep = exc.value.report
    assert rep.passed is False and rep.to_dict()["pass"] is False


def test_report_json(tmp_path):
    rep = expected_bound_check(K4, TRIPLE, NoiseModel(0.1, 1), 20.0, 20, threads=1, raise_on_fail=False)
    rep.write_json(tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["seed"] == 1 and d["n_samples"] == 20 and isinstance(d["pass"], bool)


def test_validation(monkeypatch):
    with pytest.raises(DomainError):
        NoiseModel(0.0, 1)
    with pytest.raises(DomainError):
        NoiseModel(0.1, -1)
    with pytest.raises(DomainError):
        expected_bound_check(K4, TRIPLE, NoiseModel(0.1, 1), 20.0, 1)
    monkeypatch.setenv("BREGKIT_THREADS", "many")
    with pytest.raises(DomainError):
        thread_count()
