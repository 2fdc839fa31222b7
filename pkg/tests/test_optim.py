import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from forceskill.optim.bo import (
    acquisition,
    bo_propose,
    expected_improvement,
    log_expected_improvement,
    success_probability,
)
from forceskill.optim.cmaes import cma_ask, cma_init, cma_tell, regularize
from forceskill.optim.domain import Candidate, ObjectiveResult, ParamDomain
from forceskill.optim.gp import gp_fit, matern52, matern52_gram, slice_sample
from forceskill.optim.learners import BoLearner, CmaLearner, LhsLearner, PsoLearner, make_learner
from forceskill.optim.lhs import lhs
from forceskill.optim.pso import pso_init, pso_report, pso_step

from optim_cases import cma_sphere, gp_interpolation_error, lhs_is_stratified, pso_hand_example, pso_hand_value


def cube(dim):
    return ParamDomain.from_bounds({f"x{i}": (0.0, 1.0) for i in range(dim)})


def drive(learner, f, max_batches=1000):
    """Run a learner to exhaustion on ``f(unit) -> (cost, success)``; returns batch sizes and results."""
    sizes, results = [], []
    for _ in range(max_batches):
        batch = learner.propose()
        if not batch:
            break
        res = [ObjectiveResult(*f(c.unit), c) for c in batch]
        learner.report(res)
        sizes.append(len(batch))
        results.extend(res)
    return sizes, results


# --- domain ----------------------------------------------------------------------


def test_domain_round_trip():
    d = ParamDomain.from_bounds({"a": (0, 2), "b": (5, 15), "c": (1, 1)})
    assert d.dim == 2 and d.free_names == ("a", "b")
    v = d.to_physical([0.25, 0.5])
    np.testing.assert_allclose(v, [0.5, 10.0, 1.0])
    np.testing.assert_allclose(d.to_unit(v), [0.25, 0.5])
    assert d.contains(v)


def test_domain_rejects_outside_cube():
    d = cube(2)
    with pytest.raises(ValueError):
        d.to_physical([0.5, 1.5])
    with pytest.raises(ValueError):
        d.to_physical([0.5])


def test_domain_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        ParamDomain.from_bounds({"a": (1.0, 0.0)})


def test_candidate_clips_and_is_immutable():
    c = cube(2).candidate([-0.1, 1.2])
    np.testing.assert_array_equal(c.unit, [0.0, 1.0])
    with pytest.raises(ValueError):
        c.unit[0] = 0.5
    with pytest.raises(ValueError):
        Candidate(np.array([1.5]), np.array([1.5]), ("a",))


def test_objective_result_validation():
    c = cube(1).candidate([0.5])
    with pytest.raises(ValueError):
        ObjectiveResult(float("nan"), 0, c)
    with pytest.raises(ValueError):
        ObjectiveResult(1.0, 2, c)


# --- LHS -----------------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 100), st.integers(1, 15), st.integers(0, 2**32 - 1))
def test_lhs_stratified(n, dim, seed):
    assert lhs_is_stratified(n, dim, seed)


def test_lhs_rejects_empty():
    with pytest.raises(ValueError):
        lhs(0, 3, np.random.default_rng(0))


def test_lhs_learner_single_batch():
    sizes, res = drive(LhsLearner(cube(4), np.random.default_rng(0)), lambda u: (float(u.sum()), 1))
    assert sizes == [75]


# --- CMA-ES ----------------------------------------------------------------------


def test_cma_sphere_converges():
    ok = sum(cma_sphere(s)[0] < 1e-9 for s in range(20))
    assert ok >= 18


def test_cma_constant_objective_keeps_covariance_valid():
    rng = np.random.default_rng(0)
    s = cma_init(5, 0.1, 5)
    for _ in range(40):
        s, X = cma_ask(s, rng)
        s = cma_tell(s, X, np.zeros(5))
        assert np.all(np.isfinite(s.C)) and np.all(np.linalg.eigvalsh(s.C) > 0)
        assert np.all((s.mean >= 0) & (s.mean <= 1))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12))
def test_cma_covariance_stays_positive_definite(seed, dim):
    rng = np.random.default_rng(seed)
    s = cma_init(dim, 0.3, 5)
    for _ in range(10):
        s, X = cma_ask(s, rng)
        s = cma_tell(s, X, rng.normal(size=5))
        np.testing.assert_allclose(s.C, s.C.T, atol=0)
        assert np.linalg.eigvalsh(s.C).min() > 0


def test_cma_regularize_floors_spectrum():
    C, B, D = regularize(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert np.linalg.eigvalsh(C).min() > 0
    np.testing.assert_allclose((B * D**2) @ B.T, C, atol=1e-12)


def test_cma_points_stay_in_cube():
    rng = np.random.default_rng(0)
    s = cma_init(3, 5.0, 5)
    s, X = cma_ask(s, rng)
    assert np.all((X >= 0) & (X <= 1))


def test_cma_tell_must_match_ask():
    rng = np.random.default_rng(0)
    s = cma_init(3, 0.1, 5)
    s, X = cma_ask(s, rng)
    with pytest.raises(ValueError):
        cma_tell(s, X[::-1], np.arange(5.0))
    with pytest.raises(ValueError):
        cma_tell(s, X, np.arange(4.0))
    with pytest.raises(RuntimeError):
        cma_ask(s, rng)


def test_cma_init_validation():
    with pytest.raises(ValueError):
        cma_init(3, 0.0)
    with pytest.raises(ValueError):
        cma_init(3, 0.1, 1)


def test_cma_learner_budget():
    sizes, res = drive(CmaLearner(cube(12), np.random.default_rng(0)), lambda u: (float(((u - 0.3) ** 2).sum()), 1))
    assert sizes == [5] * 15 and len(res) == 75


# --- PSO -----------------------------------------------------------------------


def test_pso_hand_example():
    v, x, v_after = pso_hand_example()
    assert v == pso_hand_value()
    assert abs(v - 1.3) <= math.ulp(1.3)
    assert x == 1.0
    assert v_after == 0.0


def test_pso_velocity_unclamped_move():
    from forceskill.optim.pso import clamp_move

    x, v = clamp_move(np.array([0.2, 0.9]), np.array([0.3, -0.1]))
    np.testing.assert_allclose(x, [0.5, 0.8])
    np.testing.assert_allclose(v, [0.3, -0.1])


def test_pso_bests_monotone():
    rng = np.random.default_rng(0)
    s = pso_init(10, 4, rng)
    f = lambda X: ((X - 0.7) ** 2).sum(1)
    prev_g, prev_p = np.inf, np.full(10, np.inf)
    for _ in range(20):
        s = pso_report(s, f(s.x))
        assert s.g_cost <= prev_g and np.all(s.p_cost <= prev_p)
        assert s.g_cost == pytest.approx(f(s.g[None])[0])
        prev_g, prev_p = s.g_cost, s.p_cost.copy()
        s = pso_step(s, rng)
        assert np.all((s.x >= 0) & (s.x <= 1))


def test_pso_initial_velocity_range():
    s = pso_init(1000, 3, np.random.default_rng(0))
    assert s.v.min() < -0.9 and s.v.max() > 0.9 and np.all(np.abs(s.v) <= 1)


def test_pso_must_report_before_moving():
    s = pso_init(3, 2, np.random.default_rng(0))
    with pytest.raises(RuntimeError):
        pso_step(s, np.random.default_rng(0))


def test_pso_learner_budget():
    sizes, _ = drive(PsoLearner(cube(12), np.random.default_rng(0)), lambda u: (float(u.sum()), 1))
    assert sizes == [25, 25, 25]


# --- Gaussian process --------------------------------------------------------------


def test_matern_unit_distance():
    assert matern52([0.0], [1.0], [1.0, 1.0]) == pytest.approx(0.5240, abs=1e-4)
    expected = (1 + math.sqrt(5) + 5 / 3) * math.exp(-math.sqrt(5))
    assert matern52([0.0], [1.0], [1.0, 1.0]) == pytest.approx(expected, rel=1e-14)


def test_matern_ard_lengths():
    assert matern52([0.0, 0.0], [2.0, 0.0], [3.0, 2.0, 0.1]) == pytest.approx(3 * 0.5239941088, rel=1e-9)


def test_gram_matches_pointwise_and_is_psd():
    rng = np.random.default_rng(0)
    X = rng.random((30, 3))
    lengths = np.array([0.3, 0.5, 2.0])
    G = matern52_gram(X, X, 1.7, lengths)
    ref = np.array([[matern52(a, b, np.r_[1.7, lengths]) for b in X] for a in X])
    np.testing.assert_allclose(G, ref, atol=1e-12)
    assert np.linalg.eigvalsh(G).min() > -1e-10


def test_gp_interpolates_noiseless_data():
    assert gp_interpolation_error() < 1e-6


def test_gp_identical_inputs_get_noise():
    rng = np.random.default_rng(0)
    X = np.array([[0.5], [0.5], [0.1], [0.9]])
    y = np.array([0.0, 1.0, 0.3, 0.2])
    m = gp_fit(X, y, rng)
    assert np.all(m.noise > 1e-3)


def test_gp_variance_grows_away_from_data():
    rng = np.random.default_rng(1)
    X = rng.random((8, 2)) * 0.3
    y = np.sin(5 * X[:, 0]) + X[:, 1]
    m = gp_fit(X, y, rng)
    _, v = m.predict(np.vstack([X[:1], [[0.95, 0.95]]]))
    assert v[0] < v[1]


def test_gp_rejects_bad_data():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        gp_fit(np.array([[0.1]]), np.array([1.0]), rng)
    with pytest.raises(ValueError):
        gp_fit(np.array([[0.1], [0.2]]), np.array([1.0, np.inf]), rng)


def test_slice_sampler_matches_gaussian():
    rng = np.random.default_rng(0)
    logp = lambda x: -0.5 * ((x[0] - 1.0) / 2.0) ** 2 - 0.5 * x[1] ** 2
    chain = np.array(slice_sample(logp, np.zeros(2), rng, 4000))
    assert chain[:, 0].mean() == pytest.approx(1.0, abs=0.15)
    assert chain[:, 0].std() == pytest.approx(2.0, rel=0.1)
    assert chain[:, 1].std() == pytest.approx(1.0, rel=0.1)


# --- acquisition and BO ------------------------------------------------------------


def test_ei_zero_variance():
    np.testing.assert_allclose(expected_improvement([1.0, 3.0], [0.0, 0.0], 2.0), [1.0, 0.0])


def test_ei_at_the_incumbent():
    assert expected_improvement([2.0], [4.0], 2.0)[0] == pytest.approx(2.0 * norm.pdf(0.0))


@pytest.mark.parametrize("mean, var, best", [(1.0, 0.25, 1.2), (0.0, 1.0, -1.5), (3.0, 0.01, 2.0)])
def test_ei_matches_integral(mean, var, best):
    sd = math.sqrt(var)
    ref, _ = quad(lambda y: (best - y) * norm.pdf(y, mean, sd), -np.inf, best)
    assert expected_improvement([mean], [var], best)[0] == pytest.approx(ref, rel=1e-7, abs=1e-12)


def test_log_ei_matches_direct_evaluation():
    mean = np.linspace(-3, 8, 200)
    var = np.full(200, 2.0)
    np.testing.assert_allclose(log_expected_improvement(mean, var, 1.0), np.log(expected_improvement(mean, var, 1.0)), rtol=1e-9)


@pytest.mark.parametrize("z", [-40.0, -200.0, -1e4])
def test_log_ei_far_tail(z):
    # asymptotic tail: pdf(z) + z cdf(z) = pdf(z) / z^2 (1 - 3/z^2 + 15/z^4 - ...)
    ref = -0.5 * z * z - 0.5 * math.log(2 * math.pi) - 2 * math.log(-z) + math.log(1 - 3 / z**2 + 15 / z**4)
    assert log_expected_improvement([-z], [1.0], 0.0)[0] == pytest.approx(ref, rel=1e-10)


def test_log_ei_zero_variance():
    out = log_expected_improvement([1.0, 3.0], [0.0, 0.0], 2.0)
    assert out[0] == 0.0 and out[1] == -np.inf


def fit_pair(X, cost, succ, seed=0):
    rng = np.random.default_rng(seed)
    return gp_fit(X, cost, rng), gp_fit(X, succ, rng)


def test_acquisition_without_feasible_point_is_success_probability():
    X = np.linspace(0, 1, 6)[:, None]
    mc, ms = fit_pair(X, np.full(6, 30.0) - X[:, 0], np.zeros(6))
    Xs = np.array([[0.2], [0.7]])
    np.testing.assert_allclose(np.exp(acquisition(mc, ms, None, Xs)), success_probability(ms, Xs))


def test_success_probability_tracks_data():
    X = np.linspace(0, 1, 8)[:, None]
    s = (X[:, 0] > 0.5).astype(float)
    _, ms = fit_pair(X, X[:, 0], s)
    pr = success_probability(ms, np.array([[0.0], [1.0]]))
    assert pr[0] < 0.5 < pr[1]


def test_bo_all_infeasible_still_proposes():
    rng = np.random.default_rng(0)
    learner = BoLearner(cube(2), rng, n_init=4, budget=8, n_samples=4, burn_in=5, n_grid=256)
    sizes, res = drive(learner, lambda u: (30.0 - float(u.sum()), 0))
    assert sum(sizes) == 8 and not learner.stalled


def test_bo_converges_in_one_dimension():
    rng = np.random.default_rng(0)
    learner = BoLearner(cube(1), rng, n_init=4, budget=15, n_samples=5, burn_in=10, n_grid=256)
    _, res = drive(learner, lambda u: (float((u[0] - 0.3) ** 2), 1))
    best = min(res, key=lambda r: r.cost)
    assert abs(best.candidate.unit[0] - 0.3) < 0.03


def test_bo_constant_objective_stalls_gracefully():
    rng = np.random.default_rng(0)
    X = np.array([[0.1], [0.2], [0.3]])
    mc = gp_fit(X, np.ones(3), rng, fixed_noise=1e-10)
    ms = gp_fit(X, np.ones(3), rng, fixed_noise=1e-10)
    p = bo_propose(mc, ms, 1.0, rng, n_grid=64)
    assert p.x.shape == (1,) and np.all((p.x >= 0) & (p.x <= 1))


def test_bo_learner_budget_and_batches():
    rng = np.random.default_rng(0)
    learner = BoLearner(cube(3), rng, n_init=5, budget=9, n_samples=4, burn_in=5, n_grid=256)
    sizes, _ = drive(learner, lambda u: (float(u.sum()), int(u[0] > 0.3)))
    assert sizes == [5, 1, 1, 1, 1]


# --- learners --------------------------------------------------------------------


@pytest.mark.parametrize("kind, kwargs", [("lhs", {}), ("cmaes", {}), ("pso", {}), ("bo", dict(budget=8, n_samples=3, burn_in=4, n_grid=128))])
def test_learners_are_deterministic(kind, kwargs):
    f = lambda u: (float(((u - 0.4) ** 2).sum()), int(u[0] < 0.6))
    runs = []
    for _ in range(2):
        learner = make_learner(kind, cube(3), np.random.default_rng(42), **kwargs)
        _, res = drive(learner, f)
        runs.append(np.array([r.candidate.unit for r in res]))
    np.testing.assert_array_equal(runs[0], runs[1])


def test_learner_protocol_errors():
    learner = CmaLearner(cube(2), np.random.default_rng(0))
    batch = learner.propose()
    with pytest.raises(RuntimeError):
        learner.propose()
    with pytest.raises(ValueError):
        learner.report([ObjectiveResult(1.0, 1, batch[0])])
    other = cube(2).candidate([0.123, 0.456])
    with pytest.raises(ValueError):
        learner.report([ObjectiveResult(1.0, 1, other)] * len(batch))
    with pytest.raises(RuntimeError):
        LhsLearner(cube(2), np.random.default_rng(0)).report([])


def test_unknown_learner():
    with pytest.raises(ValueError):
        make_learner("grid", cube(2), np.random.default_rng(0))


def test_learner_needs_free_dimension():
    with pytest.raises(ValueError):
        LhsLearner(ParamDomain.from_bounds({"a": (1.0, 1.0)}), np.random.default_rng(0))
