import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dimerfit import gpr
from dimerfit.gpr import (
    KernelHyperparams,
    ParameterSpace,
    TrainingSet,
    acquisition,
    fit,
    initial_design,
    optimize,
    predict,
    propose,
    read_history,
    se_kernel,
    write_history,
    write_timing,
)

SQUARE = ParameterSpace.from_bounds({"x": (0.0, 1.0), "y": (0.0, 1.0)})
LINE = ParameterSpace.from_bounds({"x": (0.0, 1.0)})


def bowl(x, centre=(0.3, 0.7)):
    return float(np.sum((np.asarray(x) - centre) ** 2))


def test_parameter_space_validation():
    with pytest.raises(ValueError):
        ParameterSpace.from_bounds({"a": (1.0, 1.0)})
    with pytest.raises(ValueError):
        ParameterSpace.from_bounds({})
    sp = ParameterSpace.from_bounds({"a": (10.0, 20.0), "b": (-1.0, 1.0)})
    np.testing.assert_allclose(sp.to_unit([15.0, 0.0]), [0.5, 0.5])
    np.testing.assert_allclose(sp.from_unit(sp.to_unit([12.0, 0.3])), [12.0, 0.3])
    assert sp.contains([10.0, 1.0]) and not sp.contains([9.0, 0.0])


def test_training_set_rules():
    ts = TrainingSet(SQUARE)
    ts.add([0.1, 0.2], 1.0)
    ts.add([0.1, 0.2], 1.0)
    assert len(ts) == 2
    with pytest.raises(ValueError, match="different cost"):
        ts.add([0.1, 0.2], 1.5)
    with pytest.raises(ValueError, match="outside"):
        ts.add([1.5, 0.2], 1.0)
    with pytest.raises(ValueError):
        ts.add([0.1, 0.2, 0.3], 1.0)
    with pytest.raises(ValueError):
        ts.add([0.3, 0.3], float("nan"))


def test_two_point_posterior_matches_closed_form():
    sp = ParameterSpace.from_bounds({"a": (0.0, 10.0), "b": (-5.0, 5.0)})
    x = np.array([[2.0, 1.0], [7.0, -3.0]])
    y = np.array([0.4, 1.3])
    h = KernelHyperparams(0.8, (0.3, 0.6), 1e-4)
    m = fit(TrainingSet(sp, x, y), hyper=h, optimize_hyper=False)
    q = np.array([4.0, 0.5])

    u = sp.to_unit(x)
    uq = sp.to_unit(q)

    def k(p, r):
        d = (p - r) / np.array(h.length_scales)
        return h.signal_variance * math.exp(-0.5 * d @ d)

    a, b, c = k(u[0], u[0]) + h.noise_variance, k(u[0], u[1]), k(u[1], u[1]) + h.noise_variance
    det = a * c - b * b
    inv = np.array([[c, -b], [-b, a]]) / det
    ks = np.array([k(uq, u[0]), k(uq, u[1])])
    mu0 = y.mean()
    mean = mu0 + ks @ inv @ (y - mu0)
    var = h.signal_variance - ks @ inv @ ks
    got_mean, got_std = predict(m, q)
    assert got_mean == pytest.approx(mean, abs=1e-10)
    assert got_std == pytest.approx(math.sqrt(var), abs=1e-10)


def test_interpolation_and_far_field():
    rng = np.random.default_rng(1)
    x = rng.random((15, 2))
    y = np.array([bowl(p) for p in x])
    h = KernelHyperparams(1.0, (0.02, 0.02), gpr.NOISE_FLOOR)
    m = fit(TrainingSet(SQUARE, x, y), hyper=h, optimize_hyper=False)
    mean, std = m.predict_many(x)
    np.testing.assert_allclose(mean, y, atol=1e-6)
    assert np.all(std <= math.sqrt(h.noise_variance) + 1e-6)
    # corner more than ten length scales from every training point
    far = np.array([[1.0, 0.0]])
    assert np.min(np.linalg.norm(x - far, axis=1)) > 0.2
    mf, sf = m.predict_many(far)
    assert mf[0] == pytest.approx(m.prior_mean, abs=1e-6)
    assert sf[0] == pytest.approx(1.0, abs=1e-6)


def test_constant_data():
    x = initial_design(SQUARE, 12, seed=2)
    m = fit(TrainingSet(SQUARE, x, np.full(12, 0.37)))
    mean, std = m.predict_many(np.random.default_rng(0).random((50, 2)))
    np.testing.assert_allclose(mean, 0.37, atol=1e-6)
    _, std_train = m.predict_many(x)
    assert np.all(std_train < 1e-2)


def test_nlml_gradient():
    rng = np.random.default_rng(3)
    u = rng.random((25, 3))
    y = np.sin(4 * u[:, 0]) + u[:, 1] ** 2
    obj = gpr._Objective(u, y - y.mean())
    theta = np.log([0.5, 0.3, 0.6, 1.2, 1e-4])
    f0, g0 = obj(theta)
    eps = 1e-6
    num = np.array([(obj(theta + eps * e)[0] - obj(theta - eps * e)[0]) / (2 * eps)
                    for e in np.eye(theta.size)])
    np.testing.assert_allclose(g0, num, rtol=1e-5, atol=1e-6)


def test_likelihood_search_improves_on_every_start():
    x = initial_design(SQUARE, 40, seed=5)
    y = np.array([bowl(p) + 0.1 * math.sin(9 * p[0]) for p in x])
    m = fit(TrainingSet(SQUARE, x, y), seed=3)
    starts = m.fit_info["starts"]
    assert len(starts) == gpr.N_HYPER_STARTS
    best = max(final for _, final in starts)
    assert all(best >= initial for initial, _ in starts)
    assert m.log_marginal_likelihood >= best - 1e-6 * abs(best)
    ls = np.array(m.hyper.length_scales)
    assert np.all((ls >= gpr.LENGTH_SCALE_BOUNDS[0] * 0.999) & (ls <= gpr.LENGTH_SCALE_BOUNDS[1] * 1.001))


def test_length_scale_recovery():
    truth = np.array([0.15, 0.6])
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        u = rng.random((100, 2))
        k = se_kernel(u, u, 1.0, truth) + 1e-8 * np.eye(100)
        y = np.linalg.cholesky(k) @ rng.standard_normal(100)
        m = fit(TrainingSet(SQUARE, u, y), seed=seed)
        ratio = np.array(m.hyper.length_scales) / truth
        hits += bool(np.all((ratio > 0.5) & (ratio < 2.0)))
    assert hits >= 8


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_prediction_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    x = rng.random((12, 2))
    y = rng.random(12)
    h = KernelHyperparams(0.5, (0.3, 0.2), 1e-6)
    q = rng.random((5, 2))
    m1 = fit(TrainingSet(SQUARE, x, y), hyper=h, optimize_hyper=False)
    perm = rng.permutation(12)
    m2 = fit(TrainingSet(SQUARE, x[perm], y[perm]), hyper=h, optimize_hyper=False)
    for a, b in zip(m1.predict_many(q), m2.predict_many(q)):
        np.testing.assert_allclose(a, b, rtol=1e-8, atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.floats(-1e4, 1e4), st.floats(1e-3, 1e4), st.floats(-10, 10), st.floats(1e-2, 1e2))
def test_affine_rescaling_invariance(lo1, span1, lo2, span2):
    rng = np.random.default_rng(0)
    u = rng.random((10, 2))
    y = rng.random(10)
    q = rng.random((4, 2))
    h = KernelHyperparams(0.5, (0.3, 0.4), 1e-6)
    other = ParameterSpace.from_bounds({"x": (lo1, lo1 + span1), "y": (lo2, lo2 + span2)})
    m1 = fit(TrainingSet(SQUARE, u, y), hyper=h, optimize_hyper=False)
    m2 = fit(TrainingSet(other, other.from_unit(u), y), hyper=h, optimize_hyper=False)
    np.testing.assert_allclose(m1.predict_many(q)[0], m2.predict_many(other.from_unit(q))[0],
                               rtol=1e-6, atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_posterior_std_nonnegative(seed):
    rng = np.random.default_rng(seed)
    x = rng.random((20, 2))
    m = fit(TrainingSet(SQUARE, x, rng.random(20)), hyper=KernelHyperparams(1.0, (0.1, 2.0)),
            optimize_hyper=False)
    _, std = m.predict_many(rng.random((200, 2)))
    assert np.all(std >= 0)


def test_predict_checks_bounds():
    m = fit(TrainingSet(SQUARE, [[0.1, 0.1], [0.9, 0.9]], [0.0, 1.0]),
            hyper=KernelHyperparams(1.0, (0.5, 0.5)), optimize_hyper=False)
    with pytest.raises(ValueError, match="outside"):
        predict(m, [1.2, 0.5])


# -- acquisition --------------------------------------------------------------

def one_d_model():
    x = np.array([[0.05], [0.3], [0.45], [0.8], [0.95]])
    y = np.array([0.9, 0.2, 0.35, 0.6, 0.1])
    return fit(TrainingSet(LINE, x, y), hyper=KernelHyperparams(0.4, (0.12,), 1e-8),
               optimize_hyper=False)


@pytest.mark.parametrize("n_sc", [0.0, 1.0, 3.0])
def test_proposal_matches_dense_grid_argmin(n_sc):
    m = one_d_model()
    grid = np.linspace(0, 1, 10_000)[:, None]
    best = grid[np.argmin(acquisition(m, grid, n_sc)), 0]
    got = propose(m, [n_sc], seed=1)[0, 0]
    assert abs(got - best) <= 1.0 / 9999


def test_zero_nsc_minimizes_mean_over_starts():
    rng = np.random.default_rng(2)
    x = rng.random((20, 2))
    m = fit(TrainingSet(SQUARE, x, [bowl(p) for p in x]), seed=0)
    p = propose(m, [0.0], seed=4)
    pool = np.random.default_rng(9).random((5000, 2))
    assert m.predict_many(p)[0][0] <= m.predict_many(pool)[0].min() + 1e-9


def test_single_point_large_nsc_explores():
    m = fit(TrainingSet(SQUARE, [[0.5, 0.5], [0.52, 0.5]], [0.3, 0.3]),
            hyper=KernelHyperparams(1.0, (0.1, 0.1)), optimize_hyper=False)
    p = propose(m, [50.0], seed=0)[0]
    assert np.linalg.norm(p - 0.5) > 0.3


def test_proposals_are_distinct_from_training_and_each_other():
    x = initial_design(SQUARE, 10, seed=0)
    m = fit(TrainingSet(SQUARE, x, [bowl(p) for p in x]), seed=0)
    pts = propose(m, [0.0, 0.0, 0.0], seed=0)
    u = SQUARE.to_unit(np.vstack([x, pts]))
    d = np.linalg.norm(u[:, None] - u[None], axis=-1) + np.eye(len(u))
    assert d.min() >= gpr.MIN_SEPARATION


# -- optimization loop --------------------------------------------------------

def test_quadratic_bowl_statistics():
    errors = []
    for seed in range(10):
        r = optimize(bowl, SQUARE, 60, (0, 1, 2, 3), seed=seed)
        errors.append(np.linalg.norm(r.best_point - (0.3, 0.7)))
        assert len(r.history) == 60
    assert max(errors) < 0.05


def test_budget_equal_to_initial_batch():
    r = optimize(bowl, SQUARE, 6, seed=0)
    assert [h.source for h in r.history] == ["initial"] * 6
    assert r.best_cost == min(h.cost for h in r.history)


def test_budget_too_small():
    with pytest.raises(ValueError, match="initial design"):
        optimize(bowl, SQUARE, 5)


def test_failures_are_recorded_and_skipped():
    def flaky(x):
        if x[0] > 0.8:
            raise RuntimeError("solver diverged")
        return bowl(x)

    r = optimize(flaky, SQUARE, 30, seed=1)
    failed = [h for h in r.history if h.status == "failed"]
    assert len(r.history) == 30
    assert all("diverged" in h.message for h in failed)
    assert r.best_cost == min(h.cost for h in r.history if h.status == "ok")


def test_history_determinism_and_round_trip(tmp_path):
    paths = []
    for k in range(2):
        r = optimize(bowl, SQUARE, 30, (0, 2), seed=7)
        paths.append(tmp_path / f"h{k}.csv")
        write_history(r, SQUARE, paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()
    back = read_history(paths[0], SQUARE)
    assert [b.cost for b in back] == [h.cost for h in r.history]
    np.testing.assert_array_equal(np.array([b.params for b in back]), np.array([h.params for h in r.history]))
    write_timing(r, tmp_path / "t.csv")
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 31


def test_workers_do_not_change_results():
    a = optimize(bowl, SQUARE, 26, (0, 1, 2, 3), seed=3)
    b = optimize(bowl, SQUARE, 26, (0, 1, 2, 3), seed=3, workers=4)
    np.testing.assert_array_equal([h.params for h in a.history], [h.params for h in b.history])
