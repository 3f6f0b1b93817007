import itertools

import numpy as np
import pytest

from conftest import composite, small_logistic
from slpqn.data import Dataset
from slpqn.optimizer import fista_reference_run
from slpqn.problem import LogisticModel, Regularizer
from slpqn.vrgrad import (FullGradient, LsvrgEstimator, MinibatchGradient,
                          SagaEstimator, SvrgEstimator, variance_probe)


class FixedDraw:
    """Stands in for a Generator whose uniform draw is fixed."""

    def __init__(self, u):
        self.u = u

    def random(self):
        return self.u


def _model(n=6, d=4, seed=0):
    return small_logistic(n, d, seed)[1]


def test_lsvrg_at_reference_returns_reference_gradient(rng):
    m = _model()
    w = rng.standard_normal(4)
    est = LsvrgEstimator(m, w, p=0.5, batch_size=2, rng=rng)
    for _ in range(5):
        np.testing.assert_allclose(est.estimate(w), est.grad_w, rtol=0, atol=1e-15)


def test_lsvrg_full_batch_is_exact(rng):
    m = _model()
    est = LsvrgEstimator(m, rng.standard_normal(4), p=0.5, batch_size=6, rng=rng)
    x = rng.standard_normal(4)
    np.testing.assert_allclose(est.estimate(x), m.full_grad(x), rtol=1e-13, atol=1e-15)


def test_lsvrg_enumeration_single_sample(rng):
    m = _model()
    w, x = rng.standard_normal((2, 4))
    est = LsvrgEstimator(m, w, p=0.5, batch_size=1, rng=rng)
    mean = np.mean([m.grad_component(i, x) - m.grad_component(i, w) + est.grad_w
                    for i in range(6)], axis=0)
    np.testing.assert_allclose(mean, m.full_grad(x), atol=1e-12)
    np.testing.assert_allclose(est.outcomes(x).mean(axis=0), m.full_grad(x), atol=1e-12)


def test_lsvrg_oracle_counter(rng):
    m = _model()
    est = LsvrgEstimator(m, np.zeros(4), p=0.5, batch_size=3, rng=rng)
    assert est.oracle_calls == 6
    est.estimate(np.ones(4))
    assert est.oracle_calls == 12


def test_post_step_always_with_p_one(rng):
    m = _model()
    est = LsvrgEstimator(m, np.zeros(4), p=1.0, rng=rng)
    for _ in range(4):
        xk = rng.standard_normal(4)
        assert est.post_step(xk)
        np.testing.assert_array_equal(est.w, xk)
        np.testing.assert_allclose(est.grad_w, m.full_grad(xk), rtol=1e-14)


def test_post_step_unchanged_on_high_draw():
    m = _model()
    est = LsvrgEstimator(m, np.zeros(4), p=1e-9, rng=FixedDraw(0.9))
    before = (est.w.copy(), est.grad_w.copy(), est.oracle_calls)
    assert not est.post_step(np.ones(4))
    np.testing.assert_array_equal(est.w, before[0])
    np.testing.assert_array_equal(est.grad_w, before[1])
    assert est.oracle_calls == before[2]


def test_post_step_frequency():
    m = _model()
    est = LsvrgEstimator(m, np.zeros(4), p=0.25, rng=np.random.default_rng(7))
    hits = sum(est.post_step(np.zeros(4)) for _ in range(10_000))
    assert abs(hits / 10_000 - 0.25) <= 0.02
    assert est.refreshes == hits


def test_lsvrg_rejects_bad_parameters():
    m = _model()
    with pytest.raises(ValueError):
        LsvrgEstimator(m, np.zeros(4), p=0.0)
    with pytest.raises(ValueError):
        LsvrgEstimator(m, np.zeros(4), p=0.5, batch_size=7)


@pytest.mark.parametrize("b", [1, 2, 3, 6])
def test_lsvrg_unbiased_by_enumeration(b, rng):
    m = _model()
    est = LsvrgEstimator(m, rng.standard_normal(4), p=0.5, batch_size=b, rng=rng)
    x = rng.standard_normal(4)
    V = est.outcomes(x)
    assert V.shape[0] == len(list(itertools.combinations(range(6), b)))
    np.testing.assert_allclose(V.mean(axis=0), m.full_grad(x), atol=1e-12)


def test_saga_exact_table_gives_exact_gradient(rng):
    m = _model()
    x = rng.standard_normal(4)
    est = SagaEstimator(m, x, rng)
    for _ in range(10):
        np.testing.assert_allclose(est.estimate(x), m.full_grad(x), atol=1e-14)


def test_saga_single_component_exact(rng):
    m = _model(n=1)
    est = SagaEstimator(m, rng.standard_normal(4), rng)
    for _ in range(5):
        x = rng.standard_normal(4)
        np.testing.assert_allclose(est.estimate(x), m.full_grad(x), atol=1e-14)


def test_saga_enumeration(rng):
    m = _model(n=5)
    est = SagaEstimator(m, rng.standard_normal(4), rng)
    for _ in range(7):
        est.estimate(rng.standard_normal(4))
    x = rng.standard_normal(4)
    draws = [m.grad_component(i, x) - est.table[i] + est.mean for i in range(5)]
    np.testing.assert_allclose(np.mean(draws, axis=0), m.full_grad(x), atol=1e-12)


def test_saga_overwrites_drawn_entry():
    m = _model(n=5)
    est = SagaEstimator(m, np.zeros(4), np.random.default_rng(3))
    i = int(np.random.default_rng(3).integers(5))
    x = np.arange(4.0)
    est.estimate(x)
    np.testing.assert_allclose(est.table[i], m.grad_component(i, x), rtol=1e-15)


def test_saga_mean_coherence():
    ds, m = small_logistic(17, 5, seed=1)
    rng = np.random.default_rng(0)
    est = SagaEstimator(m, np.zeros(5), rng)
    for _ in range(10_000):
        est.estimate(rng.standard_normal(5))
    assert np.max(np.abs(est.mean - est.table.mean(axis=0))) < 1e-8


def test_svrg_refresh_to_latest_iterate(rng):
    m = _model()
    est = SvrgEstimator(m, np.zeros(4), inner_length=3, rng=rng)
    xs = rng.standard_normal((3, 4))
    assert not est.post_step(xs[0], xs[1])
    assert not est.post_step(xs[1], xs[2])
    assert est.post_step(xs[2], xs[0])
    np.testing.assert_array_equal(est.w, xs[0])


def test_full_and_minibatch(rng):
    m = _model()
    x = rng.standard_normal(4)
    full = FullGradient(m)
    np.testing.assert_array_equal(full.estimate(x), m.full_grad(x))
    assert full.oracle_calls == 6 and not full.post_step(x)
    mb = MinibatchGradient(m, 2, rng)
    np.testing.assert_allclose(mb.outcomes(x).mean(axis=0), m.full_grad(x), atol=1e-12)
    mb.estimate(x)
    assert mb.oracle_calls == 2


def test_estimate_streams_deterministic():
    m = _model()
    streams = []
    for _ in range(2):
        rng = np.random.default_rng(11)
        est = LsvrgEstimator(m, np.zeros(4), p=0.3, batch_size=2, rng=rng)
        out = []
        for k in range(20):
            x = np.full(4, 0.1 * k)
            out.append(est.estimate(x))
            est.post_step(x)
        streams.append(np.array(out))
    np.testing.assert_array_equal(*streams)


# ---- variance bound --------------------------------------------------------

def _probe_problem(seed, scale=1.0):
    ds, m = small_logistic(10, 4, seed, mu=0.05)
    if scale != 1.0:
        ds = Dataset(ds.features * scale, ds.labels)
        m = LogisticModel(ds, 0.05)
    pb = composite(m, Regularizer.l1(0.01))
    return pb, fista_reference_run(pb, tol=1e-13).x


def test_probe_at_optimum_is_zero():
    pb, xs = _probe_problem(0)
    est = LsvrgEstimator(pb.smooth, xs, p=0.5)
    lhs, rhs = variance_probe(est, pb, xs, xs)
    assert lhs == pytest.approx(0.0, abs=1e-25)
    assert rhs == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("scale", [1.0, 2.0])
def test_probe_bound_holds(scale):
    rng = np.random.default_rng(5)
    for seed in range(10):
        pb, xs = _probe_problem(seed, scale)
        x, w = xs + rng.standard_normal((2, 4))
        lhs, rhs = variance_probe(LsvrgEstimator(pb.smooth, w, p=0.5), pb, x, xs)
        assert lhs <= rhs
        lhs, rhs = variance_probe(LsvrgEstimator(pb.smooth, x, p=0.5), pb, x, xs)
        assert lhs <= rhs
        saga = SagaEstimator(pb.smooth, w, rng)
        lhs, rhs = variance_probe(saga, pb, x, xs)
        assert lhs <= rhs


def test_probe_rejects_unsupported():
    pb, xs = _probe_problem(0)
    with pytest.raises(TypeError):
        variance_probe(FullGradient(pb.smooth), pb, xs, xs)
