"""Stochastic gradient estimators for finite sums.

Every estimator exposes ``estimate(x)``, a ``post_step(x_k, x_next)`` hook
called once the iterate has moved, an ``oracle_calls`` counter (component
gradient evaluations) and ``outcomes(x)``, the equally likely values
``estimate(x)`` could return from the current state.  The last is what the
unbiasedness and variance checks enumerate.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

MAX_ENUMERATION = 64


def _sample(rng: np.random.Generator, n: int, b: int) -> np.ndarray:
    # without replacement, sorted so batch reductions have a fixed order
    return np.sort(rng.choice(n, size=b, replace=False))


def _all_batches(n: int, b: int):
    if n > MAX_ENUMERATION:
        raise ValueError(f"n={n} too large to enumerate (limit {MAX_ENUMERATION})")
    if math.comb(n, b) > 10 ** 6:
        raise ValueError(f"C({n},{b}) batches is too many to enumerate")
    return (np.array(c) for c in itertools.combinations(range(n), b))


class FullGradient:
    """Exact gradient; used by deterministic baselines."""

    def __init__(self, model):
        self.model = model
        self.oracle_calls = 0

    def estimate(self, x):
        self.oracle_calls += self.model.n
        return self.model.full_grad(x)

    def post_step(self, x_k, x_next=None) -> bool:
        return False

    def outcomes(self, x):
        return self.model.full_grad(x)[None, :]


class MinibatchGradient:
    """Plain mini-batch gradient ``grad f_B(x)`` without variance reduction."""

    def __init__(self, model, batch_size: int, rng: np.random.Generator):
        if not 1 <= batch_size <= model.n:
            raise ValueError("batch size must lie in [1, n]")
        self.model = model
        self.batch_size = batch_size
        self.rng = rng
        self.oracle_calls = 0

    def estimate(self, x):
        batch = _sample(self.rng, self.model.n, self.batch_size)
        self.oracle_calls += self.batch_size
        return self.model.grad_batch(batch, x)

    def post_step(self, x_k, x_next=None) -> bool:
        return False

    def outcomes(self, x):
        return np.array([self.model.grad_batch(B, x)
                         for B in _all_batches(self.model.n, self.batch_size)])


class LsvrgEstimator:
    """Loopless SVRG.

    ``v = grad f_B(x) - grad f_B(w) + grad f(w)``; after each step the
    reference point ``w`` jumps to the pre-step iterate with probability ``p``.
    """

    def __init__(self, model, x0, p: float, batch_size: int = 1,
                 rng: np.random.Generator | None = None):
        if not 0.0 < p <= 1.0:
            raise ValueError("p must lie in (0, 1]")
        if not 1 <= batch_size <= model.n:
            raise ValueError("batch size must lie in [1, n]")
        self.model = model
        self.p = p
        self.batch_size = batch_size
        self.rng = rng if rng is not None else np.random.default_rng()
        self.w = np.array(x0, dtype=float, copy=True)
        self.grad_w = model.full_grad(self.w)
        self.oracle_calls = model.n
        self.refreshes = 0

    def _combine(self, batch, x):
        m = self.model
        return m.grad_batch(batch, x) - m.grad_batch(batch, self.w) + self.grad_w

    def estimate(self, x):
        batch = _sample(self.rng, self.model.n, self.batch_size)
        self.oracle_calls += 2 * self.batch_size
        return self._combine(batch, x)

    def post_step(self, x_k, x_next=None) -> bool:
        if self.rng.random() < self.p:
            self.w = np.array(x_k, dtype=float, copy=True)
            self.grad_w = self.model.full_grad(self.w)
            self.oracle_calls += self.model.n
            self.refreshes += 1
            return True
        return False

    def outcomes(self, x):
        return np.array([self._combine(B, x)
                         for B in _all_batches(self.model.n, self.batch_size)])


class SvrgEstimator(LsvrgEstimator):
    """Double-loop SVRG: the reference jumps to the latest iterate every ``inner_length`` steps."""

    def __init__(self, model, x0, inner_length: int, batch_size: int = 1,
                 rng: np.random.Generator | None = None):
        super().__init__(model, x0, p=1.0, batch_size=batch_size, rng=rng)
        if inner_length < 1:
            raise ValueError("inner_length must be at least 1")
        self.inner_length = int(inner_length)
        self._steps = 0

    def post_step(self, x_k, x_next=None) -> bool:
        self._steps += 1
        if self._steps % self.inner_length:
            return False
        self.w = np.array(x_next, dtype=float, copy=True)
        self.grad_w = self.model.full_grad(self.w)
        self.oracle_calls += self.model.n
        self.refreshes += 1
        return True


class SagaEstimator:
    """SAGA with one stored gradient per component.

    The drawn component's table entry is overwritten with its gradient at
    the current point right after the estimate is formed.  The running mean
    is updated incrementally and recomputed from the table every ``n``
    updates.
    """

    def __init__(self, model, x0, rng: np.random.Generator | None = None):
        self.model = model
        self.rng = rng if rng is not None else np.random.default_rng()
        self.table = model.component_grads(np.asarray(x0, dtype=float))
        self.mean = self.table.mean(axis=0)
        self.oracle_calls = model.n
        self._updates = 0

    def estimate(self, x):
        n = self.model.n
        i = int(self.rng.integers(n))
        gi = self.model.grad_component(i, x)
        v = gi - self.table[i] + self.mean
        self.mean += (gi - self.table[i]) / n
        self.table[i] = gi
        self.oracle_calls += 1
        self._updates += 1
        if self._updates % n == 0:
            self.mean = self.table.mean(axis=0)
        return v

    def post_step(self, x_k, x_next=None) -> bool:
        return False

    def outcomes(self, x):
        if self.model.n > MAX_ENUMERATION:
            raise ValueError("n too large to enumerate")
        return np.array([self.model.grad_component(i, x) - self.table[i] + self.mean
                         for i in range(self.model.n)])


def variance_probe(estimator, problem, x, x_star) -> tuple[float, float]:
    """Exact ``E||v - grad f(x)||^2`` next to its theoretical upper bound.

    For L-SVRG the bound is ``4L [F(x) - F* + F(w) - F*]``; for SAGA it is
    ``4L (F(x) - F*) + 2 xi`` with ``xi`` the mean squared distance of the
    stored gradients to the component gradients at ``x_star``.
    """
    model = problem.smooth
    if model.n > MAX_ENUMERATION:
        raise ValueError(f"n={model.n} too large to enumerate")
    grad = model.full_grad(x)
    V = estimator.outcomes(x)
    lhs = float(np.mean(np.sum((V - grad) ** 2, axis=1)))
    fstar = problem.value(x_star)
    gap_x = problem.value(x) - fstar
    if isinstance(estimator, LsvrgEstimator):
        rhs = 4.0 * model.L * (gap_x + problem.value(estimator.w) - fstar)
    elif isinstance(estimator, SagaEstimator):
        G_star = model.component_grads(x_star)
        xi = float(np.mean(np.sum((estimator.table - G_star) ** 2, axis=1)))
        rhs = 4.0 * model.L * gap_x + 2.0 * xi
    else:
        raise TypeError(f"no variance bound for {type(estimator).__name__}")
    return lhs, rhs
