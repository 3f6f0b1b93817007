"""Outer loops for composite finite-sum problems.

``slspqn_run``    single-loop stochastic proximal quasi-Newton (loopless SVRG
                  gradients + stochastic L-BFGS from Hessian-vector products)
``plsvrg_run``    proximal loopless SVRG (the same loop with ``B = I``)
``spqn_run``      stochastic proximal quasi-Newton with plain mini-batch
                  gradients and decaying steps
``spqn_svrg_run`` the quasi-Newton loop with double-loop SVRG gradients

All four share ``run``; only the estimator, the step schedule and whether
correction pairs are collected differ.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from .lbfgs import LbfgsState
from .subsolver import (fista_solve, ista_solve, make_subproblem, ssn_solve,
                        warm_start_multiplier)
from .vrgrad import (FullGradient, LsvrgEstimator, MinibatchGradient,
                     SagaEstimator, SvrgEstimator)

ALGORITHMS = ("slspqn", "plsvrg", "spqn", "spqn_svrg")
INNER_SOLVERS = ("ssn", "fista", "ista")
ESTIMATORS = ("lsvrg", "saga", "full")
CSV_COLUMNS = ("k", "epochs", "train_obj", "train_gap", "test_loss", "test_acc",
               "inner_iters", "inner_residual", "wall_ms")


@dataclass
class RunConfig:
    step_size: float = 1e-2
    step_decay_k0: float = 1000.0
    batch_size: int = 128
    hessian_batch: int = 600
    update_frequency: int | None = 10
    memory: int = 10
    p: float | None = None
    inner_solver: str = "ssn"
    inner_tol: float = 1e-8
    inner_max_iter: int | None = None
    max_epochs: float = 30.0
    max_iter: int | None = None
    seed: int = 0
    estimator: str = "lsvrg"
    x0_value: float = 0.01
    record_every: int | None = None
    literal_first_pair: bool = False
    target_rel_error: float | None = None
    inner_length: int | None = None

    def validate(self, n: int) -> None:
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not 1 <= self.batch_size <= n:
            raise ValueError(f"batch_size must lie in [1, {n}]")
        if self.hessian_batch < 1:
            raise ValueError("hessian_batch must be positive")
        if self.update_frequency is not None and self.update_frequency < 1:
            raise ValueError("update_frequency must be >= 1")
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.p is not None and not 0.0 < self.p < 1.0:
            raise ValueError("p must lie in (0, 1)")
        if self.inner_solver not in INNER_SOLVERS:
            raise ValueError(f"inner_solver must be one of {INNER_SOLVERS}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")

    def resolved_p(self, n: int) -> float:
        return self.p if self.p is not None else min(self.batch_size / n, 1.0)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class TraceRow:
    k: int
    epochs: float
    train_obj: float
    train_gap: float
    test_loss: float
    test_acc: float
    inner_iters: int
    inner_residual: float
    wall_ms: float


@dataclass
class Trace:
    algorithm: str
    config: RunConfig
    dataset: str = ""
    rows: list[TraceRow] = field(default_factory=list)
    inner_stats: list[tuple[int, float]] = field(default_factory=list)
    x: np.ndarray | None = None
    pairs_rejected: int = 0
    reference_refreshes: int = 0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow([r.k, repr(r.epochs), repr(r.train_obj), repr(r.train_gap),
                            repr(r.test_loss), repr(r.test_acc), r.inner_iters,
                            repr(r.inner_residual), f"{r.wall_ms:.3f}"])

    def metadata(self) -> dict:
        return {"algorithm": self.algorithm, "dataset": self.dataset,
                "config": asdict(self.config)}


def _make_estimator(algorithm, config, model, x0, rng):
    n = model.n
    b = config.batch_size
    p = config.resolved_p(n)
    if algorithm == "spqn":
        return MinibatchGradient(model, b, rng)
    if algorithm == "spqn_svrg":
        inner = config.inner_length or max(1, round(1.0 / p))
        return SvrgEstimator(model, x0, inner, b, rng)
    if config.estimator == "saga":
        return SagaEstimator(model, x0, rng)
    if config.estimator == "full":
        return FullGradient(model)
    return LsvrgEstimator(model, x0, p, b, rng)


def _step_schedule(algorithm, config) -> Callable[[int], float]:
    eta = config.step_size
    if algorithm == "spqn":
        k0 = config.step_decay_k0
        return lambda k: eta * k0 / (k0 + k)
    return lambda k: eta


def _solve_inner(spec, x, config):
    solver = config.inner_solver
    if solver == "ssn":
        res = ssn_solve(spec, warm_start_multiplier(spec, x), tol=config.inner_tol,
                        max_iter=config.inner_max_iter or 100)
        return res.x_star, res.iterations, res.residual
    fn = fista_solve if solver == "fista" else ista_solve
    res = fn(spec, x, tol=config.inner_tol, max_iter=config.inner_max_iter or 10000)
    return res.x, res.iterations, res.residual


def run(algorithm: str, problem, config: RunConfig, fstar: float | None = None,
        test_model=None, x0=None, callback=None, dataset_name: str = "") -> Trace:
    """Run one of ``ALGORITHMS`` and return its trace.

    ``callback(k, x, estimator, lbfgs)`` is invoked before every iteration
    (and once after the last) with the current iterate.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    model, reg = problem.smooth, problem.regularizer
    n, d = problem.n, problem.d
    config.validate(n)
    rng = np.random.default_rng(config.seed)
    x = np.full(d, config.x0_value, dtype=float) if x0 is None else np.array(x0, dtype=float)
    estimator = _make_estimator(algorithm, config, model, x, rng)
    step = _step_schedule(algorithm, config)
    r = None if algorithm == "plsvrg" else config.update_frequency
    lbfgs = LbfgsState(d, config.memory)
    bH = min(config.hessian_batch, n)
    record_every = config.record_every or max(1, math.ceil(n / (10 * config.batch_size)))
    trace = Trace(algorithm, config, dataset_name)
    acc = np.zeros(d)
    xbar_prev = np.zeros(d) if config.literal_first_pair else None
    t_start = time.perf_counter()

    def record(k, inner_iters, inner_res):
        F = problem.value(x)
        gap = F - fstar if fstar is not None else math.nan
        if test_model is not None:
            tl, ta = test_model.loss(x), test_model.accuracy(x)
        else:
            tl = ta = math.nan
        trace.rows.append(TraceRow(k, estimator.oracle_calls / n, F, gap, tl, ta,
                                   inner_iters, inner_res,
                                   1e3 * (time.perf_counter() - t_start)))
        return gap

    def done(k, gap):
        if estimator.oracle_calls / n >= config.max_epochs:
            return True
        if config.max_iter is not None and k >= config.max_iter:
            return True
        if config.target_rel_error is not None and fstar:
            return gap / abs(fstar) <= config.target_rel_error
        return False

    k = 0
    gap = record(0, 0, 0.0)
    while not done(k, gap):
        if callback is not None:
            callback(k, x, estimator, lbfgs)
        if r is not None:
            if k >= 1:
                acc += x
            if k >= r and k % r == 0:
                xbar = acc / r
                acc[:] = 0.0
                if xbar_prev is not None:
                    s = xbar - xbar_prev
                    sample = np.sort(rng.choice(n, size=bH, replace=False))
                    lbfgs.push_pair(s, model.hvp_batch(sample, xbar, s))
                xbar_prev = xbar
        v = estimator.estimate(x)
        eta = step(k)
        if lbfgs.m == 0:
            x_new = reg.prox(x - eta * v, eta)
            inner_iters, inner_res = 0, 0.0
        else:
            spec = make_subproblem(lbfgs, v, x, eta, reg)
            t0 = time.perf_counter()
            x_new, inner_iters, inner_res = _solve_inner(spec, x, config)
            trace.inner_stats.append((inner_iters, time.perf_counter() - t0))
        if not np.all(np.isfinite(x_new)):
            raise FloatingPointError(f"iterate became non-finite at k={k}; reduce step_size")
        estimator.post_step(x, x_new)
        x = x_new
        k += 1
        if config.target_rel_error is not None or k % record_every == 0:
            gap = record(k, inner_iters, inner_res)
        elif done(k, gap):
            gap = record(k, inner_iters, inner_res)
    if callback is not None:
        callback(k, x, estimator, lbfgs)
    trace.x = x
    trace.pairs_rejected = lbfgs.rejected
    trace.reference_refreshes = getattr(estimator, "refreshes", 0)
    return trace


def slspqn_run(problem, config: RunConfig, fstar=None, **kw) -> Trace:
    return run("slspqn", problem, config, fstar, **kw)


def plsvrg_run(problem, config: RunConfig, fstar=None, **kw) -> Trace:
    return run("plsvrg", problem, config, fstar, **kw)


def spqn_run(problem, config: RunConfig, fstar=None, **kw) -> Trace:
    return run("spqn", problem, config, fstar, **kw)


def spqn_svrg_run(problem, config: RunConfig, fstar=None, **kw) -> Trace:
    return run("spqn_svrg", problem, config, fstar, **kw)


@dataclass
class ReferenceResult:
    x: np.ndarray
    fstar: float
    iterations: int
    residual: float
    converged: bool


def fista_reference_run(problem, tol: float = 1e-12, max_iter: int = 200000,
                        x0=None) -> ReferenceResult:
    """Deterministic accelerated proximal gradient with gradient-based restart.

    Stops once ``||x - prox_{1/L,h}(x - grad f(x)/L)||_inf <= tol`` where
    ``L`` is the Lipschitz constant of the full gradient.
    """
    model, reg = problem.smooth, problem.regularizer
    L = model.global_smoothness() if hasattr(model, "global_smoothness") else model.L
    step = 1.0 / L
    x = np.zeros(problem.d) if x0 is None else np.array(x0, dtype=float)
    y = x.copy()
    t = 1.0
    res = math.inf
    it = 0
    while it < max_iter:
        x_new = reg.prox(y - step * model.full_grad(y), step)
        it += 1
        if np.max(np.abs(x_new - y), initial=0.0) <= tol:
            res = float(np.max(np.abs(
                x_new - reg.prox(x_new - step * model.full_grad(x_new), step)), initial=0.0))
            if res <= tol:
                x = x_new
                break
        if float((y - x_new) @ (x_new - x)) > 0:
            t = 1.0
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
    return ReferenceResult(x, problem.value(x), it, res, res <= tol)


def lyapunov_value(problem, x_k, w_k, operator, eta: float, A: float, x_star,
                   fstar: float) -> float:
    """``||x_k - x*||_B^2 + A eta^2 (F(w_k) - F*) + 2 eta (F(x_k) - F*)``.

    ``operator=None`` means ``B = I``.
    """
    e = x_k - x_star
    dist = float(e @ e) if operator is None else float(e @ operator.apply_B(e))
    return (dist + A * eta * eta * (problem.value(w_k) - fstar)
            + 2.0 * eta * (problem.value(x_k) - fstar))
