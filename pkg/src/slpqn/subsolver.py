"""Solvers for ``min_x g^T x + 1/2 x^T B x + theta(x)``.

``ssn_solve`` works on the dual of the split problem

    min_{x,z} g^T x + 1/2 x^T (B - alpha I) x + alpha/2 ||z||^2 + theta(z)  s.t. x = z,

whose negated dual function ``Lambda`` is convex and differentiable for
``0 < alpha < alpha_bar``:

    grad Lambda(lam) = B_alpha^{-1}(lam - g) - prox_{1/alpha, theta}(-lam/alpha).

A semismooth Newton direction uses the 0/1 Jacobian of the prox, and the
step length comes from an exact 1-D semismooth Newton line search.  The
primal solution is recovered as ``B_alpha^{-1}(lam* - g)``.

``fista_solve`` and ``ista_solve`` are the first-order baselines.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .problem import Regularizer


@dataclass
class SubproblemSpec:
    g: np.ndarray
    theta: Regularizer
    operator: object
    alpha: float | None = None

    def __post_init__(self):
        abar = self.operator.alpha_bar()
        if self.alpha is None:
            self.alpha = 0.5 * abar
        if not 0.0 < self.alpha < abar:
            raise ValueError(f"alpha={self.alpha} must lie in (0, {abar})")


def make_subproblem(operator, v, x_k, eta: float, reg: Regularizer,
                    alpha: float | None = None) -> SubproblemSpec:
    """Subproblem of one proximal quasi-Newton step from ``x_k`` along ``v``."""
    g = eta * v - operator.apply_B(x_k)
    return SubproblemSpec(g, reg.scaled(eta), operator, alpha)


def subproblem_objective(spec: SubproblemSpec, x) -> float:
    return float(spec.g @ x + 0.5 * x @ spec.operator.apply_B(x)) + spec.theta.value(x)


def subproblem_residual(spec: SubproblemSpec, x, Bx=None) -> float:
    """``||x - prox_theta(x - Bx - g)||_inf``; zero exactly at the minimizer."""
    if Bx is None:
        Bx = spec.operator.apply_B(x)
    return float(np.max(np.abs(x - spec.theta.prox(x - Bx - spec.g, 1.0)), initial=0.0))


def dual_value(spec: SubproblemSpec, lam) -> float:
    """``Lambda(lam)``, the negated dual function."""
    a = spec.alpha
    r = lam - spec.g
    psi = 0.5 * float(r @ spec.operator.apply_B_alpha_inv(a, r))
    z = spec.theta.prox(-lam / a, 1.0 / a)
    theta_part = -(0.5 * a * float(z @ z) + spec.theta.value(z) + float(lam @ z))
    return psi + theta_part


def lambda_gradient(spec: SubproblemSpec, lam):
    """Return ``(grad Lambda(lam), x, z)`` with ``grad = x - z``."""
    a = spec.alpha
    x = spec.operator.apply_B_alpha_inv(a, lam - spec.g)
    z = spec.theta.prox(-lam / a, 1.0 / a)
    return x - z, x, z


def ssn_direction(spec: SubproblemSpec, lam, grad):
    a = spec.alpha
    mask = spec.theta.prox_jacobian(-lam / a, 1.0 / a)
    return -spec.operator.apply_shifted_inverse(a, mask, grad)


class LineSearchResult(NamedTuple):
    rho: float
    steps: int
    descent: bool


def exact_line_search(spec: SubproblemSpec, lam, d, x=None, grad=None,
                      max_steps: int = 30, rtol: float = 1e-12) -> LineSearchResult:
    """Minimize ``R(rho) = Lambda(lam + rho d)`` over ``rho >= 0``.

    Semismooth Newton on ``R'`` from ``rho = 1``, safeguarded by bisection
    on the bracket where ``R'`` changes sign.
    """
    a = spec.alpha
    if x is None or grad is None:
        grad, x, _ = lambda_gradient(spec, lam)
    slope0 = float(d @ grad)
    if not slope0 < 0:
        return LineSearchResult(1.0, 0, False)
    dx = float(d @ x)
    dBd = float(d @ spec.operator.apply_B_alpha_inv(a, d))
    theta = spec.theta

    def derivs(rho):
        u = -(lam + rho * d) / a
        r1 = dx + rho * dBd - float(d @ theta.prox(u, 1.0 / a))
        mask = theta.prox_jacobian(u, 1.0 / a)
        r2 = dBd + float(d[mask] @ d[mask]) / a
        return r1, r2

    lo, hi = 0.0, np.inf
    rho = 1.0
    steps = 0
    stop = rtol * (1.0 + abs(slope0))
    while steps < max_steps:
        r1, r2 = derivs(rho)
        if not (np.isfinite(r1) and np.isfinite(r2)):
            raise FloatingPointError("non-finite values in line search")
        if abs(r1) <= stop or r2 <= 0:
            break
        if r1 < 0:
            lo = rho
        else:
            hi = rho
        nxt = rho - r1 / r2
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi) if np.isfinite(hi) else 2.0 * max(rho, 1.0)
        if nxt == rho:
            break
        rho = nxt
        steps += 1
    return LineSearchResult(max(rho, 0.0), steps, True)


@dataclass
class SsnResult:
    x_star: np.ndarray
    lambda_star: np.ndarray
    iterations: int
    line_search_steps: int
    residual: float
    dual_residual: float
    converged: bool


def warm_start_multiplier(spec: SubproblemSpec, x_prev):
    """Multiplier whose primal recovery ``B_alpha^{-1}(lam - g)`` equals ``x_prev``."""
    return spec.operator.apply_B(x_prev) - spec.alpha * x_prev + spec.g


def ssn_solve(spec: SubproblemSpec, lam0=None, tol: float = 1e-8,
              max_iter: int = 100) -> SsnResult:
    if tol <= 0:
        raise ValueError("tol must be positive")
    lam = np.zeros_like(spec.g) if lam0 is None else np.array(lam0, dtype=float)
    best = None
    L_B = None
    ls_steps = 0
    it = 0
    while True:
        grad, x, _ = lambda_gradient(spec, lam)
        dres = float(np.max(np.abs(grad), initial=0.0))
        if best is None or dres < best[0]:
            best = (dres, lam.copy(), x)
        if dres <= tol or it == max_iter:
            break
        d = ssn_direction(spec, lam, grad)
        ls = exact_line_search(spec, lam, d, x=x, grad=grad)
        it += 1
        if not ls.descent:
            # floating-point corner case: one primal prox-gradient step, then
            # restart from the multiplier that recovers it
            if L_B is None:
                L_B = lipschitz_estimate(spec.operator)
            x_pg = spec.theta.prox(x - (spec.operator.apply_B(x) + spec.g) / L_B, 1.0 / L_B)
            lam = warm_start_multiplier(spec, x_pg)
            continue
        ls_steps += ls.steps
        lam = lam + ls.rho * d
    dres, lam_best, x_best = best
    return SsnResult(x_best, lam_best, it, ls_steps,
                     subproblem_residual(spec, x_best), dres, dres <= tol)


def lipschitz_estimate(operator, n_iter: int = 30, seed: int = 0) -> float:
    """Power iteration on ``B``; returns 1.01 times the final Rayleigh quotient."""
    v = np.random.default_rng(seed).standard_normal(operator.d)
    v /= np.linalg.norm(v)
    rq = 0.0
    for _ in range(n_iter):
        w = operator.apply_B(v)
        rq = float(v @ w)
        v = w / np.linalg.norm(w)
    return 1.01 * rq


@dataclass
class ProxGradResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def _prox_grad(spec, x0, tol, max_iter, L_B, accelerate):
    B = spec.operator
    if L_B is None:
        L_B = lipschitz_estimate(B)
    step = 1.0 / L_B
    theta = spec.theta
    x = np.array(x0, dtype=float, copy=True)
    Bx = B.apply_B(x)
    res = subproblem_residual(spec, x, Bx)
    y, By, t = x, Bx, 1.0
    it = 0
    while res > tol and it < max_iter:
        x_new = theta.prox(y - step * (By + spec.g), step)
        Bx_new = B.apply_B(x_new)
        if accelerate:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_new
            y = x_new + beta * (x_new - x)
            By = Bx_new + beta * (Bx_new - Bx)
            t = t_new
        else:
            y, By = x_new, Bx_new
        x, Bx = x_new, Bx_new
        res = subproblem_residual(spec, x, Bx)
        it += 1
    return ProxGradResult(x, it, res, res <= tol)


def fista_solve(spec: SubproblemSpec, x0, tol: float = 1e-8, max_iter: int = 10000,
                L_B: float | None = None) -> ProxGradResult:
    return _prox_grad(spec, x0, tol, max_iter, L_B, accelerate=True)


def ista_solve(spec: SubproblemSpec, x0, tol: float = 1e-8, max_iter: int = 10000,
               L_B: float | None = None) -> ProxGradResult:
    return _prox_grad(spec, x0, tol, max_iter, L_B, accelerate=False)
