"""Composite objectives ``F(x) = (1/n) sum_i f_i(x) + h(x)``.

The smooth part is a finite sum exposing component and mini-batch
gradients plus batch Hessian-vector products; ``LogisticModel`` is the
shipped implementation.  The nonsmooth part is a ``Regularizer`` whose
proximal operator and generalized Jacobian are available in closed form.

Any smooth model with the attributes ``n``, ``d``, ``mu``, ``L`` and the
methods ``value``, ``grad_component``, ``grad_batch``, ``full_grad``,
``hvp_batch`` and ``component_grads`` can stand in for ``LogisticModel``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .data import Dataset

ZERO, L1, BOX = "zero", "l1", "box"


@dataclass(frozen=True)
class Regularizer:
    """A separable convex regularizer: zero, ``weight * ||x||_1`` or a box indicator."""

    kind: str = ZERO
    weight: float = 0.0
    lower: np.ndarray | float = -np.inf
    upper: np.ndarray | float = np.inf

    def __post_init__(self):
        if self.kind not in (ZERO, L1, BOX):
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.kind == L1 and self.weight < 0:
            raise ValueError("l1 weight must be nonnegative")
        if self.kind == BOX and np.any(np.asarray(self.lower) > np.asarray(self.upper)):
            raise ValueError("box requires lower <= upper")

    @classmethod
    def zero(cls) -> "Regularizer":
        return cls(ZERO)

    @classmethod
    def l1(cls, weight: float) -> "Regularizer":
        return cls(L1, weight=float(weight))

    @classmethod
    def box(cls, lower=-np.inf, upper=np.inf) -> "Regularizer":
        return cls(BOX, lower=lower, upper=upper)

    def scaled(self, eta: float) -> "Regularizer":
        """Return ``eta * h`` (a box indicator is invariant under scaling)."""
        if self.kind == L1:
            return Regularizer.l1(eta * self.weight)
        return self

    def value(self, x: np.ndarray) -> float:
        if self.kind == L1:
            return self.weight * float(np.abs(x).sum())
        if self.kind == BOX:
            inside = np.all((x >= self.lower) & (x <= self.upper))
            return 0.0 if inside else np.inf
        return 0.0

    def prox(self, u: np.ndarray, scale: float) -> np.ndarray:
        if scale <= 0:
            raise ValueError("prox scale must be positive")
        if self.kind == L1:
            t = scale * self.weight
            return np.sign(u) * np.maximum(np.abs(u) - t, 0.0)
        if self.kind == BOX:
            return np.clip(u, self.lower, self.upper)
        return np.array(u, dtype=float, copy=True)

    def prox_jacobian(self, u: np.ndarray, scale: float) -> np.ndarray:
        """0/1 diagonal of a generalized Jacobian of ``prox`` at ``u``.

        Ties (``|u_i| == scale * weight`` or ``u_i`` on a box face) map to 0.
        """
        if scale <= 0:
            raise ValueError("prox scale must be positive")
        if self.kind == L1:
            return np.abs(u) > scale * self.weight
        if self.kind == BOX:
            return (u > self.lower) & (u < self.upper)
        return np.ones(np.shape(u), dtype=bool)


def prox(reg: Regularizer, u: np.ndarray, scale: float) -> np.ndarray:
    return reg.prox(u, scale)


def prox_jacobian(reg: Regularizer, u: np.ndarray, scale: float) -> np.ndarray:
    return reg.prox_jacobian(u, scale)


def moreau_envelope(reg: Regularizer, u: np.ndarray, scale: float) -> float:
    z = reg.prox(u, scale)
    return reg.value(z) + float(np.dot(z - u, z - u)) / (2.0 * scale)


def _sigmoid(t):
    # tanh form is overflow-free for any finite t
    return 0.5 * (1.0 + np.tanh(0.5 * t))


class LogisticModel:
    """Ridge-regularized logistic negative log-likelihood.

    ``f_i(x) = softplus(a_i @ x) - b_i * (a_i @ x) + mu/2 ||x||^2``, which is
    the usual cross-entropy ``-b log c - (1-b) log(1-c)`` with
    ``c = sigmoid(a_i @ x)`` plus a ridge term.  Each ``f_i`` is
    ``mu``-strongly convex and ``(||a_i||^2/4 + mu)``-smooth; ``L`` stores the
    max over samples.
    """

    def __init__(self, dataset: Dataset, mu: float = 0.0):
        if mu < 0:
            raise ValueError("ridge weight must be nonnegative")
        self.dataset = dataset
        self.A: sp.csr_matrix = dataset.features
        self.b: np.ndarray = dataset.labels
        self.mu = float(mu)
        self.n, self.d = self.A.shape
        self.row_sq_norms = np.asarray(self.A.multiply(self.A).sum(axis=1)).ravel()
        self.L = float(self.row_sq_norms.max(initial=0.0) / 4.0 + self.mu)
        self._global_L = None

    def _check_batch(self, idx) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        if idx.size == 0:
            raise ValueError("empty batch")
        if idx.min() < 0 or idx.max() >= self.n:
            raise IndexError("sample index out of range")
        return idx

    def loss(self, x: np.ndarray) -> float:
        """Average log-loss without the ridge term."""
        z = self.A @ x
        return float(np.mean(np.logaddexp(0.0, z) - self.b * z))

    def value(self, x: np.ndarray) -> float:
        return self.loss(x) + 0.5 * self.mu * float(x @ x)

    def component_value(self, i: int, x: np.ndarray) -> float:
        idx, val = self.dataset.row(self._check_batch(i)[0])
        z = float(val @ x[idx])
        return float(np.logaddexp(0.0, z) - self.b[i] * z) + 0.5 * self.mu * float(x @ x)

    def grad_component(self, i: int, x: np.ndarray) -> np.ndarray:
        i = int(self._check_batch(i)[0])
        idx, val = self.dataset.row(i)
        r = _sigmoid(val @ x[idx]) - self.b[i]
        g = self.mu * x
        g[idx] += r * val
        return g

    def grad_batch(self, idx, x: np.ndarray) -> np.ndarray:
        idx = self._check_batch(idx)
        AB = self.A[idx]
        r = _sigmoid(AB @ x) - self.b[idx]
        return AB.T @ r / idx.size + self.mu * x

    def full_grad(self, x: np.ndarray) -> np.ndarray:
        r = _sigmoid(self.A @ x) - self.b
        return self.A.T @ r / self.n + self.mu * x

    def component_grads(self, x: np.ndarray) -> np.ndarray:
        """Dense ``n x d`` array whose rows are the component gradients."""
        r = _sigmoid(self.A @ x) - self.b
        G = self.A.multiply(r[:, None]).toarray()
        return G + self.mu * x[None, :]

    def hvp_batch(self, idx, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        idx = self._check_batch(idx)
        AS = self.A[idx]
        c = _sigmoid(AS @ x)
        return AS.T @ (c * (1.0 - c) * (AS @ v)) / idx.size + self.mu * v

    def global_smoothness(self) -> float:
        """Lipschitz constant of the full gradient, ``sigma_max(A)^2 / (4n) + mu``."""
        if self._global_L is None:
            if min(self.A.shape) <= 2:
                smax = np.linalg.norm(self.A.toarray(), 2) if self.A.nnz else 0.0
            else:
                smax = spla.svds(self.A, k=1, return_singular_vectors=False,
                                 random_state=0)[0]
            self._global_L = float(smax) ** 2 / (4.0 * self.n) + self.mu
        return self._global_L

    def predict(self, x: np.ndarray) -> np.ndarray:
        return (self.A @ x > 0).astype(float)

    def accuracy(self, x: np.ndarray) -> float:
        return float(np.mean(self.predict(x) == self.b))


@dataclass
class CompositeProblem:
    smooth: LogisticModel
    regularizer: Regularizer = field(default_factory=Regularizer.zero)

    @property
    def n(self) -> int:
        return self.smooth.n

    @property
    def d(self) -> int:
        return self.smooth.d

    def value(self, x: np.ndarray) -> float:
        return self.smooth.value(x) + self.regularizer.value(x)


def logistic_problem(dataset: Dataset, mu: float = 1e-3, lam: float = 1e-3) -> CompositeProblem:
    """Elastic-net logistic regression with the ridge folded into the smooth part."""
    reg = Regularizer.l1(lam) if lam > 0 else Regularizer.zero()
    return CompositeProblem(LogisticModel(dataset, mu), reg)
