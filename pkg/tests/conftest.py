import numpy as np
import pytest
import scipy.sparse as sp

from slpqn.data import Dataset, synth_gaussian
from slpqn.lbfgs import LbfgsState
from slpqn.problem import CompositeProblem, LogisticModel, Regularizer

# filled by test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def dense_bfgs(pairs):
    """Recursive BFGS from sigma0 * I, sigma0 taken from the newest pair."""
    s_last, y_last = pairs[-1]
    d = s_last.size
    B = (y_last @ y_last) / (s_last @ y_last) * np.eye(d)
    for s, y in pairs:
        Bs = B @ s
        B = B - np.outer(Bs, Bs) / (s @ Bs) + np.outer(y, y) / (y @ s)
    return B


def random_pairs(rng, d, m, cond=10.0):
    """``m`` pairs with ``y = H s`` for a random SPD ``H`` (eigenvalues in [1, cond])."""
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    H = (Q * np.exp(rng.uniform(0.0, np.log(cond), d))) @ Q.T
    out = []
    for _ in range(m):
        s = rng.standard_normal(d)
        out.append((s, H @ s))
    return out


def state_from_pairs(pairs, memory=None):
    d = pairs[0][0].size
    st = LbfgsState(d, memory or len(pairs))
    for s, y in pairs:
        assert st.push_pair(s, y)
    return st


class LeastSquaresModel:
    """``f_i(x) = 1/2 (a_i @ x - b_i)^2 + mu/2 ||x||^2`` behind the smooth-model interface."""

    def __init__(self, A, b, mu=0.0):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.asarray(b, dtype=float)
        self.mu = float(mu)
        self.n, self.d = self.A.shape
        self.L = float(np.max(np.sum(self.A ** 2, axis=1)) + self.mu)

    def value(self, x):
        r = self.A @ x - self.b
        return 0.5 * float(r @ r) / self.n + 0.5 * self.mu * float(x @ x)

    def grad_component(self, i, x):
        return (self.A[i] @ x - self.b[i]) * self.A[i] + self.mu * x

    def grad_batch(self, idx, x):
        idx = np.atleast_1d(idx)
        AB = self.A[idx]
        return AB.T @ (AB @ x - self.b[idx]) / idx.size + self.mu * x

    def full_grad(self, x):
        return self.grad_batch(np.arange(self.n), x)

    def component_grads(self, x):
        return (self.A @ x - self.b)[:, None] * self.A + self.mu * x[None, :]

    def hvp_batch(self, idx, x, v):
        AB = self.A[np.atleast_1d(idx)]
        return AB.T @ (AB @ v) / AB.shape[0] + self.mu * v

    def global_smoothness(self):
        return float(np.linalg.norm(self.A, 2) ** 2 / self.n + self.mu)


def small_logistic(n=32, d=8, seed=0, mu=0.1, target_L=1.0):
    """Enumerable logistic instance whose rows are scaled so that ``L`` equals ``target_L``."""
    ds = synth_gaussian(n, d, 1.0, seed)
    A = ds.features.toarray()
    scale = np.sqrt(4.0 * (target_L - mu) / np.max(np.sum(A ** 2, axis=1)))
    ds = Dataset(sp.csr_matrix(A * scale), ds.labels, f"small-{seed}")
    return ds, LogisticModel(ds, mu)


def composite(model, reg=None):
    return CompositeProblem(model, reg or Regularizer.zero())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
