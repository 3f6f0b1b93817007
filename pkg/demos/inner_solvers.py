"""Compare the dual semismooth Newton inner solver against FISTA and ISTA.

Each trial builds an L-BFGS operator from random curvature pairs and solves
the scaled proximal subproblem with an L1 term.  SSN usually needs a handful
of iterations while the first-order methods need hundreds.
"""
import time

import numpy as np

from slpqn import LbfgsState, Regularizer, SubproblemSpec, fista_solve, ista_solve, ssn_solve
from slpqn.subsolver import subproblem_objective, warm_start_multiplier

rng = np.random.default_rng(0)
d, m, trials = 200, 10, 20
stats = {"ssn": [], "fista": [], "ista": []}

for _ in range(trials):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    H = (Q * np.logspace(0, 2, d)) @ Q.T
    state = LbfgsState(d, memory=m)
    for _ in range(m):
        s = rng.standard_normal(d)
        state.push_pair(s, H @ s)
    spec = SubproblemSpec(rng.standard_normal(d), Regularizer.l1(0.1), state)
    x0 = np.zeros(d)
    for name, solve in (("ssn", lambda: ssn_solve(spec, warm_start_multiplier(spec, x0), tol=1e-8)),
                        ("fista", lambda: fista_solve(spec, x0, tol=1e-8)),
                        ("ista", lambda: ista_solve(spec, x0, tol=1e-8))):
        t0 = time.perf_counter()
        res = solve()
        x = getattr(res, "x_star", None)
        x = res.x if x is None else x
        stats[name].append((time.perf_counter() - t0, res.iterations, subproblem_objective(spec, x)))

for name, rows in stats.items():
    t, it, obj = map(np.array, zip(*rows))
    print(f"{name:6s} ave time {t.mean() * 1e3:7.2f} ms  ave iter {it.mean():8.2f}  "
          f"mean objective {obj.mean():.10f}")
