"""Fit a sparse logistic regression with the single-loop method and two baselines.

Run with ``python demos/quickstart.py``.  Prints the relative objective gap
reached by each algorithm after a fixed budget of data passes.
"""
import numpy as np

from slpqn import RunConfig, fista_reference_run, logistic_problem, run, synth_gaussian

ds = synth_gaussian(1000, 200, sparsity=0.1, seed=0)
problem = logistic_problem(ds, mu=1e-3, lam=1e-3)

# a tight deterministic solve gives F* for the gap column
ref = fista_reference_run(problem, tol=1e-12)
print(f"F* = {ref.fstar:.10f}  (reference converged: {ref.converged})")

steps = {"slspqn": 0.2, "spqn_svrg": 0.2, "plsvrg": 10.0, "spqn": 0.01}
for alg, eta in steps.items():
    cfg = RunConfig(step_size=eta, batch_size=64, hessian_batch=300, update_frequency=10,
                    memory=10, max_epochs=30.0, seed=0)
    tr = run(alg, problem, cfg, fstar=ref.fstar)
    gap = tr.rows[-1].train_gap / ref.fstar
    nnz = int(np.count_nonzero(tr.x))
    print(f"{alg:10s} eta={eta:<5g} epochs={tr.rows[-1].epochs:6.2f} "
          f"rel gap={gap:.2e} nnz={nnz}")
