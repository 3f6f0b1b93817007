"""Single-loop stochastic proximal quasi-Newton methods for composite finite sums."""
from .data import (Dataset, LibsvmFormatError, load_libsvm, normalize_rows, parse_libsvm,
                   save_libsvm, synth_gaussian, train_test_split)
from .lbfgs import DenseOperator, IdentityOperator, LbfgsState
from .optimizer import (RunConfig, Trace, fista_reference_run, lyapunov_value,
                        plsvrg_run, run, slspqn_run, spqn_run, spqn_svrg_run)
from .problem import CompositeProblem, LogisticModel, Regularizer, logistic_problem
from .subsolver import (SubproblemSpec, fista_solve, ista_solve, make_subproblem,
                        ssn_solve)
from .vrgrad import LsvrgEstimator, SagaEstimator, SvrgEstimator, variance_probe

__version__ = "0.1.0"
