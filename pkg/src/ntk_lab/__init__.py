"""Neural tangent kernel regression: kernels, networks, early stopping and experiments."""

from .data import Dataset, l2_error, make_dataset, sample_cube, sample_sphere
from .earlystop import rademacher, run_early_stopped_kernel_gd, stopping_time
from .linalg import cholesky_solve, sym_eigen
from .network import TrainConfig, init_network, predict_batch, train
from .ntk import fit_krr, gram_matrix, kernel_gd_run, kernel_matrix, ntk_eval

__version__ = "0.1.0"
