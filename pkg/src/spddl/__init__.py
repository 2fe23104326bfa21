"""Dictionary learning and sparse coding for symmetric positive definite
matrices under the affine-invariant Riemannian metric."""

__version__ = "0.1.0"

from .datasets import LabeledDataset, PlantedSpec, SyntheticSpec, gen_gaussian_covariances, gen_planted_dataset
from .dictionary import (
    DlConfig,
    FitState,
    alternate_fit,
    cg_solve_dictionary,
    dl_euclidean_gradient,
    dl_objective,
    dl_riemannian_gradient,
    kmeans_init,
)
from .estimators import RiemannianDictionaryLearning, RiemannianSparseCoder
from .exceptions import (
    ConvergenceWarning,
    DegenerateCombinationError,
    DegenerateStartError,
    DimensionMismatchError,
    MatrixOverflowError,
    NotPositiveDefiniteError,
    QuadratureUnderResolvedError,
    SolverError,
)
from .linalg import airm_distance, burg_divergence, check_spd, le_distance, stein_divergence
from .manifold import exp_map, karcher_mean, log_map, riemannian_gradient, vector_transport
from .metrics import recall_at_k, recall_curve, sparsity_of
from .sparse_coding import (
    SolverReport,
    SparseCode,
    SpgConfig,
    sc_gradient_fast,
    sc_gradient_naive,
    sc_objective,
    spg_solve,
    spg_solve_batch,
)
