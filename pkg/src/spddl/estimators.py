"""scikit-learn compatible wrappers around the coder and the dictionary learner."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dictionary import DlConfig, alternate_fit, code_batch
from .linalg import check_spd
from .sparse_coding import SpgConfig


def check_spd_stack(X, policy="strict", name="X"):
    """Validate an ``(N, d, d)`` stack (or a single ``(d, d)`` matrix) of SPD
    matrices and return an exactly symmetric float64 copy."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1] != X.shape[2] or X.shape[0] == 0:
        raise ValueError(f"{name} must have shape (n_samples, d, d), got {X.shape}")
    return np.stack([check_spd(M, f"{name}[{i}]", policy=policy) for i, M in enumerate(X)])


class RiemannianSparseCoder(TransformerMixin, BaseEstimator):
    """Nonnegative sparse codes of SPD matrices over a fixed SPD dictionary.

    Parameters
    ----------
    dictionary : ndarray, shape (n_atoms, d, d)
    lam : float, default=0.1
        Weight of the ``sum(alpha)`` penalty.
    max_iter : int, default=100
    grad_tol : float, default=1e-6
    n_jobs : int, default=1

    Attributes
    ----------
    dictionary_ : ndarray, shape (n_atoms, d, d)
    reports_ : list of SolverReport
        Solver traces of the most recent :meth:`transform` call.
    """

    def __init__(self, dictionary=None, lam=0.1, max_iter=100, grad_tol=1e-6, n_jobs=1):
        self.dictionary = dictionary
        self.lam = lam
        self.max_iter = max_iter
        self.grad_tol = grad_tol
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        if self.dictionary is None:
            raise ValueError("a dictionary is required")
        self.dictionary_ = check_spd_stack(self.dictionary, name="dictionary")
        self.n_atoms_ = self.dictionary_.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "dictionary_")
        X = check_spd_stack(X)
        if X.shape[1] != self.dictionary_.shape[1]:
            raise ValueError(f"X has {X.shape[1]}x{X.shape[1]} matrices, dictionary atoms are "
                             f"{self.dictionary_.shape[1]}x{self.dictionary_.shape[1]}")
        cfg = SpgConfig(max_iter=self.max_iter, grad_tol=self.grad_tol)
        codes, self.reports_ = code_batch(X, self.dictionary_, self.lam, cfg, n_jobs=self.n_jobs)
        return np.array([c.coeffs for c in codes])


class RiemannianDictionaryLearning(TransformerMixin, BaseEstimator):
    """Learn an SPD dictionary under the affine-invariant loss.

    Parameters
    ----------
    n_atoms : int or None
        Dictionary size. ``None`` uses twice the number of classes in ``y``.
    lam : float, default=0.1
        Sparsity weight of the coding subproblem.
    lambda_dict : float, default=0.1
        Weight of the atom trace regularizer.
    init : {'riem-kmeans', 'le-kmeans', 'frob-kmeans', 'random'}
    max_iter : int, default=50
        Alternations of coding and dictionary updates.
    tol : float, default=1e-6
        Relative decrease of the total objective that stops the alternation.
    cg_max_iter : int, default=50
    coding_max_iter : int, default=100
    random_state : int or None
    n_jobs : int, default=1

    Attributes
    ----------
    components_ : ndarray, shape (n_atoms, d, d)
    codes_ : ndarray, shape (n_samples, n_atoms)
        Codes of the training data at the end of the fit.
    objective_trace_ : list of (int, float)
    n_iter_ : int
    fit_state_ : FitState
    """

    def __init__(
        self,
        n_atoms=None,
        lam=0.1,
        lambda_dict=0.1,
        init="riem-kmeans",
        max_iter=50,
        tol=1e-6,
        cg_max_iter=50,
        coding_max_iter=100,
        random_state=None,
        n_jobs=1,
    ):
        self.n_atoms = n_atoms
        self.lam = lam
        self.lambda_dict = lambda_dict
        self.init = init
        self.max_iter = max_iter
        self.tol = tol
        self.cg_max_iter = cg_max_iter
        self.coding_max_iter = coding_max_iter
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _spg_cfg(self):
        return SpgConfig(max_iter=self.coding_max_iter)

    def fit(self, X, y=None):
        X = check_spd_stack(X)
        n_atoms = self.n_atoms
        if n_atoms is None:
            if y is None:
                raise ValueError("n_atoms is required when y is not given")
            n_atoms = 2 * len(np.unique(y))
        n_atoms = min(int(n_atoms), X.shape[0]) if self.init != "random" else int(n_atoms)
        cfg = DlConfig(
            lambda_dict=self.lambda_dict,
            cg_max_iter=self.cg_max_iter,
            outer_max_iter=self.max_iter,
            outer_tol=self.tol,
        )
        state = alternate_fit(
            X, n_atoms, self.lam, cfg, init=self.init, spg_cfg=self._spg_cfg(),
            random_state=self.random_state, n_jobs=self.n_jobs,
        )
        self.fit_state_ = state
        self.components_ = state.dictionary
        self.codes_ = state.code_matrix
        self.objective_trace_ = state.objective_trace
        self.n_iter_ = state.n_iter
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X, y).codes_

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_spd_stack(X)
        codes, _ = code_batch(X, self.components_, self.lam, self._spg_cfg(), n_jobs=self.n_jobs)
        return np.array([c.coeffs for c in codes])
