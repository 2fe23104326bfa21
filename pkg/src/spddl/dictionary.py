"""Dictionary update by Riemannian conjugate gradient on the product of SPD
manifolds, the alternating dictionary-learning / sparse-coding driver and
the K-Means style initializers."""

import logging
import time
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from joblib import Parallel, delayed

from .exceptions import DegenerateCombinationError, DimensionMismatchError, SolverError
from .linalg import EPS_PD, inv_sqrt, sym
from .manifold import (
    karcher_mean,
    product_exp,
    product_inner,
    product_riemannian_gradient,
    product_transport,
)
from .sparse_coding import SolverReport, SparseCode, SpgConfig, spg_solve_batch

logger = logging.getLogger(__name__)

INIT_STRATEGIES = ("riem-kmeans", "le-kmeans", "frob-kmeans", "random")


@dataclass
class DlConfig:
    lambda_dict: float = 0.0
    cg_max_iter: int = 50
    cg_grad_tol: float = 1e-8
    cg_rel_tol: float = 1e-10
    armijo_c: float = 1e-4
    ls_shrink: float = 0.5
    ls_max_steps: int = 40
    # Powell restart: drop conjugacy once |<g_k, T(g_{k-1})>| > threshold * ||g_k||^2
    mu_reset_threshold: float = 0.5
    outer_max_iter: int = 50
    outer_tol: float = 1e-6
    # exact per-atom scale balancing after every coding half-step
    rebalance: bool = True
    # atoms no code uses are held fixed during the dictionary half-step
    freeze_unused: bool = True

    def __post_init__(self):
        if self.lambda_dict < 0:
            raise ValueError("lambda_dict must be >= 0")
        if self.cg_max_iter < 1 or self.outer_max_iter < 1:
            raise ValueError("iteration counts must be >= 1")
        if not 0 < self.armijo_c < 1 or not 0 < self.ls_shrink < 1:
            raise ValueError("armijo_c and ls_shrink must lie in (0, 1)")
        if self.outer_tol < 0 or self.mu_reset_threshold <= 0:
            raise ValueError("outer_tol must be >= 0 and mu_reset_threshold > 0")


@dataclass
class FitState:
    dictionary: np.ndarray
    codes: List[SparseCode]
    objective_trace: List[Tuple[int, float]] = field(default_factory=list)
    cg_reports: List[SolverReport] = field(default_factory=list)
    spg_reports: List[List[SolverReport]] = field(default_factory=list)
    wall_ms: dict = field(default_factory=dict)
    converged: bool = False

    @property
    def n_iter(self):
        return len(self.objective_trace) - 1

    @property
    def code_matrix(self):
        return np.array([c.coeffs for c in self.codes])


def _as_data(data):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        data = data[None]
    if data.ndim != 3 or data.shape[1] != data.shape[2] or data.shape[0] == 0:
        raise DimensionMismatchError(f"data must be a non-empty (N, d, d) stack, got {data.shape}")
    return data


def _as_codes(codes, N, n):
    A = np.array([c.coeffs if isinstance(c, SparseCode) else c for c in codes], dtype=np.float64)
    if A.shape != (N, n):
        raise DimensionMismatchError(f"codes must have shape ({N}, {n}), got {A.shape}")
    return A


class _DictProblem:
    """Theta(D) for fixed data and codes; whitening factors are cached."""

    def __init__(self, data, codes, lambda_dict, Z=None):
        self.data = _as_data(data)
        self.N, self.d, _ = self.data.shape
        self.A = None
        self.codes_raw = codes
        self.Z = np.stack([inv_sqrt(X) for X in self.data]) if Z is None else Z
        self.lambda_dict = float(lambda_dict)

    def bind(self, n):
        self.A = _as_codes(self.codes_raw, self.N, n)

    def _spectra(self, D):
        M = np.einsum("jn,nab->jab", self.A, D)
        W = sym(self.Z @ M @ self.Z)
        w, U = np.linalg.eigh(W)
        bad = ~((w[:, -1] > 0) & (w[:, 0] > EPS_PD * w[:, -1]))
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            raise DegenerateCombinationError(f"combination for datum {j} is not positive definite", index=j)
        return w, U

    def value(self, D):
        w, _ = self._spectra(D)
        reg = self.lambda_dict * float(np.trace(D, axis1=1, axis2=2).sum())
        return 0.5 * float(np.sum(np.log(w) ** 2)) + reg

    def value_egrad(self, D):
        w, U = self._spectra(D)
        f = 0.5 * float(np.sum(np.log(w) ** 2)) + self.lambda_dict * float(
            np.trace(D, axis1=1, axis2=2).sum()
        )
        # Z_j log(W_j) W_j^{-1} Z_j, with W_j = Z_j M_j Z_j
        K = (U * (np.log(w) / w)[:, None, :]) @ np.swapaxes(U, 1, 2)
        G = self.Z @ K @ self.Z
        egrad = np.einsum("jn,jab->nab", self.A, G) + self.lambda_dict * np.eye(self.d)
        return f, sym(egrad)


def _atoms_spd(D):
    if not np.all(np.isfinite(D)):
        return False
    w = np.linalg.eigvalsh(D)
    return bool(np.all((w[:, -1] > 0) & (w[:, 0] > EPS_PD * w[:, -1])))


def dl_objective(D, data, codes, lambda_dict=0.0):
    """``0.5 * sum_j airm(X_j, D alpha_j)**2 + lambda_dict * sum_i trace(B_i)``.

    Raises
    ------
    DegenerateCombinationError
        With ``index`` set to the first datum whose combination is not PD.
    """
    D = np.asarray(D, dtype=np.float64)
    prob = _DictProblem(data, codes, lambda_dict)
    prob.bind(D.shape[0])
    return prob.value(D)


def dl_euclidean_gradient(D, data, codes, lambda_dict=0.0):
    """Euclidean gradient of :func:`dl_objective` with respect to each atom.

    ``grad_i = sum_j alpha_j^i Z_j log(W_j) W_j^{-1} Z_j + lambda_dict * I``
    where ``Z_j = X_j^{-1/2}`` and ``W_j = Z_j (D alpha_j) Z_j``.

    Returns
    -------
    ndarray, shape (n, d, d)
    """
    D = np.asarray(D, dtype=np.float64)
    prob = _DictProblem(data, codes, lambda_dict)
    prob.bind(D.shape[0])
    return prob.value_egrad(D)[1]


def dl_riemannian_gradient(D, euclid_grads):
    """Atom-wise ``B_i G_i B_i``."""
    return product_riemannian_gradient(D, euclid_grads)


def cg_solve_dictionary(D0, data, codes, cfg=None, Z=None):
    """Minimize the dictionary objective by Riemannian conjugate gradient.

    Steps are taken with the exponential map; the previous direction and
    gradient are carried to the new point by the differentiated exponential
    map. ``mu`` follows the Polak-Ribiere form with the transported previous
    gradient, clamped at zero, and the method restarts from steepest descent
    whenever the new direction fails to descend or successive gradients lose
    orthogonality (Powell's test).

    Returns
    -------
    D : ndarray, shape (n, d, d)
    report : SolverReport
        ``status`` is ``'line_search_failure'`` if backtracking gave up; the
        last accepted dictionary is returned in that case.
    """
    cfg = DlConfig() if cfg is None else cfg
    D = sym(np.asarray(D0, dtype=np.float64))
    prob = _DictProblem(data, codes, cfg.lambda_dict, Z=Z)
    if D.ndim != 3 or D.shape[1:] != (prob.d, prob.d):
        raise DimensionMismatchError(f"dictionary shape {D.shape} does not match data dim {prob.d}")
    prob.bind(D.shape[0])

    report = SolverReport()
    t_start = time.perf_counter()
    f, egrad = prob.value_egrad(D)
    rgrad = product_riemannian_gradient(D, egrad)
    # <rgrad, rgrad>_D == sum_i trace(G_i B_i G_i B_i) == <rgrad, egrad>_I
    gg = float(np.sum(rgrad * egrad))
    report.objective.append(f)
    xi = -rgrad
    gamma = None
    status = "max_iter"
    for k in range(cfg.cg_max_iter):
        report.grad_norm.append(np.sqrt(max(gg, 0.0)))
        report.n_iter = k + 1
        if np.sqrt(max(gg, 0.0)) < cfg.cg_grad_tol:
            status = "converged"
            report.converged = True
            break
        slope = float(np.sum(egrad * xi))
        if not slope < 0:
            xi = -rgrad
            slope = -gg
            report.restarts += 1
        if gamma is None:
            gamma = 1.0 / np.sqrt(product_inner(D, xi, xi))
        else:
            gamma *= 2.0
        for _ in range(cfg.ls_max_steps):
            with np.errstate(over="ignore", under="ignore"):
                D_new = product_exp(D, gamma * xi)
            try:
                # steps that push an atom out of numerical positive
                # definiteness (underflow or overflow) are rejected
                if not _atoms_spd(D_new):
                    raise DegenerateCombinationError("retraction left the SPD cone")
                f_new = prob.value(D_new)
            except DegenerateCombinationError:
                f_new = np.inf
            if f_new <= f + cfg.armijo_c * gamma * slope:
                break
            # safeguarded quadratic interpolation of f along the curve
            denom = 2.0 * (f_new - f - gamma * slope)
            if np.isfinite(f_new) and denom > 0:
                gamma = float(np.clip(-slope * gamma * gamma / denom, 0.1 * gamma, cfg.ls_shrink * gamma))
            else:
                gamma *= cfg.ls_shrink
        else:
            status = "line_search_failure"
            break
        _, (xi_moved, grad_moved) = product_transport(D, gamma * xi, xi, rgrad)
        f_old = f
        f, egrad = prob.value_egrad(D_new)
        rgrad_new = product_riemannian_gradient(D_new, egrad)
        gg_new = float(np.sum(rgrad_new * egrad))
        cross = product_inner(D_new, rgrad_new, grad_moved)
        mu = max((gg_new - cross) / gg, 0.0) if gg > 0 else 0.0
        if abs(cross) > cfg.mu_reset_threshold * gg_new:
            mu = 0.0
        xi = -rgrad_new + mu * xi_moved
        if mu == 0.0:
            report.restarts += 1

        report.objective.append(f)
        report.stepsize.append(gamma)
        report.ls_step.append(gamma)
        report.reference.append(f_old)
        report.slope.append(slope)
        report.wall_time.append(time.perf_counter() - t_start)
        D, rgrad, gg = D_new, rgrad_new, gg_new
        if f_old - f <= cfg.cg_rel_tol * max(abs(f_old), np.finfo(float).tiny):
            status = "stalled"
            break
    report.status = status
    return D, report


# --------------------------------------------------------------------------
# initializers


def _airm_to(center, data):
    S = inv_sqrt(center)
    w = np.linalg.eigvalsh(sym(S @ data @ S))
    return np.sqrt(np.sum(np.log(w) ** 2, axis=1))


def _log_stack(data):
    w, U = np.linalg.eigh(data)
    return sym((U * np.log(w)[:, None, :]) @ np.swapaxes(U, 1, 2))


def _exp_sym(S):
    w, U = np.linalg.eigh(S)
    return sym((U * np.exp(w)) @ U.T)


def kmeans_init(data, n_atoms, metric="karcher", iters=10, random_state=None):
    """Lloyd's K-Means on SPD data; the centroids become dictionary atoms.

    Parameters
    ----------
    data : array_like, shape (N, d, d)
    n_atoms : int
        Number of clusters, at most N.
    metric : {'frobenius', 'log_euclidean', 'karcher'}
        Assignment distance and matching centroid: arithmetic mean, exp of
        the mean log, or the Karcher mean under the affine-invariant metric.
    iters : int
        Maximum number of Lloyd iterations.
    random_state : int, Generator or None

    Returns
    -------
    ndarray, shape (n_atoms, d, d)
    """
    data = _as_data(data)
    N = data.shape[0]
    if not 1 <= n_atoms <= N:
        raise ValueError(f"n_atoms must be in [1, {N}], got {n_atoms}")
    if metric not in ("frobenius", "log_euclidean", "karcher"):
        raise ValueError(f"unknown metric {metric!r}")
    rng = np.random.default_rng(random_state)
    logs = _log_stack(data) if metric == "log_euclidean" else None

    def dist_to(center_idx_or_mat):
        C = center_idx_or_mat
        if metric == "frobenius":
            return np.linalg.norm(data - C, axis=(1, 2))
        if metric == "log_euclidean":
            return np.linalg.norm(logs - C, axis=(1, 2))
        return _airm_to(C, data)

    def centroid(members):
        if metric == "frobenius":
            return sym(data[members].mean(axis=0))
        if metric == "log_euclidean":
            return sym(logs[members].mean(axis=0))
        return karcher_mean(data[members])

    init = rng.choice(N, size=n_atoms, replace=False)
    # for log_euclidean the centers live in the log domain until the end
    centers = (logs if metric == "log_euclidean" else data)[init].copy()
    labels = None
    for _ in range(max(iters, 1)):
        dists = np.stack([dist_to(C) for C in centers], axis=1)
        new_labels = np.argmin(dists, axis=1)
        counts = np.bincount(new_labels, minlength=n_atoms)
        while np.any(counts == 0):
            empty = int(np.flatnonzero(counts == 0)[0])
            own = dists[np.arange(N), new_labels]
            # only steal from clusters that keep at least one member
            own = np.where(counts[new_labels] > 1, own, -np.inf)
            far = int(np.argmax(own))
            new_labels[far] = empty
            counts = np.bincount(new_labels, minlength=n_atoms)
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
        centers = np.stack([centroid(np.flatnonzero(labels == c)) for c in range(n_atoms)])
    if metric == "log_euclidean":
        return np.stack([_exp_sym(C) for C in centers])
    return np.stack([sym(C) for C in centers])


def random_init(data, n_atoms, random_state=None, eps=1e-3):
    """Atoms are randomly chosen data points plus ``eps * mean_eig * I``."""
    data = _as_data(data)
    rng = np.random.default_rng(random_state)
    idx = rng.choice(data.shape[0], size=n_atoms, replace=n_atoms > data.shape[0])
    d = data.shape[1]
    atoms = data[idx].copy()
    shift = eps * np.trace(atoms, axis1=1, axis2=2) / d
    return sym(atoms + shift[:, None, None] * np.eye(d))


def init_dictionary(data, n_atoms, init="riem-kmeans", random_state=None, kmeans_iters=10):
    if init == "random":
        return random_init(data, n_atoms, random_state)
    metrics = {"riem-kmeans": "karcher", "le-kmeans": "log_euclidean", "frob-kmeans": "frobenius"}
    if init not in metrics:
        raise ValueError(f"init must be one of {INIT_STRATEGIES}, got {init!r}")
    return kmeans_init(data, n_atoms, metrics[init], kmeans_iters, random_state)


# --------------------------------------------------------------------------
# alternating driver


def code_batch(data, D, lam, spg_cfg=None, warm=None, n_jobs=1, whiteners=None):
    """Sparse-code every datum against a fixed dictionary.

    With ``n_jobs > 1`` the data are split into contiguous chunks solved on
    separate threads. Results are reproducible for a fixed ``n_jobs``; across
    different values they agree up to rounding.

    Returns lists of :class:`SparseCode` and :class:`SolverReport`.
    """
    data = _as_data(data)
    N = data.shape[0]
    S = np.stack([inv_sqrt(X) for X in data]) if whiteners is None else np.asarray(whiteners)
    A0 = None if warm is None else np.array([np.asarray(a, dtype=np.float64) for a in warm])
    if n_jobs == 1 or N < 2:
        return spg_solve_batch(data, D, lam, spg_cfg, A0, S)
    chunks = np.array_split(np.arange(N), min(n_jobs, N))
    out = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(spg_solve_batch)(data[c], D, lam, spg_cfg, None if A0 is None else A0[c], S[c]) for c in chunks
    )
    codes = [c for part in out for c in part[0]]
    reports = [r for part in out for r in part[1]]
    return codes, reports


def rebalance_scales(D, codes, lam, lambda_dict):
    """Rescale each atom and its coefficients so the two penalties balance.

    Replacing ``B_i`` by ``c_i B_i`` and coefficient ``i`` of every code by
    ``1 / c_i`` leaves all combinations, hence the data term, unchanged.
    ``c_i = sqrt(lam * sum_j alpha_j^i / (lambda_dict * trace(B_i)))``
    minimizes ``lam * sum_j alpha_j^i / c + lambda_dict * c * trace(B_i)``
    exactly, so the total objective cannot increase. Unused atoms and the
    case ``lam * lambda_dict == 0`` are left alone.

    Returns
    -------
    D : ndarray, shape (n, d, d)
    codes : list of SparseCode
        Objectives are updated for the new penalty values.
    """
    if lam <= 0 or lambda_dict <= 0:
        return D, codes
    A = np.array([c.coeffs for c in codes])
    usage = A.sum(axis=0)
    traces = np.trace(D, axis1=1, axis2=2)
    c = np.ones_like(usage)
    used = usage > 0
    c[used] = np.sqrt(lam * usage[used] / (lambda_dict * traces[used]))
    D = D * c[:, None, None]
    A_new = A / c
    out = []
    for code, a_old, a_new in zip(codes, A, A_new):
        objective = code.objective + lam * (a_new.sum() - a_old.sum())
        out.append(SparseCode(coeffs=a_new, lam=code.lam, objective=objective, zero_thresh_rel=code.zero_thresh_rel))
    return D, out


def total_objective(codes, D, lambda_dict):
    return float(sum(c.objective for c in codes)) + lambda_dict * float(
        np.trace(D, axis1=1, axis2=2).sum()
    )


def alternate_fit(
    data,
    n_atoms,
    lam,
    cfg=None,
    init="riem-kmeans",
    spg_cfg=None,
    random_state=None,
    n_jobs=1,
    dictionary=None,
):
    """Alternate sparse coding and dictionary updates until the total
    objective stops decreasing.

    The coding half-step warm-starts every datum from its previous code, so
    neither half-step can increase the total objective. Atoms that no code
    uses are held fixed during the dictionary half-step unless
    ``cfg.freeze_unused`` is off; their data weight is zero, so the update
    acts on the active atoms only. Iteration stops when
    the relative decrease falls below ``cfg.outer_tol`` or after
    ``cfg.outer_max_iter`` alternations.

    Parameters
    ----------
    data : array_like, shape (N, d, d)
    n_atoms : int
    lam : float
        Sparsity weight of the coding subproblem.
    cfg : DlConfig, optional
        Holds ``lambda_dict`` and the iteration controls.
    init : {'riem-kmeans', 'le-kmeans', 'frob-kmeans', 'random'}
        Ignored when ``dictionary`` is given.
    spg_cfg : SpgConfig, optional
    random_state : int, Generator or None
    n_jobs : int
        Thread count for the coding half-step.
    dictionary : ndarray, shape (n_atoms, d, d), optional
        Explicit starting dictionary.

    Returns
    -------
    FitState
    """
    cfg = DlConfig() if cfg is None else cfg
    spg_cfg = SpgConfig() if spg_cfg is None else spg_cfg
    data = _as_data(data)
    wall = {"init": 0.0, "coding": 0.0, "dictionary": 0.0}
    t0 = time.perf_counter()
    if dictionary is None:
        D = init_dictionary(data, n_atoms, init, random_state)
    else:
        D = sym(np.asarray(dictionary, dtype=np.float64))
        if D.shape != (n_atoms,) + data.shape[1:]:
            raise DimensionMismatchError("initial dictionary has the wrong shape")
    Z = np.stack([inv_sqrt(X) for X in data])
    wall["init"] += time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        codes, reps = code_batch(data, D, lam, spg_cfg, n_jobs=n_jobs, whiteners=Z)
    except (DegenerateCombinationError, SolverError) as exc:
        raise SolverError(f"sparse coding failed at outer iteration 0: {exc}", outer_iter=0) from exc
    if cfg.rebalance:
        D, codes = rebalance_scales(D, codes, lam, cfg.lambda_dict)
    wall["coding"] += time.perf_counter() - t0
    total = total_objective(codes, D, cfg.lambda_dict)
    state = FitState(dictionary=D, codes=codes, objective_trace=[(0, total)], spg_reports=[reps])
    logger.info("outer 0: objective %.6g", total)

    for it in range(1, cfg.outer_max_iter + 1):
        t0 = time.perf_counter()
        A = np.array([c.coeffs for c in codes])
        # an unused atom only feels the trace penalty, whose infimum lies on
        # the boundary of the cone, so optimizing it never settles
        active = A.sum(axis=0) > 0 if cfg.freeze_unused else np.ones(A.shape[1], dtype=bool)
        try:
            D_active, cg_rep = cg_solve_dictionary(D[active], data, A[:, active], cfg, Z=Z)
        except DegenerateCombinationError as exc:
            raise SolverError(f"dictionary update failed at outer iteration {it}: {exc}", outer_iter=it) from exc
        D = D.copy()
        D[active] = D_active
        wall["dictionary"] += time.perf_counter() - t0
        t0 = time.perf_counter()
        try:
            codes, reps = code_batch(
                data, D, lam, spg_cfg, warm=[c.coeffs for c in codes], n_jobs=n_jobs, whiteners=Z
            )
        except DegenerateCombinationError as exc:
            raise SolverError(f"sparse coding failed at outer iteration {it}: {exc}", outer_iter=it) from exc
        if cfg.rebalance:
            D, codes = rebalance_scales(D, codes, lam, cfg.lambda_dict)
        wall["coding"] += time.perf_counter() - t0
        new_total = total_objective(codes, D, cfg.lambda_dict)
        state.objective_trace.append((it, new_total))
        state.cg_reports.append(cg_rep)
        state.spg_reports.append(reps)
        state.dictionary, state.codes = D, codes
        logger.info("outer %d: objective %.6g (cg %s)", it, new_total, cg_rep.status)
        decrease = total - new_total
        total = new_total
        if decrease <= cfg.outer_tol * max(abs(new_total), np.finfo(float).tiny):
            state.converged = True
            break
    state.wall_ms = {k: 1e3 * v for k, v in wall.items()}
    return state
