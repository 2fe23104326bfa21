"""Nonnegative sparse coding of an SPD matrix over a dictionary of SPD atoms.

The loss is half the squared affine-invariant distance between the datum
``X`` and the conic combination ``M(alpha) = sum_i alpha_i B_i`` plus
``lam * sum(alpha)``. It is minimized over ``alpha >= 0`` by spectral
projected gradient (Barzilai-Borwein steps, nonmonotone Armijo search).
"""

import time
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .exceptions import DegenerateCombinationError, DegenerateStartError, DimensionMismatchError
from .linalg import EPS_PD, _check_square, inv_sqrt, sym

#: Coefficients at or below this fraction of max(alpha) count as zero.
ZERO_THRESH_REL = 1e-6


@dataclass
class SpgConfig:
    max_iter: int = 100
    eta_min: float = 1e-10
    eta_max: float = 1e10
    history: int = 10
    armijo_c: float = 1e-4
    grad_tol: float = 1e-6
    min_ls_step: float = 1e-12

    def __post_init__(self):
        if not 0 < self.eta_min < self.eta_max:
            raise ValueError("need 0 < eta_min < eta_max")
        if self.history < 1:
            raise ValueError("history must be >= 1")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")


@dataclass
class SolverReport:
    """Per-iteration trace of an iterative solve.

    ``objective[0]`` is the value at the starting point; entry ``k + 1``
    belongs to the k-th accepted step, as do ``stepsize``, ``ls_step``,
    ``reference`` (the value the sufficient-decrease test compared against)
    and ``slope`` (directional derivative along the search direction).
    ``grad_norm[k]`` is measured at iterate ``k``.
    """

    objective: List[float] = field(default_factory=list)
    grad_norm: List[float] = field(default_factory=list)
    stepsize: List[float] = field(default_factory=list)
    ls_step: List[float] = field(default_factory=list)
    reference: List[float] = field(default_factory=list)
    slope: List[float] = field(default_factory=list)
    wall_time: List[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False
    status: str = ""
    restarts: int = 0

    @property
    def n_accepted(self):
        return len(self.objective) - 1


@dataclass
class SparseCode:
    coeffs: np.ndarray
    lam: float
    objective: float = float("nan")
    zero_thresh_rel: float = ZERO_THRESH_REL

    @property
    def sparsity(self):
        """Fraction of coefficients above ``zero_thresh_rel * max(coeffs)``."""
        a = np.asarray(self.coeffs)
        top = a.max() if a.size else 0.0
        if top <= 0:
            return 0.0
        return float(np.count_nonzero(a > self.zero_thresh_rel * top)) / a.size


def _check_dictionary(D, d=None):
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 3 or D.shape[0] == 0 or D.shape[1] != D.shape[2]:
        raise DimensionMismatchError(f"dictionary must be a non-empty (n, d, d) stack, got {D.shape}")
    if d is not None and D.shape[1] != d:
        raise DimensionMismatchError(f"atoms are {D.shape[1]}x{D.shape[1]}, data is {d}x{d}")
    return D


def _check_alpha(alpha, n):
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (n,):
        raise DimensionMismatchError(f"alpha must have shape ({n},), got {alpha.shape}")
    return alpha


def combine(D, alpha):
    """Conic combination ``sum_i alpha_i D[i]``."""
    D = np.asarray(D, dtype=np.float64)
    n, d, _ = D.shape
    return sym((np.asarray(alpha, dtype=np.float64) @ D.reshape(n, d * d)).reshape(d, d))


class _CodingProblem:
    """Caches the whitening of ``X`` and a flat view of the atoms."""

    def __init__(self, X, D, lam, S=None):
        X = _check_square(X, "X")
        self.D = _check_dictionary(D, X.shape[0])
        self.n, self.d, _ = self.D.shape
        self.flat = self.D.reshape(self.n, self.d * self.d)
        self.S = inv_sqrt(X) if S is None else S
        self.lam = float(lam)

    def _whitened(self, alpha):
        M = sym((alpha @ self.flat).reshape(self.d, self.d))
        W = sym(self.S @ M @ self.S)
        w, U = np.linalg.eigh(W)
        if not (w[-1] > 0 and w[0] > EPS_PD * w[-1]):
            raise DegenerateCombinationError(
                f"combination is not positive definite (min eigenvalue {w[0]:.3e})"
            )
        return M, w, U

    def data_value(self, alpha):
        _, w, _ = self._whitened(alpha)
        return 0.5 * float(np.sum(np.log(w) ** 2))

    def value(self, alpha):
        return self.data_value(alpha) + self.lam * float(np.sum(alpha))

    def _alg1_T(self, M, w, U):
        # T = S log(SMS) (MS)^{-1}; solve (MS)^T T^T = (S log(SMS))^T
        L = (U * np.log(w)) @ U.T
        return np.linalg.solve(self.S @ M, L @ self.S).T

    def value_grad(self, alpha):
        M, w, U = self._whitened(alpha)
        f = 0.5 * float(np.sum(np.log(w) ** 2)) + self.lam * float(np.sum(alpha))
        g = self.flat @ self._alg1_T(M, w, U).T.ravel() + self.lam
        return f, g


def sc_objective(X, D, alpha, lam=0.0):
    """``0.5 * airm(X, M(alpha))**2 + lam * sum(alpha)``.

    Raises
    ------
    DegenerateCombinationError
        If ``M(alpha)`` is not numerically positive definite.
    """
    prob = _CodingProblem(X, D, lam)
    return prob.value(_check_alpha(alpha, prob.n))


def sc_gradient_fast(X, D, alpha, lam=0.0):
    """Gradient of :func:`sc_objective` in ``O(n d^2 + d^3)``.

    With ``S = X^{-1/2}`` and ``M = sum_i alpha_i B_i`` form the single
    matrix ``T = S log(SMS) (MS)^{-1}``; coordinate ``i`` of the data-term
    gradient is then ``trace(T B_i)``.
    """
    prob = _CodingProblem(X, D, lam)
    alpha = _check_alpha(alpha, prob.n)
    M, w, U = prob._whitened(alpha)
    T = prob._alg1_T(M, w, U)
    # trace(T B_i) for every atom as one matrix-vector product
    return prob.flat @ T.T.ravel() + prob.lam


def sc_gradient_naive(X, D, alpha, lam=0.0):
    """Coordinate-by-coordinate gradient, ``O(n d^3)``. Reference only.

    ``d phi / d alpha_p = trace(log(SMS) (SMS)^{-1} S B_p S) + lam``.
    """
    prob = _CodingProblem(X, D, lam)
    alpha = _check_alpha(alpha, prob.n)
    _, w, U = prob._whitened(alpha)
    S = prob.S
    L = (U * np.log(w)) @ U.T
    Winv = (U / w) @ U.T
    return np.array([np.trace(L @ Winv @ S @ B @ S) for B in prob.D]) + prob.lam


def scalar_derivative(B, C, X, x):
    """Derivative of ``f(x) = airm(xB + C, X)**2`` (no factor one half).

    ``f'(x) = 2 trace(log(S(xB+C)S) S^{-1} (xB+C)^{-1} B S)`` with
    ``S = X^{-1/2}``.
    """
    B = _check_square(B, "B")
    C = _check_square(C, "C")
    S = inv_sqrt(X)
    M = x * B + C
    W = sym(S @ M @ S)
    w, U = np.linalg.eigh(W)
    if not (w[-1] > 0 and w[0] > EPS_PD * w[-1]):
        raise DegenerateCombinationError("xB + C is not positive definite")
    L = (U * np.log(w)) @ U.T
    Sinv = np.linalg.inv(S)
    return 2.0 * float(np.trace(L @ Sinv @ np.linalg.solve(M, B) @ S))


def project_nonneg(alpha):
    """Euclidean projection onto the nonnegative orthant."""
    return np.maximum(np.asarray(alpha, dtype=np.float64), 0.0)


def default_init(X, D):
    """Uniform positive code whose combination has the same trace as ``X``."""
    D = np.asarray(D, dtype=np.float64)
    traces = np.trace(D, axis1=1, axis2=2)
    return np.full(D.shape[0], np.trace(X) / traces.sum())


def _batch_value_grad(A, flat, S, lam, d):
    """Objective and gradient for every row of ``A`` at once.

    Rows whose combination is not numerically positive definite get
    ``f = inf`` and a NaN gradient. Uses ``T = S log(W) W^{-1} S`` with
    ``W = SMS``, which equals ``S log(SMS) (MS)^{-1}`` and skips the solve.
    """
    m = A.shape[0]
    M = (A @ flat).reshape(m, d, d)
    W = S @ M @ S
    w, U = np.linalg.eigh(W)
    ok = (w[:, -1] > 0) & (w[:, 0] > EPS_PD * w[:, -1])
    w = np.where(ok[:, None], w, 1.0)
    lw = np.log(w)
    f = 0.5 * np.einsum("ij,ij->i", lw, lw) + lam * A.sum(axis=1)
    K = (U * (lw / w)[:, None, :]) @ np.swapaxes(U, 1, 2)
    T = S @ K @ S
    g = T.reshape(m, d * d) @ flat.T + lam
    f[~ok] = np.inf
    g[~ok] = np.nan
    return f, g


def spg_solve_batch(data, D, lam, cfg=None, alpha0=None, S=None):
    """Sparse-code a stack of data by spectral projected gradient.

    The solves are independent and advance in lockstep so that every
    evaluation is one batched eigendecomposition. Each datum follows the
    single-datum algorithm exactly: projected Barzilai-Borwein direction,
    nonmonotone Armijo backtracking against the maximum of the last
    ``cfg.history`` objective values, safeguarded quadratic interpolation
    of the trial step.

    Parameters
    ----------
    data : ndarray, shape (N, d, d)
    D : ndarray, shape (n, d, d)
    lam : float
    cfg : SpgConfig, optional
    alpha0 : ndarray, shape (N, n), optional
        Warm starts. Rows that are not usable fall back to :func:`default_init`.
    S : ndarray, shape (N, d, d), optional
        Precomputed ``X^{-1/2}`` for every datum.

    Returns
    -------
    codes : list of SparseCode
        The lowest-objective iterate of each solve, so the returned value
        never exceeds the value at the start.
    reports : list of SolverReport

    Raises
    ------
    DegenerateStartError
        If some datum has no positive definite starting combination.
    """
    cfg = SpgConfig() if cfg is None else cfg
    if lam < 0:
        raise ValueError("lam must be >= 0")
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 3 or data.shape[1] != data.shape[2]:
        raise DimensionMismatchError(f"data must be an (N, d, d) stack, got {data.shape}")
    N, d, _ = data.shape
    D = _check_dictionary(D, d)
    n = D.shape[0]
    flat = D.reshape(n, d * d)
    S = np.stack([inv_sqrt(X) for X in data]) if S is None else np.asarray(S, dtype=np.float64)
    lam = float(lam)
    t_start = time.perf_counter()

    traces = np.trace(D, axis1=1, axis2=2).sum()
    fallback = (np.trace(data, axis1=1, axis2=2) / traces)[:, None] * np.ones((1, n))
    if alpha0 is None:
        alpha = fallback
    else:
        alpha = project_nonneg(np.asarray(alpha0, dtype=np.float64).reshape(N, n))
    f, g = _batch_value_grad(alpha, flat, S, lam, d)
    bad = ~np.isfinite(f)
    if bad.any() and alpha0 is not None:
        alpha[bad] = fallback[bad]
        f[bad], g[bad] = _batch_value_grad(alpha[bad], flat, S[bad], lam, d)
        bad = ~np.isfinite(f)
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        raise DegenerateStartError(f"no starting code for datum {j} gives a positive definite combination")

    reports = [SolverReport() for _ in range(N)]
    for j in range(N):
        reports[j].objective.append(float(f[j]))
    status = ["max_iter"] * N
    best_f, best_a = f.copy(), alpha.copy()
    hist = np.full((N, cfg.history), -np.inf)
    hist[:, 0] = f
    n_hist = np.ones(N, dtype=int)
    gmax = np.abs(g).max(axis=1)
    eta = np.where(gmax > 0, alpha.max(axis=1) / np.where(gmax > 0, gmax, 1.0), 1.0)
    eta = np.clip(eta, cfg.eta_min, cfg.eta_max)
    active = np.ones(N, dtype=bool)

    for k in range(cfg.max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        a, gk = alpha[idx], g[idx]
        pg = np.abs(project_nonneg(a - gk) - a).max(axis=1)
        for j, v in zip(idx, pg):
            reports[j].grad_norm.append(float(v))
        done = pg < cfg.grad_tol
        for j in idx[done]:
            status[j] = "converged"
            reports[j].converged = True
        if k == cfg.max_iter:
            break
        direction = project_nonneg(a - eta[idx, None] * gk) - a
        slope = np.einsum("ij,ij->i", gk, direction)
        for j in idx[~done & ~(slope < 0)]:
            status[j] = "no_descent"
        keep = ~done & (slope < 0)
        active[idx[~keep]] = False
        idx, a, gk, direction, slope = idx[keep], a[keep], gk[keep], direction[keep], slope[keep]
        if idx.size == 0:
            break
        f_cur = f[idx]
        f_ref = hist[idx].max(axis=1)
        t = np.ones(idx.size)
        f_acc = np.empty(idx.size)
        g_acc = np.empty((idx.size, n))
        searching = np.ones(idx.size, dtype=bool)
        failed = np.zeros(idx.size, dtype=bool)
        while searching.any():
            s_idx = np.flatnonzero(searching)
            ts = t[s_idx]
            trial = a[s_idx] + ts[:, None] * direction[s_idx]
            f_new, g_new = _batch_value_grad(trial, flat, S[idx[s_idx]], lam, d)
            ok = f_new <= f_ref[s_idx] + cfg.armijo_c * ts * slope[s_idx]
            acc = s_idx[ok]
            f_acc[acc], g_acc[acc] = f_new[ok], g_new[ok]
            searching[acc] = False
            rej = ~ok
            r_idx = s_idx[rej]
            tr, fr, sl = ts[rej], f_new[rej], slope[r_idx]
            finite = np.isfinite(fr)
            denom = 2.0 * (np.where(finite, fr, 0.0) - f_cur[r_idx] - tr * sl)
            t_q = np.where(denom > 0, -sl * tr * tr / np.where(denom > 0, denom, 1.0), 0.5 * tr)
            t_new = np.where(finite, np.clip(t_q, 0.1 * tr, 0.5 * tr), 0.1 * tr)
            t[r_idx] = t_new
            fail = t_new < cfg.min_ls_step
            failed[r_idx[fail]] = True
            searching[r_idx[fail]] = False
        for j in idx[failed]:
            status[j] = "line_search_failure"
        active[idx[failed]] = False
        ok = ~failed
        idx, a, gk, t, slope, f_ref = idx[ok], a[ok], gk[ok], t[ok], slope[ok], f_ref[ok]
        f_acc, g_acc, direction = f_acc[ok], g_acc[ok], direction[ok]
        if idx.size == 0:
            continue
        s = t[:, None] * direction
        y = g_acc - gk
        sty = np.einsum("ij,ij->i", s, y)
        sts = np.einsum("ij,ij->i", s, s)
        eta_used = eta[idx]
        eta[idx] = np.where(sty > 0, np.clip(sts / np.where(sty > 0, sty, 1.0), cfg.eta_min, cfg.eta_max), 1.0)
        alpha[idx] = a + s
        f[idx], g[idx] = f_acc, g_acc
        hist[idx, n_hist[idx] % cfg.history] = f_acc
        n_hist[idx] += 1
        better = f_acc < best_f[idx]
        best_f[idx[better]] = f_acc[better]
        best_a[idx[better]] = alpha[idx[better]]
        now = time.perf_counter() - t_start
        for p, j in enumerate(idx):
            rep = reports[j]
            rep.objective.append(float(f_acc[p]))
            rep.stepsize.append(float(eta_used[p]))
            rep.ls_step.append(float(t[p]))
            rep.reference.append(float(f_ref[p]))
            rep.slope.append(float(slope[p]))
            rep.wall_time.append(now)

    codes = []
    for j in range(N):
        reports[j].n_iter = len(reports[j].objective) - 1
        reports[j].status = status[j]
        codes.append(SparseCode(coeffs=best_a[j].copy(), lam=lam, objective=float(best_f[j])))
    return codes, reports


def spg_solve(X, D, lam, cfg=None, alpha0=None, S=None):
    """Sparse-code ``X`` over the atoms ``D`` by spectral projected gradient.

    Parameters
    ----------
    X : ndarray, shape (d, d)
        SPD datum.
    D : ndarray, shape (n, d, d)
        SPD atoms.
    lam : float
        Weight of the ``sum(alpha)`` penalty.
    cfg : SpgConfig, optional
    alpha0 : ndarray, shape (n,), optional
        Starting code, nonnegative with a positive definite combination.
        Falls back to :func:`default_init` when unusable.
    S : ndarray, optional
        Precomputed ``X^{-1/2}``.

    Returns
    -------
    code : SparseCode
        Lowest-objective iterate.
    report : SolverReport

    Raises
    ------
    DegenerateStartError
        When neither ``alpha0`` nor the default start gives a positive
        definite combination.
    """
    X = _check_square(X, "X")
    D = _check_dictionary(D, X.shape[0])
    if alpha0 is not None:
        alpha0 = _check_alpha(alpha0, D.shape[0])[None]
    codes, reports = spg_solve_batch(X[None], D, lam, cfg, alpha0, None if S is None else np.asarray(S)[None])
    return codes[0], reports[0]


def check_conic_feasible(X, D, alpha, tol=1e-10):
    """True iff ``alpha >= 0`` and ``sum_i alpha_i B_i <= X`` in Loewner order."""
    X = _check_square(X, "X")
    D = _check_dictionary(D, X.shape[0])
    alpha = _check_alpha(alpha, D.shape[0])
    if np.any(alpha < 0):
        return False
    S = inv_sqrt(X)
    lam_max = np.linalg.eigvalsh(sym(S @ combine(D, alpha) @ S))[-1]
    return bool(lam_max <= 1.0 + tol)


def hessian_fd(X, D, alpha, h=1e-5):
    """Central-difference Hessian of the data term (penalty excluded).

    Column ``q`` is ``(grad(alpha + h e_q) - grad(alpha - h e_q)) / 2h``;
    the result is symmetrized.
    """
    prob = _CodingProblem(X, D, 0.0)
    alpha = _check_alpha(alpha, prob.n)
    H = np.empty((prob.n, prob.n))
    for q in range(prob.n):
        e = np.zeros(prob.n)
        e[q] = h
        H[:, q] = (prob.value_grad(alpha + e)[1] - prob.value_grad(alpha - e)[1]) / (2 * h)
    return sym(H)
