"""Dense SPD linear algebra: spectral matrix functions, Frechet derivatives
and the similarity measures used throughout the package.

Every matrix function goes through a full symmetric eigendecomposition and
every result that is symmetric in exact arithmetic is explicitly
symmetrized before it is returned.
"""

from typing import Callable, NamedTuple

import numpy as np
from scipy.linalg import expm

from .exceptions import (
    DimensionMismatchError,
    MatrixOverflowError,
    NotPositiveDefiniteError,
    QuadratureUnderResolvedError,
)

#: Relative eigenvalue floor: an SPD matrix needs lambda_min > EPS_PD * lambda_max.
EPS_PD = 1e-12
#: Relative asymmetry tolerated by :func:`check_sym` before symmetrizing.
SYM_TOL = 1e-8

_LOG_MAX = np.log(np.finfo(np.float64).max)


class EigenFactorization(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def sym(M):
    """Return ``(M + M.T) / 2`` (last two axes), which is bitwise symmetric."""
    M = np.asarray(M, dtype=np.float64)
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _check_square(X, name):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != X.shape[1] or X.shape[0] == 0:
        raise DimensionMismatchError(
            f"{name} must be a non-empty square matrix, got shape {X.shape}"
        )
    return X


def _check_same_dim(*mats):
    shapes = {m.shape for m in mats}
    if len(shapes) != 1:
        raise DimensionMismatchError(f"dimension mismatch: {sorted(shapes)}")


def check_sym(X, name="X", tol=SYM_TOL):
    """Validate a symmetric matrix and return its exactly symmetrized copy."""
    X = _check_square(X, name)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite entries")
    scale = max(np.abs(X).max(), 1.0)
    if np.abs(X - X.T).max() > tol * scale:
        raise ValueError(f"{name} is not symmetric")
    return sym(X)


def eig_factor(X):
    """Symmetric eigendecomposition with eigenvalues in ascending order."""
    w, V = np.linalg.eigh(X)
    return EigenFactorization(w, V)


def _is_pd_spectrum(w, eps_pd):
    return w[-1] > 0 and w[0] > eps_pd * w[-1]


def check_spd(X, name="X", policy="strict", eps_pd=EPS_PD):
    """Validate an SPD matrix.

    Parameters
    ----------
    X : array_like, shape (d, d)
        Candidate matrix. It must be symmetric up to ``SYM_TOL``.
    name : str
        Used in error messages.
    policy : {'strict', 'clamp'}
        ``'strict'`` raises :class:`NotPositiveDefiniteError` when the
        smallest eigenvalue is at or below ``eps_pd * lambda_max``.
        ``'clamp'`` floors the eigenvalues at that level instead.
    eps_pd : float
        Relative eigenvalue floor.

    Returns
    -------
    X : ndarray, shape (d, d)
        Exactly symmetric SPD matrix.
    """
    X = check_sym(X, name)
    w, V = np.linalg.eigh(X)
    if _is_pd_spectrum(w, eps_pd):
        return X
    if policy == "strict":
        raise NotPositiveDefiniteError(
            f"{name} is not positive definite (eigenvalues in [{w[0]:.3e}, {w[-1]:.3e}])"
        )
    if policy != "clamp":
        raise ValueError(f"unknown PD policy {policy!r}")
    if w[-1] <= 0:
        raise NotPositiveDefiniteError(f"{name} has no positive eigenvalue to clamp against")
    floor = eps_pd * w[-1]
    # clamp strictly above the floor so the repaired matrix passes the strict check
    w = np.maximum(w, 2.0 * floor)
    return sym((V * w) @ V.T)


def _spd_factor(X, name, eps_pd=EPS_PD):
    X = _check_square(X, name)
    w, V = np.linalg.eigh(sym(X))
    if not _is_pd_spectrum(w, eps_pd):
        raise NotPositiveDefiniteError(
            f"{name} is not positive definite (eigenvalues in [{w[0]:.3e}, {w[-1]:.3e}])"
        )
    return w, V


def _apply(w, V, fun: Callable[[np.ndarray], np.ndarray]):
    return sym((V * fun(w)) @ V.T)


def matrix_log(X, eps_pd=EPS_PD):
    """Principal logarithm of an SPD matrix."""
    w, V = _spd_factor(X, "X", eps_pd)
    return _apply(w, V, np.log)


def matrix_exp(S):
    """Exponential of a symmetric matrix (always SPD)."""
    S = _check_square(S, "S")
    w, V = np.linalg.eigh(sym(S))
    if w[-1] > _LOG_MAX:
        raise MatrixOverflowError(f"eigenvalue {w[-1]:.3e} overflows exp")
    return _apply(w, V, np.exp)


def sqrtm(X, eps_pd=EPS_PD):
    w, V = _spd_factor(X, "X", eps_pd)
    return _apply(w, V, np.sqrt)


def inv_sqrt(X, eps_pd=EPS_PD):
    """Return ``X^{-1/2}``, the congruence that whitens ``X`` to the identity."""
    w, V = _spd_factor(X, "X", eps_pd)
    return _apply(w, V, lambda v: 1.0 / np.sqrt(v))


def invm(X, eps_pd=EPS_PD):
    w, V = _spd_factor(X, "X", eps_pd)
    return _apply(w, V, np.reciprocal)


def frechet_exp(A, E):
    """Frechet derivative of the matrix exponential at ``A`` in direction ``E``.

    Uses the block identity ``expm([[A, E], [0, A]]) = [[e^A, L], [0, e^A]]``
    where ``L`` is the derivative.
    """
    A = _check_square(A, "A")
    E = _check_square(E, "E")
    _check_same_dim(A, E)
    d = A.shape[0]
    block = np.zeros((2 * d, 2 * d))
    block[:d, :d] = A
    block[d:, d:] = A
    block[:d, d:] = E
    return sym(expm(block)[:d, d:])


def _gauss_legendre_01(nodes):
    x, w = np.polynomial.legendre.leggauss(nodes)
    return 0.5 * (x + 1.0), 0.5 * w


def _log_derivative_quad(w, V, E, nodes):
    # in the eigenbasis of Z the integrand is elementwise:
    # Et_ij / ((b w_i + 1 - b)(b w_j + 1 - b))
    Et = V.T @ E @ V
    beta, weights = _gauss_legendre_01(nodes)
    denom = beta[:, None] * w[None, :] + (1.0 - beta[:, None])
    kernel = np.einsum("k,ki,kj->ij", weights, 1.0 / denom, 1.0 / denom)
    return sym(V @ (Et * kernel) @ V.T)


def frechet_log_quadrature(Z, E, nodes=32, rtol=1e-6):
    """Frechet derivative of the matrix logarithm by Gauss-Legendre quadrature.

    Evaluates ``int_0^1 (bZ + (1-b)I)^{-1} E (bZ + (1-b)I)^{-1} db`` with
    ``nodes`` points and again with ``2 * nodes``; if the two disagree by
    more than ``rtol`` (relative, Frobenius) the rule is considered too coarse.

    Raises
    ------
    QuadratureUnderResolvedError
        When doubling the node count moves the result by more than ``rtol``.
    """
    if nodes < 1:
        raise ValueError("nodes must be >= 1")
    w, V = _spd_factor(Z, "Z")
    E = check_sym(E, "E")
    if E.shape != (w.size, w.size):
        raise DimensionMismatchError("Z and E must have the same shape")
    coarse = _log_derivative_quad(w, V, E, nodes)
    fine = _log_derivative_quad(w, V, E, 2 * nodes)
    scale = max(np.linalg.norm(fine), np.finfo(float).tiny)
    if np.linalg.norm(fine - coarse) > rtol * scale:
        raise QuadratureUnderResolvedError(
            f"{nodes} nodes insufficient (relative change {np.linalg.norm(fine - coarse) / scale:.2e})"
        )
    return coarse


def metric_inner(P, Z1, Z2):
    """Affine-invariant inner product ``trace(P^{-1} Z1 P^{-1} Z2)`` at ``P``."""
    P = _check_square(P, "P")
    Z1 = _check_square(Z1, "Z1")
    Z2 = _check_square(Z2, "Z2")
    _check_same_dim(P, Z1, Z2)
    Pinv = invm(P)
    # trace(AB) == sum(A * B.T), with (P^{-1} Z2).T == Z2 P^{-1}
    return float(np.sum((Pinv @ Z1) * (Z2 @ Pinv)))


def airm_distance(X, Y, squared=False):
    """Affine-invariant Riemannian distance ``||log(X^{-1/2} Y X^{-1/2})||_F``."""
    X = _check_square(X, "X")
    Y = _check_square(Y, "Y")
    _check_same_dim(X, Y)
    S = inv_sqrt(X)
    w, _ = _spd_factor(S @ Y @ S, "X^{-1/2} Y X^{-1/2}")
    d2 = float(np.sum(np.log(w) ** 2))
    return d2 if squared else np.sqrt(d2)


def le_distance(X, Y):
    """Log-Euclidean distance ``||log X - log Y||_F``."""
    X = _check_square(X, "X")
    Y = _check_square(Y, "Y")
    _check_same_dim(X, Y)
    return float(np.linalg.norm(matrix_log(X) - matrix_log(Y)))


def _logdet_spd(X, name):
    w, _ = _spd_factor(X, name)
    return float(np.sum(np.log(w)))


def stein_divergence(X, Y):
    """Jensen-Bregman LogDet (Stein) divergence."""
    X = _check_square(X, "X")
    Y = _check_square(Y, "Y")
    _check_same_dim(X, Y)
    val = _logdet_spd(0.5 * (X + Y), "(X+Y)/2") - 0.5 * (
        _logdet_spd(X, "X") + _logdet_spd(Y, "Y")
    )
    return max(val, 0.0)


def burg_divergence(X, Y):
    """Burg (LogDet) matrix divergence ``tr(XY^{-1}) - logdet(XY^{-1}) - d``."""
    X = _check_square(X, "X")
    Y = _check_square(Y, "Y")
    _check_same_dim(X, Y)
    S = inv_sqrt(Y)
    w, _ = _spd_factor(S @ X @ S, "Y^{-1/2} X Y^{-1/2}")
    return max(float(np.sum(w - np.log(w) - 1.0)), 0.0)
