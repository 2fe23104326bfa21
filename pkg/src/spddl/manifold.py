"""Riemannian geometry of the SPD cone under the affine-invariant metric,
and of the product manifold of ``n`` SPD atoms (a dictionary).

Single points are ``(d, d)`` arrays; product points and product tangents are
``(n, d, d)`` arrays with atom order preserved.
"""

import warnings
from typing import NamedTuple

import numpy as np

from .exceptions import ConvergenceWarning, DimensionMismatchError, NotPositiveDefiniteError
from .linalg import (
    EPS_PD,
    _check_same_dim,
    _check_square,
    _spd_factor,
    frechet_exp,
    matrix_exp,
    sym,
)


class TangentVector(NamedTuple):
    """A symmetric direction attached to an SPD foot point."""

    foot: np.ndarray
    direction: np.ndarray


def _sqrt_pair(P):
    w, V = _spd_factor(P, "P")
    s = np.sqrt(w)
    return sym((V * s) @ V.T), sym((V / s) @ V.T)


def exp_map(P, S):
    """Exponential map ``P^{1/2} expm(P^{-1/2} S P^{-1/2}) P^{1/2}``.

    The image is SPD for every symmetric ``S``; only the foot is validated.
    """
    P = _check_square(P, "P")
    S = _check_square(S, "S")
    _check_same_dim(P, S)
    Ph, Pih = _sqrt_pair(P)
    return sym(Ph @ matrix_exp(Pih @ S @ Pih) @ Ph)


def log_map(P, Q):
    """Logarithmic map at ``P``; the inverse of :func:`exp_map`."""
    P = _check_square(P, "P")
    Q = _check_square(Q, "Q")
    _check_same_dim(P, Q)
    Ph, Pih = _sqrt_pair(P)
    w, V = _spd_factor(Pih @ Q @ Pih, "P^{-1/2} Q P^{-1/2}")
    return sym(Ph @ ((V * np.log(w)) @ V.T) @ Ph)


def riemannian_gradient(P, euclid_grad):
    """Convert a Euclidean gradient to the Riemannian one: ``P G P``."""
    P = _check_square(P, "P")
    G = _check_square(euclid_grad, "euclid_grad")
    _check_same_dim(P, G)
    return sym(P @ G @ P)


def vector_transport(P, Z1, Z2):
    """Transport ``Z2`` along the step ``Z1`` taken from ``P``.

    The transported vector is ``d/dt exp_map(P, Z1 + t Z2)`` at ``t = 0``,
    attached to the foot ``exp_map(P, Z1)``.
    """
    P = _check_square(P, "P")
    Z1 = _check_square(Z1, "Z1")
    Z2 = _check_square(Z2, "Z2")
    _check_same_dim(P, Z1, Z2)
    Ph, Pih = _sqrt_pair(P)
    A = sym(Pih @ Z1 @ Pih)
    foot = sym(Ph @ matrix_exp(A) @ Ph)
    direction = sym(Ph @ frechet_exp(A, sym(Pih @ Z2 @ Pih)) @ Ph)
    return TangentVector(foot, direction)


def karcher_mean(points, tol=1e-8, max_iter=100, return_converged=False):
    """Frechet mean of SPD matrices under the affine-invariant metric.

    Fixed-point iteration ``mu <- exp_mu(mean_i log_mu(X_i))`` with unit
    step, started from the arithmetic mean, stopped once the Riemannian norm
    of the mean tangent drops below ``tol``.

    Parameters
    ----------
    points : array_like, shape (N, d, d)
    tol : float
    max_iter : int
    return_converged : bool
        If True also return a flag telling whether ``tol`` was reached.

    Returns
    -------
    mean : ndarray, shape (d, d)
        The last iterate if convergence failed (a ConvergenceWarning is
        emitted as well).
    converged : bool, optional
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 3 or points.shape[0] == 0:
        raise DimensionMismatchError("points must be a non-empty (N, d, d) stack")
    if points.shape[0] == 1:
        mu = sym(points[0])
        return (mu, True) if return_converged else mu
    mu = sym(points.mean(axis=0))
    converged = False
    for _ in range(max_iter):
        Ph, Pih = _sqrt_pair(mu)
        # work in whitened coordinates: the mean tangent is Ph T Ph with T below
        T = np.zeros_like(mu)
        for X in points:
            w, V = _spd_factor(Pih @ X @ Pih, "whitened point")
            T += (V * np.log(w)) @ V.T
        T = sym(T / points.shape[0])
        # ||Ph T Ph||_mu == ||T||_F
        if np.linalg.norm(T) < tol:
            converged = True
            break
        mu = sym(Ph @ matrix_exp(T) @ Ph)
    if not converged:
        warnings.warn(
            f"Karcher mean did not reach tol={tol} in {max_iter} iterations",
            ConvergenceWarning,
        )
    return (mu, converged) if return_converged else mu


def _check_product(D, name="D"):
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 3 or D.shape[0] == 0 or D.shape[1] != D.shape[2]:
        raise DimensionMismatchError(f"{name} must be a non-empty (n, d, d) stack, got {D.shape}")
    return D


def product_inner(D, Z1, Z2):
    """Product-manifold metric: sum over atoms of the per-atom inner products."""
    D = _check_product(D)
    Z1 = _check_product(Z1, "Z1")
    Z2 = _check_product(Z2, "Z2")
    if not D.shape == Z1.shape == Z2.shape:
        raise DimensionMismatchError("product point and tangents must share shape")
    Dinv = np.linalg.inv(D)
    # fixed summation order: per-atom traces first, then over atoms
    per_atom = np.einsum("nij,nji->n", Dinv @ Z1, Dinv @ Z2)
    return float(np.sum(per_atom))


def _batched_sqrt_pair(D):
    w, V = np.linalg.eigh(D)
    if np.any(w[:, 0] <= EPS_PD * w[:, -1]) or np.any(w[:, -1] <= 0):
        raise NotPositiveDefiniteError("product point has a non-SPD atom")
    s = np.sqrt(w)[:, None, :]
    Vt = np.swapaxes(V, 1, 2)
    return sym((V * s) @ Vt), sym((V / s) @ Vt)


def _exp_divided_differences(w):
    # Gamma_ij = (e^{w_i} - e^{w_j}) / (w_i - w_j), e^{w_i} on ties
    delta = w[..., :, None] - w[..., None, :]
    safe = np.where(delta == 0.0, 1.0, delta)
    ratio = np.where(delta == 0.0, 1.0, np.expm1(delta) / safe)
    return np.exp(w)[..., None, :] * ratio


def product_exp(D, Z):
    """Atom-wise :func:`exp_map` on a stack of atoms."""
    D = _check_product(D)
    Z = _check_product(Z, "Z")
    Ph, Pih = _batched_sqrt_pair(D)
    w, U = np.linalg.eigh(sym(Pih @ Z @ Pih))
    E = (U * np.exp(w)[:, None, :]) @ np.swapaxes(U, 1, 2)
    return sym(Ph @ E @ Ph)


def product_riemannian_gradient(D, G):
    D = _check_product(D)
    G = _check_product(G, "G")
    return sym(D @ G @ D)


def product_transport(D, Z1, *Z2s):
    """Atom-wise :func:`vector_transport` of one or more tangents along ``Z1``.

    The derivative of the exponential is taken in the eigenbasis of the
    whitened step (Daleckii-Krein divided differences), which lets every
    transported tangent reuse a single batched eigendecomposition.

    Returns
    -------
    feet : ndarray, shape (n, d, d)
        ``product_exp(D, Z1)``.
    directions : list of ndarray
        One transported tangent per entry of ``Z2s``.
    """
    D = _check_product(D)
    Z1 = _check_product(Z1, "Z1")
    Ph, Pih = _batched_sqrt_pair(D)
    w, U = np.linalg.eigh(sym(Pih @ Z1 @ Pih))
    Ut = np.swapaxes(U, 1, 2)
    feet = sym(Ph @ ((U * np.exp(w)[:, None, :]) @ Ut) @ Ph)
    gamma = _exp_divided_differences(w)
    directions = []
    for Z2 in Z2s:
        Z2 = _check_product(Z2, "Z2")
        inner = Ut @ (Pih @ Z2 @ Pih) @ U
        directions.append(sym(Ph @ (U @ (inner * gamma) @ Ut) @ Ph))
    return feet, directions
