"""Retrieval and sparsity metrics on sparse codes."""

import numpy as np

from .sparse_coding import ZERO_THRESH_REL, SparseCode


def _neighbor_order(gallery_codes, query_codes):
    G = np.asarray(gallery_codes, dtype=np.float64)
    Q = np.asarray(query_codes, dtype=np.float64)
    if G.ndim != 2 or Q.ndim != 2 or G.shape[1] != Q.shape[1]:
        raise ValueError("codes must be 2-D arrays with equal code length")
    d2 = (Q ** 2).sum(1)[:, None] + (G ** 2).sum(1)[None, :] - 2.0 * Q @ G.T
    # stable sort: equal distances keep gallery order
    return np.argsort(np.maximum(d2, 0.0), axis=1, kind="stable")


def recall_curve(gallery_codes, query_codes, gallery_labels, query_labels, k_max, relevant="truncated"):
    """Recall@K for ``K = 1 .. k_max`` from one neighbor ranking.

    Neighbors are ranked by Euclidean distance between codes, ties broken
    by gallery index. For each query the retrieved set is the labels of its
    ``K`` nearest gallery items. The relevant set is the query label repeated
    ``min(K, c)`` times (``relevant='truncated'``) or ``c`` times
    (``relevant='full'``), with ``c`` the number of gallery items sharing the
    query label; the per-query score is the multiset overlap divided by the
    size of the relevant set. Queries whose label is absent from the gallery
    are left out of the average.

    Returns
    -------
    ndarray, shape (k_max,)
    """
    if relevant not in ("truncated", "full"):
        raise ValueError("relevant must be 'truncated' or 'full'")
    gl = np.asarray(gallery_labels)
    ql = np.asarray(query_labels)
    G = np.asarray(gallery_codes)
    if G.shape[0] != gl.shape[0] or np.asarray(query_codes).shape[0] != ql.shape[0]:
        raise ValueError("one label per code required")
    if k_max < 1:
        raise ValueError("K must be >= 1")
    k_max = min(k_max, gl.shape[0])
    order = _neighbor_order(G, query_codes)[:, :k_max]
    hits = np.cumsum(gl[order] == ql[:, None], axis=1)
    counts = (gl[None, :] == ql[:, None]).sum(axis=1)
    keep = counts > 0
    if not keep.any():
        return np.zeros(k_max)
    K = np.arange(1, k_max + 1)[None, :]
    c = counts[keep][:, None]
    size = np.minimum(K, c) if relevant == "truncated" else np.broadcast_to(c, (c.shape[0], k_max))
    # multiset intersection of the repeated query label with the retrieved labels
    overlap = np.minimum(hits[keep], size)
    return (overlap / size).mean(axis=0)


def recall_at_k(gallery_codes, query_codes, gallery_labels, query_labels, K, relevant="truncated"):
    """Average fraction of relevant labels among each query's ``K`` nearest codes.

    See :func:`recall_curve` for the exact definition. ``K`` larger than the
    gallery is clipped to the gallery size.
    """
    return float(recall_curve(gallery_codes, query_codes, gallery_labels, query_labels, K, relevant)[-1])


def sparsity_of(code, zero_thresh_rel=ZERO_THRESH_REL):
    """Fraction of coefficients above ``zero_thresh_rel * max(code)``."""
    if isinstance(code, SparseCode):
        return code.sparsity
    return SparseCode(np.asarray(code, dtype=np.float64), 0.0, zero_thresh_rel=zero_thresh_rel).sparsity
