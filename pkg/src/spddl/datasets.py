"""Seeded synthetic SPD data: Gaussian sample covariances and planted
sparse conic combinations of a known dictionary."""

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .linalg import check_spd, sym


@dataclass
class SyntheticSpec:
    dim: int
    n_samples: int
    samples_per_cov: Optional[int] = None
    noise_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.samples_per_cov is None:
            self.samples_per_cov = 10 * self.dim
        if self.samples_per_cov < self.dim + 1:
            raise ValueError("samples_per_cov must be >= dim + 1")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")


@dataclass
class PlantedSpec:
    """Planted dictionary experiment.

    With ``n_classes`` set, every class draws one fixed support of ``active``
    atoms and its members only vary the coefficients; labels are the class
    index. Otherwise each datum gets its own support and label 0.
    """

    dim: int
    n_atoms: int = 100
    n_data: int = 1000
    active: int = 10
    coeff_range: Tuple[float, float] = (0.1, 1.0)
    noise_scale: float = 0.0
    seed: int = 0
    n_classes: Optional[int] = None
    split: Tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.n_atoms < 1 or self.n_data < 1:
            raise ValueError("n_atoms and n_data must be >= 1")
        if not 1 <= self.active <= self.n_atoms:
            raise ValueError("active must lie in [1, n_atoms]")
        lo, hi = self.coeff_range
        if not 0 < lo <= hi:
            raise ValueError("coeff_range must satisfy 0 < lo <= hi")
        self.coeff_range = (float(lo), float(hi))
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.n_classes is not None and self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        _check_split(self.split)
        self.split = tuple(float(s) for s in self.split)


def _check_split(split):
    if len(split) != 3 or min(split) < 0 or abs(sum(split) - 1.0) > 1e-9:
        raise ValueError("split must be three nonnegative fractions summing to 1")


@dataclass
class LabeledDataset:
    matrices: np.ndarray
    labels: np.ndarray
    splits: Dict[str, List[int]] = field(default_factory=dict)

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.matrices.shape[0] != self.labels.shape[0]:
            raise ValueError("one label per matrix required")
        seen = set()
        for name, idx in self.splits.items():
            idx = set(int(i) for i in idx)
            if seen & idx:
                raise ValueError(f"split {name!r} overlaps another split")
            if idx and (min(idx) < 0 or max(idx) >= len(self)):
                raise ValueError(f"split {name!r} indexes outside the dataset")
            seen |= idx

    def __len__(self):
        return self.matrices.shape[0]

    @property
    def dim(self):
        return self.matrices.shape[1]

    def subset(self, name):
        idx = np.asarray(self.splits[name], dtype=int)
        return self.matrices[idx], self.labels[idx]


def make_splits(n, fractions=(0.8, 0.1, 0.1), rng=None):
    """Random disjoint train/gallery/query index lists."""
    _check_split(fractions)
    rng = np.random.default_rng(rng)
    perm = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_gallery = int(round(fractions[1] * n))
    return {
        "train": sorted(perm[:n_train].tolist()),
        "gallery": sorted(perm[n_train:n_train + n_gallery].tolist()),
        "query": sorted(perm[n_train + n_gallery:].tolist()),
    }


def _sample_covariances(rng, dim, count, samples_per_cov):
    Xs = rng.standard_normal((count, samples_per_cov, dim))
    covs = np.einsum("kni,knj->kij", Xs, Xs) / samples_per_cov
    return np.stack([check_spd(C, policy="clamp") for C in covs])


def gen_gaussian_covariances(spec):
    """Sample covariances of ``samples_per_cov`` standard normal vectors.

    Returns
    -------
    ndarray, shape (n_samples, dim, dim)
    """
    rng = np.random.default_rng(spec.seed)
    covs = _sample_covariances(rng, spec.dim, spec.n_samples, spec.samples_per_cov)
    if spec.noise_scale > 0:
        covs = covs + spec.noise_scale * _sample_covariances(rng, spec.dim, spec.n_samples, spec.dim + 2)
    return sym(covs)


def gen_planted_dataset(spec):
    """Data built as sparse conic combinations of a random dictionary.

    Each datum is ``sum_{i in A} c_i B_i + noise_scale * W`` where ``A`` has
    ``active`` atoms, ``c_i`` is uniform in ``coeff_range`` and ``W`` is the
    sample covariance of ``dim + 2`` standard normal vectors.

    Returns
    -------
    dictionary : ndarray, shape (n_atoms, dim, dim)
    dataset : LabeledDataset
    true_codes : ndarray, shape (n_data, n_atoms)
    """
    rng = np.random.default_rng(spec.seed)
    d = spec.dim
    atoms = _sample_covariances(rng, d, spec.n_atoms, 10 * d)
    codes = np.zeros((spec.n_data, spec.n_atoms))
    labels = np.zeros(spec.n_data, dtype=np.int32)
    if spec.n_classes is not None:
        supports = [rng.choice(spec.n_atoms, spec.active, replace=False) for _ in range(spec.n_classes)]
        labels = rng.integers(0, spec.n_classes, size=spec.n_data).astype(np.int32)
    lo, hi = spec.coeff_range
    for j in range(spec.n_data):
        if spec.n_classes is not None:
            support = supports[labels[j]]
        else:
            support = rng.choice(spec.n_atoms, spec.active, replace=False)
        codes[j, support] = rng.uniform(lo, hi, spec.active)
    data = np.einsum("jn,nab->jab", codes, atoms)
    if spec.noise_scale > 0:
        data = data + spec.noise_scale * _sample_covariances(rng, d, spec.n_data, d + 2)
    data = np.stack([check_spd(X, policy="clamp") for X in sym(data)])
    splits = make_splits(spec.n_data, spec.split, rng)
    return atoms, LabeledDataset(data, labels, splits), codes


def spec_to_dict(spec):
    out = asdict(spec)
    for k, v in out.items():
        if isinstance(v, tuple):
            out[k] = list(v)
    return out
