"""Sparse-coding timing benchmarks over dimension and dictionary-size grids."""

import csv
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .datasets import SyntheticSpec, gen_gaussian_covariances
from .linalg import inv_sqrt
from .sparse_coding import SpgConfig, spg_solve

CSV_FIELDS = ["grid", "dim", "n_atoms", "reps", "median_s", "min_s", "max_s", "median_iterations"]


@dataclass
class TimingRow:
    grid: str
    dim: int
    n_atoms: int
    reps: int
    median_s: float
    min_s: float
    max_s: float
    median_iterations: float

    def as_dict(self):
        return {k: getattr(self, k) for k in CSV_FIELDS}


def time_coding(dim, n_atoms, reps=5, lam=0.1, max_iter=100, seed=0):
    """Median wall time of one sparse-coding solve after one warm-up run.

    The dictionary and datum are sample covariances drawn with ``seed``.
    The stationarity test is disabled so every solve runs ``max_iter``
    iterations unless the line search stalls.
    """
    atoms = gen_gaussian_covariances(SyntheticSpec(dim, n_atoms, seed=seed))
    X = gen_gaussian_covariances(SyntheticSpec(dim, 1, seed=seed + 1))[0]
    cfg = SpgConfig(max_iter=max_iter, grad_tol=0.0)
    spg_solve(X, atoms, lam, cfg)
    times, iters = [], []
    for _ in range(reps):
        t0 = time.perf_counter()
        # whitening is part of the measured work
        _, rep = spg_solve(X, atoms, lam, cfg, S=inv_sqrt(X))
        times.append(time.perf_counter() - t0)
        iters.append(rep.n_iter)
    return times, iters


def bench_timing(dims, n_atoms_list, reps=5, fixed_atoms=200, fixed_dim=10, lam=0.1, max_iter=100, seed=0):
    """Timing table over two grids: ``dims`` at ``fixed_atoms`` atoms and
    ``n_atoms_list`` at dimension ``fixed_dim``.

    Returns
    -------
    list of TimingRow
        ``len(dims) + len(n_atoms_list)`` rows.
    """
    rows = []
    grid = [("dim", d, fixed_atoms) for d in dims] + [("atoms", fixed_dim, n) for n in n_atoms_list]
    for name, d, n in grid:
        times, iters = time_coding(d, n, reps, lam, max_iter, seed)
        rows.append(
            TimingRow(
                name, int(d), int(n), int(reps),
                statistics.median(times), min(times), max(times), float(np.median(iters)),
            )
        )
    return rows


def write_timing_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row.as_dict())
