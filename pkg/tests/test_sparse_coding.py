import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_spd
from spddl.datasets import SyntheticSpec, gen_gaussian_covariances
from spddl.exceptions import DegenerateCombinationError, DegenerateStartError, DimensionMismatchError
from spddl.linalg import airm_distance, inv_sqrt
from spddl.sparse_coding import (
    SparseCode,
    SpgConfig,
    _batch_value_grad,
    check_conic_feasible,
    combine,
    default_init,
    hessian_fd,
    project_nonneg,
    scalar_derivative,
    sc_gradient_fast,
    sc_gradient_naive,
    sc_objective,
    spg_solve,
    spg_solve_batch,
)


def instance(rng, d, n):
    D = np.stack([random_spd(rng, d) for _ in range(n)])
    X = random_spd(rng, d)
    alpha = rng.uniform(0.1, 1.0, n)
    return X, D, alpha


class TestObjective:
    def test_exact_fit(self, rng):
        X = random_spd(rng, 4)
        assert sc_objective(X, X[None], np.array([1.0])) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("c,lam", [(0.5, 0.0), (2.0, 0.3), (7.0, 1.0)])
    def test_scalar_case(self, c, lam):
        d = 3
        expected = 0.5 * d * np.log(c) ** 2 + lam * c
        assert sc_objective(np.eye(d), np.eye(d)[None], np.array([c]), lam) == pytest.approx(expected, rel=1e-12)

    def test_matches_distance(self):
        rng = np.random.default_rng(30)
        for _ in range(20):
            X, D, a = instance(rng, 4, 6)
            expected = 0.5 * airm_distance(X, combine(D, a)) ** 2 + 0.2 * a.sum()
            assert sc_objective(X, D, a, 0.2) == pytest.approx(expected, abs=1e-12)

    def test_congruence_invariance(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            X, D, a = instance(rng, 4, 5)
            A = rng.standard_normal((4, 4)) + 3 * np.eye(4)
            lhs = sc_objective(A @ X @ A.T, np.stack([A @ B @ A.T for B in D]), a)
            assert lhs == pytest.approx(sc_objective(X, D, a), rel=1e-8)

    def test_degenerate(self, rng):
        X = random_spd(rng, 3)
        with pytest.raises(DegenerateCombinationError):
            sc_objective(X, X[None], np.array([0.0]))

    def test_shape_errors(self, rng):
        X = random_spd(rng, 3)
        with pytest.raises(DimensionMismatchError):
            sc_objective(X, np.eye(2)[None], np.array([1.0]))
        with pytest.raises(DimensionMismatchError):
            sc_objective(X, X[None], np.array([1.0, 2.0]))


class TestGradient:
    def test_exact_fit_zero(self, rng):
        X = random_spd(rng, 4)
        np.testing.assert_allclose(sc_gradient_fast(X, X[None], np.array([1.0])), [0.0], atol=1e-12)
        np.testing.assert_allclose(sc_gradient_naive(X, X[None], np.array([1.0])), [0.0], atol=1e-12)

    def test_fast_equals_naive(self):
        rng = np.random.default_rng(32)
        for _ in range(100):
            X, D, a = instance(rng, int(rng.integers(2, 11)), int(rng.integers(1, 21)))
            np.testing.assert_allclose(sc_gradient_fast(X, D, a, 0.1), sc_gradient_naive(X, D, a, 0.1), atol=1e-10)

    def test_finite_differences(self):
        rng = np.random.default_rng(33)
        for _ in range(100):
            X, D, a = instance(rng, int(rng.integers(2, 7)), int(rng.integers(1, 9)))
            g = sc_gradient_fast(X, D, a, 0.05)
            fd = np.empty_like(a)
            for i in range(a.size):
                h = 1e-6 * (1 + abs(a[i]))
                e = np.zeros_like(a)
                e[i] = h
                fd[i] = (sc_objective(X, D, a + e, 0.05) - sc_objective(X, D, a - e, 0.05)) / (2 * h)
            np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)

    def test_batched_solver_gradient(self):
        rng = np.random.default_rng(34)
        data = np.stack([random_spd(rng, 4) for _ in range(5)])
        D = np.stack([random_spd(rng, 4) for _ in range(7)])
        A = rng.uniform(0.1, 1.0, (5, 7))
        S = np.stack([inv_sqrt(X) for X in data])
        f, g = _batch_value_grad(A, D.reshape(7, 16), S, 0.3, 4)
        for j in range(5):
            assert f[j] == pytest.approx(sc_objective(data[j], D, A[j], 0.3), rel=1e-12)
            np.testing.assert_allclose(g[j], sc_gradient_fast(data[j], D, A[j], 0.3), rtol=1e-9, atol=1e-12)

    def test_batched_marks_degenerate_rows(self, rng):
        X = random_spd(rng, 3)
        f, g = _batch_value_grad(np.array([[1.0], [0.0]]), X.reshape(1, 9), np.stack([inv_sqrt(X)] * 2), 0.0, 3)
        assert np.isfinite(f[0]) and f[1] == np.inf
        assert np.isnan(g[1]).all()


class TestScalarDerivative:
    def test_exact_fit_stationary(self, rng):
        X, B = random_spd(rng, 3), random_spd(rng, 3)
        assert scalar_derivative(B, X, X, 0.0) == pytest.approx(0.0, abs=1e-12)

    def test_symbolic_value(self, rng):
        # B = C = X gives f(x) = d ln^2(1 + x), so f'(1) = d ln 2
        X = random_spd(rng, 3)
        assert scalar_derivative(X, X, X, 1.0) == pytest.approx(3 * np.log(2), rel=1e-10)
        assert 3 * np.log(2) == pytest.approx(2.0794415, abs=1e-7)

    def test_finite_difference(self):
        rng = np.random.default_rng(35)
        h = 1e-5
        for _ in range(30):
            B, C, X = (random_spd(rng, 4) for _ in range(3))
            x = rng.uniform(0.1, 2.0)

            def f(t):
                return airm_distance(t * B + C, X) ** 2

            fd = (f(x + h) - f(x - h)) / (2 * h)
            assert scalar_derivative(B, C, X, x) == pytest.approx(fd, rel=1e-6)


class TestProjection:
    def test_example(self):
        np.testing.assert_array_equal(project_nonneg([-1.0, 2.0, 0.0]), [0.0, 2.0, 0.0])

    def test_nonnegative_unchanged(self):
        v = np.array([0.0, 1.5, 3.0])
        np.testing.assert_array_equal(project_nonneg(v), v)

    @given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e6, 1e6)))
    def test_idempotent(self, v):
        once = project_nonneg(v)
        np.testing.assert_array_equal(project_nonneg(once), once)
        assert np.all(once >= 0)


class TestSpgSolve:
    def test_single_atom_exact_fit(self, rng):
        X = random_spd(rng, 4)
        code, rep = spg_solve(X, (2 * X)[None], 0.0, alpha0=np.array([1.0]))
        assert code.coeffs[0] == pytest.approx(0.5, abs=1e-6)
        assert code.objective == pytest.approx(0.0, abs=1e-6)
        assert rep.converged

    def test_planted_recovery(self):
        atoms = np.stack(gen_gaussian_covariances(SyntheticSpec(10, 100, seed=3)))
        rng = np.random.default_rng(4)
        for _ in range(10):
            support = rng.choice(100, 10, replace=False)
            truth = np.zeros(100)
            truth[support] = rng.uniform(0.1, 1.0, 10)
            X = combine(atoms, truth)
            code, _ = spg_solve(X, atoms, 1e-3)
            uniform = default_init(X, atoms)
            assert airm_distance(X, combine(atoms, code.coeffs)) < airm_distance(X, combine(atoms, uniform))
            top = np.argsort(-code.coeffs)[:10]
            assert len(set(top) & set(support)) >= 5

    def test_report_contracts(self):
        rng = np.random.default_rng(36)
        cfg = SpgConfig()
        for _ in range(20):
            X, D, a0 = instance(rng, 4, 12)
            code, rep = spg_solve(X, D, 0.05, cfg, alpha0=a0)
            assert np.all(code.coeffs >= 0)
            assert code.objective <= sc_objective(X, D, a0, 0.05) + 1e-12
            assert code.objective == pytest.approx(sc_objective(X, D, code.coeffs, 0.05), rel=1e-10)
            assert len(rep.objective) == rep.n_iter + 1
            for k in range(rep.n_iter):
                window = rep.objective[max(0, k + 1 - cfg.history): k + 1]
                assert rep.reference[k] == max(window)
                bound = rep.reference[k] + cfg.armijo_c * rep.ls_step[k] * rep.slope[k]
                assert rep.objective[k + 1] <= bound
                assert rep.slope[k] < 0
            refs = [max(rep.objective[max(0, k + 1 - cfg.history): k + 1]) for k in range(rep.n_iter + 1)]
            assert all(b <= a + 1e-15 for a, b in zip(refs, refs[1:]))

    def test_stops_on_projected_gradient(self, rng):
        X, D, _ = instance(rng, 3, 4)
        code, rep = spg_solve(X, D, 0.1, SpgConfig(max_iter=1000))
        assert rep.converged and rep.status == "converged"
        g = sc_gradient_fast(X, D, code.coeffs, 0.1)
        assert np.abs(project_nonneg(code.coeffs - g) - code.coeffs).max() < 1e-6

    def test_large_lambda_gives_sparse_code(self, rng):
        X, D, _ = instance(rng, 3, 10)
        dense, _ = spg_solve(X, D, 1e-4)
        sparse, _ = spg_solve(X, D, 1.0)
        assert sparse.sparsity <= dense.sparsity

    def test_bad_warm_start_falls_back(self, rng):
        X, D, _ = instance(rng, 3, 4)
        code, rep = spg_solve(X, D, 0.1, alpha0=np.zeros(4))
        assert np.isfinite(code.objective)
        assert rep.objective[0] == pytest.approx(sc_objective(X, D, default_init(X, D), 0.1))

    def test_degenerate_start(self):
        X = np.diag([1e-11, 1.0])
        B = np.diag([1.0, 1e-11])
        with pytest.raises(DegenerateStartError):
            spg_solve(X, B[None], 0.0)

    def test_negative_lambda(self, rng):
        X, D, _ = instance(rng, 3, 2)
        with pytest.raises(ValueError):
            spg_solve(X, D, -1.0)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(37)
        data = np.stack([random_spd(rng, 4) for _ in range(6)])
        D = np.stack([random_spd(rng, 4) for _ in range(8)])
        cfg = SpgConfig(max_iter=300)
        codes, reps = spg_solve_batch(data, D, 0.1, cfg)
        for X, c in zip(data, codes):
            single, _ = spg_solve(X, D, 0.1, cfg)
            assert c.objective == pytest.approx(single.objective, rel=1e-6)

    @pytest.mark.parametrize(
        "kwargs", [dict(eta_min=0.0), dict(eta_min=2.0, eta_max=1.0), dict(history=0), dict(armijo_c=1.0), dict(max_iter=-1)]
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            SpgConfig(**kwargs)


class TestSparsity:
    def test_zero_code(self):
        assert SparseCode(np.zeros(5), 0.1).sparsity == 0.0

    def test_tenth(self):
        a = np.zeros(50)
        a[:5] = 1.0
        assert SparseCode(a, 0.1).sparsity == pytest.approx(0.1)

    def test_threshold_is_relative(self):
        assert SparseCode(np.array([1.0, 1e-7, 2e-6]), 0.1).sparsity == pytest.approx(2 / 3)


class TestFeasibility:
    def test_half_is_feasible(self, rng):
        X = random_spd(rng, 4)
        D = np.stack([X, X])
        assert check_conic_feasible(X, D, np.array([0.25, 0.25]))

    def test_double_is_infeasible(self, rng):
        X = random_spd(rng, 4)
        assert not check_conic_feasible(X, X[None], np.array([2.0]))

    def test_negative_is_infeasible(self, rng):
        X = random_spd(rng, 3)
        assert not check_conic_feasible(X, np.stack([X, X]), np.array([-0.1, 0.5]))

    def test_matches_direct_eigen_check(self):
        rng = np.random.default_rng(38)
        for _ in range(50):
            X, D, a = instance(rng, 3, 3)
            a *= rng.uniform(0.05, 0.5)
            direct = np.linalg.eigvalsh(X - combine(D, a))[0] >= -1e-12
            assert check_conic_feasible(X, D, a) == direct


class TestHessian:
    def test_scalar_boundary(self, rng):
        X = random_spd(rng, 3)
        H = hessian_fd(X, X[None], np.array([0.99]))
        assert H.shape == (1, 1) and H[0, 0] >= -1e-6

    def test_symmetric(self, rng):
        X, D, a = instance(rng, 3, 4)
        H = hessian_fd(X, D, a)
        assert np.array_equal(H, H.T)

    def test_matches_scalar_second_derivative(self, rng):
        # phi(c) = 0.5 d ln^2 c for D = [I], X = I: phi'' = d (1 - ln c) / c^2
        d, c = 3, 0.7
        H = hessian_fd(np.eye(d), np.eye(d)[None], np.array([c]))
        assert H[0, 0] == pytest.approx(d * (1 - np.log(c)) / c**2, rel=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 5), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_psd_on_feasible_set(self, d, n, seed):
        rng = np.random.default_rng(seed)
        X, D, a = instance(rng, d, n)
        S = inv_sqrt(X)
        top = np.linalg.eigvalsh(S @ combine(D, a) @ S)[-1]
        a = a * rng.uniform(0.2, 1.0) / top
        assert check_conic_feasible(X, D, a)
        H = hessian_fd(X, D, a)
        assert np.linalg.eigvalsh(H)[0] >= -1e-5 * np.linalg.norm(H)
