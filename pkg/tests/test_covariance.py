import numpy as np
import pytest
import scipy.linalg

import sdemor
import sdemor.covariance as cov
from sdemor.errors import (
    GridMismatch,
    MemoryBudgetExceeded,
    NumericalFailure,
    SingularKroneckerWarning,
)
from sdemor.linsys import full_order_identity, kron_full, orth, \
    petrov_galerkin_reduce
from conftest import random_stable_system


@pytest.fixture(scope="module")
def scalar_parts(scalar_bs):
    sys, _ = scalar_bs
    K = kron_full(sys)
    traj = sdemor.solve_covariance(K, sys.X0 @ sys.X0.T, 1.0, 200,
                                   kind="primal")
    return sys, K, traj


class TestSolveCovariance:
    def test_scalar_closed_form(self, scalar_parts):
        _, _, traj = scalar_parts
        assert traj.terminal[0, 0] == pytest.approx(np.exp(-0.06),
                                                    abs=1e-10)

    def test_zero_initial_data(self, scalar_parts):
        _, K, _ = scalar_parts
        traj = sdemor.solve_covariance(K, np.zeros((1, 1)), 1.0, 10)
        assert np.all(traj.values == 0.0)

    def test_overflow_detected(self):
        K = np.array([[600.0]])
        with pytest.raises(NumericalFailure):
            sdemor.solve_covariance(K, np.ones((1, 1)), 1.0, 4)

    def test_march_path_matches_dense_path(self, monkeypatch, stable10):
        K = kron_full(stable10)
        init = stable10.X0 @ stable10.X0.T
        dense = sdemor.solve_covariance(K, init, 1.0, 50)
        monkeypatch.setattr(cov, "EXPM_DENSE_LIMIT", 1)
        marched = sdemor.solve_covariance(K, init, 1.0, 50)
        scale = np.abs(dense.values).max()
        assert np.abs(dense.values - marched.values).max() < 1e-7 * scale


class TestIntegrateTrajectory:
    def test_scalar_average(self, scalar_parts):
        _, _, traj = scalar_parts
        P = sdemor.integrate_trajectory(None, None, traj)
        c = -0.06
        assert P[0, 0] == pytest.approx((np.exp(c) - 1.0) / c, abs=1e-10)

    def test_zero(self, scalar_parts):
        _, K, _ = scalar_parts
        traj = sdemor.solve_covariance(K, np.zeros((1, 1)), 1.0, 10)
        assert sdemor.integrate_trajectory(None, None, traj)[0, 0] == 0.0

    def test_singular_fallback_constant(self):
        # zero dynamics: the evolution matrix is singular, trajectory is
        # constant, and the quadrature fallback gives T * init
        K = np.zeros((1, 1))
        traj = sdemor.solve_covariance(K, np.array([[2.5]]), 3.0, 16)
        with pytest.warns(SingularKroneckerWarning):
            P = sdemor.integrate_trajectory(None, None, traj)
        assert P[0, 0] == pytest.approx(7.5, rel=1e-12)


class TestShapeInvariants:
    def test_symmetry_and_psd(self, stable10):
        red = petrov_galerkin_reduce(
            stable10, orth(np.random.default_rng(0).standard_normal((10, 3))),
            orth(np.random.default_rng(1).standard_normal((10, 3))),
        )
        gram, trajs = sdemor.solve_all_gramians(stable10, red, grid=100)
        for name in ("F", "Fhat", "G", "Ghat"):
            vals = getattr(trajs, name).values
            sym = np.abs(vals - np.swapaxes(vals, 1, 2)).max()
            assert sym <= 1e-10 * max(np.abs(vals).max(), 1e-300)
            wmin, wmax = np.inf, 0.0
            for k in range(vals.shape[0]):
                w = np.linalg.eigvalsh(0.5 * (vals[k] + vals[k].T))
                wmin = min(wmin, w[0])
                wmax = max(wmax, w[-1])
            assert wmin >= -1e-8 * wmax

    def test_initial_conditions(self, stable10):
        red = full_order_identity(stable10)
        gram, trajs = sdemor.solve_all_gramians(stable10, red, grid=20)
        X0 = stable10.X0
        C = stable10.C
        assert np.allclose(trajs.F.values[0], X0 @ X0.T)
        assert np.allclose(trajs.Ftilde.values[0], X0 @ red.X0.T)
        assert np.allclose(trajs.G.values[0], C.T @ C)
        assert np.allclose(trajs.Gtilde.values[0], C.T @ red.C)


class TestBlockConsistency:
    def test_error_system_blocks(self):
        # solving the coupled (n + nhat) system and extracting blocks must
        # match the separately solved reduced and mixed covariances
        sys = random_stable_system(4, 2, seed=21, m=2, p=2)
        rng = np.random.default_rng(3)
        V = orth(rng.standard_normal((4, 2)))
        W = orth(rng.standard_normal((4, 2)))
        red = petrov_galerkin_reduce(sys, V, W)
        n, r = 4, 2
        Aerr = scipy.linalg.block_diag(sys.A, red.A)
        Nerr = tuple(scipy.linalg.block_diag(Ni, Nhi)
                     for Ni, Nhi in zip(sys.N, red.N))
        X0err = np.vstack([sys.X0, red.X0])
        err_sys = sdemor.SystemCoefficients(
            A=Aerr, N=Nerr, X0=X0err, C=np.zeros((1, n + r)), K_M=sys.K_M,
            T=sys.T,
        )
        traj = sdemor.solve_covariance(kron_full(err_sys), X0err @ X0err.T,
                                       sys.T, 64, kind="primal")
        gram, trajs = sdemor.solve_all_gramians(sys, red, grid=64)
        Ferr_T = traj.terminal
        scale = np.linalg.norm(Ferr_T)
        assert np.linalg.norm(Ferr_T[n:, n:] - trajs.Fhat.terminal) \
            <= 1e-10 * scale
        assert np.linalg.norm(Ferr_T[:n, n:] - trajs.Ftilde.terminal) \
            <= 1e-10 * scale

    def test_duality_trace_identity(self):
        for seed in (5, 6):
            sys = random_stable_system(5, 2, seed=seed, m=2, p=3)
            red = full_order_identity(sys)
            gram, _ = sdemor.solve_all_gramians(sys, red, grid=100)
            lhs = np.trace(sys.C @ gram.P_T @ sys.C.T)
            rhs = np.trace(sys.X0.T @ gram.Q_T @ sys.X0)
            assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), 1.0)

    def test_mixed_range_inclusion(self):
        # columns of the mixed covariance live in the range of the primal
        # Gramian; dually for the dual pair
        sys = random_stable_system(5, 2, seed=9, m=2, p=2)
        rng = np.random.default_rng(4)
        red = petrov_galerkin_reduce(sys, orth(rng.standard_normal((5, 2))),
                                     orth(rng.standard_normal((5, 2))))
        gram, trajs = sdemor.solve_all_gramians(sys, red, grid=50)

        def proj_range(Mtx):
            w, U = np.linalg.eigh(Mtx)
            keep = w > 1e-12 * w[-1]
            Ur = U[:, keep]
            return Ur @ Ur.T

        Pi_P = proj_range(gram.P_T)
        Pi_Q = proj_range(gram.Q_T)
        for k in range(0, 51, 10):
            Ft = trajs.Ftilde.values[k]
            Gt = trajs.Gtilde.values[k]
            assert np.linalg.norm(Ft - Pi_P @ Ft) <= 1e-8 * \
                max(np.linalg.norm(Ft), 1e-300)
            assert np.linalg.norm(Gt - Pi_Q @ Gt) <= 1e-8 * \
                max(np.linalg.norm(Gt), 1e-300)


class TestSolveAllGramians:
    def test_full_order_collapse(self, stable10):
        red = full_order_identity(stable10)
        gram, _ = sdemor.solve_all_gramians(stable10, red, grid=100)
        scale = np.linalg.norm(gram.P_T)
        assert np.linalg.norm(gram.Ptilde_T - gram.Phat_T) <= 1e-10 * scale
        assert np.linalg.norm(gram.Ptilde_T - gram.P_T) <= 1e-10 * scale
        qscale = np.linalg.norm(gram.Q_T)
        assert np.linalg.norm(gram.Qtilde_T - gram.Qhat_T) <= 1e-10 * qscale
        assert np.linalg.norm(gram.Qtilde_T - gram.Q_T) <= 1e-10 * qscale

    def test_scalar_all_equal(self, scalar_bs):
        sys, _ = scalar_bs
        red = full_order_identity(sys)
        gram, _ = sdemor.solve_all_gramians(sys, red, grid=50)
        vals = [gram.P_T, gram.Phat_T, gram.Ptilde_T]
        for v in vals[1:]:
            assert v[0, 0] == pytest.approx(vals[0][0, 0], rel=1e-12)

    def test_memory_budget(self, stable10):
        red = full_order_identity(stable10)
        with pytest.raises(MemoryBudgetExceeded):
            sdemor.solve_all_gramians(stable10, red, grid=10,
                                      memory_budget=1000)
        gram, trajs = sdemor.solve_all_gramians(stable10, red, grid=10,
                                                include_full=False,
                                                memory_budget=1000)
        assert gram.P_T is None and gram.Q_T is None
        assert trajs.F is None
        assert gram.Phat_T is not None


class TestConvolution:
    def test_zero_left(self, scalar_parts):
        _, K, traj = scalar_parts
        zero = sdemor.solve_covariance(K, np.zeros((1, 1)), 1.0, 200)
        out = sdemor.convolution_integral(zero, traj)
        assert out[0, 0] == 0.0

    def test_scalar_closed_form(self, scalar_parts):
        # int_0^T e^{c(T-t)} e^{ct} dt = T e^{cT}
        _, _, traj = scalar_parts
        out = sdemor.convolution_integral(traj, traj)
        assert out[0, 0] == pytest.approx(np.exp(-0.06), abs=1e-9)

    def test_identity_weight(self, scalar_parts):
        _, _, traj = scalar_parts
        a = sdemor.convolution_integral(traj, traj)
        b = sdemor.convolution_integral(traj, traj, weight=np.eye(1))
        assert a[0, 0] == pytest.approx(b[0, 0], rel=1e-14)

    def test_grid_mismatch(self, scalar_parts):
        _, K, traj = scalar_parts
        other = sdemor.solve_covariance(K, np.ones((1, 1)), 1.0, 100)
        with pytest.raises(GridMismatch):
            sdemor.convolution_integral(traj, other)


class TestCumulative:
    def test_matches_quadrature(self, stable10):
        K = kron_full(stable10)
        traj = sdemor.solve_covariance(K, stable10.X0 @ stable10.X0.T,
                                       1.0, 100, kind="primal")
        run = cov.cumulative_trajectory(traj)
        assert np.all(run.values[0] == 0.0)
        import scipy.integrate

        ref = scipy.integrate.cumulative_simpson(traj.values, x=traj.times,
                                                 axis=0, initial=0.0)
        scale = np.abs(ref[-1]).max()
        assert np.abs(run.values - ref).max() < 1e-6 * scale
        P = sdemor.integrate_trajectory(None, None, traj)
        assert np.allclose(run.values[-1], P, rtol=1e-10)
