"""Covariance trajectories, time-averaged Gramians, convolution integrals.

The state covariance F(t) = E[Phi(t) X0 X0^T Phi(t)^T] of a linear
stochastic system obeys a linear matrix ODE whose vectorized form is
driven by the Kronecker evolution matrix (linsys.kronecker_matrix); its
dual and the mixed full/reduced covariances obey the transposed and the
mixed-coefficient versions.  This module marches those ODEs on a shared
uniform grid, integrates them in closed form when the evolution matrix
is invertible, and assembles the Gramian set a reduction is certified
against.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.linalg

from .errors import (
    GridMismatch,
    MemoryBudgetExceeded,
    NumericalFailure,
    SingularKroneckerWarning,
)
from .linsys import kron_full, kron_mixed, kron_reduced, unvec, vec

log = logging.getLogger(__name__)

# below this vectorized dimension the propagator is built by dense
# scaling-and-squaring; above it the ODE is marched by a classical
# fourth-order one-step method with substeps sized by ||K||_1 h <= 0.5
EXPM_DENSE_LIMIT = 10_000
DEFAULT_GRID = 200
REFINE_REL_TOL = 1e-8
MAX_REFINEMENTS = 4
OVERFLOW_LIMIT = 1e200
DEFAULT_MEMORY_BUDGET = 8 * 2**30

KINDS = ("primal", "reduced", "mixed", "dual", "dual_reduced", "dual_mixed",
         "generic")
SYMMETRIC_KINDS = ("primal", "reduced", "dual", "dual_reduced")


@dataclass(frozen=True)
class CovarianceTrajectory:
    """Matrix-valued trajectory on a uniform grid 0 = t_0 < ... < t_l = T.

    ``values[k]`` approximates devec(exp(kron t_k) vec(init)).  The
    generator and initial value are kept so integrals can refine the grid
    without the caller re-solving.
    """

    times: np.ndarray
    values: np.ndarray  # (l+1, rows, cols)
    kind: str = "generic"
    kron: np.ndarray = None
    init: np.ndarray = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")

    @property
    def grid(self):
        return self.times.shape[0] - 1

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def terminal(self):
        return self.values[-1]


def _rk4_march(kron, v, dt):
    """One grid step of v' = kron v by classical RK4 with stability-sized
    substeps."""
    knorm = np.linalg.norm(kron, 1)
    nsub = max(1, int(np.ceil(knorm * dt / 0.5)))
    h = dt / nsub
    for _ in range(nsub):
        k1 = kron @ v
        k2 = kron @ (v + 0.5 * h * k1)
        k3 = kron @ (v + 0.5 * h * k2)
        k4 = kron @ (v + h * k3)
        v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return v


def solve_covariance(kron, init, T, grid, kind="generic"):
    """March d/dt vec(F) = kron vec(F) from vec(init) on a uniform grid
    of ``grid`` steps over [0, T]."""
    kron = np.asarray(kron, dtype=float)
    init = np.asarray(init, dtype=float)
    if grid < 1:
        raise ValueError("grid must have at least one step")
    d = init.size
    if kron.shape != (d, d):
        raise ValueError(
            f"kron must be {d} x {d} for init of shape {init.shape}"
        )
    times = np.linspace(0.0, float(T), grid + 1)
    dt = float(T) / grid
    values = np.empty((grid + 1,) + init.shape)
    values[0] = init
    v = vec(init).copy()
    propagator = None
    if d <= EXPM_DENSE_LIMIT:
        propagator = scipy.linalg.expm(kron * dt)
    for k in range(1, grid + 1):
        if propagator is not None:
            v = propagator @ v
        else:
            v = _rk4_march(kron, v, dt)
        if not np.all(np.isfinite(v)) or np.abs(v).max() > OVERFLOW_LIMIT:
            raise NumericalFailure(
                f"covariance propagation overflowed at t = {times[k]:.6g}"
            )
        values[k] = unvec(v, init.shape)
    return CovarianceTrajectory(times=times, values=values, kind=kind,
                                kron=kron, init=init)


def _resolve_finer(traj, factor=2):
    return solve_covariance(traj.kron, traj.init, traj.horizon,
                            traj.grid * factor, kind=traj.kind)


def _simpson(values, times):
    return scipy.integrate.simpson(values, x=times, axis=0)


def _lu_with_rcond(kron):
    lu, piv = scipy.linalg.lu_factor(kron)
    gecon = scipy.linalg.get_lapack_funcs("gecon", (kron,))
    rcond, info = gecon(lu, np.linalg.norm(kron, 1))
    if info != 0:
        rcond = 0.0
    return (lu, piv), rcond


def integrate_trajectory(kron, init, traj):
    """Time integral of a covariance trajectory over [0, T].

    Closed form devec(kron^{-1} (vec F(T) - vec F(0))) when the evolution
    matrix is invertible, cross-validated against composite-Simpson
    quadrature of the trajectory; quadrature with grid refinement
    otherwise.
    """
    kron = traj.kron if kron is None else np.asarray(kron, dtype=float)
    init = traj.init if init is None else np.asarray(init, dtype=float)
    if kron is None:
        return _quadrature_integral(traj)
    rhs = vec(traj.terminal) - vec(init)
    lu_piv, rcond = _lu_with_rcond(kron)
    if rcond < 1e3 * np.finfo(float).eps:
        warnings.warn(
            "evolution matrix numerically singular "
            f"(rcond = {rcond:.2e}); falling back to quadrature",
            SingularKroneckerWarning,
        )
        return _quadrature_integral(traj)
    closed = unvec(scipy.linalg.lu_solve(lu_piv, rhs), traj.values[0].shape)
    quad = _simpson(traj.values, traj.times)
    denom = max(np.linalg.norm(closed), 1e-300)
    rel = np.linalg.norm(closed - quad) / denom
    log.debug("closed-form vs quadrature integral: rel diff %.3e", rel)
    return closed


def _quadrature_integral(traj):
    est = _simpson(traj.values, traj.times)
    if traj.kron is None:
        return est
    cur = traj
    for _ in range(MAX_REFINEMENTS):
        finer = _resolve_finer(cur)
        nxt = _simpson(finer.values, finer.times)
        denom = max(np.linalg.norm(nxt), 1e-300)
        if np.linalg.norm(nxt - est) / denom < REFINE_REL_TOL:
            return nxt
        est, cur = nxt, finer
    return est


def cumulative_trajectory(traj):
    """Running integral s -> int_0^s F(t) dt as a trajectory on the same
    grid (closed form via the stored generator, else cumulative Simpson)."""
    if traj.kron is not None:
        lu_piv, rcond = _lu_with_rcond(traj.kron)
        if rcond >= 1e3 * np.finfo(float).eps:
            flat = traj.values.reshape(traj.values.shape[0], -1)
            base = vec(traj.values[0])
            rhs = np.stack([vec(traj.values[k]) - base
                            for k in range(flat.shape[0])], axis=1)
            sol = scipy.linalg.lu_solve(lu_piv, rhs)
            vals = np.stack(
                [unvec(sol[:, k], traj.values[0].shape)
                 for k in range(flat.shape[0])]
            )
            return CovarianceTrajectory(times=traj.times, values=vals,
                                        kind="generic")
    vals = scipy.integrate.cumulative_simpson(
        traj.values, x=traj.times, axis=0, initial=0.0
    )
    return CovarianceTrajectory(times=traj.times, values=vals,
                                kind="generic")


def transpose_trajectory(traj):
    vals = np.ascontiguousarray(np.swapaxes(traj.values, 1, 2))
    return CovarianceTrajectory(times=traj.times, values=vals,
                                kind="generic")


def convolution_integral(left, right, weight=None):
    """Composite-Simpson approximation of
    int_0^T left(T - t) @ weight @ right(t) dt.

    Both trajectories must share the identical grid.  When both carry
    their generators, the grid is doubled until the result changes by
    less than REFINE_REL_TOL relative (capped at MAX_REFINEMENTS).
    """
    if left.times.shape != right.times.shape or \
            not np.array_equal(left.times, right.times):
        raise GridMismatch("convolution operands must share the same grid")

    def _eval(lv, rv, times):
        lrev = lv[::-1]
        if weight is None:
            prod = np.einsum("kab,kbd->kad", lrev, rv)
        else:
            prod = np.einsum("kab,bc,kcd->kad", lrev, np.asarray(weight), rv)
        return _simpson(prod, times)

    est = _eval(left.values, right.values, left.times)
    if left.kron is None or right.kron is None:
        return est
    lcur, rcur = left, right
    for _ in range(MAX_REFINEMENTS):
        lf, rf = _resolve_finer(lcur), _resolve_finer(rcur)
        nxt = _eval(lf.values, rf.values, lf.times)
        denom = max(np.linalg.norm(nxt), 1e-300)
        if np.linalg.norm(nxt - est) / denom < REFINE_REL_TOL:
            return nxt
        est, lcur, rcur = nxt, lf, rf
    return est


@dataclass(frozen=True)
class GramianSet:
    """Terminal covariances and time-averaged Gramians of a (full, reduced)
    pair over a common horizon.  Full-order entries are None when the
    n^2-sized solves were skipped."""

    P_T: np.ndarray
    Phat_T: np.ndarray
    Ptilde_T: np.ndarray
    Q_T: np.ndarray
    Qhat_T: np.ndarray
    Qtilde_T: np.ndarray
    F_T: np.ndarray
    Fhat_T: np.ndarray
    Ftilde_T: np.ndarray
    G_T: np.ndarray
    Ghat_T: np.ndarray
    Gtilde_T: np.ndarray
    horizon: float


@dataclass(frozen=True)
class TrajectoryBundle:
    """The six covariance trajectories on a shared grid (full-order ones
    optional)."""

    F: CovarianceTrajectory
    Fhat: CovarianceTrajectory
    Ftilde: CovarianceTrajectory
    G: CovarianceTrajectory
    Ghat: CovarianceTrajectory
    Gtilde: CovarianceTrajectory

    @property
    def times(self):
        return self.Fhat.times


def full_solve_memory_bytes(n):
    # propagator + generator + LAPACK workspace copies of the n^2 x n^2 matrix
    return 6 * (n * n) ** 2 * 8


def _report_shape_violations(traj, label):
    if traj.kind not in SYMMETRIC_KINDS:
        return
    vals = traj.values
    sym = np.abs(vals - np.swapaxes(vals, 1, 2)).max()
    scale = max(np.abs(vals).max(), 1e-300)
    if sym > 1e-10 * scale:
        warnings.warn(
            f"{label}: symmetry violated by {sym / scale:.2e} relative",
            UserWarning,
        )
    wmin, wmax = np.inf, 0.0
    for k in range(vals.shape[0]):
        w = np.linalg.eigvalsh(0.5 * (vals[k] + vals[k].T))
        wmin = min(wmin, w[0])
        wmax = max(wmax, w[-1])
    if wmin < -1e-8 * max(wmax, 1e-300):
        warnings.warn(
            f"{label}: PSD violated (min eig {wmin:.3e}, max {wmax:.3e}); "
            "reported, not repaired",
            UserWarning,
        )


def solve_all_gramians(sys, red, grid=DEFAULT_GRID, include_full=True,
                       memory_budget=DEFAULT_MEMORY_BUDGET,
                       check_shapes=False):
    """Solve the six covariance ODEs (primal, reduced, mixed and duals) on
    a shared grid and integrate them into the Gramian set.

    ``include_full=False`` skips the n^2-sized primal/dual solves; the
    corresponding Gramians are then None and spectral diagnostics that
    need them are unavailable.
    """
    T = sys.T
    Km = kron_mixed(sys, red)
    Kh = kron_reduced(red, sys.K_M)
    X0h = red.X0
    Fhat = solve_covariance(Kh, X0h @ X0h.T, T, grid, kind="reduced")
    Ftilde = solve_covariance(Km, sys.X0 @ X0h.T, T, grid, kind="mixed")
    Ghat = solve_covariance(Kh.T, red.C.T @ red.C, T, grid,
                            kind="dual_reduced")
    Gtilde = solve_covariance(Km.T, sys.C.T @ red.C, T, grid,
                              kind="dual_mixed")
    F = G = None
    if include_full:
        need = full_solve_memory_bytes(sys.n)
        if need > memory_budget:
            raise MemoryBudgetExceeded(
                f"full-order solves need about {need / 2**30:.1f} GiB "
                f"(budget {memory_budget / 2**30:.1f} GiB); "
                "re-run with include_full=False"
            )
        Kf = kron_full(sys)
        F = solve_covariance(Kf, sys.X0 @ sys.X0.T, T, grid, kind="primal")
        G = solve_covariance(Kf.T, sys.C.T @ sys.C, T, grid, kind="dual")
    bundle = TrajectoryBundle(F=F, Fhat=Fhat, Ftilde=Ftilde,
                              G=G, Ghat=Ghat, Gtilde=Gtilde)
    if check_shapes:
        for label in ("F", "Fhat", "G", "Ghat"):
            traj = getattr(bundle, label)
            if traj is not None:
                _report_shape_violations(traj, label)
    gram = GramianSet(
        P_T=None if F is None else integrate_trajectory(None, None, F),
        Phat_T=integrate_trajectory(None, None, Fhat),
        Ptilde_T=integrate_trajectory(None, None, Ftilde),
        Q_T=None if G is None else integrate_trajectory(None, None, G),
        Qhat_T=integrate_trajectory(None, None, Ghat),
        Qtilde_T=integrate_trajectory(None, None, Gtilde),
        F_T=None if F is None else F.terminal,
        Fhat_T=Fhat.terminal,
        Ftilde_T=Ftilde.terminal,
        G_T=None if G is None else G.terminal,
        Ghat_T=Ghat.terminal,
        Gtilde_T=Gtilde.terminal,
        horizon=T,
    )
    return gram, bundle
