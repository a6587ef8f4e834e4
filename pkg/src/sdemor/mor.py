"""Fixed-point reduction algorithms, error bounds, optimality diagnostics.

The reduction seeks projection matrices V, W whose spans capture the
dominant subspaces of the mixed full/reduced covariance functions.  Each
sweep solves the two mixed covariance ODEs for the current reduced
coefficients, integrates them over the horizon, takes orthonormal bases
of the integrals as the next (V, W) and re-projects.  Convergence is
measured by the spectral-norm gap of the orthogonal projectors, which is
basis-independent.

At a fixed point the time-averaged covariance defect obeys an exact
algebraic identity (fixed_point_identity_check); for mean-square stable
systems the infinite-horizon variant satisfies the limit optimality
conditions exactly (limit_optimality_residuals).
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .covariance import (
    DEFAULT_GRID,
    DEFAULT_MEMORY_BUDGET,
    GramianSet,
    convolution_integral,
    cumulative_trajectory,
    full_solve_memory_bytes,
    solve_all_gramians,
    transpose_trajectory,
)
from .errors import (
    IndefiniteInput,
    MemoryBudgetExceeded,
    MissingGramian,
    NotConvergedWarning,
    SingularReducedOperator,
    UnstableIterate,
    UnstableSystem,
)
from .linsys import (
    kron_full,
    kron_mixed,
    kron_reduced,
    mean_square_stability,
    orth,
    petrov_galerkin_reduce,
    projector_gap,
    reduced_stability,
    unvec,
    vec,
)

DEGENERATE_REL = 1e-10


@dataclass(frozen=True)
class ReductionDiagnostics:
    """Certificates attached to a reduction.

    bound_value is the output-error bound per unit-norm expansion
    coefficient; terminal_cov_err the pair of relative terminal covariance
    defects (primal, dual); opt_residuals the four relative residuals of
    the first-order optimality conditions; fixed_point_residuals the pair
    of relative residuals of the fixed-point defect identities.
    """

    bound_value: float
    terminal_cov_err: tuple
    opt_residuals: np.ndarray
    fixed_point_residuals: tuple
    iterations: int
    converged: bool
    subspace_change_history: tuple
    notes: tuple = ()


@dataclass(frozen=True)
class HsvReport:
    """Spectral reducibility diagnostics: hsv are the square roots of the
    eigenvalues of P Q, nonincreasing."""

    hsv: np.ndarray
    eig_P: np.ndarray
    eig_Q: np.ndarray
    balancing_T: np.ndarray = None


@dataclass(frozen=True)
class FixedPointOptions:
    max_iter: int = 100
    tol: float = 1e-6
    grid: int = DEFAULT_GRID
    init: str = "krylov"  # "krylov" | "random"
    seed: int = 0
    full_gramians: bool = True
    compute_diagnostics: bool = True
    cond_threshold: float = 1e8
    memory_budget: int = DEFAULT_MEMORY_BUDGET


def _rel_residual(lhs, rhs, scale):
    """Relative residual with a 0/0 convention: if both sides vanish
    against the problem scale, the identity holds trivially and 0 is
    reported."""
    nl = np.linalg.norm(lhs)
    nr = np.linalg.norm(rhs)
    if max(nl, nr) <= DEGENERATE_REL * max(scale, 1e-300):
        return 0.0, True
    return float(np.linalg.norm(lhs - rhs) / max(nr, 1e-300)), False


def error_bound(sys, red, gram, z0):
    """Upper bound on the integrated squared output error
    E int_0^T ||y - yhat||^2 dt:

        (tr(C P C^T) - 2 tr(C Ptilde Chat^T) + tr(Chat Phat Chat^T)) ||z0||^2

    Small negative round-off is clipped to zero.
    """
    if gram.P_T is None:
        raise MissingGramian(
            "bound needs the full-order Gramian; re-run with full solves"
        )
    C, Ch = sys.C, red.C
    t_full = float(np.trace(C @ gram.P_T @ C.T))
    t_mix = float(np.trace(C @ gram.Ptilde_T @ Ch.T))
    t_red = float(np.trace(Ch @ gram.Phat_T @ Ch.T))
    raw = (t_full - 2.0 * t_mix + t_red) * float(np.dot(z0.z0, z0.z0))
    if raw < 0.0:
        if raw < -1e-8 * max(abs(t_full), 1e-300):
            warnings.warn(
                f"error bound negative beyond round-off ({raw:.3e}); "
                "clipped to 0",
                UserWarning,
            )
        return 0.0
    return raw


def terminal_covariance_error(red, trajs):
    """Relative terminal defects (||V Fhat(T) - Ftilde(T)|| / ||Ftilde(T)||,
    ||W (V^T W)^{-1} Ghat(T) - Gtilde(T)|| / ||Gtilde(T)||)."""
    V, W = red.V, red.W
    Fh_T = trajs.Fhat.terminal
    Ft_T = trajs.Ftilde.terminal
    Gh_T = trajs.Ghat.terminal
    Gt_T = trajs.Gtilde.terminal
    e1 = np.linalg.norm(V @ Fh_T - Ft_T) / max(np.linalg.norm(Ft_T), 1e-300)
    WVtW = np.linalg.solve(V.T @ W, Gh_T)
    e2 = np.linalg.norm(W @ WVtW - Gt_T) / max(np.linalg.norm(Gt_T), 1e-300)
    return float(e1), float(e2)


def _noise_sums(N, K_M):
    """Row i -> sum_j N_j k_ij for the noise coefficient list."""
    q = len(N)
    out = []
    for i in range(q):
        acc = np.zeros_like(np.asarray(N[0]))
        for j in range(q):
            if K_M[i, j] != 0.0:
                acc = acc + K_M[i, j] * N[j]
        out.append(acc)
    return out


def optimality_residuals(sys, red, gram, trajs):
    """Relative residuals of the four first-order optimality conditions of
    the finite-horizon error bound:

      (a) Chat Phat(T) = C Ptilde(T)
      (b) Qhat(T) X0hat = Qtilde(T)^T X0
      (c) int Qhat(T-t) Fhat(t) dt = int Qtilde(T-t)^T Ftilde(t) dt
      (d) as (c) with the K_M-weighted noise sums inserted, max over rows.
    """
    scale_p = np.linalg.norm(gram.Ptilde_T)
    scale_q = np.linalg.norm(gram.Qtilde_T)
    r_a, _ = _rel_residual(red.C @ gram.Phat_T, sys.C @ gram.Ptilde_T,
                           scale_p)
    r_b, _ = _rel_residual(gram.Qhat_T @ red.X0, gram.Qtilde_T.T @ sys.X0,
                           scale_q)
    qhat_run = cumulative_trajectory(trajs.Ghat)
    qtil_run_t = transpose_trajectory(cumulative_trajectory(trajs.Gtilde))
    lhs_c = convolution_integral(qhat_run, trajs.Fhat)
    rhs_c = convolution_integral(qtil_run_t, trajs.Ftilde)
    r_c, _ = _rel_residual(lhs_c, rhs_c, scale_p * scale_q)
    sums_hat = _noise_sums(red.N, sys.K_M)
    sums_full = _noise_sums(sys.N, sys.K_M)
    r_d = 0.0
    for i in range(sys.q):
        lhs_d = convolution_integral(qhat_run, trajs.Fhat, weight=sums_hat[i])
        rhs_d = convolution_integral(qtil_run_t, trajs.Ftilde,
                                     weight=sums_full[i])
        r_i, _ = _rel_residual(lhs_d, rhs_d, scale_p * scale_q)
        r_d = max(r_d, r_i)
    return np.array([r_a, r_b, r_c, r_d])


def fixed_point_identity_check(sys, red, gram, trajs):
    """Relative residuals of the exact defect identities that hold at any
    fixed point of the finite-horizon iteration:

      (i)  V Phat(T) - Ptilde(T)
             = V Lhat^{-1}[Fhat(T) - (W^T V)^{-1} W^T Ftilde(T)]
      (ii) W (V^T W)^{-1} Qhat(T) - Qtilde(T)
             = W (V^T W)^{-1} Lhat^{-*}[Ghat(T) - V^T Gtilde(T)]

    where Lhat^{-1} is applied by solving the reduced vectorized system.
    """
    V, W = red.V, red.W
    Kh = kron_reduced(red, sys.K_M)
    try:
        lu = scipy.linalg.lu_factor(Kh)
    except scipy.linalg.LinAlgError as exc:
        raise SingularReducedOperator(str(exc)) from exc
    nhat = red.nhat
    Fh_T = trajs.Fhat.terminal
    Ft_T = trajs.Ftilde.terminal
    Gh_T = trajs.Ghat.terminal
    Gt_T = trajs.Gtilde.terminal

    lhs1 = V @ gram.Phat_T - gram.Ptilde_T
    inner1 = Fh_T - np.linalg.solve(W.T @ V, W.T @ Ft_T)
    rhs1 = V @ unvec(scipy.linalg.lu_solve(lu, vec(inner1)), (nhat, nhat))
    r1, deg1 = _rel_residual(lhs1, rhs1, np.linalg.norm(gram.Ptilde_T))

    WVW = np.linalg.solve(V.T @ W, np.eye(nhat))
    lhs2 = W @ WVW @ gram.Qhat_T - gram.Qtilde_T
    inner2 = Gh_T - V.T @ Gt_T
    sol2 = scipy.linalg.lu_solve(lu, vec(inner2), trans=1)
    rhs2 = W @ WVW @ unvec(sol2, (nhat, nhat))
    r2, deg2 = _rel_residual(lhs2, rhs2, np.linalg.norm(gram.Qtilde_T))
    return (r1, r2), (deg1 or deg2)


def _krylov_init(A, B, nhat, rng):
    """Orthonormal n x nhat start basis from the block power sequence
    [B, A B, A^2 B, ...]; rank shortfall is padded with seeded random
    columns."""
    n = A.shape[0]
    blocks = [B]
    cur = B
    while sum(b.shape[1] for b in blocks) < nhat and len(blocks) <= n:
        cur = A @ cur
        scale = np.abs(cur).max()
        if scale > 0:
            cur = cur / scale
        blocks.append(cur)
    mtx = np.hstack(blocks)
    u, s, _ = np.linalg.svd(mtx, full_matrices=False)
    rank = int(np.sum(s > 1e-10 * s[0])) if s.size and s[0] > 0 else 0
    if rank >= nhat:
        basis = mtx
    else:
        extra = rng.standard_normal((n, nhat - rank + 2))
        basis = np.hstack([mtx, extra])
    return orth(basis, min_rank=nhat)[:, :nhat]


def _initial_pair(sys, nhat, opts, rng):
    if opts.init == "random":
        V = orth(rng.standard_normal((sys.n, nhat)), min_rank=nhat)
        W = orth(rng.standard_normal((sys.n, nhat)), min_rank=nhat)
        return V, W
    V = _krylov_init(sys.A, sys.X0, nhat, rng)
    W = _krylov_init(sys.A.T, sys.C.T, nhat, rng)
    return V, W


def _averaged_basis(Vold, Vnew, nhat):
    """Leading eigenvectors of the averaged orthogonal projectors; used to
    damp subspace flip-flop.  Fixed points of the damped update coincide
    with those of the plain one."""
    S = 0.5 * (Vold @ Vold.T + Vnew @ Vnew.T)
    w, U = np.linalg.eigh(S)
    return np.ascontiguousarray(U[:, ::-1][:, :nhat])


class _StallDamper:
    """Watches the subspace-change history; once the gap stops improving
    while still far from tolerance (period-2 oscillation between
    near-degenerate candidate subspaces), later iterates are averaged
    with their predecessors."""

    def __init__(self, tol, patience=6):
        self.tol = tol
        self.patience = patience
        self.best = np.inf
        self.since_best = 0
        self.active = False

    def update(self, gap):
        if gap < 0.95 * self.best:
            self.best = gap
            self.since_best = 0
        else:
            self.since_best += 1
        if not self.active and self.since_best >= self.patience \
                and gap > 100 * self.tol:
            self.active = True
        return self.active


def _gramians_with_fallback(sys, red, opts):
    notes = []
    include_full = opts.full_gramians
    if include_full and full_solve_memory_bytes(sys.n) > opts.memory_budget:
        include_full = False
        notes.append("full-order Gramians skipped (memory budget)")
    gram, trajs = solve_all_gramians(sys, red, grid=opts.grid,
                                     include_full=include_full,
                                     memory_budget=opts.memory_budget)
    return gram, trajs, notes


def _finite_diagnostics(sys, red, opts, iterations, converged, history):
    from .linsys import InitialExpansion

    gram, trajs, notes = _gramians_with_fallback(sys, red, opts)
    unit = InitialExpansion(np.eye(sys.m)[:, 0])
    bound = None
    if gram.P_T is not None:
        bound = error_bound(sys, red, gram, unit)
    cov_err = terminal_covariance_error(red, trajs)
    opt_res = optimality_residuals(sys, red, gram, trajs)
    fp_res, degenerate = fixed_point_identity_check(sys, red, gram, trajs)
    if degenerate:
        notes.append("fixed-point identities degenerate (both sides vanish)")
    return ReductionDiagnostics(
        bound_value=bound,
        terminal_cov_err=cov_err,
        opt_residuals=opt_res,
        fixed_point_residuals=fp_res,
        iterations=iterations,
        converged=converged,
        subspace_change_history=tuple(history),
        notes=tuple(notes),
    )


def sylvester_fixed_point(sys, nhat, opts=None):
    """Finite-horizon fixed-point reduction to dimension ``nhat``.

    Each sweep solves the mixed covariance ODEs for the current reduced
    coefficients, integrates over [0, T], orthonormalizes the integrals
    into the next projection pair and re-projects.  Stops when the
    projector gap drops below ``opts.tol``.  Returns the reduced system
    and its diagnostics; hitting the iteration cap flags the result
    instead of raising.
    """
    from .covariance import integrate_trajectory, solve_covariance

    opts = opts or FixedPointOptions()
    if not 1 <= nhat <= sys.n:
        raise ValueError("need 1 <= nhat <= n")
    from .errors import NearSingularProjection, NumericalFailure

    rng = np.random.default_rng(opts.seed)
    V, W = _initial_pair(sys, nhat, opts, rng)
    history = []
    converged = False
    iterations = 0
    retries = 0
    damper = _StallDamper(opts.tol)
    for iterations in range(1, opts.max_iter + 1):
        try:
            red = petrov_galerkin_reduce(sys, V, W, opts.cond_threshold)
            Km = kron_mixed(sys, red)
            xtraj = solve_covariance(Km, sys.X0 @ red.X0.T, sys.T,
                                     opts.grid, kind="mixed")
            ytraj = solve_covariance(Km.T, sys.C.T @ red.C, sys.T,
                                     opts.grid, kind="dual_mixed")
        except (NearSingularProjection, NumericalFailure):
            # a badly conditioned projection pair can blow the mixed
            # covariance past overflow; restart from a fresh pair like
            # the unstable-iterate policy of the infinite-horizon variant
            retries += 1
            if retries > 5:
                raise
            V = orth(rng.standard_normal((sys.n, nhat)), min_rank=nhat)
            W = orth(rng.standard_normal((sys.n, nhat)), min_rank=nhat)
            continue
        xint = integrate_trajectory(None, None, xtraj)
        yint = integrate_trajectory(None, None, ytraj)
        Vn = orth(xint, min_rank=nhat)
        Wn = orth(yint, min_rank=nhat)
        gap = max(projector_gap(V, Vn), projector_gap(W, Wn))
        history.append(gap)
        if damper.update(gap):
            V = _averaged_basis(V, Vn, nhat)
            W = _averaged_basis(W, Wn, nhat)
        else:
            V, W = Vn, Wn
        if gap < opts.tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"fixed-point iteration hit the cap ({opts.max_iter}); "
            f"last subspace change {history[-1]:.3e}",
            NotConvergedWarning,
        )
    red = petrov_galerkin_reduce(sys, V, W, opts.cond_threshold)
    if not opts.compute_diagnostics:
        diag = ReductionDiagnostics(
            bound_value=None, terminal_cov_err=(np.nan, np.nan),
            opt_residuals=np.full(4, np.nan),
            fixed_point_residuals=(np.nan, np.nan),
            iterations=iterations, converged=converged,
            subspace_change_history=tuple(history),
        )
        return red, diag
    diag = _finite_diagnostics(sys, red, opts, iterations, converged,
                               history)
    return red, diag


def stable_fixed_point(sys, nhat, opts=None):
    """Infinite-horizon variant for mean-square stable models.

    The sweep integrals are obtained from the mixed vectorized linear
    systems (drop the terminal values, solve K vec(X) = -vec(init));
    at convergence the limit optimality conditions hold exactly.  Unstable
    reduced iterates are rejected and re-randomized up to 5 times.
    """
    opts = opts or FixedPointOptions()
    if not 1 <= nhat <= sys.n:
        raise ValueError("need 1 <= nhat <= n")
    if not mean_square_stability(sys).stable:
        raise UnstableSystem("input model is not mean-square stable")
    rng = np.random.default_rng(opts.seed)
    V, W = _initial_pair(sys, nhat, opts, rng)
    history = []
    converged = False
    iterations = 0
    retries = 0
    it = 0
    damper = _StallDamper(opts.tol)
    while it < opts.max_iter:
        it += 1
        iterations = it
        red = petrov_galerkin_reduce(sys, V, W, opts.cond_threshold)
        if not reduced_stability(red, sys.K_M).stable:
            retries += 1
            if retries > 5:
                raise UnstableIterate(
                    "reduced iterates remained unstable after 5 retries"
                )
            V = orth(rng.standard_normal((sys.n, nhat)), min_rank=nhat)
            W = orth(rng.standard_normal((sys.n, nhat)), min_rank=nhat)
            continue
        Km = kron_mixed(sys, red)
        xinf = unvec(np.linalg.solve(Km, -vec(sys.X0 @ red.X0.T)),
                     (sys.n, nhat))
        yinf = unvec(np.linalg.solve(Km.T, -vec(sys.C.T @ red.C)),
                     (sys.n, nhat))
        Vn = orth(xinf, min_rank=nhat)
        Wn = orth(yinf, min_rank=nhat)
        gap = max(projector_gap(V, Vn), projector_gap(W, Wn))
        history.append(gap)
        if damper.update(gap):
            V = _averaged_basis(V, Vn, nhat)
            W = _averaged_basis(W, Wn, nhat)
        else:
            V, W = Vn, Wn
        if gap < opts.tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"fixed-point iteration hit the cap ({opts.max_iter}); "
            f"last subspace change {history[-1]:.3e}",
            NotConvergedWarning,
        )
    red = petrov_galerkin_reduce(sys, V, W, opts.cond_threshold)
    if not reduced_stability(red, sys.K_M).stable:
        raise UnstableIterate("final reduced system unstable")
    if not opts.compute_diagnostics:
        diag = ReductionDiagnostics(
            bound_value=None, terminal_cov_err=(np.nan, np.nan),
            opt_residuals=np.full(4, np.nan),
            fixed_point_residuals=(np.nan, np.nan),
            iterations=iterations, converged=converged,
            subspace_change_history=tuple(history),
        )
        return red, diag
    diag = _limit_diagnostics(sys, red, opts, iterations, converged, history)
    return red, diag


def _limit_diagnostics(sys, red, opts, iterations, converged, history):
    from .linsys import InitialExpansion

    notes = []
    include_full = opts.full_gramians
    if include_full and full_solve_memory_bytes(sys.n) > opts.memory_budget:
        include_full = False
        notes.append("full-order limit Gramians skipped (memory budget)")
    gram = limit_gramians(sys, red, include_full=include_full,
                          memory_budget=opts.memory_budget)
    bound = None
    if gram.P_T is not None:
        unit = InitialExpansion(np.eye(sys.m)[:, 0])
        bound = error_bound(sys, red, gram, unit)
    opt_res = limit_optimality_residuals(sys, red, gram)
    V, W = red.V, red.W
    scale_p = np.linalg.norm(gram.Ptilde_T)
    scale_q = np.linalg.norm(gram.Qtilde_T)
    r1, _ = _rel_residual(V @ gram.Phat_T, gram.Ptilde_T, scale_p)
    WVW = np.linalg.solve(V.T @ W, gram.Qhat_T)
    r2, _ = _rel_residual(W @ WVW, gram.Qtilde_T, scale_q)
    return ReductionDiagnostics(
        bound_value=bound,
        terminal_cov_err=(r1, r2),
        opt_residuals=opt_res,
        fixed_point_residuals=(r1, r2),
        iterations=iterations,
        converged=converged,
        subspace_change_history=tuple(history),
        notes=tuple(notes),
    )


def limit_gramians(sys, red, include_full=True,
                   memory_budget=DEFAULT_MEMORY_BUDGET):
    """Infinite-horizon Gramians from the six vectorized linear solves
    (K vec(P) = -vec(X0 X0^T) and friends).  Requires mean-square
    stability of both systems."""
    if not mean_square_stability(sys).stable:
        raise UnstableSystem("full model is not mean-square stable")
    if not reduced_stability(red, sys.K_M).stable:
        raise UnstableSystem("reduced model is not mean-square stable")
    n, nhat = sys.n, red.nhat
    Kh = kron_reduced(red, sys.K_M)
    Km = kron_mixed(sys, red)
    Phat = unvec(np.linalg.solve(Kh, -vec(red.X0 @ red.X0.T)), (nhat, nhat))
    Qhat = unvec(np.linalg.solve(Kh.T, -vec(red.C.T @ red.C)), (nhat, nhat))
    Ptilde = unvec(np.linalg.solve(Km, -vec(sys.X0 @ red.X0.T)), (n, nhat))
    Qtilde = unvec(np.linalg.solve(Km.T, -vec(sys.C.T @ red.C)), (n, nhat))
    P = Q = None
    if include_full:
        need = full_solve_memory_bytes(n)
        if need > memory_budget:
            raise MemoryBudgetExceeded(
                f"full-order solves need about {need / 2**30:.1f} GiB "
                f"(budget {memory_budget / 2**30:.1f} GiB)"
            )
        Kf = kron_full(sys)
        P = unvec(np.linalg.solve(Kf, -vec(sys.X0 @ sys.X0.T)), (n, n))
        Q = unvec(np.linalg.solve(Kf.T, -vec(sys.C.T @ sys.C)), (n, n))
    return GramianSet(
        P_T=P, Phat_T=Phat, Ptilde_T=Ptilde,
        Q_T=Q, Qhat_T=Qhat, Qtilde_T=Qtilde,
        F_T=None, Fhat_T=None, Ftilde_T=None,
        G_T=None, Ghat_T=None, Gtilde_T=None,
        horizon=np.inf,
    )


def limit_optimality_residuals(sys, red, gram):
    """Relative residuals of the limit optimality conditions
    (a) Chat Phat = C Ptilde, (b) Qhat X0hat = Qtilde^T X0,
    (c) Qhat Phat = Qtilde^T Ptilde, (d) the K_M-weighted versions of (c),
    max over rows."""
    for name in ("Phat_T", "Ptilde_T", "Qhat_T", "Qtilde_T"):
        if getattr(gram, name) is None:
            raise MissingGramian(f"{name} missing from Gramian set")
    scale_p = np.linalg.norm(gram.Ptilde_T)
    scale_q = np.linalg.norm(gram.Qtilde_T)
    r_a, _ = _rel_residual(red.C @ gram.Phat_T, sys.C @ gram.Ptilde_T,
                           scale_p)
    r_b, _ = _rel_residual(gram.Qhat_T @ red.X0, gram.Qtilde_T.T @ sys.X0,
                           scale_q)
    r_c, _ = _rel_residual(gram.Qhat_T @ gram.Phat_T,
                           gram.Qtilde_T.T @ gram.Ptilde_T,
                           scale_p * scale_q)
    sums_hat = _noise_sums(red.N, sys.K_M)
    sums_full = _noise_sums(sys.N, sys.K_M)
    r_d = 0.0
    for i in range(sys.q):
        lhs = gram.Qhat_T @ sums_hat[i] @ gram.Phat_T
        rhs = gram.Qtilde_T.T @ sums_full[i] @ gram.Ptilde_T
        r_i, _ = _rel_residual(lhs, rhs, scale_p * scale_q)
        r_d = max(r_d, r_i)
    return np.array([r_a, r_b, r_c, r_d])


def hankel_singular_values(P, Q):
    """Square roots of the eigenvalues of P Q via symmetric factorization
    (singular values of Lq^T Lp), with the balancing transform attached
    when both inputs are definite."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n = P.shape[0]
    if P.shape != (n, n) or Q.shape != (n, n):
        raise ValueError("P and Q must be square with matching size")
    out = []
    for name, M in (("P", P), ("Q", Q)):
        sym = np.abs(M - M.T).max()
        if sym > 1e-8 * max(np.abs(M).max(), 1e-300):
            raise IndefiniteInput(f"{name} is not symmetric")
        w, U = np.linalg.eigh(0.5 * (M + M.T))
        if w[0] < -1e-8 * max(w[-1], 1e-300):
            raise IndefiniteInput(
                f"{name} indefinite: min eig {w[0]:.3e}, max {w[-1]:.3e}"
            )
        out.append((w, U))
    (wp, Up), (wq, Uq) = out
    Lp = Up * np.sqrt(np.clip(wp, 0.0, None))
    Lq = Uq * np.sqrt(np.clip(wq, 0.0, None))
    u, s, vt = np.linalg.svd(Lq.T @ Lp)
    eig_P = np.sort(wp)[::-1].copy()
    eig_Q = np.sort(wq)[::-1].copy()
    balancing = None
    if wp[0] > 1e-12 * wp[-1] and wq[0] > 1e-12 * wq[-1] \
            and wp[0] > 0 and wq[0] > 0 and s[-1] > 0:
        balancing = (s ** -0.5)[:, None] * (u.T @ Lq.T)
    return HsvReport(hsv=s, eig_P=eig_P, eig_Q=eig_Q, balancing_T=balancing)
