"""Model data types, vectorized operator algebra, projections, stability.

A model is the linear stochastic system

    dx(t) = A x(t) dt + sum_i N_i x(t-) dM_i(t),   x(0) = X0 z0,
    y(t)  = C x(t),

driven by a square-integrable mean-zero Levy process M with covariance
E[M(t)M(t)^T] = K_M t.  Only the covariance K_M enters the deterministic
machinery here; path simulation (simulate module) restricts to Brownian
drivers.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .errors import NearSingularProjection, NumericalFailure, RankDeficient

DEFAULT_COND_THRESHOLD = 1e8
DEFAULT_ORTH_TOL = 1e-10


def vec(x):
    """Column-stacking vectorization."""
    return np.asarray(x).reshape(-1, order="F")


def unvec(v, shape):
    return np.asarray(v).reshape(shape, order="F")


def _as_matrix(x, name):
    a = np.asarray(x, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class SystemCoefficients:
    """Coefficients (A, N_1..N_q, X0, C, K_M) and the horizon T."""

    A: np.ndarray
    N: tuple
    X0: np.ndarray
    C: np.ndarray
    K_M: np.ndarray
    T: float

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        N = tuple(_as_matrix(Ni, "N[i]") for Ni in self.N)
        X0 = _as_matrix(self.X0, "X0")
        C = _as_matrix(self.C, "C")
        K_M = _as_matrix(self.K_M, "K_M")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "X0", X0)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "K_M", K_M)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("A must be square")
        if n < 1 or len(N) < 1 or X0.shape[1] < 1 or C.shape[0] < 1:
            raise ValueError("dimensions n, q, m, p must all be at least 1")
        for Ni in N:
            if Ni.shape != (n, n):
                raise ValueError("every N[i] must be n x n")
        if X0.shape[0] != n:
            raise ValueError("X0 must have n rows")
        if C.shape[1] != n:
            raise ValueError("C must have n columns")
        q = len(N)
        if K_M.shape != (q, q):
            raise ValueError("K_M must be q x q")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        _check_psd(K_M, "K_M", rel_tol=1e-12)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def q(self):
        return len(self.N)

    @property
    def m(self):
        return self.X0.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    def with_output(self, C):
        """Same model with a different output map."""
        return replace(self, C=_as_matrix(C, "C"))


def _check_psd(K, name, rel_tol):
    sym_err = np.abs(K - K.T).max()
    scale = max(np.abs(K).max(), 1e-300)
    if sym_err > 1e-10 * scale:
        raise ValueError(f"{name} must be symmetric")
    w = np.linalg.eigvalsh(0.5 * (K + K.T))
    if w[0] < -rel_tol * max(w[-1], 0.0) - 1e-300:
        raise ValueError(
            f"{name} must be positive semidefinite "
            f"(min eigenvalue {w[0]:.3e}, max {w[-1]:.3e})"
        )


@dataclass(frozen=True)
class InitialExpansion:
    """Expansion coefficients of the concrete initial state in im[X0]."""

    z0: np.ndarray

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.z0, dtype=float))
        if z.ndim != 1:
            raise ValueError("z0 must be a vector")
        object.__setattr__(self, "z0", z)

    @property
    def m(self):
        return self.z0.shape[0]

    @property
    def norm(self):
        return float(np.linalg.norm(self.z0))


@dataclass(frozen=True)
class ReducedSystem:
    """Reduced coefficients plus the projection pair (V, W).

    The optional state-space transform S is a hook for variants that
    re-parameterize the reduced basis each sweep; the shipped algorithms
    keep it at identity.
    """

    A: np.ndarray
    N: tuple
    X0: np.ndarray
    C: np.ndarray
    V: np.ndarray
    W: np.ndarray
    S: np.ndarray = None
    cond_WV: float = np.nan

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        N = tuple(_as_matrix(Ni, "N[i]") for Ni in self.N)
        X0 = _as_matrix(self.X0, "X0")
        C = _as_matrix(self.C, "C")
        V = _as_matrix(self.V, "V")
        W = _as_matrix(self.W, "W")
        S = np.eye(A.shape[0]) if self.S is None else _as_matrix(self.S, "S")
        for nm, val in (("A", A), ("N", N), ("X0", X0), ("C", C),
                        ("V", V), ("W", W), ("S", S)):
            object.__setattr__(self, nm, val)
        r = A.shape[0]
        if not (1 <= r <= V.shape[0]):
            raise ValueError("need 1 <= reduced dimension <= n")
        if any(Ni.shape != (r, r) for Ni in N) or X0.shape[0] != r \
                or C.shape[1] != r or V.shape[1] != r or W.shape[1] != r \
                or S.shape != (r, r):
            raise ValueError("inconsistent reduced dimensions")
        if V.shape != W.shape:
            raise ValueError("V and W must have the same shape")

    @property
    def nhat(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.V.shape[0]

    @property
    def q(self):
        return len(self.N)


def lyapunov_apply(sys, X, adjoint=False):
    """Apply the covariance-evolution operator (or its Frobenius adjoint).

    Forward:  A X + X A^T + sum_ij N_i X N_j^T k_ij
    Adjoint:  A^T X + X A + sum_ij N_i^T X N_j k_ij
    """
    X = _as_matrix(X, "X")
    n = sys.n
    if X.shape != (n, n):
        raise ValueError(f"X must be {n} x {n}, got {X.shape}")
    A, N, K = sys.A, sys.N, sys.K_M
    # sum_ij k_ij N_i X N_j^T = sum_j P_j X N_j^T with P_j = sum_i k_ij N_i
    Nstack = np.stack(N)
    P = np.tensordot(K, Nstack, axes=(0, 0))
    if adjoint:
        out = A.T @ X + X @ A
        for j in range(sys.q):
            out += P[j].T @ X @ N[j]
    else:
        out = A @ X + X @ A.T
        for j in range(sys.q):
            out += P[j] @ X @ N[j].T
    return out


def kronecker_matrix(A, N, B, M, K_M):
    """Vectorized representation of X -> A X + X B^T + sum_ij N_i X M_j^T k_ij
    for X of shape (dim A, dim B):

        I (x) A  +  B (x) I  +  sum_ij  M_j (x) N_i  k_ij.

    With (B, M) = (A, N) this is the evolution matrix of the state
    covariance; with (B, M) the reduced coefficients it is the mixed one,
    and with both reduced the evolution matrix of the reduced covariance.
    """
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    if len(N) != len(M):
        raise ValueError("coefficient sets must share the noise dimension q")
    K_M = _as_matrix(K_M, "K_M")
    na, nb = A.shape[0], B.shape[0]
    out = np.kron(np.eye(nb), A) + np.kron(B, np.eye(na))
    # sum_ij k_ij (M_j kron N_i) = sum_j (M_j kron P_j), P_j = sum_i k_ij N_i
    Nstack = np.stack([np.asarray(Ni, dtype=float) for Ni in N])
    Mstack = np.stack([np.asarray(Mj, dtype=float) for Mj in M])
    P = np.tensordot(K_M, Nstack, axes=(0, 0))
    noise = np.einsum("jbd,jac->badc", Mstack, P, optimize=True)
    out += noise.reshape(nb * na, nb * na)
    return out


def kron_full(sys):
    return kronecker_matrix(sys.A, sys.N, sys.A, sys.N, sys.K_M)


def kron_reduced(red, K_M):
    return kronecker_matrix(red.A, red.N, red.A, red.N, K_M)


def kron_mixed(sys, red):
    return kronecker_matrix(sys.A, sys.N, red.A, red.N, sys.K_M)


def kronecker_condition(kron):
    """1-norm condition estimate of a vectorized evolution matrix."""
    try:
        lu, piv = scipy.linalg.lu_factor(kron)
    except scipy.linalg.LinAlgError:
        return np.inf
    anorm = np.linalg.norm(kron, 1)
    gecon = scipy.linalg.get_lapack_funcs("gecon", (kron,))
    rcond, info = gecon(lu, anorm)
    if info != 0 or rcond == 0.0:
        return np.inf
    return 1.0 / rcond


def petrov_galerkin_reduce(sys, V, W, cond_threshold=DEFAULT_COND_THRESHOLD):
    """Project the model onto im[V] along the complement of im[W]."""
    V = _as_matrix(V, "V")
    W = _as_matrix(W, "W")
    if V.shape != W.shape or V.shape[0] != sys.n:
        raise ValueError("V, W must be n x nhat with matching shapes")
    WtV = W.T @ V
    cond = float(np.linalg.cond(WtV))
    if not np.isfinite(cond) or cond > cond_threshold:
        raise NearSingularProjection(
            f"cond(W^T V) = {cond:.3e} exceeds threshold {cond_threshold:.1e}"
        )
    lu, piv = scipy.linalg.lu_factor(WtV)

    def proj(mat):
        return scipy.linalg.lu_solve((lu, piv), W.T @ mat)

    Ahat = proj(sys.A @ V)
    Nhat = tuple(proj(Ni @ V) for Ni in sys.N)
    X0hat = proj(sys.X0)
    Chat = sys.C @ V
    return ReducedSystem(A=Ahat, N=Nhat, X0=X0hat, C=Chat, V=V, W=W,
                         cond_WV=cond)


def full_order_identity(sys):
    """The trivial reduction V = W = I (coefficients unchanged)."""
    eye = np.eye(sys.n)
    return petrov_galerkin_reduce(sys, eye, eye)


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    spectral_abscissa: float


def _diag_noise_vectors(sys):
    """Diagonals of the noise maps when A and every N_i are diagonal,
    else None."""
    n = sys.n
    off = ~np.eye(n, dtype=bool)
    if np.any(sys.A[off] != 0.0):
        return None
    D = np.empty((sys.q, n))
    for i, Ni in enumerate(sys.N):
        if np.any(Ni[off] != 0.0):
            return None
        D[i] = np.diag(Ni)
    return D


def mean_square_stability(sys):
    """Check mean-square asymptotic stability via the spectral abscissa of
    the vectorized evolution matrix.

    Componentwise models (diagonal A and N_i) reduce to the closed-form
    abscissa max_ij (a_i + a_j + (D^T K_M D)_ij), evaluated exactly.
    """
    D = _diag_noise_vectors(sys)
    if D is not None:
        a = np.diag(sys.A)
        S = D.T @ sys.K_M @ D
        absc = float(np.max(a[:, None] + a[None, :] + S))
        return StabilityReport(stable=absc < 0.0, spectral_abscissa=absc)
    try:
        w = np.linalg.eigvals(kron_full(sys))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigenvalue solve failed: {exc}") from exc
    absc = float(np.max(w.real))
    return StabilityReport(stable=absc < 0.0, spectral_abscissa=absc)


def reduced_stability(red, K_M):
    """Stability report for a reduced system (small eigenproblem)."""
    try:
        w = np.linalg.eigvals(kron_reduced(red, K_M))
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigenvalue solve failed: {exc}") from exc
    absc = float(np.max(w.real))
    return StabilityReport(stable=absc < 0.0, spectral_abscissa=absc)


def build_bs_model(r, delta, xi, x0, K_B, T, C=None):
    """Componentwise geometric model: dx_i = (r - delta) x_i dt
    + xi_i x_i dB_i with q = n, X0 = x0 (m = 1), z0 = 1.

    The output map C is caller-supplied (basket row, identity, ...);
    defaults to identity.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = xi.shape[0]
    if x0.shape[0] != n:
        raise ValueError("xi and x0 must have the same length")
    if np.any(xi <= 0):
        raise ValueError("volatilities must be positive")
    K_B = _as_matrix(K_B, "K_B")
    if K_B.shape != (n, n):
        raise ValueError("K_B must be n x n")
    _check_psd(K_B, "K_B", rel_tol=1e-12)
    if np.abs(np.diag(K_B) - 1.0).max() > 1e-8:
        raise ValueError("K_B must have unit diagonal")
    A = (r - delta) * np.eye(n)
    N = []
    for i in range(n):
        Ni = np.zeros((n, n))
        Ni[i, i] = xi[i]
        N.append(Ni)
    Cmat = np.eye(n) if C is None else _as_matrix(C, "C")
    sys = SystemCoefficients(A=A, N=tuple(N), X0=x0[:, None], C=Cmat,
                             K_M=K_B, T=float(T))
    return sys, InitialExpansion(z0=np.array([1.0]))


def orth(mtx, tol=DEFAULT_ORTH_TOL, min_rank=None):
    """Orthonormal basis of the numerical column span of ``mtx``.

    Singular values below ``tol * sigma_max`` are truncated.  Basis signs
    follow a fixed convention (first nonzero entry of each right singular
    vector positive) so repeated runs are bit-for-bit identical.
    """
    mtx = _as_matrix(mtx, "mtx")
    if not np.any(mtx != 0.0):
        raise RankDeficient("matrix is zero; no column span")
    u, s, vt = np.linalg.svd(mtx, full_matrices=False)
    rank = int(np.sum(s > tol * s[0]))
    if min_rank is not None and rank < min_rank:
        raise RankDeficient(
            f"numerical rank {rank} below requested {min_rank}"
        )
    u = u[:, :rank].copy()
    for k in range(rank):
        row = vt[k]
        nz = np.nonzero(np.abs(row) > 1e-12 * np.abs(row).max())[0]
        if nz.size and row[nz[0]] < 0.0:
            u[:, k] = -u[:, k]
    return u


def projector_gap(Q1, Q2):
    """Spectral-norm distance of the orthogonal projectors onto the spans
    of two orthonormal bases."""
    P1 = Q1 @ Q1.T
    P2 = Q2 @ Q2.T
    return float(np.linalg.norm(P1 - P2, 2))
