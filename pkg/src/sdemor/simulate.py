"""Coupled Monte Carlo simulation of full and reduced models.

Full and reduced states ride on common Brownian increments
dB = chol sqrt(dt) zeta, so pathwise output differences estimate the
reduction error directly.  Noise is counter-based (rng module): path i
depends only on (seed, i) regardless of chunking, worker count, or which
reduced systems are co-simulated.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (
    CapMissing,
    MemoryBudgetExceeded,
    NotDiagonalModel,
    StepTooCoarse,
)

DEFAULT_DT = 1.0 / 500.0
_CHUNK = 16384
_STATE_BUDGET = 4 * 2**30


@dataclass(frozen=True)
class CirParams:
    """Mean-reverting square-root variance factor with a hard cap."""

    kappa: float
    theta: float
    sigma: float
    v0: float
    cap: float

    def __post_init__(self):
        if not self.cap > 0:
            raise CapMissing("variance cap must be positive")


@dataclass(frozen=True)
class NoiseSpec:
    """Driving noise: plain Brownian with covariance K_M, or K_M scaled by
    capped square-root variance factors (one scalar factor, or one per
    component with K_M diagonal).  The capped process never exceeds K_M
    in definiteness by construction."""

    kind: str  # brownian | capped_cir_scalar | capped_cir_diagonal
    K_M: np.ndarray
    cir: tuple = None

    def __post_init__(self):
        K = np.asarray(self.K_M, dtype=float)
        object.__setattr__(self, "K_M", K)
        if self.kind not in ("brownian", "capped_cir_scalar",
                             "capped_cir_diagonal"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind != "brownian":
            if self.cir is None:
                raise CapMissing("capped variance parameters required")
            cir = tuple(self.cir) if isinstance(self.cir, (tuple, list)) \
                else (self.cir,)
            object.__setattr__(self, "cir", cir)
            if self.kind == "capped_cir_scalar" and len(cir) != 1:
                raise ValueError("scalar kind takes exactly one factor")
            if self.kind == "capped_cir_diagonal":
                q = K.shape[0]
                if len(cir) != q:
                    raise ValueError("diagonal kind needs one factor per "
                                     "noise component")
                off = ~np.eye(q, dtype=bool)
                if np.abs(K[off]).max(initial=0.0) > 1e-12:
                    raise ValueError("diagonal kind requires diagonal K_M")
                if np.abs(np.diag(K) -
                          np.array([c.cap for c in cir])).max() > 1e-10:
                    raise ValueError("diagonal K_M must carry the caps")
        chol = _psd_chol(K)
        object.__setattr__(self, "chol", chol)

    @property
    def vol_mode(self):
        return {"brownian": _kernels.VOL_NONE,
                "capped_cir_scalar": _kernels.VOL_SCALAR,
                "capped_cir_diagonal": _kernels.VOL_DIAGONAL}[self.kind]


def _psd_chol(K):
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        w, U = np.linalg.eigh(0.5 * (K + K.T))
        if w[0] < -1e-10 * max(w[-1], 1e-300):
            raise ValueError("noise covariance is not positive semidefinite")
        return U * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class PathEnsemble:
    """Coupled trajectories stored at the observation dates only.

    ``x_paths`` is (M, nobs, n) or None when full-state storage was
    switched off; ``xhat_paths`` is (M, nobs, nhat).  Paths with the same
    index share their Brownian increments across both sides and across
    ensembles simulated from the same seed.
    """

    M: int
    dt: float
    times: np.ndarray
    x_paths: np.ndarray
    xhat_paths: np.ndarray
    seed: int
    scheme: str  # euler_maruyama | exact_gbm_full
    nhat: int
    v_paths: np.ndarray = None

    @property
    def nobs(self):
        return self.times.shape[0]


def componentwise_structure(sys):
    """(drift diagonal, volatility vector) when A is diagonal, q = n and
    each N_i has its only nonzero at (i, i); else None."""
    n = sys.n
    if sys.q != n:
        return None
    off = ~np.eye(n, dtype=bool)
    if np.any(sys.A[off] != 0.0):
        return None
    xi = np.empty(n)
    for i, Ni in enumerate(sys.N):
        if np.any(Ni[off] != 0.0):
            return None
        d = np.diag(Ni)
        if np.any(d[np.arange(n) != i] != 0.0):
            return None
        xi[i] = d[i]
    return np.diag(sys.A).copy(), xi


def _step_layout(T, dt, observe):
    obs = np.asarray(observe, dtype=float)
    if obs.ndim != 1 or obs.size == 0:
        raise ValueError("observe must be a nonempty 1-d date list")
    if np.any(np.diff(obs) <= 0):
        raise ValueError("observation dates must be strictly increasing")
    if obs[0] < 0 or obs[-1] > T + 1e-12:
        raise ValueError("observation dates must lie in [0, T]")
    gaps = np.diff(np.concatenate([[0.0], obs]))
    pos = gaps[gaps > 0]
    if pos.size and dt > pos.min() + 1e-12:
        raise StepTooCoarse(
            f"dt = {dt} exceeds smallest observation gap {pos.min()}"
        )
    counts = np.rint(gaps / dt).astype(np.int64)
    if np.abs(gaps - counts * dt).max() > 1e-9 * max(T, 1.0):
        raise ValueError("dt must divide the gaps between observation dates")
    return obs, counts


def _initial_states(sys, reds, z0):
    z = np.ones(sys.m) if z0 is None else np.asarray(z0, dtype=float)
    x0 = sys.X0 @ z
    xh0 = [r.X0 @ z for r in reds]
    return x0, xh0


def _vol_arrays(noise):
    if noise.vol_mode == _kernels.VOL_NONE:
        z = np.zeros(1)
        return np.ones(1), z, z, z, np.ones(1)
    cir = noise.cir
    v0 = np.array([c.v0 for c in cir])
    kappa = np.array([c.kappa for c in cir])
    theta = np.array([c.theta for c in cir])
    sigma = np.array([c.sigma for c in cir])
    cap = np.array([c.cap for c in cir])
    return v0, kappa, theta, sigma, cap


def simulate_coupled_sweep(sys, reds, noise, M, dt, observe, seed,
                           store_full=True, z0=None):
    """Simulate the full model and any number of reduced systems on one
    shared noise stream; returns one ensemble per reduced system (the
    full-state array is shared)."""
    if M < 1:
        raise ValueError("path count must be at least 1")
    obs, counts = _step_layout(sys.T, dt, observe)
    nobs = obs.shape[0]
    n, q = sys.n, sys.q
    if store_full and M * nobs * n * 8 > _STATE_BUDGET:
        raise MemoryBudgetExceeded(
            f"full-state storage needs {M * nobs * n * 8 / 2**30:.1f} GiB"
        )
    x0, xh0 = _initial_states(sys, reds, z0)
    nsys = len(reds)
    nh = np.array([r.nhat for r in reds], dtype=np.int64)
    offs = np.zeros(nsys + 1, dtype=np.int64)
    offs[1:] = np.cumsum(nh)
    nhmax = int(nh.max())
    xhat0_pad = np.zeros((nsys, nhmax))
    Ahat_pad = np.zeros((nsys, nhmax, nhmax))
    for s, r in enumerate(reds):
        xhat0_pad[s, :r.nhat] = xh0[s]
        Ahat_pad[s, :r.nhat, :r.nhat] = r.A
    chol = np.ascontiguousarray(noise.chol)
    v0, kappa, theta, sigma, cap = _vol_arrays(noise)
    Xout = np.empty((M, nobs, n)) if store_full else np.empty((1, 1, 1))
    XHout = np.empty((M, nobs, int(offs[-1])))
    Vout = np.empty((M, nobs, cap.shape[0])) \
        if noise.vol_mode != _kernels.VOL_NONE else np.empty((1, 1, 1))

    struct = componentwise_structure(sys)
    use_proj = struct is not None and all(
        _projection_consistent(sys, r) for r in reds
    )
    if use_proj:
        ad, xi = struct
        V_pad = np.zeros((nsys, n, nhmax))
        Wt_pad = np.zeros((nsys, nhmax, n))
        for s, r in enumerate(reds):
            V_pad[s, :, :r.nhat] = r.V
            Wt_pad[s, :r.nhat, :] = np.linalg.solve(r.W.T @ r.V, r.W.T)
        _kernels.sim_componentwise(
            M, np.uint64(seed), float(dt), counts, store_full,
            ad, xi, chol, x0,
            nsys, nh, offs, xhat0_pad, Ahat_pad, V_pad, Wt_pad,
            noise.vol_mode, v0, kappa, theta, sigma, cap,
            Xout, XHout, Vout,
        )
    else:
        A = np.ascontiguousarray(sys.A)
        Nstack = np.stack([np.ascontiguousarray(Ni) for Ni in sys.N])
        Nhat_pad = np.zeros((nsys, q, nhmax, nhmax))
        for s, r in enumerate(reds):
            for i in range(q):
                Nhat_pad[s, i, :r.nhat, :r.nhat] = r.N[i]
        _kernels.sim_dense(
            M, np.uint64(seed), float(dt), counts, store_full,
            A, Nstack, chol, x0,
            nsys, nh, offs, xhat0_pad, Ahat_pad, Nhat_pad,
            noise.vol_mode, v0, kappa, theta, sigma, cap,
            Xout, XHout, Vout,
        )
    xp = Xout if store_full else None
    vp = Vout if noise.vol_mode != _kernels.VOL_NONE else None
    out = []
    for s in range(nsys):
        out.append(PathEnsemble(
            M=M, dt=float(dt), times=obs, x_paths=xp,
            xhat_paths=np.ascontiguousarray(
                XHout[:, :, offs[s]:offs[s + 1]]),
            seed=int(seed), scheme="euler_maruyama", nhat=int(nh[s]),
            v_paths=vp,
        ))
    return out


def _projection_consistent(sys, red, tol=1e-10):
    """The factored fast path steps the reduced noise through
    (W^T V)^{-1} W^T N_i V; it is only valid when the stored reduced
    coefficients actually are those projections."""
    Wt = np.linalg.solve(red.W.T @ red.V, red.W.T)
    scale = max(np.linalg.norm(red.A), 1e-300)
    if np.linalg.norm(Wt @ sys.A @ red.V - red.A) > tol * scale:
        return False
    for Ni, Nhi in zip(sys.N, red.N):
        scale = max(np.linalg.norm(Nhi), np.linalg.norm(Ni), 1e-300)
        if np.linalg.norm(Wt @ Ni @ red.V - Nhi) > tol * scale:
            return False
    return True


def simulate_coupled(sys, red, noise, M, dt, observe, seed,
                     store_full=True, z0=None):
    """Coupled full/reduced ensemble on common Brownian increments via
    the Euler scheme (both sides share dt and per-step increments)."""
    if noise.kind != "brownian":
        raise ValueError("use simulate_heston for capped-variance noise")
    return simulate_coupled_sweep(sys, [red], noise, M, dt, observe, seed,
                                  store_full=store_full, z0=z0)[0]


def simulate_heston(sys, red, noise, M, dt, observe, seed,
                    store_full=True, z0=None):
    """Coupled simulation under capped square-root stochastic volatility:
    the state noise is scaled per step by sqrt(min(v(t), cap)/cap), with
    v simulated by full-truncation Euler on an independent stream."""
    if noise.kind == "brownian":
        raise CapMissing("capped variance parameters required")
    reds = red if isinstance(red, (list, tuple)) else [red]
    out = simulate_coupled_sweep(sys, list(reds), noise, M, dt, observe,
                                 seed, store_full=store_full, z0=z0)
    return out if isinstance(red, (list, tuple)) else out[0]


def exact_gbm_paths(sys, M, observe, seed, dt=None):
    """Exact componentwise geometric sampling at the observation dates.

    With ``dt`` set, the Brownian level is accumulated from the same
    per-step increments the Euler scheme consumes, giving a strongly
    coupled reference; otherwise date-level increments are drawn on a
    separate stream.
    """
    struct = componentwise_structure(sys)
    if struct is None:
        raise NotDiagonalModel(
            "exact sampling needs the componentwise model structure"
        )
    ad, xi = struct
    if dt is None:
        obs = np.asarray(observe, dtype=float)
        if np.any(np.diff(obs) <= 0) or obs.size == 0:
            raise ValueError("observation dates must be increasing")
        counts = np.zeros(obs.shape[0], dtype=np.int64)
        use_step = False
        dt_eff = 1.0
    else:
        obs, counts = _step_layout(sys.T, dt, observe)
        use_step = True
        dt_eff = float(dt)
    n = sys.n
    Xout = np.empty((M, obs.shape[0], n))
    chol = np.ascontiguousarray(_psd_chol(sys.K_M))
    kdiag = np.ascontiguousarray(np.diag(sys.K_M))
    x0 = sys.X0 @ np.ones(sys.m)
    _kernels.sim_exact_gbm(M, np.uint64(seed), obs, counts, dt_eff,
                           use_step, ad, xi, kdiag, chol, x0, Xout)
    return Xout


@dataclass(frozen=True)
class L2ErrorEstimate:
    err: float
    norm_y: float
    stderr: float
    rel_err: float


def l2_error_estimate(ens, C, Chat=None, V=None):
    """Monte Carlo estimate of the integrated squared output error
    sqrt(E int ||y - yhat||^2 dt) by trapezoid quadrature over the stored
    dates, together with the output norm on the same grid."""
    if ens.x_paths is None:
        raise ValueError("ensemble was simulated without full-state storage")
    if Chat is None:
        if V is None:
            raise ValueError("need Chat (or V to form C V)")
        Chat = np.asarray(C) @ np.asarray(V)
    C = np.asarray(C, dtype=float)
    Chat = np.asarray(Chat, dtype=float)
    times = ens.times
    wts = np.zeros(times.shape[0])
    wts[:-1] += 0.5 * np.diff(times)
    wts[1:] += 0.5 * np.diff(times)
    sum_d = 0.0
    sum_d2 = 0.0
    sum_y = 0.0
    M = ens.M
    for lo in range(0, M, _CHUNK):
        hi = min(lo + _CHUNK, M)
        y = ens.x_paths[lo:hi] @ C.T
        yh = ens.xhat_paths[lo:hi] @ Chat.T
        d2 = np.square(y - yh).sum(axis=2) @ wts
        y2 = np.square(y).sum(axis=2) @ wts
        sum_d += d2.sum()
        sum_d2 += np.square(d2).sum()
        sum_y += y2.sum()
    mean_d = sum_d / M
    var_d = max(sum_d2 / M - mean_d**2, 0.0) / max(M - 1, 1)
    err = float(np.sqrt(max(mean_d, 0.0)))
    norm_y = float(np.sqrt(sum_y / M))
    stderr = float(np.sqrt(var_d) / (2.0 * err)) if err > 0 else 0.0
    rel = err / norm_y if norm_y > 0 else np.inf
    return L2ErrorEstimate(err=err, norm_y=norm_y, stderr=stderr,
                           rel_err=rel)


def mc_covariance(ens):
    """Sample second-moment matrices E[x(t) x(t)^T] at the stored dates
    with per-entry standard errors."""
    if ens.x_paths is None:
        raise ValueError("ensemble was simulated without full-state storage")
    M, nobs, n = ens.x_paths.shape
    mean = np.zeros((nobs, n, n))
    msq = np.zeros((nobs, n, n))
    for lo in range(0, M, _CHUNK):
        hi = min(lo + _CHUNK, M)
        x = ens.x_paths[lo:hi]
        outer = np.einsum("mdi,mdj->dij", x, x)
        outer2 = np.einsum("mdi,mdj->dij", np.square(x), np.square(x))
        mean += outer
        msq += outer2
    mean /= M
    var = np.clip(msq / M - np.square(mean), 0.0, None) / max(M - 1, 1)
    return mean, np.sqrt(var)
