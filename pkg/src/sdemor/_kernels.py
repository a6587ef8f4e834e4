"""Numba kernels for coupled path simulation.

Paths are processed in fixed-size blocks; every contraction is written
as an explicit loop with a fixed summation order, so the per-path
results depend only on (seed, path index, step index) and the system's
own dimensions - never on block size, worker count, ensemble size, or
which systems are co-simulated.  All outputs are written by path index.

Two model structures are compiled separately:

* componentwise (diagonal drift, one-asset-per-noise volatility): the
  full state updates elementwise and reduced systems update through
  their projection factors,
* dense: both sides step through stacked coefficient tensors with the
  same inlined routine.

A stochastic-volatility mode scales the noise increments by a capped
variance process (one scalar factor or one factor per noise component)
simulated with full-truncation Euler on its own noise stream.
"""

import numba as nb
import numpy as np

from .rng import STREAM_DATES, STREAM_STATE, STREAM_VOL, fill_normals

BLOCK = 256

VOL_NONE = 0
VOL_SCALAR = 1
VOL_DIAGONAL = 2


@nb.njit(inline="always")
def _matmul_bt(X, Brows, ncols, kdim, bsz, out):
    """out[:bsz, :ncols] = X[:bsz, :kdim] @ Brows[:ncols, :kdim]^T with a
    fixed k-ascending summation order (rows of Brows are contiguous)."""
    for b in range(bsz):
        for j in range(ncols):
            acc = 0.0
            for k in range(kdim):
                acc += X[b, k] * Brows[j, k]
            out[b, j] = acc


@nb.njit(inline="always")
def _vol_step(mode, v, scale, bsz, nfac, kappa, theta, sigma, cap, dt, sqdt,
              i0, k, seed):
    """Advance the variance factors one step (full truncation) and leave
    the per-factor noise scales sqrt(min(v, cap)/cap) for the CURRENT
    values in ``scale``."""
    if mode == VOL_NONE:
        return
    for b in range(bsz):
        for f in range(nfac):
            vc = v[b, f]
            vcap = vc if vc < cap[f] else cap[f]
            if vcap < 0.0:
                vcap = 0.0
            scale[b, f] = np.sqrt(vcap / cap[f])
    zv = np.empty(nfac)
    for b in range(bsz):
        fill_normals(zv, k, i0 + b, STREAM_VOL, seed)
        for f in range(nfac):
            vc = v[b, f]
            vplus = vc if vc > 0.0 else 0.0
            v[b, f] = vc + kappa[f] * (theta[f] - vplus) * dt \
                + sigma[f] * np.sqrt(vplus) * sqdt * zv[f]


@nb.njit(inline="always")
def _noise_block(Z, dB, chol, sqdt, bsz, i0, k, seed, vol_mode, scale, q):
    """Correlated increments dB_j = sum_c chol[j, c] z_c sqrt(dt),
    optionally scaled by the variance factors."""
    for b in range(bsz):
        fill_normals(Z[b], k, i0 + b, STREAM_STATE, seed)
    for b in range(bsz):
        for j in range(q):
            acc = 0.0
            for c in range(q):
                acc += Z[b, c] * chol[j, c]
            if vol_mode == VOL_SCALAR:
                dB[b, j] = acc * sqdt * scale[b, 0]
            elif vol_mode == VOL_DIAGONAL:
                dB[b, j] = acc * sqdt * scale[b, j]
            else:
                dB[b, j] = acc * sqdt


@nb.njit(inline="always")
def _dense_step(X, A, N, dB, dt, bsz, d, q, out):
    """out = X + (X @ A^T) dt + sum_i (X @ N_i^T) dB_i on rows 0..bsz and
    state dimension d (coefficient rows are contiguous)."""
    for b in range(bsz):
        for r in range(d):
            acc = 0.0
            for k in range(d):
                acc += X[b, k] * A[r, k]
            out[b, r] = X[b, r] + acc * dt
    for i in range(q):
        for b in range(bsz):
            w = dB[b, i]
            for r in range(d):
                acc = 0.0
                for k in range(d):
                    acc += X[b, k] * N[i, r, k]
                out[b, r] += acc * w


@nb.njit(parallel=True, cache=True)
def sim_componentwise(M, seed, dt, step_counts, store_full,
                      ad, xi, chol, x0,
                      nsys, nh, offs, xhat0_pad, Ahat_pad, V_pad, Wt_pad,
                      vol_mode, v0, kappa, theta, sigma, cap,
                      Xout, XHout, Vout):
    """Coupled componentwise full model + projected reduced systems.

    step_counts[d] = Euler steps to advance before storing date d (the
    first entry is 0 when the dates start at t = 0).  Reduced states are
    written into XHout[:, :, offs[s]:offs[s]+nh[s]].
    """
    n = x0.shape[0]
    q = chol.shape[0]
    nobs = step_counts.shape[0]
    nhmax = xhat0_pad.shape[1]
    sqdt = np.sqrt(dt)
    nfac = cap.shape[0]
    nblocks = (M + BLOCK - 1) // BLOCK
    for blk in nb.prange(nblocks):
        i0 = blk * BLOCK
        bsz = min(BLOCK, M - i0)
        X = np.empty((bsz, n))
        XH = np.zeros((nsys, bsz, nhmax))
        Z = np.empty((bsz, q))
        dB = np.empty((bsz, q))
        U = np.empty((bsz, n))
        drift = np.empty((bsz, nhmax))
        Wn = np.empty((bsz, nhmax))
        v = np.empty((bsz, nfac))
        scale = np.ones((bsz, nfac))
        for b in range(bsz):
            X[b] = x0
            for f in range(nfac):
                v[b, f] = v0[f]
        for s in range(nsys):
            for b in range(bsz):
                for r in range(nh[s]):
                    XH[s, b, r] = xhat0_pad[s, r]
        k = 0
        for d in range(nobs):
            for _ in range(step_counts[d]):
                _vol_step(vol_mode, v, scale, bsz, nfac, kappa, theta,
                          sigma, cap, dt, sqdt, i0, k, seed)
                _noise_block(Z, dB, chol, sqdt, bsz, i0, k, seed,
                             vol_mode, scale, q)
                for b in range(bsz):
                    for r in range(n):
                        X[b, r] = X[b, r] + (ad[r] * X[b, r]) * dt \
                            + xi[r] * X[b, r] * dB[b, r]
                for s in range(nsys):
                    XHs = XH[s]
                    rdim = nh[s]
                    _matmul_bt(XHs, V_pad[s], n, rdim, bsz, U)
                    _matmul_bt(XHs, Ahat_pad[s], rdim, rdim, bsz, drift)
                    for b in range(bsz):
                        for r in range(n):
                            U[b, r] = xi[r] * U[b, r] * dB[b, r]
                    _matmul_bt(U, Wt_pad[s], rdim, n, bsz, Wn)
                    for b in range(bsz):
                        for r in range(rdim):
                            XHs[b, r] = XHs[b, r] + drift[b, r] * dt \
                                + Wn[b, r]
                k += 1
            if store_full:
                for b in range(bsz):
                    for r in range(n):
                        Xout[i0 + b, d, r] = X[b, r]
            for s in range(nsys):
                o = offs[s]
                for b in range(bsz):
                    for r in range(nh[s]):
                        XHout[i0 + b, d, o + r] = XH[s, b, r]
            if vol_mode != VOL_NONE:
                for b in range(bsz):
                    for f in range(nfac):
                        vc = v[b, f]
                        if vc > cap[f]:
                            vc = cap[f]
                        if vc < 0.0:
                            vc = 0.0
                        Vout[i0 + b, d, f] = vc


@nb.njit(parallel=True, cache=True)
def sim_dense(M, seed, dt, step_counts, store_full,
              A, N, chol, x0,
              nsys, nh, offs, xhat0_pad, Ahat_pad, Nhat_pad,
              vol_mode, v0, kappa, theta, sigma, cap,
              Xout, XHout, Vout):
    """Coupled dense full model + dense reduced systems (shared stepping
    routine on both sides)."""
    n = x0.shape[0]
    q = chol.shape[0]
    nobs = step_counts.shape[0]
    nhmax = xhat0_pad.shape[1]
    sqdt = np.sqrt(dt)
    nfac = cap.shape[0]
    nblocks = (M + BLOCK - 1) // BLOCK
    for blk in nb.prange(nblocks):
        i0 = blk * BLOCK
        bsz = min(BLOCK, M - i0)
        X = np.empty((bsz, n))
        Xn = np.empty((bsz, n))
        XH = np.zeros((nsys, bsz, nhmax))
        XHn = np.empty((bsz, nhmax))
        Z = np.empty((bsz, q))
        dB = np.empty((bsz, q))
        v = np.empty((bsz, nfac))
        scale = np.ones((bsz, nfac))
        for b in range(bsz):
            X[b] = x0
            for f in range(nfac):
                v[b, f] = v0[f]
        for s in range(nsys):
            for b in range(bsz):
                for r in range(nh[s]):
                    XH[s, b, r] = xhat0_pad[s, r]
        k = 0
        for d in range(nobs):
            for _ in range(step_counts[d]):
                _vol_step(vol_mode, v, scale, bsz, nfac, kappa, theta,
                          sigma, cap, dt, sqdt, i0, k, seed)
                _noise_block(Z, dB, chol, sqdt, bsz, i0, k, seed,
                             vol_mode, scale, q)
                _dense_step(X, A, N, dB, dt, bsz, n, q, Xn)
                for b in range(bsz):
                    for r in range(n):
                        X[b, r] = Xn[b, r]
                for s in range(nsys):
                    XHs = XH[s]
                    _dense_step(XHs, Ahat_pad[s], Nhat_pad[s], dB, dt,
                                bsz, nh[s], q, XHn)
                    for b in range(bsz):
                        for r in range(nh[s]):
                            XHs[b, r] = XHn[b, r]
                k += 1
            if store_full:
                for b in range(bsz):
                    for r in range(n):
                        Xout[i0 + b, d, r] = X[b, r]
            for s in range(nsys):
                o = offs[s]
                for b in range(bsz):
                    for r in range(nh[s]):
                        XHout[i0 + b, d, o + r] = XH[s, b, r]
            if vol_mode != VOL_NONE:
                for b in range(bsz):
                    for f in range(nfac):
                        vc = v[b, f]
                        if vc > cap[f]:
                            vc = cap[f]
                        if vc < 0.0:
                            vc = 0.0
                        Vout[i0 + b, d, f] = vc


@nb.njit(parallel=True, cache=True)
def sim_exact_gbm(M, seed, obs_times, step_counts, dt, use_step_noise,
                  ad, xi, kdiag, chol, x0, Xout):
    """Exact componentwise geometric paths at the observation dates.

    With ``use_step_noise`` the Brownian level is accumulated from the
    same per-step increments the Euler kernels consume (strong coupling);
    otherwise date-level increments on their own stream are used.
    """
    n = x0.shape[0]
    q = chol.shape[0]
    nobs = obs_times.shape[0]
    sqdt = np.sqrt(dt)
    nblocks = (M + BLOCK - 1) // BLOCK
    for blk in nb.prange(nblocks):
        i0 = blk * BLOCK
        bsz = min(BLOCK, M - i0)
        z = np.empty(q)
        B = np.empty((bsz, n))
        for b in range(bsz):
            for r in range(n):
                B[b, r] = 0.0
        k = 0
        for d in range(nobs):
            if use_step_noise:
                for _ in range(step_counts[d]):
                    for b in range(bsz):
                        fill_normals(z, k, i0 + b, STREAM_STATE, seed)
                        for r in range(n):
                            s = 0.0
                            for c in range(q):
                                s += z[c] * chol[r, c]
                            B[b, r] += s * sqdt
                    k += 1
            else:
                if d > 0 or obs_times[0] > 0.0:
                    gap = obs_times[d] - (obs_times[d - 1] if d > 0 else 0.0)
                    sq = np.sqrt(gap)
                    for b in range(bsz):
                        fill_normals(z, d, i0 + b, STREAM_DATES, seed)
                        for r in range(n):
                            s = 0.0
                            for c in range(q):
                                s += z[c] * chol[r, c]
                            B[b, r] += s * sq
            t = obs_times[d]
            for b in range(bsz):
                for r in range(n):
                    Xout[i0 + b, d, r] = x0[r] * np.exp(
                        (ad[r] - 0.5 * xi[r] * xi[r] * kdiag[r]) * t
                        + xi[r] * B[b, r]
                    )
