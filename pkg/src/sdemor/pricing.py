"""Bermudan option pricing on the reduced model.

Least-squares Monte Carlo: backward induction over the exercise dates,
regressing realized discounted continuation values on a polynomial basis
of the reduced state (plus the current payoff).  A second, independent
ensemble evaluates the fitted exercise policy so the reported value is
not in-sample optimistic.  The pathwise bound estimates
E[sup over exercise dates |f(y) - f(yhat)|] from a coupled ensemble,
which brackets the price difference between full and reduced problems.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientPaths, SingularRegressionWarning

_CHUNK = 65536


@dataclass(frozen=True)
class ExerciseSpec:
    """Exercise dates (must contain the horizon), rate, strike and payoff
    family.  Payoffs are discounted to time zero."""

    dates: np.ndarray
    rate: float
    strike: float
    payoff_kind: str  # basket_call | max_call

    def __post_init__(self):
        d = np.asarray(self.dates, dtype=float)
        if d.ndim != 1 or d.size == 0 or np.any(np.diff(d) <= 0):
            raise ValueError("dates must be strictly increasing")
        if d[0] < 0:
            raise ValueError("dates cannot be negative")
        object.__setattr__(self, "dates", d)
        if not self.strike > 0:
            raise ValueError("strike must be positive")
        if self.payoff_kind not in ("basket_call", "max_call"):
            raise ValueError(f"unknown payoff kind {self.payoff_kind!r}")

    def discount(self, t):
        return np.exp(-self.rate * np.asarray(t, dtype=float))


def payoff(kind, y_value, t, spec):
    """Discounted exercise value e^{-r t} max(val - strike, 0); ``val`` is
    the scalar output for baskets and the coordinate max of the
    reconstructed output vector for max calls."""
    y = np.asarray(y_value, dtype=float)
    if kind == "basket_call":
        val = y if y.ndim == 0 else y.squeeze(-1) if y.shape[-1] == 1 else y
    elif kind == "max_call":
        val = y if y.ndim == 0 else y.max(axis=-1)
    else:
        raise ValueError(f"unknown payoff kind {kind!r}")
    return spec.discount(t) * np.maximum(val - spec.strike, 0.0)


@dataclass(frozen=True)
class BasisSpec:
    """All monomials of the reduced state up to a total degree, in graded
    lexicographic order, optionally with the current discounted payoff
    appended as the last regressor."""

    max_total_degree: int = 4
    include_payoff: bool = True

    def count(self, nhat):
        base = math.comb(nhat + self.max_total_degree,
                         self.max_total_degree)
        return base + (1 if self.include_payoff else 0)


def monomial_exponents(nhat, max_total_degree):
    """Exponent rows in graded-lex order (total degree, then lex)."""
    rows = []
    for total in range(max_total_degree + 1):
        rows.extend(_compositions(total, nhat))
    return np.array(rows, dtype=np.int64)


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


class MonomialBasis:
    """Evaluator for the monomial features of a reduced-state sample."""

    def __init__(self, nhat, spec):
        self.nhat = nhat
        self.spec = spec
        self.exponents = monomial_exponents(nhat, spec.max_total_degree)

    @property
    def count(self):
        return self.exponents.shape[0] + (1 if self.spec.include_payoff
                                          else 0)

    def evaluate(self, x, pay=None):
        """Feature matrix for samples x (M, nhat); ``pay`` appends the
        payoff column when the basis includes it."""
        x = np.asarray(x, dtype=float)
        m = x.shape[0]
        dmax = self.spec.max_total_degree
        powers = np.empty((dmax + 1, m, self.nhat))
        powers[0] = 1.0
        for k in range(1, dmax + 1):
            powers[k] = powers[k - 1] * x
        nmono = self.exponents.shape[0]
        out = np.empty((m, self.count))
        for j in range(nmono):
            col = np.ones(m)
            for d in range(self.nhat):
                e = self.exponents[j, d]
                if e:
                    col = col * powers[e, :, d]
            out[:, j] = col
        if self.spec.include_payoff:
            if pay is None:
                raise ValueError("basis includes the payoff regressor; "
                                 "pass pay=")
            out[:, nmono] = pay
        return out


def polynomial_basis(nhat, spec=None):
    return MonomialBasis(nhat, spec or BasisSpec())


@dataclass(frozen=True)
class PricingResult:
    """Value estimate with standard error; ``value`` comes from the
    independent evaluation ensemble when two-pass was used,
    ``value_insample`` always reports the regression-ensemble estimate."""

    value: float
    stderr: float
    value_insample: float
    M_regress: int
    M_eval: int
    exercise_fractions: np.ndarray
    pathwise_bound: float = None
    pathwise_bound_stderr: float = None

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("option value cannot be negative")


def _chunked_lstsq(features, targets, mask):
    """Least squares by blocked orthogonal factorization with columns
    scaled to unit RMS; ridge fallback on rank deficiency.

    ``features`` is a callable (lo, hi) -> (rows, k) so the full matrix
    never materializes.  First pass accumulates the column scales, second
    pass runs the blocked QR on the scaled columns.
    """
    total = targets.shape[0]
    gram_diag = None
    count = 0
    for lo in range(0, total, _CHUNK):
        hi = min(lo + _CHUNK, total)
        m = mask[lo:hi]
        if not np.any(m):
            continue
        F = features(lo, hi)[m]
        if gram_diag is None:
            gram_diag = np.zeros(F.shape[1])
        gram_diag += np.square(F).sum(axis=0)
        count += F.shape[0]
    if count == 0:
        return None
    scale = np.sqrt(np.clip(gram_diag / count, 1e-300, None))
    k = gram_diag.shape[0]
    R = None
    z = None
    for lo in range(0, total, _CHUNK):
        hi = min(lo + _CHUNK, total)
        m = mask[lo:hi]
        if not np.any(m):
            continue
        F = features(lo, hi)[m] / scale[None, :]
        y = targets[lo:hi][m]
        stacked = F if R is None else np.vstack([R, F])
        rhs = y if z is None else np.concatenate([z, y])
        Q, R = np.linalg.qr(stacked, mode="reduced")
        z = Q.T @ rhs
        R = R[:k]
        z = z[:k]
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-12 * max(diag.max(), 1e-300):
        warnings.warn(
            "regression rank deficient; applying ridge perturbation",
            SingularRegressionWarning,
        )
        G = R.T @ R
        lam = 1e-10 * np.trace(G) / G.shape[0]
        beta_s = np.linalg.solve(G + lam * np.eye(G.shape[0]), R.T @ z)
    else:
        beta_s = np.linalg.solve(R, z)
    return beta_s / scale


def _reduced_outputs(ens, Chat, date_idx):
    """yhat (M, ndates, p) from the stored reduced states."""
    xh = ens.xhat_paths[:, date_idx, :]
    return xh @ np.asarray(Chat, dtype=float).T


def _match_dates(times, dates):
    idx = []
    for t in dates:
        j = int(np.argmin(np.abs(times - t)))
        if abs(times[j] - t) > 1e-9:
            raise ValueError(f"exercise date {t} not stored in the ensemble")
        idx.append(j)
    return np.array(idx, dtype=np.int64)


def longstaff_schwartz(ens, spec, basis, Chat, itm_only=True, eval_ens=None):
    """Backward-induction least-squares Monte Carlo on the reduced model.

    At each exercise date before the horizon the realized discounted
    continuation values are regressed on the basis at the current reduced
    state (in-the-money paths only by default); exercise is triggered when
    the current payoff is at least the fitted continuation value.  With
    ``eval_ens`` the fitted policy is re-evaluated on the independent
    ensemble and that estimate is reported as the value.
    """
    dates = spec.dates
    date_idx = _match_dates(ens.times, dates)
    nd = dates.shape[0]
    M = ens.M
    if M < basis.count * 50:
        raise InsufficientPaths(
            f"{M} paths for {basis.count} regressors; need at least "
            f"{basis.count * 50}"
        )
    yh = _reduced_outputs(ens, Chat, date_idx)
    pf = np.stack(
        [payoff(spec.payoff_kind, yh[:, j], dates[j], spec)
         for j in range(nd)], axis=1,
    )
    xh = ens.xhat_paths[:, date_idx, :]
    cashflow = pf[:, -1].copy()
    stop_at = np.full(M, nd - 1, dtype=np.int64)
    betas = {}
    first_k = 1 if dates[0] == 0.0 else 0
    for k in range(nd - 2, first_k - 1, -1):
        pk = pf[:, k]
        itm = pk > 0.0 if itm_only else np.ones(M, dtype=bool)
        if not np.any(itm):
            continue
        xk = xh[:, k, :]

        def features(lo, hi, _xk=xk, _pk=pk):
            return basis.evaluate(_xk[lo:hi],
                                  pay=_pk[lo:hi]
                                  if basis.spec.include_payoff else None)

        beta = _chunked_lstsq(features, cashflow, itm)
        if beta is None:
            continue
        betas[k] = beta
        cont = np.empty(M)
        for lo in range(0, M, _CHUNK):
            hi = min(lo + _CHUNK, M)
            cont[lo:hi] = features(lo, hi) @ beta
        exercise = itm & (pk >= cont)
        cashflow[exercise] = pk[exercise]
        stop_at[exercise] = k
    value_insample = float(cashflow.mean())
    if dates[0] == 0.0:
        immediate0 = float(pf[:, 0].max())
        value_insample = max(immediate0, value_insample)
    fractions = np.bincount(stop_at, minlength=nd) / M

    if eval_ens is None:
        stderr = float(cashflow.std(ddof=1) / np.sqrt(M))
        return PricingResult(
            value=value_insample, stderr=stderr,
            value_insample=value_insample,
            M_regress=M, M_eval=0, exercise_fractions=fractions,
        )

    idx2 = _match_dates(eval_ens.times, dates)
    M2 = eval_ens.M
    yh2 = _reduced_outputs(eval_ens, Chat, idx2)
    pf2 = np.stack(
        [payoff(spec.payoff_kind, yh2[:, j], dates[j], spec)
         for j in range(nd)], axis=1,
    )
    xh2 = eval_ens.xhat_paths[:, idx2, :]
    alive = np.ones(M2, dtype=bool)
    cf2 = np.zeros(M2)
    stop2 = np.full(M2, nd - 1, dtype=np.int64)
    for k in range(first_k, nd - 1):
        if k not in betas:
            continue
        pk = pf2[:, k]
        cand = alive & (pk > 0.0 if itm_only else alive)
        if not np.any(cand):
            continue
        cont = np.empty(M2)
        for lo in range(0, M2, _CHUNK):
            hi = min(lo + _CHUNK, M2)
            F = basis.evaluate(xh2[lo:hi, k, :],
                               pay=pk[lo:hi]
                               if basis.spec.include_payoff else None)
            cont[lo:hi] = F @ betas[k]
        exercise = cand & (pk >= cont)
        cf2[exercise] = pk[exercise]
        stop2[exercise] = k
        alive &= ~exercise
    cf2[alive] = pf2[alive, -1]
    value = float(cf2.mean())
    if dates[0] == 0.0:
        value = max(float(pf2[:, 0].max()), value)
    stderr = float(cf2.std(ddof=1) / np.sqrt(M2))
    fractions2 = np.bincount(stop2, minlength=nd) / M2
    return PricingResult(
        value=value, stderr=stderr, value_insample=value_insample,
        M_regress=M, M_eval=M2, exercise_fractions=fractions2,
    )


def pathwise_error_bound(ens, spec, C, Chat):
    """Monte Carlo estimate of E[sup over exercise dates
    |f(y(t)) - f(yhat(t))|] from a coupled ensemble."""
    if ens.x_paths is None:
        raise ValueError("pathwise bound needs the stored full states")
    date_idx = _match_dates(ens.times, spec.dates)
    C = np.asarray(C, dtype=float)
    Chat = np.asarray(Chat, dtype=float)
    M = ens.M
    sup = np.zeros(M)
    for lo in range(0, M, _CHUNK):
        hi = min(lo + _CHUNK, M)
        y = ens.x_paths[lo:hi][:, date_idx, :] @ C.T
        yh = ens.xhat_paths[lo:hi][:, date_idx, :] @ Chat.T
        diffs = np.empty((hi - lo, date_idx.shape[0]))
        for j, t in enumerate(spec.dates):
            fy = payoff(spec.payoff_kind, y[:, j], t, spec)
            fyh = payoff(spec.payoff_kind, yh[:, j], t, spec)
            diffs[:, j] = np.abs(fy - fyh)
        sup[lo:hi] = diffs.max(axis=1)
    bound = float(sup.mean())
    stderr = float(sup.std(ddof=1) / np.sqrt(M))
    return bound, stderr
