"""Lasso-penalized EM and support-restricted maximum-likelihood refit.

The penalized objective is

    (1/n) sum_i log sum_k pi_k phi_k(y_i | x_i)  -  lam * sum_k sum_{l,j} |b_klj|

where ``b`` are the regression coefficients on standardized regressors
(unit standard deviation per column). Each M-step is a block ascent on the
expected complete-data objective: proportions, then variances at the
current coefficients, then coefficients by cyclic coordinate descent at the
new variances. Every block step is an exact maximization, so the observed
objective never decreases.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from numba import njit
from scipy.cluster.vq import kmeans2
from scipy.optimize import brentq

from .errors import ConfigError, InfeasibleError, NumericalError
from .mixture import LOG_2PI, MixtureParams, Support

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmOptions:
    max_iter: int = 200
    tol: float = 1e-6
    n_starts: int = 5
    seed: int = 0
    floor_factor: float = 1e-8
    penalty: str = "plain"
    init: str = "kmeans"
    cd_tol: float = 1e-12
    cd_max_passes: int = 2000
    min_cluster_size: Optional[float] = None

    def __post_init__(self):
        if self.max_iter < 1 or self.tol <= 0 or self.n_starts < 1:
            raise ConfigError("need max_iter >= 1, tol > 0, n_starts >= 1")
        if self.penalty not in ("plain", "weighted"):
            raise ConfigError(f"unknown penalty {self.penalty!r}")
        if self.init not in ("kmeans", "random", "uniform"):
            raise ConfigError(f"unknown init {self.init!r}")


@dataclass
class PenalizedFit:
    params: MixtureParams
    support: Support
    lam: float
    objective_trace: list
    tau: np.ndarray
    scale: np.ndarray
    n_iter: int = 0
    converged: bool = False
    k_requested: Optional[int] = None
    degenerate: bool = False
    penalty: str = "plain"

    @property
    def objective(self):
        return self.objective_trace[-1]


@dataclass
class RefitResult:
    params: MixtureParams
    loglik: float
    trace: list
    tau: np.ndarray
    n_iter: int = 0
    converged: bool = False
    ridge_used: bool = False
    warnings: list = field(default_factory=list)


class _Degenerate(Exception):
    pass


def _min_count(opts, n, p):
    """Smallest effective cluster size accepted during EM.

    Below roughly p points a cluster interpolates its rows, its variances
    hit the floor and the likelihood diverges. Default: 2 (p + 1).
    """
    size = 2 * (p + 1) if opts.min_cluster_size is None else opts.min_cluster_size
    return float(size)


def _check_sizes(nk, n, k, min_count):
    if k > 1 and (np.any(nk < min_count) or np.any(nk / n < 1.0 / (10 * n))):
        raise _Degenerate


# --------------------------------------------------------------------------
# small numerical kernels

@njit(cache=True)
def _cd_lasso(G, B, beta, thresh, tol, max_passes):
    """Coordinate descent for every (k, l) problem

        min_b  0.5 b' G_k b - B_k[:, l]' b + thresh[k, l] * |b|_1

    updating ``beta`` (K, q, p) in place. Returns the number of passes.
    """
    K, q, p = beta.shape
    passes = 0
    for it in range(max_passes):
        passes = it + 1
        maxd = 0.0
        for k in range(K):
            for l in range(q):
                for j in range(p):
                    gjj = G[k, j, j]
                    old = beta[k, l, j]
                    if gjj <= 0.0:
                        beta[k, l, j] = 0.0
                        continue
                    r = B[k, j, l]
                    for m in range(p):
                        if m != j:
                            r -= G[k, j, m] * beta[k, l, m]
                    t = thresh[k, l]
                    if r > t:
                        new = (r - t) / gjj
                    elif r < -t:
                        new = (r + t) / gjj
                    else:
                        new = 0.0
                    beta[k, l, j] = new
                    d = abs(new - old) * np.sqrt(gjj)
                    if d > maxd:
                        maxd = d
        if maxd <= tol:
            break
    return passes


def _means(xs, beta):
    k, q, p = beta.shape
    return (xs @ beta.reshape(k * q, p).T).reshape(xs.shape[0], k, q)


def _sq_resid(xs, y, beta):
    """Squared residuals (n, K, q) of every component's regression."""
    return (y[:, None, :] - _means(xs, beta)) ** 2


@njit(cache=True)
def _estep_kernel(res2, pi, sig):
    n, K, q = res2.shape
    const = np.empty(K)
    inv = 1.0 / sig
    for k in range(K):
        c = np.log(pi[k])
        for l in range(q):
            c -= 0.5 * (LOG_2PI + np.log(sig[k, l]))
        const[k] = c
    tau = np.empty((n, K))
    total = 0.0
    for i in range(n):
        m = -np.inf
        for k in range(K):
            s = 0.0
            for l in range(q):
                s += res2[i, k, l] * inv[k, l]
            v = const[k] - 0.5 * s
            tau[i, k] = v
            if v > m:
                m = v
        tot = 0.0
        for k in range(K):
            w = np.exp(tau[i, k] - m)
            tau[i, k] = w
            tot += w
        for k in range(K):
            tau[i, k] /= tot
        total += m + np.log(tot)
    return total / n, tau


def _estep(xs, y, pi, beta, sig, res2=None):
    if res2 is None:
        res2 = _sq_resid(xs, y, beta)
    return _estep_kernel(res2, pi, sig)


def _outer_rows(xs, y):
    """Per-row products x x' and x y', flattened; reused by every M-step."""
    n, p = xs.shape
    zx = (xs[:, :, None] * xs[:, None, :]).reshape(n, p * p)
    zy = (xs[:, :, None] * y[:, None, :]).reshape(n, p * y.shape[1])
    return zx, zy


def _weighted_moments(xs, y, tau, outer=None):
    n, p = xs.shape
    zx, zy = _outer_rows(xs, y) if outer is None else outer
    k = tau.shape[1]
    tt = tau.T / n
    return (tt @ zx).reshape(k, p, p), (tt @ zy).reshape(k, p, y.shape[1])


@njit(cache=True)
def _variance_kernel(res2, tau, nk, floor):
    n, K, q = res2.shape
    sig = np.zeros((K, q))
    for i in range(n):
        for k in range(K):
            t = tau[i, k]
            for l in range(q):
                sig[k, l] += t * res2[i, k, l]
    for k in range(K):
        for l in range(q):
            v = sig[k, l] / nk[k]
            sig[k, l] = v if v > floor[l] else floor[l]
    return sig


def _variances(xs, y, tau, beta, nk, floor, res2=None):
    if res2 is None:
        res2 = _sq_resid(xs, y, beta)
    return _variance_kernel(res2, tau, nk, floor)


def _weighted_pi(frac, l1, lam):
    """argmax over the simplex of sum frac_k log pi_k - lam * sum pi_k l1_k."""
    c = lam * l1
    if np.all(c == c[0]):
        return frac.copy()
    f = lambda nu: np.sum(frac / (nu + c)) - 1.0
    # f decreases from +inf at nu = -min(c) to below 0 at large nu
    base = -c.min()
    hi = 1.0
    while f(hi) > 0:
        hi *= 2.0
    step = 1.0
    while f(base + step) < 0:
        step *= 0.5
    nu = brentq(f, base + step, hi, xtol=1e-15, rtol=1e-15)
    pi = frac / (nu + c)
    return pi / pi.sum()


def standardization(x):
    s = np.std(x, axis=0)
    return np.where(s > 0, s, 1.0)


def _floor(y, factor):
    v = np.var(y, axis=0)
    return factor * np.where(v > 0, v, 1.0)


# --------------------------------------------------------------------------
# initialization

def _smoothed(labels, k, eps=0.1):
    tau = np.full((labels.shape[0], k), eps / k)
    tau[np.arange(labels.shape[0]), labels] += 1.0 - eps
    return tau


def initial_responsibilities(data, k, opts):
    """Starting responsibility matrices, one per restart.

    With ``init="kmeans"`` the first start comes from k-means++ seeded
    clustering of the standardized (x, y) rows and the rest are random soft
    assignments. ``init="uniform"`` gives a single tau = 1/K start.
    """
    n = data.n
    if opts.init == "uniform":
        return [np.full((n, k), 1.0 / k)]
    rng = np.random.default_rng(np.random.SeedSequence([opts.seed, k]))
    if k == 1:
        return [np.ones((n, 1))]
    taus = []
    if opts.init == "kmeans":
        z = np.hstack([data.x, data.y])
        z = (z - z.mean(axis=0)) / standardization(z)
        _, labels = kmeans2(z, k, minit="++", seed=rng)
        taus.append(_smoothed(labels, k))
    while len(taus) < opts.n_starts:
        taus.append(rng.dirichlet(np.ones(k), size=n))
    return taus


# --------------------------------------------------------------------------
# penalized EM

def lambda_max(data, k, penalty="plain"):
    """Smallest lam at which beta = 0 is stationary from the uniform start.

    With tau = 1/K the coefficient block of every cluster sees
    ``B = X's' Y / (K n)`` and variances ``mean(y_l^2)``, so the zero
    solution survives soft-thresholding iff
    ``|sum_i xs_ij y_il| <= lam * K * n * mean(y_l^2)``. The value scales as
    1/alpha when y is scaled by alpha.
    """
    xs = data.x / standardization(data.x)
    m2 = np.mean(data.y ** 2, axis=0)
    corr = np.abs(xs.T @ data.y)
    ok = m2 > 0
    if not ok.any():
        return 0.0
    lam = float(np.max(corr[:, ok] / (data.n * m2[ok])[None]))
    # a relative margin of 1e-10 keeps lam_max on the empty side of the
    # threshold despite rounding differences inside the solver
    lam *= 1.0 + 1e-10
    return lam if penalty == "weighted" else lam / k


def null_stationarity_level(data, params, penalty="plain"):
    """Smallest lam killing every coefficient of ``params`` in one M-step.

    Uses the responsibilities and variances of ``params``. For K >= 2 this is
    typically far above :func:`lambda_max`, because separated clusters have
    much smaller variances than the raw responses.
    """
    scale = standardization(data.x)
    xs = data.x / scale
    beta_s = params.beta * scale[None, None, :]
    _, tau = _estep(xs, data.y, params.pi, beta_s, params.sigma_diag)
    _, B = _weighted_moments(xs, data.y, tau)
    ratio = np.abs(np.transpose(B, (0, 2, 1))) / params.sigma_diag[:, :, None]
    if penalty == "weighted":
        ratio = ratio / params.pi[:, None, None]
    return float(ratio.max())


def penalized_objective(params, data, lam, penalty="plain"):
    """Observed penalized objective of ``params`` (unscaled coefficients)."""
    scale = standardization(data.x)
    xs = data.x / scale
    beta_s = params.beta * scale[None, None, :]
    ll, _ = _estep(xs, data.y, params.pi, beta_s, params.sigma_diag)
    return ll - _penalty(beta_s, params.pi, lam, penalty)


def _penalty(beta_s, pi, lam, penalty):
    l1 = np.abs(beta_s).sum(axis=(1, 2))
    if penalty == "weighted":
        return lam * float(np.dot(pi, l1))
    return lam * float(l1.sum())


def _run_lasso_em(xs, y, tau, lam, opts, floor):
    n, p = xs.shape
    q = y.shape[1]
    k = tau.shape[1]
    beta = np.zeros((k, q, p))
    pi = tau.mean(axis=0)
    trace = []
    converged = False
    it = 0
    min_count = _min_count(opts, n, p)
    outer = _outer_rows(xs, y)
    for it in range(1, opts.max_iter + 1):
        nk = tau.sum(axis=0)
        frac = nk / n
        _check_sizes(nk, n, k, min_count)
        if opts.penalty == "weighted" and lam > 0:
            pi = _weighted_pi(frac, np.abs(beta).sum(axis=(1, 2)), lam)
        else:
            pi = frac
        sig = _variances(xs, y, tau, beta, nk, floor)
        G, B = _weighted_moments(xs, y, tau, outer)
        thresh = lam * sig
        if opts.penalty == "weighted":
            thresh = thresh * pi[:, None]
        _cd_lasso(G, B, beta, thresh, opts.cd_tol * (1.0 + np.abs(B).max()), opts.cd_max_passes)
        tau_used = tau
        ll, tau = _estep(xs, y, pi, beta, sig)
        obj = ll - _penalty(beta, pi, lam, opts.penalty)
        if not np.isfinite(obj):
            raise NumericalError("non-finite objective in penalized EM")
        trace.append(obj)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < opts.tol * max(abs(trace[-2]), 1e-12):
            converged = True
            break
    return pi, beta, sig, tau_used, trace, it, converged


def _fit_from_taus(data, k, lam, opts, taus):
    scale = standardization(data.x)
    xs = data.x / scale
    floor = _floor(data.y, opts.floor_factor)
    best = None
    for tau0 in taus:
        try:
            res = _run_lasso_em(xs, data.y, tau0, lam, opts, floor)
        except _Degenerate:
            continue
        if best is None or res[4][-1] > best[4][-1]:
            best = res
    if best is None:
        return None
    pi, beta_s, sig, tau_used, trace, it, conv = best
    params = MixtureParams(pi / pi.sum(), beta_s / scale[None, None, :], sig)
    return PenalizedFit(params, Support.of_beta(beta_s), float(lam), list(trace), tau_used,
                        scale, it, conv, k, penalty=opts.penalty)


def lasso_em_fit(data, k, lam, opts=EmOptions(), init_tau=None, warm_start=None):
    """Penalized EM for a K-component mixture at regularization ``lam``.

    ``warm_start`` (a previous fit or a responsibility matrix) is tried in
    addition to the usual restarts; ``init_tau`` replaces them.
    Returns the best of the restarts by final penalized objective. If every
    start collapses a cluster (proportion below 1/(10n), or fewer effective
    rows than ``min_cluster_size``) the fit is redone with K-1 clusters and
    flagged ``degenerate``.
    """
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    if data.n < k:
        raise InfeasibleError(f"{data.n} rows cannot support {k} clusters")
    taus = [np.asarray(init_tau, dtype=float)] if init_tau is not None \
        else initial_responsibilities(data, k, opts)
    if warm_start is not None:
        warm = warm_start.tau if isinstance(warm_start, PenalizedFit) else warm_start
        if warm.shape == (data.n, k):
            taus = taus + [warm]
    fit = _fit_from_taus(data, k, lam, opts, taus)
    if fit is not None:
        return fit
    if k == 1:
        raise NumericalError("single-component fit failed")
    log.warning("all %d starts degenerate for K=%d, refitting with K=%d", len(taus), k, k - 1)
    fit = lasso_em_fit(data, k - 1, lam, opts)
    fit.k_requested = k
    fit.degenerate = True
    return fit


def kkt_violation(data, fit):
    """Largest violation of the lasso optimality conditions of the last M-step.

    Gradients are taken in standardized coordinates with the responsibilities
    and variances that the final coordinate-descent solve used.
    """
    xs = data.x / fit.scale
    beta_s = fit.params.beta * fit.scale[None, None, :]
    G, B = _weighted_moments(xs, data.y, fit.tau)
    grad = (np.transpose(B, (0, 2, 1)) - np.einsum("kpm,kqm->kqp", G, beta_s))
    grad = grad / fit.params.sigma_diag[:, :, None]
    lam = np.full(fit.params.k, fit.lam)
    if fit.penalty == "weighted":
        lam = lam * fit.params.pi
    lam = lam[:, None, None]
    nz = beta_s != 0
    on = np.abs(grad - lam * np.sign(beta_s))
    off = np.maximum(np.abs(grad) - lam, 0.0)
    return float(np.max(np.where(nz, on, off)))


# --------------------------------------------------------------------------
# restricted maximum likelihood

def _restricted_wls(G, B, mask):
    """Per (k, l) weighted least squares on the columns allowed by mask[l]."""
    K, p, _ = G.shape
    q = B.shape[2]
    beta = np.zeros((K, q, p))
    ridge_used = False
    for l in range(q):
        cols = np.flatnonzero(mask[l])
        if cols.size == 0:
            continue
        A = G[:, cols[:, None], cols[None, :]]
        b = B[:, cols, l][:, :, None]
        try:
            L = np.linalg.cholesky(A)
            d = np.diagonal(L, axis1=1, axis2=2)
            if np.any(d.min(axis=1) ** 2 < 1e-12 * d.max(axis=1) ** 2):
                raise np.linalg.LinAlgError
            beta[:, l, cols] = np.linalg.solve(A, b)[:, :, 0]
        except np.linalg.LinAlgError:
            ridge = 1e-8 * np.maximum(np.trace(A, axis1=1, axis2=2) / cols.size, 1e-300)
            A = A + ridge[:, None, None] * np.eye(cols.size)[None]
            beta[:, l, cols] = np.linalg.solve(A, b)[:, :, 0]
            ridge_used = True
    return beta, ridge_used


def _run_refit_em(xs, y, tau, mask, opts, floor):
    n, p = xs.shape
    k = tau.shape[1]
    trace = []
    converged = False
    ridge_used = False
    it = 0
    min_count = _min_count(opts, n, p)
    outer = _outer_rows(xs, y)
    for it in range(1, opts.max_iter + 1):
        nk = tau.sum(axis=0)
        _check_sizes(nk, n, k, min_count)
        pi = nk / n
        G, B = _weighted_moments(xs, y, tau, outer)
        beta, ridged = _restricted_wls(G, B, mask)
        ridge_used |= ridged
        res2 = _sq_resid(xs, y, beta)
        sig = _variances(xs, y, tau, beta, nk, floor, res2)
        tau_used = tau
        ll, tau = _estep(xs, y, pi, beta, sig, res2)
        if not np.isfinite(ll):
            raise NumericalError("non-finite log-likelihood in refit EM")
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < opts.tol * max(abs(trace[-2]), 1e-12):
            converged = True
            break
    return pi, beta, sig, tau_used, trace, it, converged, ridge_used


def refit_em(data, k, support, opts=EmOptions(), init=None):
    """Unpenalized EM with coefficients outside ``support`` pinned to zero.

    ``init`` may be a :class:`PenalizedFit`, :class:`MixtureParams`, a
    responsibility matrix, or a list of these; they are used as the first
    starts, followed by ``n_starts - 1`` of the usual restarts.
    """
    if data.n < k:
        raise InfeasibleError(f"{data.n} rows cannot support {k} clusters")
    scale = standardization(data.x)
    xs = data.x / scale
    floor = _floor(data.y, opts.floor_factor)
    mask = support.mask(data.q, data.p)
    taus = []
    if init is not None:
        for item in (init if isinstance(init, list) else [init]):
            if isinstance(item, PenalizedFit):
                item = item.params
            if isinstance(item, MixtureParams):
                _, t0 = _estep(xs, data.y, item.pi, item.beta * scale[None, None, :],
                               item.sigma_diag)
            else:
                t0 = np.asarray(item, dtype=float)
            if t0.shape[1] == k:
                taus.append(t0)
        taus.extend(initial_responsibilities(data, k, opts)[: max(opts.n_starts - 1, 0)])
    else:
        taus.extend(initial_responsibilities(data, k, opts))
    best = None
    for tau0 in taus:
        try:
            res = _run_refit_em(xs, data.y, tau0, mask, opts, floor)
        except _Degenerate:
            continue
        if best is None or res[4][-1] > best[4][-1]:
            best = res
    if best is None:
        raise InfeasibleError(f"every refit start for K={k} collapsed a cluster")
    pi, beta_s, sig, tau_used, trace, it, conv, ridged = best
    warn = []
    if ridged:
        warn.append("singular restricted design; ridge fallback applied")
        log.warning("K=%d refit: %s", k, warn[-1])
    params = MixtureParams(pi / pi.sum(), beta_s / scale[None, None, :], sig)
    return RefitResult(params, float(trace[-1]), list(trace), tau_used, it, conv, ridged, warn)


def refit_mle(data, k, support, opts=EmOptions(), init=None):
    """Maximum-likelihood parameters restricted to ``support``."""
    return refit_em(data, k, support, opts, init).params


def with_seed(opts, seed):
    return replace(opts, seed=seed)
