"""Mixture of Gaussian regressions with diagonal noise covariance.

Component k models ``y | x ~ N(beta_k @ x, diag(sigma_diag_k))`` with
``beta_k`` of shape (q, p). Cluster indices are 0-based throughout the API.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionError

LOG_2PI = np.log(2.0 * np.pi)
FLOOR_FACTOR = 1e-8


@dataclass(frozen=True)
class MixtureParams:
    pi: np.ndarray
    beta: np.ndarray
    sigma_diag: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float).reshape(-1)
        beta = np.asarray(self.beta, dtype=float)
        sig = np.asarray(self.sigma_diag, dtype=float)
        if beta.ndim == 2:
            beta = beta[None]
        if sig.ndim == 1:
            sig = sig[None]
        k = pi.shape[0]
        if beta.shape[0] != k or sig.shape != (k, beta.shape[1]):
            raise DimensionError(f"inconsistent shapes pi{pi.shape} beta{beta.shape} "
                                 f"sigma{sig.shape}")
        if np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-12 * max(1, k):
            raise ValueError(f"mixing proportions must be positive and sum to 1: {pi}")
        if np.any(sig <= 0) or not np.all(np.isfinite(beta)):
            raise ValueError("variances must be positive and beta finite")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "sigma_diag", sig)

    @property
    def k(self):
        return self.pi.shape[0]

    @property
    def q(self):
        return self.beta.shape[1]

    @property
    def p(self):
        return self.beta.shape[2]

    def permuted(self, order):
        order = np.asarray(order)
        return MixtureParams(self.pi[order], self.beta[order], self.sigma_diag[order])

    def to_dict(self):
        return {
            "k": int(self.k),
            "pi": self.pi.tolist(),
            "beta": self.beta.tolist(),
            "sigma_diag": self.sigma_diag.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        pi = np.asarray(d["pi"], dtype=float)
        return cls(pi, np.asarray(d["beta"], dtype=float).reshape(len(pi), *np.shape(d["beta"])[1:]),
                   np.asarray(d["sigma_diag"], dtype=float))


class Support:
    """Set of (response l, regressor j) positions allowed to be non-zero.

    Shared by all clusters of a model. Entries are kept sorted row-major.
    """

    __slots__ = ("entries",)

    def __init__(self, entries=()):
        self.entries = tuple(sorted({(int(l), int(j)) for l, j in entries}))

    @classmethod
    def from_mask(cls, mask):
        return cls(zip(*np.nonzero(np.asarray(mask))))

    @classmethod
    def full(cls, q, p):
        return cls((l, j) for l in range(q) for j in range(p))

    @classmethod
    def of_beta(cls, beta):
        """Positions where any cluster has a non-zero coefficient."""
        return cls.from_mask(np.any(np.asarray(beta) != 0, axis=0))

    def mask(self, q, p):
        m = np.zeros((q, p), dtype=bool)
        for l, j in self.entries:
            if l >= q or j >= p:
                raise DimensionError(f"support entry {(l, j)} outside {q}x{p}")
            m[l, j] = True
        return m

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __eq__(self, other):
        return isinstance(other, Support) and self.entries == other.entries

    def __hash__(self):
        return hash(self.entries)

    def __repr__(self):
        return f"Support({list(self.entries)})"

    def issubset(self, other):
        return set(self.entries) <= set(other.entries)

    def to_list(self):
        return [list(e) for e in self.entries]


def variance_floor(y):
    """Per-coordinate lower bound on variances: 1e-8 times the sample variance."""
    v = np.var(np.atleast_2d(y), axis=0)
    return FLOOR_FACTOR * np.where(v > 0, v, 1.0)


def _check(params, x, y):
    if x.shape[-1] != params.p or y.shape[-1] != params.q:
        raise DimensionError(f"data dims (p={x.shape[-1]}, q={y.shape[-1]}) do not match "
                             f"params (p={params.p}, q={params.q})")


def weighted_log_densities(params, x, y):
    """``log pi_k + log phi_k(y_i | x_i)`` as an (n, K) array."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    _check(params, x, y)
    mu = np.einsum("np,kqp->nkq", x, params.beta)
    sig = params.sigma_diag[None]
    quad = (y[:, None, :] - mu) ** 2 / sig
    comp = -0.5 * np.sum(LOG_2PI + np.log(sig) + quad, axis=2)
    with np.errstate(divide="ignore"):
        return comp + np.log(params.pi)[None]


def log_conditional_density(params, x, y):
    """log of the mixture density of y given x, for one observation."""
    return float(logsumexp(weighted_log_densities(params, x, y), axis=1)[0])


def log_likelihood(params, data):
    """Mean per-observation conditional log-likelihood."""
    lw = weighted_log_densities(params, data.x, data.y)
    return float(np.mean(logsumexp(lw, axis=1)))


def responsibilities(params, data):
    """Posterior cluster probabilities tau, shape (n, K)."""
    lw = weighted_log_densities(params, data.x, data.y)
    return np.exp(lw - logsumexp(lw, axis=1, keepdims=True))


def map_assign(tau):
    """Row-wise argmax; ties go to the lowest index."""
    return np.argmax(np.asarray(tau), axis=1)


def model_dimension(k, support, q):
    """Free parameters: k-1 proportions, k*|J| coefficients, k*q variances."""
    size = support if isinstance(support, (int, np.integer)) else len(support)
    return int((k - 1) + k * size + k * q)
