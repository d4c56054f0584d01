"""Synthetic data with known clusters, and the adjusted Rand index."""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import comb

from .errors import ConfigError, DimensionError
from .ingest import RegressionDataset, RowMeta
from .mixture import MixtureParams
from .wavelet import PreprocessSpec, WaveletDecomp, haar_idwt, preprocess


@dataclass
class GeneratorSpec:
    pi: np.ndarray
    beta: np.ndarray
    sigma_diag: np.ndarray
    n: int
    seed: int = 0
    x_law: str = "normal"
    x_pool: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.params = MixtureParams(self.pi, self.beta, self.sigma_diag)
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        if self.x_law not in ("normal", "resample"):
            raise ConfigError(f"unknown x_law {self.x_law!r}")
        if self.x_law == "resample":
            if self.x_pool is None:
                raise ConfigError("x_law=resample needs an x_pool")
            self.x_pool = np.atleast_2d(np.asarray(self.x_pool, dtype=float))
            if self.x_pool.shape[1] != self.params.p:
                raise DimensionError("x_pool width does not match beta")

    @property
    def k(self):
        return self.params.k

    def to_dict(self):
        return {**self.params.to_dict(), "n": self.n, "seed": self.seed, "x_law": self.x_law}

    @classmethod
    def from_dict(cls, d, x_pool=None):
        return cls(np.array(d["pi"], dtype=float), np.array(d["beta"], dtype=float),
                   np.array(d["sigma_diag"], dtype=float), int(d["n"]), int(d.get("seed", 0)),
                   d.get("x_law", "normal"), x_pool)

    @classmethod
    def load(cls, path, x_pool=None):
        with open(path) as fh:
            return cls.from_dict(json.load(fh), x_pool)


def generate(spec):
    """Draw (dataset, true labels, true params); same seed, same bits."""
    rng = np.random.default_rng(spec.seed)
    prm = spec.params
    labels = rng.choice(prm.k, size=spec.n, p=prm.pi)
    if spec.x_law == "normal":
        x = rng.standard_normal((spec.n, prm.p))
    else:
        x = spec.x_pool[rng.integers(0, len(spec.x_pool), size=spec.n)]
    noise = rng.standard_normal((spec.n, prm.q)) * np.sqrt(prm.sigma_diag[labels])
    y = np.einsum("nqp,np->nq", prm.beta[labels], x) + noise
    meta = [RowMeta(f"s{i}", None, None, None, None) for i in range(spec.n)]
    return RegressionDataset(x, y, meta), labels, prm


def two_cluster_spec(seed=0, n=500, p=9, q=9, amplitude=1.5, noise_var=0.25, support_size=8):
    """Two clusters with opposite-sign coefficients on a shared sparse support.

    With unit-variance regressors each supported response has signal to
    noise ratio ``amplitude**2 / noise_var`` (9 with the defaults).
    """
    beta = np.zeros((2, q, p))
    for s in range(support_size):
        l, j = s % q, (s * 4) % p
        beta[0, l, j] = amplitude
        beta[1, l, j] = -amplitude
    sig = np.full((2, q), noise_var)
    return GeneratorSpec(np.array([0.5, 0.5]), beta, sig, n, seed)


def regime_population(seed=0, n_consumers=300, prep=PreprocessSpec(2), coef=0.8,
                      noise=0.3, fine_noise=0.05):
    """Consumers following one of two day-to-day regimes, as raw curves.

    Each consumer's wavelet features evolve as ``f_{d+1} = B_r f_d + e`` with
    ``B_1 = coef * I`` and ``B_2 = -coef * I``. Curves are rebuilt with a
    consumer-specific level and small D2/D1 content. Returns
    ``(train, test, regimes)``: train pairs days (0, 1), test pairs (1, 2).
    """
    rng = np.random.default_rng(seed)
    dim = prep.dim
    regimes = rng.integers(0, 2, size=n_consumers)
    sign = np.where(regimes == 0, 1.0, -1.0)
    f = [rng.standard_normal((n_consumers, dim))]
    for _ in range(2):
        f.append(coef * sign[:, None] * f[-1] + noise * rng.standard_normal((n_consumers, dim)))
    level = rng.uniform(0.5, 2.0, size=n_consumers)
    curves = []
    for fd in f:
        if prep.mode == 1:
            a4, d4, d3 = fd[:, :3], fd[:, 3:6], fd[:, 6:12]
        else:
            a4, d4, d3 = np.zeros((n_consumers, 3)), fd[:, :3], fd[:, 3:9]
        dec = WaveletDecomp(a4, d4, d3, fine_noise * rng.standard_normal((n_consumers, 12)),
                            fine_noise * rng.standard_normal((n_consumers, 24)))
        curves.append(haar_idwt(dec) + 4.0 * level[:, None])

    def pairs(a, b):
        meta = [RowMeta(f"c{i}", None, None, None, None) for i in range(n_consumers)]
        return RegressionDataset(preprocess(a, prep), preprocess(b, prep), meta, prep.mode, a, b)

    return pairs(curves[0], curves[1]), pairs(curves[1], curves[2]), regimes


def adjusted_rand_index(a, b):
    """Chance-corrected pair-counting agreement between two labelings."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError("labelings differ in length")
    if a.size < 2:
        raise DimensionError("need at least two items")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    sum_cells = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    total = comb(a.size, 2)
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))
