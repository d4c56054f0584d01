"""Slope-heuristic model selection by dimension jump.

For a penalty level kappa the criterion of a model m is

    crit_kappa(m) = -loglik(m) + 2 * kappa * D(m) / n

with ``loglik`` the mean per-observation log-likelihood. The calibrated
``kappa_hat`` is where the dimension of the minimizer drops the most; the
final choice minimizes the criterion at ``factor * kappa_hat`` (factor 2).
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NoJumpError

log = logging.getLogger(__name__)


@dataclass
class SelectionResult:
    kappa_hat: float
    kappa_used: float
    selected_id: int
    selected: object
    shortlist: list          # [(entry id, criterion value)], best first
    jump_table: list         # [(kappa, D)], kappa increasing

    def to_dict(self):
        return {
            "kappa_hat": self.kappa_hat,
            "kappa_used": self.kappa_used,
            "selected_id": self.selected_id,
            "selected_k": self.selected.k,
            "selected_dimension": self.selected.dimension,
            "shortlist": [{"id": i, "criterion": c} for i, c in self.shortlist],
            "jump_table": [[k, d] for k, d in self.jump_table],
        }


def _arrays(collection):
    ll = np.array([e.loglik for e in collection.entries], dtype=float)
    dims = np.array([e.dimension for e in collection.entries], dtype=float)
    ks = np.array([e.k for e in collection.entries])
    return ll, dims, ks


def _tie_order(dims, ks):
    # ties in the criterion go to smaller D, then smaller K, then lower id
    return np.lexsort((np.arange(len(dims)), ks, dims))


def criterion(loglik, dims, n, kappa):
    return -loglik + 2.0 * kappa * dims / n


def select_at(collection, kappa):
    """Id of the entry minimizing the criterion at one kappa."""
    ll, dims, ks = _arrays(collection)
    order = _tie_order(dims, ks)
    crit = criterion(ll[order], dims[order], collection.n, kappa)
    return int(order[np.argmin(crit)])


def kappa_bracket(collection):
    """Interval containing every change of the minimizer.

    All pairwise crossovers ``n (l_b - l_a) / (2 (D_b - D_a))`` that are
    positive lie strictly inside the returned bracket.
    """
    ll, dims, _ = _arrays(collection)
    dd = dims[None, :] - dims[:, None]
    dl = ll[None, :] - ll[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = collection.n * dl / (2.0 * dd)
    cross = cross[(dd != 0) & np.isfinite(cross) & (cross > 0)]
    if cross.size == 0:
        raise NoJumpError("no positive penalty changes the selected model; "
                          "build a denser collection")
    return float(cross.min()) / 2.0, float(cross.max()) * 2.0


def dimension_jump(collection, kappa_grid_size=1000):
    """Calibrate kappa by the largest drop of the selected dimension.

    Returns ``(kappa_hat, jump_table)``; ``kappa_hat`` is the first grid
    point after the biggest jump (smallest such kappa on ties).
    """
    if kappa_grid_size < 2:
        raise ConfigError("kappa grid needs at least 2 points")
    ll, dims, ks = _arrays(collection)
    if len(set(dims.tolist())) < 2:
        raise NoJumpError("all entries have the same dimension; build a denser collection")
    lo, hi = kappa_bracket(collection)
    grid = np.geomspace(lo, hi, kappa_grid_size)
    order = _tie_order(dims, ks)
    crit = criterion(ll[order][None, :], dims[order][None, :], collection.n, grid[:, None])
    chosen = order[np.argmin(crit, axis=1)]
    d_sel = dims[chosen]
    jumps = d_sel[:-1] - d_sel[1:]
    if jumps.max() <= 0:
        raise NoJumpError("selected dimension is constant over the kappa grid")
    i = int(np.argmax(jumps)) + 1
    table = [(float(k), int(d)) for k, d in zip(grid, d_sel)]
    return float(grid[i]), table


def select_models(collection, kappa_hat, shortlist_size=5, factor=2.0, jump_table=None):
    """Rank entries by the criterion at ``factor * kappa_hat``.

    The selected entry is the minimizer; the shortlist holds the
    ``shortlist_size`` best entries, best first.
    """
    if kappa_hat <= 0:
        raise ConfigError("kappa_hat must be positive")
    if shortlist_size < 1:
        raise ConfigError("shortlist_size must be at least 1")
    ll, dims, ks = _arrays(collection)
    kappa = factor * kappa_hat
    crit = criterion(ll, dims, collection.n, kappa)
    ranked = np.lexsort((np.arange(len(ll)), ks, dims, crit))
    top = [(int(i), float(crit[i])) for i in ranked[:shortlist_size]]
    sel = top[0][0]
    return SelectionResult(float(kappa_hat), float(kappa), sel, collection.entries[sel], top,
                           jump_table or [])


def slope_heuristic(collection, shortlist_size=5, kappa_grid_size=1000, factor=2.0):
    kappa_hat, table = dimension_jump(collection, kappa_grid_size)
    return select_models(collection, kappa_hat, shortlist_size, factor, table)
