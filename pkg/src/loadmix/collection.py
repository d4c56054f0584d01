"""Model collection over cluster counts and a regularization grid.

For every K and every lambda on a log-spaced grid, the penalized EM picks a
support; the support is then refitted by restricted maximum likelihood.
Each distinct (K, support) is refitted once, started from every lasso fit
that produced it.
"""

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .em import EmOptions, lambda_max, lasso_em_fit, null_stationarity_level, refit_em
from .errors import ConfigError, DataError, LoadmixError, NumericalError
from .mixture import MixtureParams, Support, model_dimension

log = logging.getLogger(__name__)

GRID_EPS = 1e-3
DEFAULT_K_SET = tuple(range(1, 9))
FORCED_K_SET = tuple(range(2, 9))


@dataclass
class ModelEntry:
    k: int
    support: Support
    params: MixtureParams
    loglik: float
    dimension: int
    lambda_origin: float
    k_requested: Optional[int] = None
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if self.dimension != model_dimension(self.k, self.support, self.params.q):
            raise ValueError("entry dimension does not match (k, support, q)")
        if not np.isfinite(self.loglik):
            raise ValueError("entry log-likelihood is not finite")

    def to_dict(self):
        d = self.params.to_dict()
        return {
            "k": d["k"],
            "pi": d["pi"],
            "beta": d["beta"],
            "sigma_diag": d["sigma_diag"],
            "support": self.support.to_list(),
            "loglik": float(self.loglik),
            "dimension": int(self.dimension),
            "lambda_origin": float(self.lambda_origin),
            "k_requested": self.k_requested if self.k_requested is None else int(self.k_requested),
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d):
        params = MixtureParams(np.array(d["pi"]), np.array(d["beta"]), np.array(d["sigma_diag"]))
        return cls(int(d["k"]), Support(d["support"]), params, float(d["loglik"]),
                   int(d["dimension"]), float(d["lambda_origin"]), d.get("k_requested"),
                   list(d.get("flags", [])))


@dataclass
class ModelCollection:
    entries: list
    dataset_fingerprint: str
    k_set: tuple
    grid_size: int
    n: int
    q: int
    p: int
    seed: int = 0

    def meta(self):
        return {
            "dataset_fingerprint": self.dataset_fingerprint,
            "k_set": list(self.k_set),
            "grid_size": self.grid_size,
            "n": self.n,
            "q": self.q,
            "p": self.p,
            "seed": self.seed,
            "n_entries": len(self.entries),
        }


def lambda_grid(data, k, grid_size, penalty="plain"):
    """Descending log-spaced grid from ``lambda_max`` down to 1e-3 times it."""
    if grid_size < 2:
        raise ConfigError("grid_size must be at least 2")
    top = lambda_max(data, k, penalty)
    if top <= 0:
        log.warning("degenerate data (zero response); using the single grid point 0")
        return [0.0]
    return list(np.geomspace(top, top * GRID_EPS, grid_size))


def extended_grid(data, k, grid_size, opts=EmOptions()):
    """``lambda_grid`` continued upward with the same log step.

    ``lambda_max`` only bounds the fits started from uniform
    responsibilities. Once clusters separate, the fitted variances shrink and
    the soft threshold with them, so sparse separated models live at larger
    lambda. The extension reaches the level that zeroes every coefficient of
    the unpenalized K-component fit.
    """
    grid = lambda_grid(data, k, grid_size, opts.penalty)
    if len(grid) < 2:
        return grid
    try:
        free = lasso_em_fit(data, k, 0.0, opts)
    except LoadmixError as exc:
        log.warning("unpenalized K=%d fit failed (%s); grid not extended", k, exc)
        return grid
    level = null_stationarity_level(data, free.params, opts.penalty)
    step = grid[0] / grid[1]
    extra = int(np.ceil(np.log(level / grid[0]) / np.log(step))) if level > grid[0] else 0
    return [grid[0] * step ** m for m in range(extra, 0, -1)] + grid


def _lasso_path(task):
    """Fits along one K's grid, smallest lambda first.

    Each fit also tries the previous solution as a start, which carries
    separated clusters up to large lambda. The sweep stops at the first
    empty support: from there on larger lambda keeps it empty.
    """
    data, k, grid, opts = task
    out, prev = [], None
    for lam in sorted(grid):
        try:
            prev = lasso_em_fit(data, k, lam, opts, warm_start=prev)
        except LoadmixError as exc:
            out.append((None, f"K={k} lambda={lam:.3g}: {exc}"))
            continue
        out.append((prev, None))
        if len(prev.support) == 0:
            break
    return out


def _refit_group(task):
    data, k_eff, support, fits, opts = task
    try:
        refit = refit_em(data, k_eff, support, opts, init=[f for _, f in fits])
    except LoadmixError as exc:
        return None, f"refit K={k_eff} |J|={len(support)}: {exc}"
    k_req, fit = max(fits, key=lambda kf: kf[1].lam)
    flags = []
    if any(f.degenerate for _, f in fits):
        flags.append(f"degenerate: dropped from K={max(kr for kr, _ in fits)}")
    flags.extend(refit.warnings)
    entry = ModelEntry(k_eff, support, refit.params, refit.loglik,
                       model_dimension(k_eff, support, data.q), float(fit.lam),
                       k_req if k_req != k_eff else None, flags)
    return entry, None


def _map(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    return [fn(t) for t in tasks]


def _sort_key(e):
    return (e.k, e.dimension, e.support.entries, -e.lambda_origin)


def dedup(entries):
    """Keep one entry per (k, support), the one with the higher log-likelihood."""
    best = {}
    for e in entries:
        key = (e.k, e.support)
        if key not in best or e.loglik > best[key].loglik:
            best[key] = e
    return sorted(best.values(), key=_sort_key)


def build_collection(data, k_set=DEFAULT_K_SET, grid_size=20, opts=EmOptions(), jobs=1,
                     grids=None, extend=True):
    """Sweep K over ``k_set`` and lambda over a per-K grid.

    ``grids`` optionally maps K to an explicit lambda list. ``extend`` uses
    :func:`extended_grid` instead of :func:`lambda_grid`. With ``jobs > 1``
    fits run in worker processes; results do not depend on ``jobs``.
    """
    k_set = tuple(sorted(set(int(k) for k in k_set)))
    if not k_set or min(k_set) < 1:
        raise ConfigError("k_set must contain positive counts")
    if data.n < max(k_set):
        raise DataError(f"{data.n} rows cannot support K={max(k_set)}")
    tasks = []
    for k in k_set:
        if grids is not None:
            grid = grids[k]
        elif extend:
            grid = extended_grid(data, k, grid_size, opts)
        else:
            grid = lambda_grid(data, k, grid_size, opts.penalty)
        tasks.append((data, k, [float(g) for g in grid], opts))
    groups = {}
    for (_, k, _, _), path in zip(tasks, _map(_lasso_path, tasks, jobs)):
        for fit, err in path:
            if fit is None:
                log.warning("fit failed: %s", err)
                continue
            groups.setdefault((fit.params.k, fit.support), []).append((k, fit))
    # one refit per distinct (K, support), started from every lasso fit that found it
    refits = [(data, k_eff, sup, fits, opts) for (k_eff, sup), fits in groups.items()]
    entries = []
    for entry, err in _map(_refit_group, refits, jobs):
        if entry is None:
            log.warning("%s", err)
        else:
            entries.append(entry)
    if not entries:
        raise NumericalError("every fit in the collection failed")
    for k in k_set:
        if not any(e.k == k for e in entries):
            log.warning("no successful fit with K=%d; K absent from the collection", k)
    return ModelCollection(dedup(entries), data.fingerprint(), k_set, grid_size,
                           data.n, data.q, data.p, opts.seed)


# --------------------------------------------------------------------------
# persistence

def meta_path(path):
    root, _ = os.path.splitext(path)
    return root + ".meta.json"


def save_collection(coll, path, extra_meta=None):
    """Write ``path`` (one entry per line) and its ``.meta.json`` sidecar."""
    with open(path, "w") as fh:
        for i, e in enumerate(coll.entries):
            fh.write(json.dumps({"id": i, **e.to_dict()}) + "\n")
    meta = coll.meta()
    if extra_meta:
        meta.update(extra_meta)
    with open(meta_path(path), "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def load_collection(path):
    entries = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                entries.append(ModelEntry.from_dict(json.loads(line)))
    with open(meta_path(path)) as fh:
        meta = json.load(fh)
    return ModelCollection(entries, meta["dataset_fingerprint"], tuple(meta["k_set"]),
                           meta["grid_size"], meta["n"], meta["q"], meta["p"], meta.get("seed", 0))


def write_summary(coll, path, header_lines=()):
    with open(path, "w") as fh:
        for h in header_lines:
            fh.write(f"# {h}\n")
        fh.write("id,k,support_size,dimension,loglik,lambda_origin\n")
        for i, e in enumerate(coll.entries):
            fh.write(f"{i},{e.k},{len(e.support)},{e.dimension},{e.loglik!r},{e.lambda_origin!r}\n")
