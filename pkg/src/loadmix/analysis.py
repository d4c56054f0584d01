"""Post-selection outputs: MAP clusters, profiles, day-type tables, exports,
and the next-day forecasting comparison."""

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np

from .em import EmOptions, refit_mle
from .errors import DataError, DimensionError
from .ingest import WEEKDAYS
from .mixture import Support, map_assign, responsibilities
from .wavelet import PreprocessSpec, haar_dwt, inverse_preprocess

log = logging.getLogger(__name__)


@dataclass
class ClusterReport:
    labels: np.ndarray
    tau: np.ndarray
    empirical_proportions: np.ndarray
    model_proportions: np.ndarray
    posterior_summary: list    # per cluster: (min, q1, median, q3, max) or None
    mean_curves: list          # per cluster: 96 values (eve then day) or None

    @property
    def max_responsibility(self):
        return self.tau.max(axis=1)


@dataclass
class CrosstabTable:
    rows: list
    cols: tuple
    cells: np.ndarray
    counts: np.ndarray


def cluster_report(entry, data, raw_curves=None):
    """MAP labels with per-cluster shares, posterior summaries and mean curves.

    ``raw_curves`` is an (n, 96) array of concatenated eve and day curves;
    by default it is taken from the dataset.
    """
    if raw_curves is None and data.x_curves is not None and data.y_curves is not None:
        raw_curves = np.hstack([data.x_curves, data.y_curves])
    if raw_curves is not None and len(raw_curves) != data.n:
        raise DataError("raw curves are not row-aligned with the dataset")
    tau = responsibilities(entry.params, data)
    labels = map_assign(tau)
    k = entry.params.k
    counts = np.bincount(labels, minlength=k)
    top = tau.max(axis=1)
    summary, means = [], []
    for c in range(k):
        rows = labels == c
        if not rows.any():
            summary.append(None)
            means.append(None)
            continue
        summary.append(tuple(float(v) for v in np.percentile(top[rows], [0, 25, 50, 75, 100])))
        means.append(None if raw_curves is None else raw_curves[rows].mean(axis=0))
    return ClusterReport(labels, tau, counts / data.n, entry.params.pi.copy(), summary, means)


def crosstab_daytype(labels, weekdays, k=None):
    """Share of each response-day weekday falling in each cluster.

    Columns are Mon..Sun; a weekday absent from the data has an all-zero column.
    """
    labels = np.asarray(labels)
    if len(labels) != len(weekdays):
        raise DimensionError("labels and weekdays are not aligned")
    k = int(labels.max()) + 1 if k is None else k
    counts = np.zeros((k, len(WEEKDAYS)), dtype=int)
    for lab, wd in zip(labels, weekdays):
        counts[lab, WEEKDAYS.index(wd)] += 1
    tot = counts.sum(axis=0)
    cells = np.divide(counts, tot[None, :], out=np.zeros(counts.shape), where=tot[None, :] > 0)
    return CrosstabTable(list(range(k)), WEEKDAYS, cells, counts)


# --------------------------------------------------------------------------
# exports

def _header(fh, header_lines):
    for h in header_lines:
        fh.write(f"# {h}\n")


def export_beta(entry, prep, out_dir, header_lines=()):
    """Write each cluster's coefficients as a p x q table (rows = regressors).

    Also writes pairwise differences ``beta_a - beta_b``. Returns the paths.
    Files use 1-based cluster numbers.
    """
    if not isinstance(prep, PreprocessSpec):
        prep = PreprocessSpec(int(prep))
    p, q = entry.params.p, entry.params.q
    if p != prep.dim or q != prep.dim:
        raise DimensionError(f"model is {q}x{p}, preprocessing {prep.mode} has {prep.dim} features")
    labels = prep.feature_labels()
    k = entry.params.k
    mats = {f"c{c + 1}": entry.params.beta[c].T for c in range(k)}
    for a in range(k):
        for b in range(a + 1, k):
            mats[f"diff_c{a + 1}_c{b + 1}"] = entry.params.beta[a].T - entry.params.beta[b].T
    paths = []
    for name, m in mats.items():
        path = os.path.join(out_dir, f"beta_k{k}_{name}.csv")
        with open(path, "w", newline="") as fh:
            _header(fh, header_lines)
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["regressor"] + [f"y_{s}" for s in labels])
            for lab, row in zip(labels, m):
                w.writerow([f"x_{lab}"] + [repr(float(v)) for v in row])
        paths.append(path)
    return paths


def read_beta_csv(path):
    """Load an exported p x q coefficient table."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]])


def export_sigma(entry, path, header_lines=()):
    with open(path, "w", newline="") as fh:
        _header(fh, header_lines)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster"] + [f"var_{l + 1}" for l in range(entry.params.q)])
        for c, row in enumerate(entry.params.sigma_diag):
            w.writerow([c + 1] + [repr(float(v)) for v in row])


# --------------------------------------------------------------------------
# forecasting

def rmse(pred, actual):
    """Root mean squared error over the last axis (the 48 slots)."""
    d = np.asarray(pred, dtype=float) - np.asarray(actual, dtype=float)
    return np.sqrt(np.mean(d ** 2, axis=-1))


@dataclass
class ForecastRow:
    consumer: str
    rmse_pooled: float
    rmse_mixture: float
    rmse_cluster_ols: float
    split: str


def _ols(x, y):
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    return coef.T


def _to_curves(feats, data, prep):
    if data.x_curves is None or data.y_curves is None:
        raise DataError("forecasting needs the raw eve and day curves")
    if prep.mode == 1:
        return inverse_preprocess(feats, prep, level=data.x_curves.mean(axis=1))
    # the dropped approximation is carried over from the regressor day
    return inverse_preprocess(feats, prep, a4=haar_dwt(data.x_curves).a4)


def forecast_compare(train, test, entry, opts=EmOptions(), prep=None):
    """Per-consumer RMSE of three next-day predictors, on train and test.

    (a) pooled least squares on all training rows, (b) the mixture with
    each consumer's training MAP cluster, (c) least squares refitted inside
    each MAP cluster (pooled model for clusters without training rows).
    Test rows are matched to training rows by consumer; cluster labels are
    carried over from training.
    """
    if prep is None:
        prep = PreprocessSpec(train.preprocessing_tag or 2)
    if not isinstance(prep, PreprocessSpec):
        prep = PreprocessSpec(int(prep))
    k = entry.params.k
    labels = map_assign(responsibilities(entry.params, train))
    pooled = refit_mle(train, 1, Support.full(train.q, train.p), opts).beta[0]
    per_cluster = []
    for c in range(k):
        rows = labels == c
        per_cluster.append(_ols(train.x[rows], train.y[rows]) if rows.any() else pooled)

    index = {m.consumer: i for i, m in enumerate(train.meta)}
    test_rows, test_src = [], []
    for i, m in enumerate(test.meta):
        if m.consumer in index:
            test_rows.append(i)
            test_src.append(index[m.consumer])
    missing = set(index) - {test.meta[i].consumer for i in test_rows}
    if missing:
        log.warning("%d consumers absent from the test data are excluded", len(missing))
    out = []
    for split, data, rows, lab in (
        ("train", train, np.arange(train.n), labels),
        ("test", test, np.asarray(test_rows, dtype=int), labels[np.asarray(test_src, dtype=int)]),
    ):
        if rows.size == 0:
            continue
        sub = data.subset(rows)
        preds = {
            "pooled": sub.x @ pooled.T,
            "mixture": np.einsum("nqp,np->nq", entry.params.beta[lab], sub.x),
            "cluster_ols": np.stack([per_cluster[c] @ x for c, x in zip(lab, sub.x)]),
        }
        errs = {name: rmse(_to_curves(f, sub, prep), sub.y_curves) for name, f in preds.items()}
        for i in range(sub.n):
            out.append(ForecastRow(sub.meta[i].consumer, float(errs["pooled"][i]),
                                   float(errs["mixture"][i]), float(errs["cluster_ols"][i]), split))
    return out


def median_rmse(rows, split="test"):
    sel = [r for r in rows if r.split == split]
    return {name: float(np.median([getattr(r, f"rmse_{name}") for r in sel]))
            for name in ("pooled", "mixture", "cluster_ols")}
