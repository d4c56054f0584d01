"""Command-line entry point: ``loadmix {ingest,fit,select,cluster,forecast,synth}``.

Every output carries a ``# key: value`` provenance header (CSV) or a
``meta`` object (JSON) with the root seed and the dataset fingerprint.
``--reproducible`` drops the creation timestamp so reruns are byte-identical.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import csv
import datetime as dt
import json
import logging
import os
import re
import sys

import numpy as np

from . import __version__
from .analysis import (cluster_report, crosstab_daytype, export_beta, export_sigma,
                       forecast_compare, median_rmse)
from .collection import (DEFAULT_K_SET, FORCED_K_SET, build_collection, load_collection,
                         save_collection, write_summary)
from .em import EmOptions
from .errors import (ConfigError, DataError, DimensionError, InfeasibleError, LoadmixError,
                     NoJumpError, NumericalError, ParseError)
from .ingest import (RegressionDataset, RowMeta, aggregate_synchronous, all_pairs,
                     build_day_pairs, build_mean_day_pairs, individual_curves,
                     mean_weekday_curves, parse_meter_csv, single_pair, weekday_pairs)
from .slope import slope_heuristic
from .synth import GeneratorSpec, generate, two_cluster_spec
from .wavelet import N_SLOTS, PreprocessSpec

log = logging.getLogger("loadmix")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# headers and feature files

def _header(args, command, **fields):
    lines = [f"loadmix {__version__}", f"command: {command}", f"seed: {args.seed}"]
    lines += [f"{k}: {v}" for k, v in fields.items() if v is not None]
    if not args.reproducible:
        lines.append("created: " + dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"))
    return lines


def _meta(args, command, **fields):
    meta = {"tool": f"loadmix {__version__}", "command": command, "seed": args.seed}
    meta.update({k: v for k, v in fields.items() if v is not None})
    if not args.reproducible:
        meta["created"] = dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")
    return meta


def _write_header(fh, lines):
    for h in lines:
        fh.write(f"# {h}\n")


def _date(d):
    return "" if d is None else d.isoformat()


def write_features(data, prep, path, header_lines=()):
    """Write a dataset as CSV: metadata, x_/y_ features, raw curves if kept."""
    if not isinstance(prep, PreprocessSpec):
        prep = PreprocessSpec(int(prep))
    labels = prep.feature_labels() if prep.dim == data.p == data.q else None
    xcols = [f"x_{s}" for s in labels] if labels else [f"x_{j + 1}" for j in range(data.p)]
    ycols = [f"y_{s}" for s in labels] if labels else [f"y_{l + 1}" for l in range(data.q)]
    raw = data.x_curves is not None and data.y_curves is not None
    cols = ["row", "consumer", "eve_date", "day_date", "eve_weekday", "day_weekday"] + xcols + ycols
    if raw:
        cols += [f"eve_h{t:02d}" for t in range(N_SLOTS)] + [f"day_h{t:02d}" for t in range(N_SLOTS)]
    with open(path, "w", newline="") as fh:
        _write_header(fh, list(header_lines) + [f"prep: {prep.mode}", f"fingerprint: {data.fingerprint()}"])
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i, m in enumerate(data.meta):
            row = [i + 1, m.consumer, _date(m.eve_date), _date(m.day_date),
                   m.eve_weekday or "", m.day_weekday or ""]
            row += [repr(float(v)) for v in data.x[i]] + [repr(float(v)) for v in data.y[i]]
            if raw:
                row += [repr(float(v)) for v in data.x_curves[i]]
                row += [repr(float(v)) for v in data.y_curves[i]]
            w.writerow(row)


def read_header(path):
    """The ``# key: value`` lines at the top of an output file, as a dict."""
    out = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, sep, value = line[1:].strip().partition(":")
            if sep:
                out[key.strip()] = value.strip()
    return out


def read_features(path):
    """Load a feature CSV written by :func:`write_features`."""
    header = read_header(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [(reader.line_num, r) for r in reader if r and not r[0].startswith("#")]
    if len(rows) < 2:
        raise DataError(f"{path}: no data rows")
    cols = rows[0][1]
    idx = {c: i for i, c in enumerate(cols)}
    xi = [i for i, c in enumerate(cols) if c.startswith("x_")]
    yi = [i for i, c in enumerate(cols) if c.startswith("y_")]
    ei = [i for i, c in enumerate(cols) if c.startswith("eve_h")]
    di = [i for i, c in enumerate(cols) if c.startswith("day_h")]
    if not xi or not yi:
        raise DataError(f"{path}: no x_/y_ feature columns")

    def floats(r, ix, line):
        try:
            return [float(r[i]) for i in ix]
        except (ValueError, IndexError):
            raise ParseError(f"{path}: malformed row", line) from None

    def date(s):
        return dt.date.fromisoformat(s) if s else None

    x, y, xc, yc, meta = [], [], [], [], []
    for line, r in rows[1:]:
        x.append(floats(r, xi, line))
        y.append(floats(r, yi, line))
        if ei and di:
            xc.append(floats(r, ei, line))
            yc.append(floats(r, di, line))
        try:
            meta.append(RowMeta(r[idx["consumer"]], date(r[idx["eve_date"]]),
                                date(r[idx["day_date"]]), r[idx["eve_weekday"]] or None,
                                r[idx["day_weekday"]] or None))
        except (KeyError, ValueError, IndexError):
            raise ParseError(f"{path}: bad metadata columns", line) from None
    prep = int(header["prep"]) if "prep" in header else None
    return RegressionDataset(np.array(x), np.array(y), meta, prep,
                             np.array(xc) if xc else None, np.array(yc) if yc else None)


def _prep_of(args, data):
    if args.prep is not None:
        return PreprocessSpec(args.prep)
    return PreprocessSpec(data.preprocessing_tag or 2)


def _out(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _parse_k_set(text):
    ks = set()
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            ks.update(range(int(lo), int(hi) + 1) if sep else [int(lo)])
        except ValueError:
            raise ConfigError(f"bad k set {text!r}") from None
    if not ks or min(ks) < 1:
        raise ConfigError(f"bad k set {text!r}")
    return tuple(sorted(ks))


def _em_options(args):
    return EmOptions(max_iter=args.max_iter, tol=args.tol, n_starts=args.n_starts,
                     seed=args.seed, penalty=args.penalty)


# --------------------------------------------------------------------------
# commands

def _selector(text):
    if text == "all":
        return all_pairs
    if ":" in text:
        eve, day = text.split(":", 1)
        return weekday_pairs(eve, day)
    try:
        return single_pair(dt.date.fromisoformat(text))
    except ValueError:
        raise ConfigError(f"--pairs must be 'all', an ISO eve date or EVE:DAY weekdays, got {text!r}")


def cmd_ingest(args):
    prep = PreprocessSpec(args.prep or 2)
    panel = parse_meter_csv(args.input, args.layout, args.impute)
    if args.dataset == "aggregate":
        data = build_day_pairs(aggregate_synchronous(panel), _selector(args.pairs), prep)
    elif args.dataset == "individual":
        data = build_day_pairs(individual_curves(panel), _selector(args.pairs), prep)
    else:
        if ":" not in args.pairs:
            raise ConfigError("mean-day datasets need --pairs EVE:DAY, e.g. Tue:Wed")
        eve, day = args.pairs.split(":", 1)
        data = build_mean_day_pairs(mean_weekday_curves(panel, (eve, day)), eve, day, prep)
    path = _out(args, "features.csv")
    write_features(data, prep, path, _header(args, "ingest", source=os.path.basename(args.input),
                                             dataset=args.dataset, pairs=args.pairs))
    log.info("wrote %d rows to %s", data.n, path)
    return EXIT_OK


def cmd_fit(args):
    if args.force_k:
        k_set = FORCED_K_SET
    else:
        k_set = _parse_k_set(args.k_set) if args.k_set else DEFAULT_K_SET
    opts = _em_options(args)
    data = read_features(args.features)
    jobs = args.jobs if args.jobs else (os.cpu_count() or 1)
    coll = build_collection(data, k_set, args.grid_size, opts, jobs=jobs)
    path = _out(args, "collection.jsonl")
    extra = _meta(args, "fit", features=os.path.basename(args.features), penalty=args.penalty)
    save_collection(coll, path, {"provenance": extra})
    write_summary(coll, _out(args, "collection-summary.csv"),
                  _header(args, "fit", fingerprint=coll.dataset_fingerprint))
    log.info("collection of %d entries written to %s", len(coll.entries), path)
    return EXIT_OK


def cmd_select(args):
    coll = load_collection(args.collection)
    if len(coll.entries) == 1:
        log.warning("collection has a single entry; selecting it without calibration")
        e = coll.entries[0]
        result = {"kappa_hat": None, "kappa_used": None, "selected_id": 0, "selected_k": e.k,
                  "selected_dimension": e.dimension, "shortlist": [{"id": 0, "criterion": None}],
                  "jump_table": []}
    else:
        sel = slope_heuristic(coll, args.shortlist, args.kappa_grid, args.factor)
        result = sel.to_dict()
    result["meta"] = _meta(args, "select", fingerprint=coll.dataset_fingerprint,
                           collection=os.path.basename(args.collection))
    path = _out(args, "selection.json")
    text = json.dumps(result, indent=2)
    # one (kappa, D) pair per line keeps the step function readable
    text = re.sub(r"\[\s+([^\s,\[\]]+),\s+([^\s,\[\]]+)\s+\]", r"[\1, \2]", text)
    with open(path, "w") as fh:
        fh.write(text + "\n")
    log.info("selected entry %d (K=%d)", result["selected_id"], result["selected_k"])
    return EXIT_OK


def _model_id(args):
    if args.model is not None:
        return args.model
    path = args.selection or os.path.join(os.path.dirname(args.collection), "selection.json")
    if not os.path.exists(path):
        raise DataError("no --model given and no selection.json found")
    with open(path) as fh:
        return int(json.load(fh)["selected_id"])


def _entry(coll, mid):
    if not 0 <= mid < len(coll.entries):
        raise DataError(f"model id {mid} not in collection ({len(coll.entries)} entries)")
    return coll.entries[mid]


def _check_fingerprint(coll, data):
    if coll.dataset_fingerprint != data.fingerprint():
        log.warning("features fingerprint %s differs from the collection's %s",
                    data.fingerprint(), coll.dataset_fingerprint)


def cmd_cluster(args):
    coll = load_collection(args.collection)
    data = read_features(args.features)
    _check_fingerprint(coll, data)
    mid = _model_id(args)
    entry = _entry(coll, mid)
    if entry.params.p != data.p or entry.params.q != data.q:
        raise DimensionError("model and features have different dimensions")
    prep = _prep_of(args, data)
    rep = cluster_report(entry, data)
    head = _header(args, "cluster", fingerprint=data.fingerprint(), model_id=mid, k=entry.k)
    k = entry.k

    with open(_out(args, "clusters.csv"), "w", newline="") as fh:
        _write_header(fh, head)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "consumer", "eve_date", "day_date", "label", "max_responsibility"])
        for i, m in enumerate(data.meta):
            w.writerow([i + 1, m.consumer, _date(m.eve_date), _date(m.day_date),
                        int(rep.labels[i]) + 1, repr(float(rep.max_responsibility[i]))])

    with open(_out(args, "cluster-summary.csv"), "w", newline="") as fh:
        _write_header(fh, head)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster", "empirical_share", "model_pi", "resp_min", "resp_q1",
                    "resp_median", "resp_q3", "resp_max"])
        for c in range(k):
            five = rep.posterior_summary[c] or ("",) * 5
            w.writerow([c + 1, repr(float(rep.empirical_proportions[c])),
                        repr(float(rep.model_proportions[c]))] +
                       [v if v == "" else repr(v) for v in five])

    if any(m is not None for m in rep.mean_curves):
        with open(_out(args, "profiles.csv"), "w", newline="") as fh:
            _write_header(fh, head)
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cluster"] + [f"eve_h{t:02d}" for t in range(N_SLOTS)]
                       + [f"day_h{t:02d}" for t in range(N_SLOTS)])
            for c, m in enumerate(rep.mean_curves):
                if m is not None:
                    w.writerow([c + 1] + [repr(float(v)) for v in m])

    weekdays = [m.day_weekday for m in data.meta]
    if all(weekdays):
        tab = crosstab_daytype(rep.labels, weekdays, k)
        with open(_out(args, "crosstab.csv"), "w", newline="") as fh:
            _write_header(fh, head)
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cluster"] + list(tab.cols))
            for c in tab.rows:
                w.writerow([c + 1] + [repr(float(v)) for v in tab.cells[c]])
            w.writerow(["n_days"] + [int(v) for v in tab.counts.sum(axis=0)])
    else:
        log.warning("response weekdays missing from the features; crosstab.csv not written")

    if prep.dim == data.p == data.q:
        export_beta(entry, prep, args.out, head)
    else:
        log.warning("features do not match preprocessing %d; beta tables not written", prep.mode)
    export_sigma(entry, _out(args, "sigma.csv"), head)
    return EXIT_OK


def cmd_forecast(args):
    coll = load_collection(args.collection)
    train = read_features(args.train)
    test = read_features(args.test)
    _check_fingerprint(coll, train)
    mid = _model_id(args)
    entry = _entry(coll, mid)
    prep = _prep_of(args, train)
    rows = forecast_compare(train, test, entry, _em_options(args), prep)
    with open(_out(args, "rmse.csv"), "w", newline="") as fh:
        _write_header(fh, _header(args, "forecast", fingerprint=train.fingerprint(), model_id=mid))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["consumer", "rmse_pooled", "rmse_mixture", "rmse_cluster_ols", "split"])
        for r in rows:
            w.writerow([r.consumer, repr(r.rmse_pooled), repr(r.rmse_mixture),
                        repr(r.rmse_cluster_ols), r.split])
    for split in ("train", "test"):
        if any(r.split == split for r in rows):
            med = median_rmse(rows, split)
            log.info("%s medians: pooled %.4g, mixture %.4g, cluster OLS %.4g", split,
                     med["pooled"], med["mixture"], med["cluster_ols"])
    return EXIT_OK


def cmd_synth(args):
    # the root seed always drives the draw; a seed stored in --spec is replaced
    if args.spec:
        d = GeneratorSpec.load(args.spec).to_dict()
        d["seed"] = args.seed
        pool = read_features(args.x_pool).x if args.x_pool else None
        spec = GeneratorSpec.from_dict(d, pool)
    else:
        spec = two_cluster_spec(args.seed, n=args.n)
    data, labels, _ = generate(spec)
    prep = PreprocessSpec(args.prep or 2)
    data.preprocessing_tag = prep.mode
    echo = json.dumps(spec.to_dict(), sort_keys=True)
    head = _header(args, "synth", spec=echo)
    write_features(data, prep, _out(args, "features.csv"), head)
    with open(_out(args, "truth.csv"), "w", newline="") as fh:
        _write_header(fh, head + [f"fingerprint: {data.fingerprint()}"])
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "label"])
        for i, lab in enumerate(labels):
            w.writerow([i + 1, int(lab) + 1])
    with open(_out(args, "synth-spec.json"), "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
        fh.write("\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser

def _common(p):
    p.add_argument("--seed", type=int, default=0, help="root seed for every random draw")
    p.add_argument("--prep", type=int, choices=(1, 2), default=None, help="preprocessing mode")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--jobs", type=int, default=None, help="worker processes for fit (default: all CPUs)")
    p.add_argument("--reproducible", action="store_true", help="omit timestamps from outputs")
    p.add_argument("--config", default=None, help="file of key=value defaults")
    p.add_argument("-v", "--verbose", action="store_true")


def _em_flags(p):
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--n-starts", type=int, default=5)
    p.add_argument("--penalty", choices=("plain", "weighted"), default="plain")


def build_parser():
    parser = _Parser(prog="loadmix", description="Clustering of load curves by mixtures of "
                     "sparse Gaussian regressions.")
    parser.add_argument("--version", action="version", version=f"loadmix {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="meter CSV -> wavelet feature pairs")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--layout", choices=("wide", "long"), default="wide")
    p.add_argument("--impute", choices=("linear",), default=None)
    p.add_argument("--dataset", choices=("aggregate", "individual", "mean-day"), default="individual")
    p.add_argument("--pairs", default="all",
                   help="'all', an ISO eve date, or EVE:DAY weekdays such as Tue:Wed")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", help="build the model collection")
    _common(p)
    _em_flags(p)
    p.add_argument("--features", required=True)
    p.add_argument("--k-set", default=None, help="e.g. 1-8 or 2,3,4 (default 1-8)")
    p.add_argument("--force-k", action="store_true", help="exclude K=1 (K in 2-8)")
    p.add_argument("--grid-size", type=int, default=20)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="slope heuristic on a collection")
    _common(p)
    p.add_argument("--collection", required=True)
    p.add_argument("--shortlist", type=int, default=5)
    p.add_argument("--kappa-grid", type=int, default=1000)
    p.add_argument("--factor", type=float, default=2.0)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("cluster", help="MAP clusters, profiles, crosstab, exports")
    _common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--collection", required=True)
    p.add_argument("--model", type=int, default=None, help="entry id (default: selection.json)")
    p.add_argument("--selection", default=None)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("forecast", help="next-day RMSE of pooled, mixture and per-cluster models")
    _common(p)
    _em_flags(p)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--collection", required=True)
    p.add_argument("--model", type=int, default=None)
    p.add_argument("--selection", default=None)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("synth", help="draw a synthetic dataset with known clusters")
    _common(p)
    p.add_argument("--spec", default=None, help="synth-spec.json (default: two-cluster design)")
    p.add_argument("--x-pool", default=None, help="feature CSV whose x rows are resampled")
    p.add_argument("--n", type=int, default=500, help="rows of the default design")
    p.set_defaults(func=cmd_synth)
    return parser


def _read_config(path):
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{n}: expected key=value")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_config(parser, argv):
    """Re-parse with config values as defaults so explicit flags still win."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None:
        return args
    conf = _read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in conf.items():
        if key not in actions:
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        act = actions[key]
        if isinstance(act, argparse._StoreTrueAction):
            defaults[key] = value.lower() in ("1", "true", "yes", "on")
        elif act.type is not None:
            try:
                defaults[key] = act.type(value)
            except ValueError:
                raise UsageError(f"bad value {value!r} for config key {key!r}") from None
        else:
            defaults[key] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"loadmix: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"loadmix: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"loadmix: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, DataError, DimensionError, InfeasibleError, OSError) as exc:
        print(f"loadmix: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, NoJumpError, LoadmixError) as exc:
        print(f"loadmix: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
