import csv
import json
import os

import numpy as np
import pytest

from loadmix.cli import main, read_features, read_header, write_features
from loadmix.collection import ModelCollection, ModelEntry, save_collection
from loadmix.mixture import MixtureParams, Support

FIXTURE = os.path.join(os.path.dirname(__file__), "fixtures", "loadlike.csv")
FAST = ["--n-starts", "2", "--jobs", "1", "--reproducible"]


def rows_of(path):
    with open(path, newline="") as fh:
        return [r for r in csv.reader(fh) if r and not r[0].startswith("#")]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Aggregate features and a small collection, shared by the read-only tests."""
    d = tmp_path_factory.mktemp("cli")
    assert main(["ingest", "--input", FIXTURE, "--dataset", "aggregate", "--out", str(d),
                 "--reproducible"]) == 0
    assert main(["fit", "--features", str(d / "features.csv"), "--k-set", "1-2",
                 "--grid-size", "5", "--out", str(d)] + FAST) == 0
    assert main(["select", "--collection", str(d / "collection.jsonl"), "--out", str(d),
                 "--reproducible"]) == 0
    return d


def test_ingest_feature_columns(tmp_path):
    for prep, width in (("2", 9), ("1", 12)):
        out = tmp_path / prep
        assert main(["ingest", "--input", FIXTURE, "--dataset", "aggregate", "--prep", prep,
                     "--out", str(out)]) == 0
        header = rows_of(out / "features.csv")[0]
        assert sum(h.startswith("x_") for h in header) == width
        assert sum(h.startswith("y_") for h in header) == width
        assert read_header(str(out / "features.csv"))["prep"] == prep


def test_ingest_datasets(tmp_path):
    assert main(["ingest", "--input", FIXTURE, "--pairs", "Fri:Sat", "--out", str(tmp_path)]) == 0
    data = read_features(str(tmp_path / "features.csv"))
    assert {m.day_weekday for m in data.meta} == {"Sat"}
    assert data.x_curves is not None and data.x_curves.shape == (data.n, 48)
    assert main(["ingest", "--input", FIXTURE, "--dataset", "mean-day", "--pairs", "Tue:Wed",
                 "--out", str(tmp_path)]) == 0
    assert read_features(str(tmp_path / "features.csv")).n == 6
    assert main(["ingest", "--input", FIXTURE, "--dataset", "mean-day",
                 "--out", str(tmp_path)]) == 1
    assert main(["ingest", "--input", FIXTURE, "--pairs", "someday", "--out", str(tmp_path)]) == 1


def test_ingest_reproducible_is_byte_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        assert main(["ingest", "--input", FIXTURE, "--out", str(tmp_path / name),
                     "--reproducible"]) == 0
        outs.append((tmp_path / name / "features.csv").read_bytes())
    assert outs[0] == outs[1] and b"created:" not in outs[0]
    main(["ingest", "--input", FIXTURE, "--out", str(tmp_path / "c")])
    assert b"created:" in (tmp_path / "c" / "features.csv").read_bytes()


def test_missing_input_is_a_data_error(tmp_path):
    assert main(["ingest", "--input", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("consumer,date,h00\nc,2011-01-01,1\n")
    assert main(["ingest", "--input", str(bad), "--out", str(tmp_path)]) == 2


def test_features_round_trip(workdir):
    data = read_features(str(workdir / "features.csv"))
    path = workdir / "copy.csv"
    write_features(data, 2, str(path))
    back = read_features(str(path))
    assert np.array_equal(back.x, data.x) and np.array_equal(back.y_curves, data.y_curves)
    assert back.meta == data.meta and back.fingerprint() == data.fingerprint()


def test_fit_outputs(workdir):
    summary = rows_of(workdir / "collection-summary.csv")
    assert summary[0] == ["id", "k", "support_size", "dimension", "loglik", "lambda_origin"]
    assert {r[1] for r in summary[1:]} == {"1", "2"}
    meta = json.load(open(workdir / "collection.meta.json"))
    assert meta["k_set"] == [1, 2] and "created" not in meta["provenance"]


def test_fit_force_k_excludes_one(tmp_path):
    synth = tmp_path / "s"
    assert main(["synth", "--n", "120", "--out", str(synth), "--reproducible"]) == 0
    assert main(["fit", "--features", str(synth / "features.csv"), "--force-k",
                 "--grid-size", "3", "--out", str(tmp_path), "--max-iter", "30"] + FAST) == 0
    ks = {int(r[1]) for r in rows_of(tmp_path / "collection-summary.csv")[1:]}
    assert 1 not in ks and ks <= set(range(2, 9))


def test_fit_rejects_bad_features(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("row,consumer,eve_date,day_date,eve_weekday,day_weekday,x_D4_1,y_D4_1\n")
    assert main(["fit", "--features", str(empty), "--out", str(tmp_path)]) == 2
    junk = tmp_path / "junk.csv"
    junk.write_text("row,consumer,eve_date,day_date,eve_weekday,day_weekday,x_D4_1,y_D4_1\n"
                    "1,a,,,,,zz,1\n")
    assert main(["fit", "--features", str(junk), "--out", str(tmp_path)]) == 2
    assert main(["fit", "--features", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 2


def test_select_output(workdir):
    sel = json.load(open(workdir / "selection.json"))
    assert sel["kappa_used"] == pytest.approx(2 * sel["kappa_hat"])
    assert len(sel["shortlist"]) <= 5 and sel["shortlist"][0]["id"] == sel["selected_id"]
    assert sel["meta"]["command"] == "select"
    text = (workdir / "selection.json").read_text()
    assert all(len(line) < 200 for line in text.splitlines())


def test_select_shortlist_flag(workdir, tmp_path):
    assert main(["select", "--collection", str(workdir / "collection.jsonl"), "--shortlist", "1",
                 "--out", str(tmp_path)]) == 0
    assert len(json.load(open(tmp_path / "selection.json"))["shortlist"]) == 1
    assert main(["select", "--collection", str(workdir / "collection.jsonl"), "--shortlist", "0",
                 "--out", str(tmp_path)]) == 1


def test_select_single_entry_warns(tmp_path, caplog):
    prm = MixtureParams([1.0], np.zeros((1, 1, 1)), np.ones((1, 1)))
    coll = ModelCollection([ModelEntry(1, Support(), prm, -1.0, 1, 0.0)], "fp", (1,), 2, 10, 1, 1)
    save_collection(coll, str(tmp_path / "one.jsonl"))
    assert main(["select", "--collection", str(tmp_path / "one.jsonl"), "--out", str(tmp_path)]) == 0
    assert json.load(open(tmp_path / "selection.json"))["selected_id"] == 0
    assert "single entry" in caplog.text


def test_cluster_outputs(workdir, tmp_path):
    args = ["cluster", "--features", str(workdir / "features.csv"),
            "--collection", str(workdir / "collection.jsonl"), "--out", str(tmp_path)]
    assert main(args + ["--reproducible"]) == 0
    sel = json.load(open(workdir / "selection.json"))
    k = sel["selected_k"]
    clusters = rows_of(tmp_path / "clusters.csv")
    assert clusters[0] == ["row", "consumer", "eve_date", "day_date", "label", "max_responsibility"]
    labels = {int(r[4]) for r in clusters[1:]}
    assert labels <= set(range(1, k + 1))
    assert all(float(r[5]) >= 1.0 / k - 1e-12 for r in clusters[1:])
    tab = rows_of(tmp_path / "crosstab.csv")
    assert tab[0] == ["cluster", "Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"]
    cells = np.array([[float(v) for v in r[1:]] for r in tab[1:-1]])
    assert np.allclose(cells.sum(axis=0), 1.0) and tab[-1][0] == "n_days"
    assert len(rows_of(tmp_path / "profiles.csv")[0]) == 97
    assert len(rows_of(tmp_path / "sigma.csv")) == k + 1
    assert os.path.exists(tmp_path / f"beta_k{k}_c1.csv")
    assert main(args + ["--model", "999"]) == 2


def test_forecast_columns(tmp_path):
    assert main(["ingest", "--input", FIXTURE, "--pairs", "2011-01-03", "--out",
                 str(tmp_path / "tr")]) == 0
    assert main(["ingest", "--input", FIXTURE, "--pairs", "2011-01-04", "--out",
                 str(tmp_path / "te")]) == 0
    prm = MixtureParams([1.0], np.eye(9)[None], np.ones((1, 9)))
    coll = ModelCollection([ModelEntry(1, Support.full(9, 9), prm, -1.0, 90, 0.0)], "fp",
                           (1,), 2, 6, 9, 9)
    save_collection(coll, str(tmp_path / "c.jsonl"))
    assert main(["forecast", "--train", str(tmp_path / "tr" / "features.csv"),
                 "--test", str(tmp_path / "te" / "features.csv"),
                 "--collection", str(tmp_path / "c.jsonl"), "--model", "0",
                 "--out", str(tmp_path)]) == 0
    rows = rows_of(tmp_path / "rmse.csv")
    assert rows[0] == ["consumer", "rmse_pooled", "rmse_mixture", "rmse_cluster_ols", "split"]
    assert len(rows) == 1 + 12 and {r[4] for r in rows[1:]} == {"train", "test"}


def test_synth_is_seeded(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--n", "50", "--seed", "3", "--out", str(tmp_path / name),
                     "--reproducible"]) == 0
    for f in ("features.csv", "truth.csv", "synth-spec.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    head = read_header(str(tmp_path / "a" / "features.csv"))
    assert json.loads(head["spec"])["seed"] == 3


def test_synth_from_spec_file(tmp_path):
    spec = {"pi": [1.0], "beta": np.zeros((1, 9, 9)).tolist(), "sigma_diag": [[1.0] * 9],
            "n": 25, "seed": 99}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    assert main(["synth", "--spec", str(tmp_path / "spec.json"), "--seed", "4",
                 "--out", str(tmp_path)]) == 0
    truth = rows_of(tmp_path / "truth.csv")
    assert truth[0] == ["row", "label"] and {r[1] for r in truth[1:]} == {"1"}
    assert json.load(open(tmp_path / "synth-spec.json"))["seed"] == 4


def test_config_defaults_and_overrides(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# defaults\nn = 40\nseed = 8\nreproducible = true\n")
    assert main(["synth", "--config", str(conf), "--out", str(tmp_path / "a")]) == 0
    assert len(rows_of(tmp_path / "a" / "truth.csv")) == 41
    assert read_header(str(tmp_path / "a" / "truth.csv"))["seed"] == "8"
    assert main(["synth", "--config", str(conf), "--n", "10", "--out", str(tmp_path / "b")]) == 0
    assert len(rows_of(tmp_path / "b" / "truth.csv")) == 11
    conf.write_text("colour = blue\n")
    assert main(["synth", "--config", str(conf), "--out", str(tmp_path)]) == 1


def test_usage_errors():
    assert main([]) == 1
    assert main(["fly"]) == 1
    assert main(["fit"]) == 1
    assert main(["synth", "--seed", "x"]) == 1
    assert main(["fit", "--features", "f.csv", "--k-set", "0-3"]) == 1
