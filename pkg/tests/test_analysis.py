import numpy as np
import pytest

from loadmix.analysis import (cluster_report, crosstab_daytype, export_beta, export_sigma,
                              forecast_compare, median_rmse, read_beta_csv, rmse)
from loadmix.collection import ModelEntry
from loadmix.errors import DimensionError
from loadmix.ingest import WEEKDAYS, RegressionDataset, RowMeta
from loadmix.mixture import MixtureParams, Support, log_likelihood, model_dimension
from loadmix.synth import generate, two_cluster_spec
from loadmix.wavelet import PreprocessSpec, WaveletDecomp, haar_idwt, preprocess


def make_entry(params, data=None):
    sup = Support.of_beta(params.beta)
    ll = log_likelihood(params, data) if data is not None else -1.0
    return ModelEntry(params.k, sup, params, ll, model_dimension(params.k, sup, params.q), 0.0)


@pytest.fixture(scope="module")
def separated():
    data, labels, params = generate(two_cluster_spec(3, n=400))
    return data, labels, make_entry(params, data)


def test_crosstab_columns_sum_to_one():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 3, size=200)
    days = [WEEKDAYS[i % 7] for i in range(200)]
    tab = crosstab_daytype(labels, days)
    assert np.allclose(tab.cells.sum(axis=0), 1.0)
    assert tab.counts.sum() == 200 and tab.cols == WEEKDAYS


def test_crosstab_weekend_cluster():
    days = [WEEKDAYS[i % 7] for i in range(70)]
    labels = np.array([1 if d in ("Sat", "Sun") else 0 for d in days])
    tab = crosstab_daytype(labels, days)
    assert tab.cells[1, 5] == 1.0 and tab.cells[1, 6] == 1.0
    assert np.all(tab.cells[1, :5] == 0.0)


def test_crosstab_uniform_labels_are_balanced():
    rng = np.random.default_rng(1)
    days = [WEEKDAYS[i % 7] for i in range(7000)]
    tab = crosstab_daytype(rng.integers(0, 2, size=7000), days)
    assert np.all(np.abs(tab.cells - 0.5) < 0.06)


def test_crosstab_missing_weekday_column_is_zero():
    tab = crosstab_daytype([0, 1, 1], ["Mon", "Mon", "Mon"], k=3)
    assert tab.cells.shape == (3, 7)
    assert tab.cells[:, 0] == pytest.approx([1 / 3, 2 / 3, 0])
    assert np.all(tab.cells[:, 1:] == 0)
    with pytest.raises(DimensionError):
        crosstab_daytype([0, 1], ["Mon"])


def test_rmse_properties():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(5, 48))
    assert np.all(rmse(a, a) == 0)
    assert np.allclose(rmse(a + 1.0, a), 1.0)
    assert np.allclose(rmse(3 * a, 3 * a + 3 * np.ones(48)), 3 * rmse(a, a + 1))
    assert rmse(np.zeros(48), np.full(48, 2.0)) == pytest.approx(2.0)


def test_cluster_report_single_cluster(separated):
    data = separated[0]
    prm = MixtureParams([1.0], np.zeros((1, 9, 9)), np.ones((1, 9)))
    rep = cluster_report(make_entry(prm), data)
    assert np.all(rep.labels == 0) and rep.empirical_proportions == pytest.approx([1.0])
    assert rep.posterior_summary[0] == pytest.approx((1.0,) * 5)


def test_cluster_report_on_separated_data(separated):
    data, labels, entry = separated
    rep = cluster_report(entry, data)
    freq = np.bincount(rep.labels, minlength=2) / data.n
    assert np.allclose(rep.empirical_proportions, freq)
    assert np.mean(rep.labels == labels) > 0.95
    for s in rep.posterior_summary:
        assert s[0] >= 0.5 and s[2] >= 0.5
    assert rep.mean_curves == [None, None]


def test_cluster_report_mean_curves():
    rng = np.random.default_rng(3)
    xc, yc = rng.normal(size=(6, 48)), rng.normal(size=(6, 48))
    data = RegressionDataset(preprocess(xc, 2), preprocess(yc, 2), [], 2, xc, yc)
    prm = MixtureParams([1.0], np.zeros((1, 9, 9)), np.ones((1, 9)))
    rep = cluster_report(make_entry(prm), data)
    assert np.allclose(rep.mean_curves[0], np.hstack([xc, yc]).mean(axis=0))


def test_export_beta_round_trip(separated, tmp_path):
    entry = separated[2]
    paths = export_beta(entry, 2, str(tmp_path), ["seed: 1"])
    assert len(paths) == 3  # two clusters and one difference
    assert np.array_equal(read_beta_csv(paths[0]), entry.params.beta[0].T)
    assert np.array_equal(read_beta_csv(paths[2]), entry.params.beta[0].T - entry.params.beta[1].T)
    header = open(paths[0]).read().splitlines()[:2]
    assert header[0] == "# seed: 1" and header[1].startswith("regressor,y_D4_1")


def test_export_zero_beta_and_mode_one(tmp_path):
    prm = MixtureParams([1.0], np.zeros((1, 12, 12)), np.ones((1, 12)))
    (path,) = export_beta(make_entry(prm), PreprocessSpec(1), str(tmp_path))
    m = read_beta_csv(path)
    assert m.shape == (12, 12) and np.all(m == 0)
    with pytest.raises(DimensionError):
        export_beta(make_entry(prm), 2, str(tmp_path))


def test_export_sigma(separated, tmp_path):
    entry = separated[2]
    path = tmp_path / "sigma.csv"
    export_sigma(entry, str(path))
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[:2] == ["cluster", "var_1"]
    assert [l.split(",")[0] for l in lines[1:]] == ["1", "2"]


def smooth_curves(rng, n):
    """Curves with no D2/D1 content, so the retained features rebuild them exactly."""
    dec = WaveletDecomp(rng.normal(size=(n, 3)) + 10, rng.normal(size=(n, 3)),
                        rng.normal(size=(n, 6)), np.zeros((n, 12)), np.zeros((n, 24)))
    return haar_idwt(dec)


def test_forecast_perfect_persistence_is_exact():
    rng = np.random.default_rng(4)
    n = 40
    xc = smooth_curves(rng, n)
    yc = xc.copy()
    meta = [RowMeta(f"c{i}", None, None, None, None) for i in range(n)]
    train = RegressionDataset(preprocess(xc, 2), preprocess(yc, 2), meta, 2, xc, yc)
    prm = MixtureParams([1.0], np.eye(9)[None], np.ones((1, 9)))
    rows = forecast_compare(train, train, make_entry(prm, train))
    assert len(rows) == 2 * n
    for r in rows:
        assert r.rmse_pooled < 1e-9 and r.rmse_mixture < 1e-12 and r.rmse_cluster_ols < 1e-9
    med = median_rmse(rows)
    assert set(med) == {"pooled", "mixture", "cluster_ols"}


def test_forecast_mode_one_uses_eve_level():
    rng = np.random.default_rng(5)
    n = 30
    xc = smooth_curves(rng, n)
    meta = [RowMeta(f"c{i}", None, None, None, None) for i in range(n)]
    data = RegressionDataset(preprocess(xc, 1), preprocess(xc, 1), meta, 1, xc, xc)
    prm = MixtureParams([1.0], np.eye(12)[None], np.ones((1, 12)))
    rows = forecast_compare(data, data, make_entry(prm, data), prep=1)
    assert max(r.rmse_mixture for r in rows) < 1e-12


def test_forecast_drops_consumers_missing_from_test():
    rng = np.random.default_rng(6)
    xc = smooth_curves(rng, 20)
    meta = [RowMeta(f"c{i}", None, None, None, None) for i in range(20)]
    train = RegressionDataset(preprocess(xc, 2), preprocess(xc, 2), meta, 2, xc, xc)
    test = train.subset(np.arange(10))
    prm = MixtureParams([1.0], np.eye(9)[None], np.ones((1, 9)))
    rows = forecast_compare(train, test, make_entry(prm, train))
    assert sum(r.split == "test" for r in rows) == 10
