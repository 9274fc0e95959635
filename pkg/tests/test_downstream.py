import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from lightpath import graph
from lightpath.downstream import (
    GBRConfig,
    MetricReport,
    average_ranks,
    embed_dataset,
    embed_paths,
    eval_task,
    fit_gbr,
    fit_tree,
    kendall_tau_b,
    metrics,
    report_json,
    spearman_rho,
    task_targets,
)
from lightpath.encoder import EncoderConfig, EncoderModel

# --- metrics ------------------------------------------------------------------------


def test_metric_hand_values():
    r = metrics([10.0, 20.0], [12.0, 18.0])
    assert r.mae == 2.0
    assert r.mare == pytest.approx(4 / 30, rel=1e-15)
    assert r.mape == pytest.approx(15.0, rel=1e-15)


def test_rank_identity_and_reversal():
    y = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    assert kendall_tau_b(y, y) == 1.0 and spearman_rho(y, y) == 1.0
    assert kendall_tau_b(y, y[::-1]) == -1.0 and spearman_rho(y, y[::-1]) == -1.0


def test_constant_prediction_gives_nan():
    assert math.isnan(kendall_tau_b([1.0, 2.0, 3.0], [5.0, 5.0, 5.0]))
    assert math.isnan(spearman_rho([1.0, 2.0, 3.0], [5.0, 5.0, 5.0]))


def test_metric_input_errors():
    with pytest.raises(ValueError):
        metrics([0.0, 1.0], [1.0, 1.0])
    assert metrics([0.0, 1.0], [1.0, 1.0], mape=False).mae == 0.5
    with pytest.raises(ValueError):
        metrics([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        kendall_tau_b(np.ones((2, 2)), np.ones((2, 2)))


def test_average_ranks_ties():
    np.testing.assert_array_equal(average_ranks([3.0, 1.0, 3.0, 2.0]), [3.5, 1.0, 3.5, 2.0])


@pytest.mark.filterwarnings("ignore::scipy.stats.ConstantInputWarning")
@settings(max_examples=80, deadline=None)
@given(st.data())
def test_rank_correlations_match_scipy_with_ties(data):
    n = data.draw(st.integers(3, 40))
    x = np.array(data.draw(st.lists(st.integers(0, 5), min_size=n, max_size=n)), dtype=float)
    y = np.array(data.draw(st.lists(st.integers(0, 5), min_size=n, max_size=n)), dtype=float)
    tau_ref = stats.kendalltau(x, y, variant="b").statistic
    rho_ref = stats.spearmanr(x, y).statistic
    tau, rho = kendall_tau_b(x, y), spearman_rho(x, y)
    if math.isnan(tau_ref):
        assert math.isnan(tau)
    else:
        assert tau == pytest.approx(tau_ref, abs=1e-12)
    if math.isnan(rho_ref):
        assert math.isnan(rho)
    else:
        assert rho == pytest.approx(rho_ref, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=30, unique=True), st.integers(0, 2**31))
def test_rank_metrics_invariant_under_monotone_maps(y, seed):
    y = np.array(y)
    p = y + np.random.default_rng(seed).normal(size=y.size) * 10
    for f in (lambda v: 3 * v + 7, np.tanh, np.exp):
        with np.errstate(over="ignore"):
            fp = f(p / 100)
        assert kendall_tau_b(y, fp) == pytest.approx(kendall_tau_b(y, p / 100), abs=1e-12)
        assert spearman_rho(y, fp) == pytest.approx(spearman_rho(y, p / 100), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1, 100), min_size=2, max_size=30), st.floats(0.1, 10), st.integers(0, 2**31))
def test_error_metrics_scale(y, c, seed):
    y = np.array(y)
    p = y * np.random.default_rng(seed).uniform(0.5, 1.5, size=y.size)
    a, b = metrics(y, p), metrics(c * y, c * p)
    assert b.mae == pytest.approx(c * a.mae, rel=1e-9, abs=1e-12)
    assert b.mare == pytest.approx(a.mare, rel=1e-9, abs=1e-12)
    assert b.mape == pytest.approx(a.mape, rel=1e-9, abs=1e-12)
    assert a.mae >= 0 and a.mape >= 0


# --- trees and boosting ------------------------------------------------------------------


def test_constant_targets_predict_constant():
    x = np.random.default_rng(0).normal(size=(20, 3))
    m = fit_gbr(x, np.full(20, 4.5), GBRConfig(n_trees=10))
    np.testing.assert_array_equal(m.predict(x), 4.5)


def test_depth_one_tree_hand_case():
    x = np.array([[1.0], [2.0], [3.0], [4.0]])
    y = np.array([0.0, 0.0, 10.0, 10.0])
    tree = fit_tree(x, y, max_depth=1)
    assert tree.feature[0] == 0 and tree.threshold[0] == 2.5
    np.testing.assert_array_equal(tree.predict(x), y)
    np.testing.assert_array_equal(tree.predict(np.array([[2.5], [2.51]])), [0.0, 10.0])


def test_tree_on_constant_features_is_a_leaf():
    tree = fit_tree(np.ones((6, 2)), np.arange(6.0), max_depth=3)
    assert len(tree.value) == 1 and tree.value[0] == 2.5


def test_min_leaf_respected():
    x = np.arange(10.0)[:, None]
    y = np.r_[100.0, np.zeros(9)]
    tree = fit_tree(x, y, max_depth=1, min_leaf=3)
    assert tree.threshold[0] >= 2.5
    assert np.count_nonzero(x[:, 0] <= tree.threshold[0]) >= 3


def test_training_mse_non_increasing():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(80, 4))
    y = np.sin(x[:, 0]) + x[:, 1] ** 2 + 0.1 * rng.normal(size=80)
    hist = fit_gbr(x, y, GBRConfig(n_trees=50)).staged_mse(x, y)
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))
    assert hist[-1] < 0.2 * hist[0]


def test_zero_learning_rate_predicts_mean():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(15, 2)), rng.normal(size=15)
    m = fit_gbr(x, y, GBRConfig(n_trees=5, learning_rate=0.0))
    np.testing.assert_allclose(m.predict(x), y.mean(), rtol=0, atol=1e-15)


def test_boosting_matches_brute_force_stump():
    # exhaustive search over every feature and midpoint as an independent oracle
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(25, 3)), rng.normal(size=25)
    best = (np.inf, None, None)
    for f in range(3):
        vals = np.unique(x[:, f])
        for thr in (vals[:-1] + vals[1:]) / 2:
            m = x[:, f] <= thr
            sse = ((y[m] - y[m].mean()) ** 2).sum() + ((y[~m] - y[~m].mean()) ** 2).sum()
            if sse < best[0] - 1e-12:
                best = (sse, f, thr)
    tree = fit_tree(x, y, max_depth=1)
    assert tree.feature[0] == best[1] and tree.threshold[0] == pytest.approx(best[2])


def test_gbr_input_errors():
    with pytest.raises(ValueError):
        fit_gbr(np.ones(5), np.ones(5))
    with pytest.raises(ValueError):
        fit_gbr(np.ones((1, 2)), np.ones(1))


# --- task harness -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_setup():
    net = graph.generate_grid_network(4, 4, seed=0)
    ds = graph.generate_synthetic_paths(net, 6, 6, 5, seed=1)
    graph.label_travel_times(net, ds, seed=2)
    graph.assign_splits(ds, seed=3, test_fraction=0.3)
    cfg = EncoderConfig(vocab=net.vocab_size, max_len=6, d_model=8, n_layers=2, n_heads=2, d_ff=16)
    return net, ds, EncoderModel.init(cfg, np.random.default_rng(0))


def test_eval_task_deterministic_and_structured(small_setup):
    _, ds, enc = small_setup
    cfg = GBRConfig(n_trees=10)
    a = eval_task(enc, ds, "travel_time", cfg, seed=4)
    b = eval_task(enc, ds, "travel_time", cfg, seed=4)
    assert a == b
    assert a.tau is None and a.rho is None and a.mape > 0
    doc = json.loads(report_json("travel_time", cfg, 4, a))
    assert set(doc) == {"task", "hyperparameters", "seed", "metrics"}
    assert doc["metrics"]["tau"] is None


def test_report_json_writes_nan_as_null():
    text = report_json("ranking", GBRConfig(), 0, MetricReport(mae=1.0, tau=math.nan, rho=0.5))
    assert json.loads(text)["metrics"]["tau"] is None


def test_ranking_task(small_setup):
    net, ds, enc = small_setup
    rk = graph.ranking_dataset(net, ds.paths[:10], 3, seed=5, skip_unrankable=True)
    graph.assign_splits(rk, seed=6, test_fraction=0.4)
    r = eval_task(enc, rk, "ranking", GBRConfig(n_trees=5))
    assert r.mape is None and r.mare is None and -1 <= r.tau <= 1


def test_missing_labels_and_unknown_task(small_setup):
    _, ds, enc = small_setup
    with pytest.raises(ValueError):
        task_targets(ds, "ranking")
    with pytest.raises(ValueError):
        task_targets(ds, "speed")
    unsplit = graph.PathDataset([graph.PathRecord(r.path_id, r.edges, r.travel_time) for r in ds.records])
    with pytest.raises(ValueError):
        eval_task(enc, unsplit, "travel_time")


def test_embedding_shapes_and_length_limit(small_setup):
    net, ds, enc = small_setup
    x = embed_dataset(enc, ds)
    assert x.shape == (len(ds), 8)
    np.testing.assert_array_equal(x, embed_paths(enc, ds.paths, batch_size=7))
    sparse = embed_paths(enc, ds.paths, gamma_eval=0.5, seed=1)
    np.testing.assert_array_equal(sparse, embed_paths(enc, ds.paths, gamma_eval=0.5, seed=1))
    long = graph.generate_synthetic_paths(net, 1, 8, 1, seed=9)
    with pytest.raises(ValueError):
        embed_dataset(enc, long)
