"""Downstream evaluation: frozen-encoder features, boosted regression trees, metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .encoder import EncoderModel, encode_batch, full_view, sparsify
from .graph import PathDataset
from .numerics import no_grad
from .rng import stream

TASKS = ("travel_time", "ranking")


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


def embed_paths(
    encoder: EncoderModel,
    paths: Sequence[Sequence[int]],
    gamma_eval: float = 0.0,
    seed: int = 0,
    batch_size: int = 256,
) -> np.ndarray:
    """One path representation per path, shape ``(K, d)``.

    ``gamma_eval=0`` encodes every edge and is deterministic.
    """
    rng = stream(seed, "eval-sparsify")
    out = []
    with no_grad():
        for start in range(0, len(paths), batch_size):
            chunk = paths[start : start + batch_size]
            views = [full_view(p) if gamma_eval == 0 else sparsify(p, gamma_eval, rng) for p in chunk]
            out.append(encode_batch(encoder, views).pr.data)
    if not out:
        return np.zeros((0, encoder.config.d_model))
    return np.concatenate(out, axis=0)


def embed_dataset(encoder: EncoderModel, dataset: PathDataset, gamma_eval: float = 0.0, seed: int = 0) -> np.ndarray:
    return embed_paths(encoder, dataset.paths, gamma_eval, seed)


# ---------------------------------------------------------------------------
# gradient boosting
# ---------------------------------------------------------------------------


@dataclass
class RegressionTree:
    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def _leaf(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.value) - 1

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int64)
        feature = np.array(self.feature)
        threshold = np.array(self.threshold)
        left, right = np.array(self.left), np.array(self.right)
        active = feature[node] >= 0
        while active.any():
            rows = np.nonzero(active)[0]
            f = feature[node[rows]]
            go_left = x[rows, f] <= threshold[node[rows]]
            node[rows] = np.where(go_left, left[node[rows]], right[node[rows]])
            active = feature[node] >= 0
        return np.array(self.value)[node]


def fit_tree(x: np.ndarray, y: np.ndarray, max_depth: int, min_leaf: int = 1) -> RegressionTree:
    """Greedy least-squares tree; splits go left when ``x[f] <= threshold``."""
    tree = RegressionTree()

    def grow(idx: np.ndarray, depth: int) -> int:
        value = float(np.mean(y[idx]))
        if depth >= max_depth or idx.size < 2 * min_leaf:
            return tree._leaf(value)
        xs = x[idx]
        order = np.argsort(xs, axis=0, kind="stable")
        xs_sorted = np.ascontiguousarray(np.take_along_axis(xs, order, axis=0))
        ys_sorted = np.ascontiguousarray(y[idx][order])
        f, i, gain = _kernels.best_split(xs_sorted, ys_sorted, min_leaf)
        if f < 0 or not gain > 0:
            return tree._leaf(value)
        lo, hi = xs_sorted[i, f], xs_sorted[i + 1, f]
        thr = 0.5 * (lo + hi)
        if not lo <= thr < hi:
            thr = lo
        node = tree._leaf(value)
        tree.feature[node], tree.threshold[node] = int(f), float(thr)
        mask = xs[:, f] <= thr
        tree.left[node] = grow(idx[mask], depth + 1)
        tree.right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(x.shape[0]), 0)
    return tree


@dataclass
class GBRConfig:
    n_trees: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    min_samples_leaf: int = 1


@dataclass
class GradientBoostedRegressor:
    config: GBRConfig
    init: float
    trees: list[RegressionTree]

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.full(x.shape[0], self.init)
        for t in self.trees:
            out = out + self.config.learning_rate * t.predict(x)
        return out

    def staged_mse(self, x: np.ndarray, y: np.ndarray) -> list[float]:
        """Training MSE after 0, 1, ..., n_trees trees."""
        out = np.full(x.shape[0], self.init)
        hist = [float(np.mean((y - out) ** 2))]
        for t in self.trees:
            out = out + self.config.learning_rate * t.predict(x)
            hist.append(float(np.mean((y - out) ** 2)))
        return hist


def fit_gbr(features: np.ndarray, targets: np.ndarray, config: GBRConfig | None = None) -> GradientBoostedRegressor:
    """Least-squares boosting: every tree fits the residuals of the current ensemble."""
    config = config or GBRConfig()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("features must be (n, d) with one target per row")
    if x.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    init = float(np.mean(y))
    pred = np.full(y.shape[0], init)
    trees = []
    for _ in range(config.n_trees):
        tree = fit_tree(x, y - pred, config.max_depth, config.min_samples_leaf)
        trees.append(tree)
        pred = pred + config.learning_rate * tree.predict(x)
    return GradientBoostedRegressor(config, init, trees)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    mae: float
    mare: float | None = None
    mape: float | None = None
    tau: float | None = None
    rho: float | None = None


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    sx = x[order]
    ranks = np.empty(x.size)
    start = 0
    n = x.size
    while start < n:
        stop = start + 1
        while stop < n and sx[stop] == sx[start]:
            stop += 1
        ranks[order[start:stop]] = 0.5 * (start + stop - 1) + 1.0
        start = stop
    return ranks


def kendall_tau_b(x, y) -> float:
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("kendall_tau_b expects two 1-D arrays of equal length")
    n = x.size
    s, tx, ty = _kernels.kendall_counts(x, y)
    n0 = n * (n - 1) // 2
    denom = math.sqrt((n0 - tx) * (n0 - ty))
    return s / denom if denom > 0 else math.nan


def spearman_rho(x, y) -> float:
    rx, ry = average_ranks(x), average_ranks(y)
    rx, ry = rx - rx.mean(), ry - ry.mean()
    denom = math.sqrt(float((rx * rx).sum() * (ry * ry).sum()))
    return float((rx * ry).sum()) / denom if denom > 0 else math.nan


def metrics(y_true, y_pred, mape: bool = True) -> MetricReport:
    """MAE, MARE (sum|err| / sum|y|), MAPE (percent), Kendall tau-b, Spearman rho."""
    yt = np.asarray(y_true, dtype=np.float64)
    yp = np.asarray(y_pred, dtype=np.float64)
    if yt.shape != yp.shape or yt.ndim != 1 or yt.size < 2:
        raise ValueError("need two 1-D arrays of equal length >= 2")
    err = np.abs(yp - yt)
    report = MetricReport(mae=float(err.mean()))
    denom = float(np.abs(yt).sum())
    report.mare = float(err.sum()) / denom if denom > 0 else math.nan
    if mape:
        if np.any(yt == 0):
            raise ValueError("MAPE undefined for zero true values")
        report.mape = 100.0 * float(np.mean(err / np.abs(yt)))
    report.tau = kendall_tau_b(yt, yp)
    report.rho = spearman_rho(yt, yp)
    return report


# ---------------------------------------------------------------------------
# task harness
# ---------------------------------------------------------------------------


def task_targets(dataset: PathDataset, task: str) -> np.ndarray:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    attr = "travel_time" if task == "travel_time" else "rank"
    values = [getattr(r, attr) for r in dataset.records]
    if any(v is None for v in values):
        raise ValueError(f"dataset is missing {attr} labels")
    return np.array(values, dtype=np.float64)


def eval_task(
    encoder: EncoderModel,
    dataset: PathDataset,
    task: str,
    config: GBRConfig | None = None,
    seed: int = 0,
    gamma_eval: float = 0.0,
) -> MetricReport:
    """Embed, fit on the train split, score the test split."""
    train, test = dataset.subset("train"), dataset.subset("test")
    if len(train) < 2 or len(test) < 2:
        raise ValueError("dataset needs train and test split tags with at least 2 paths each")
    y_train, y_test = task_targets(train, task), task_targets(test, task)
    x_train = embed_paths(encoder, train.paths, gamma_eval, seed)
    x_test = embed_paths(encoder, test.paths, gamma_eval, seed + 1)
    model = fit_gbr(x_train, y_train, config)
    full = metrics(y_test, model.predict(x_test), mape=(task == "travel_time"))
    if task == "travel_time":
        return MetricReport(mae=full.mae, mare=full.mare, mape=full.mape)
    return MetricReport(mae=full.mae, tau=full.tau, rho=full.rho)


def report_json(task: str, config: GBRConfig, seed: int, report: MetricReport, extra: dict | None = None) -> str:
    doc = {"task": task, "hyperparameters": asdict(config), "seed": seed, "metrics": asdict(report)}
    if extra:
        doc.update(extra)
    # undefined metrics (NaN) are written as null
    return json.dumps(_nan_to_none(doc), sort_keys=True, indent=2, allow_nan=False)


def _nan_to_none(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_nan_to_none(v) for v in obj]
    return obj
