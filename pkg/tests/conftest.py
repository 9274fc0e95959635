"""Shared fixtures: the seeded pretraining smoke run is expensive, so it runs once per session."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import pytest

from lightpath import graph, ssl
from lightpath.encoder import EncoderConfig, EncoderModel
from lightpath.rng import stream

SMOKE_SEED = 0
SMOKE_HYPER = dict(gamma1=0.4, gamma2=0.8, epochs=100, warmup_epochs=5, batch_size=32, lr=3e-3)


@dataclass
class SmokeRun:
    network: graph.RoadNetwork
    dataset: graph.PathDataset
    heldout: graph.PathDataset
    dual: ssl.DualEncoder
    head: ssl.RelationHead
    config: ssl.PretrainConfig
    history: list


def smoke_data(seed=SMOKE_SEED):
    net = graph.generate_grid_network(10, 10, seed)
    ds = graph.generate_synthetic_paths(net, 100, 20, 10, seed + 1)
    graph.label_travel_times(net, ds, seed + 2)
    heldout = graph.generate_synthetic_paths(net, 50, 20, 10, seed + 99)
    return net, ds, heldout


@lru_cache(maxsize=None)
def run_smoke_pretrain(seed=SMOKE_SEED) -> SmokeRun:
    """1,000 walks of 20 edges on a 10x10 grid; d_model 32, 2 layers, 2 heads."""
    net, ds, heldout = smoke_data(seed)
    cfg = EncoderConfig(vocab=net.vocab_size, max_len=20, d_model=32, n_layers=2, n_heads=2, d_ff=64)
    init = stream(seed, "init")
    main = EncoderModel.init(cfg, init)
    head = ssl.RelationHead.init(cfg.d_model, init)
    hyper = ssl.PretrainConfig(seed=seed, **SMOKE_HYPER)
    dual = ssl.DualEncoder.from_main(main, hyper.momentum)
    history = ssl.pretrain(dual, head, ds.paths, hyper)
    return SmokeRun(net, ds, heldout, dual, head, hyper, history)


@pytest.fixture(scope="session")
def smoke_run():
    return run_smoke_pretrain()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
