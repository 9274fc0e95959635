import math

import numpy as np
import pytest

from gradcheck import numeric_grad, rel_err
from lightpath import graph
from lightpath.encoder import EncoderConfig, EncoderModel, full_view, sparsify
from lightpath.numerics import Tensor, backward
from lightpath.rng import stream
from lightpath.ssl import (
    DualEncoder,
    FourReps,
    PairBatch,
    PretrainConfig,
    RelationHead,
    ViewConfig,
    build_views,
    cross_network_loss,
    cross_network_pairs,
    cross_view_loss,
    cross_view_pairs,
    draw_negatives,
    encode_views,
    four_representations,
    joint_loss,
    load_pretrained,
    momentum_update,
    pretrain,
    relation_score,
    save_pretrained,
    write_log,
)


def make_dual(d=8, layers=2, heads=2, vocab=40, max_len=12, seed=0, momentum=0.99):
    cfg = EncoderConfig(vocab=vocab, max_len=max_len, d_model=d, n_layers=layers, n_heads=heads, d_ff=2 * d)
    main = EncoderModel.init(cfg, np.random.default_rng(seed))
    return DualEncoder.from_main(main, momentum), RelationHead.init(d, np.random.default_rng(seed + 1))


def some_paths(k=6, n=10, vocab=40, seed=0):
    rng = np.random.default_rng(seed)
    return [tuple(rng.choice(vocab, size=n, replace=False).tolist()) for _ in range(k)]


def zero_head(d):
    head = RelationHead.init(d, np.random.default_rng(0))
    for _, t in head.params.items():
        t.data = np.zeros_like(t.data)
    return head


# --- views --------------------------------------------------------------------------


def test_build_views_lengths_and_determinism():
    path = list(range(10))
    v1, v2 = build_views(path, ViewConfig(0.4, 0.8), np.random.default_rng(3))
    assert len(v1.edges) == 6 and len(v2.edges) == 2
    w1, w2 = build_views(path, ViewConfig(0.4, 0.8), np.random.default_rng(3))
    assert (v1, v2) == (w1, w2)
    f1, _ = build_views(path, ViewConfig(0.0, 0.5), np.random.default_rng(3))
    assert f1 == full_view(path)


@pytest.mark.parametrize("g1,g2", [(0.5, 0.5), (1.0, 0.2), (-0.1, 0.3)])
def test_view_config_rejects(g1, g2):
    with pytest.raises(ValueError):
        ViewConfig(g1, g2)


# --- representations ------------------------------------------------------------------


def test_four_representations_shapes_and_no_grad_link():
    dual, _ = make_dual()
    reps = four_representations(dual, some_paths(), ViewConfig(), np.random.default_rng(0))
    for r in (reps.pr1.data, reps.pr2.data, reps.aux1, reps.aux2):
        assert r.shape == (6, 8)
    assert isinstance(reps.aux1, np.ndarray)


def test_aux_equals_main_when_copied():
    dual, _ = make_dual()
    reps = four_representations(dual, some_paths(), ViewConfig(), np.random.default_rng(1))
    np.testing.assert_array_equal(reps.pr1.data, reps.aux1)
    np.testing.assert_array_equal(reps.pr2.data, reps.aux2)


def test_aux_constant_with_momentum_one():
    dual, head = make_dual(momentum=1.0)
    paths = some_paths()
    before = four_representations(dual, paths, ViewConfig(), np.random.default_rng(2)).aux1
    cfg = PretrainConfig(epochs=2, warmup_epochs=1, batch_size=3, momentum=1.0, seed=1)
    pretrain(dual, head, paths, cfg)
    after = four_representations(dual, paths, ViewConfig(), np.random.default_rng(2))
    np.testing.assert_array_equal(before, after.aux1)
    assert not np.array_equal(after.pr1.data, after.aux1)


# --- relation head ----------------------------------------------------------------------


def test_relation_score_range_and_order():
    head = RelationHead.init(8, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(20, 8)), rng.normal(size=(20, 8))
    s = relation_score(head, a, b).data
    assert np.all((s > 0) & (s < 1))
    assert not np.allclose(s, relation_score(head, b, a).data)
    assert relation_score(head, a[0], b[0]).shape == ()


def test_zero_head_gives_half():
    s = relation_score(zero_head(8), np.ones((3, 8)), -np.ones((3, 8))).data
    np.testing.assert_array_equal(s, 0.5)


def test_relation_score_dim_mismatch():
    with pytest.raises(ValueError):
        relation_score(RelationHead.init(8, np.random.default_rng(0)), np.ones(7), np.ones(7))


# --- losses -------------------------------------------------------------------------------


def test_negatives_never_self():
    rng = np.random.default_rng(0)
    for k in (2, 3, 10):
        for _ in range(50):
            neg = draw_negatives(k, rng)
            assert np.all(neg != np.arange(k)) and np.all((0 <= neg) & (neg < k))
    with pytest.raises(ValueError):
        draw_negatives(1, rng)


def test_negatives_uniform():
    neg = np.array([draw_negatives(4, np.random.default_rng(s))[0] for s in range(6000)])
    freq = np.bincount(neg, minlength=4) / neg.size
    assert freq[0] == 0
    np.testing.assert_allclose(freq[1:], 1 / 3, atol=0.02)


def _reps(k=3, seed=0):
    dual, _ = make_dual()
    return four_representations(dual, some_paths(k), ViewConfig(), np.random.default_rng(seed))


def test_term_counts():
    reps = _reps(3)
    cn = cross_network_pairs(reps, np.random.default_rng(0))
    cv = cross_view_pairs(reps, np.random.default_rng(0))
    assert cn.targets.size == 12 and cn.targets.sum() == 6 and cn.normaliser == 6
    assert cv.targets.size == 6 and cv.targets.sum() == 3 and cv.normaliser == 3


def test_uniform_head_gives_ln2_per_term():
    reps = _reps(3)
    head = zero_head(8)
    # sum of 12 terms of ln 2 divided by 2K = 6, and 6 terms divided by K = 3
    assert cross_network_loss(head, reps, np.random.default_rng(0)).item() == pytest.approx(2 * math.log(2), rel=1e-12)
    assert cross_view_loss(head, reps, np.random.default_rng(0)).item() == pytest.approx(2 * math.log(2), rel=1e-12)


def test_perfect_head_gives_near_zero():
    d = 4
    pos_a, pos_b = np.array([[1.0, 0, 0, 0]]), np.array([[1.0, 0, 0, 0]])
    neg_b = np.array([[-1.0, 0, 0, 0]])
    head = zero_head(d)
    # hidden = relu(a0 * b-side...) -> choose w1 so hidden = relu(a0 + b0), logit = 50 * hidden - 25
    head.params["w1"].data[0, 0] = 1.0
    head.params["w1"].data[d, 0] = 1.0
    head.params["w2"].data[0, 0] = 50.0
    head.params["b2"].data[:] = -25.0
    p_pos = relation_score(head, pos_a, pos_b).data[0]
    p_neg = relation_score(head, pos_a, neg_b).data[0]
    assert p_pos > 1 - 1e-9 and p_neg < 1e-9
    pb = PairBatch(Tensor(np.vstack([pos_a, pos_a])), Tensor(np.vstack([pos_b, neg_b])), np.array([1.0, 0.0]), 1)
    assert pb.loss(head).item() < 1e-8


def test_cross_view_pairs_structure():
    reps = _reps(4)
    rng = np.random.default_rng(5)
    neg = draw_negatives(4, np.random.default_rng(5))
    pb = cross_view_pairs(reps, rng)
    np.testing.assert_array_equal(pb.left.data[:4], reps.pr1.data)
    np.testing.assert_array_equal(pb.right.data[:4], reps.pr2.data)
    np.testing.assert_array_equal(pb.right.data[4:], reps.pr2.data[neg])


@pytest.mark.parametrize("mode,partner1", [("equation", "aux1"), ("prose", "aux2")])
def test_cross_network_positive_modes(mode, partner1):
    reps = _reps(3)
    pb = cross_network_pairs(reps, np.random.default_rng(0), mode)
    np.testing.assert_array_equal(pb.right.data[:3], getattr(reps, partner1))
    with pytest.raises(ValueError):
        cross_network_pairs(reps, np.random.default_rng(0), "other")


def test_no_gradient_reaches_aux():
    dual, head = make_dual()
    paths = some_paths(4)
    losses = joint_loss(dual, head, paths, ViewConfig(), np.random.default_rng(0), np.random.default_rng(1))
    backward(losses.total)
    for name, t in dual.aux.params.items():
        assert t.grad is None or not np.any(t.grad), name
        np.testing.assert_array_equal(dual.aux.params.grad(name), 0.0)
    assert np.any(dual.main.params.grad("enc.0.wq"))
    assert np.any(head.params.grad("w1"))


def _composite_check(which):
    dual, head = make_dual(d=8, vocab=20, max_len=6)
    paths = some_paths(3, n=6, vocab=20)
    views = ViewConfig(0.4, 0.8)

    def loss():
        losses = joint_loss(dual, head, paths, views, np.random.default_rng(0), np.random.default_rng(1))
        return getattr(losses, which)

    backward(loss())
    # emb doubles as the (gradient-free) reconstruction target; its gradient is checked in test_encoder
    targets = [("main", n, t) for n, t in dual.main.params.trainable() if n != "emb"] + [("head", n, t) for n, t in head.params.trainable()]
    rng = np.random.default_rng(0)
    # every head parameter plus a sample of encoder parameters keeps the runtime modest
    chosen = [x for x in targets if x[0] == "head"] + [targets[i] for i in rng.choice(len(targets) - 4, size=6, replace=False)]
    for group, name, t in chosen:
        analytic = (dual.main.params if group == "main" else head.params).grad(name)

        def f(v, t=t):
            old = t.data
            t.data = v
            try:
                return loss().item()
            finally:
                t.data = old

        assert rel_err(analytic, numeric_grad(f, t.data)) < 1e-4, (which, group, name)


@pytest.mark.parametrize("which", ["lcn", "lcv", "total"])
def test_composite_relation_gradients(which):
    _composite_check(which)


def test_view_swap_symmetry_in_expectation():
    dual, head = make_dual()
    paths = some_paths(8)

    def mean_loss(g1, g2):
        vals = []
        for s in range(100):
            reps = four_representations(dual, paths, ViewConfig(g1, g2), np.random.default_rng(s))
            vals.append(cross_network_loss(head, reps, np.random.default_rng(1000 + s)).item() + cross_view_loss(head, reps, np.random.default_rng(2000 + s)).item())
        return float(np.mean(vals))

    a, b = mean_loss(0.4, 0.8), mean_loss(0.8, 0.4)
    assert abs(a - b) / a < 0.02


# --- momentum ---------------------------------------------------------------------------


def test_momentum_fixed_point_and_copy():
    dual, _ = make_dual()
    before = {n: t.data.copy() for n, t in dual.aux.params.items()}
    momentum_update(dual)
    for n, t in dual.aux.params.items():
        np.testing.assert_array_equal(t.data, before[n])
    for _, t in dual.main.params.items():
        t.data = t.data + 1.0
    dual.momentum = 0.0
    momentum_update(dual)
    for n, t in dual.aux.params.items():
        np.testing.assert_array_equal(t.data, dual.main.params[n].data)


def test_momentum_closed_form():
    dual, _ = make_dual(momentum=0.99)
    aux0 = {n: t.data.copy() for n, t in dual.aux.params.items()}
    rng = np.random.default_rng(0)
    for _, t in dual.main.params.items():
        t.data = rng.normal(size=t.shape)
    for k in range(1, 301):
        momentum_update(dual)
        if k in (1, 10, 300):
            mk = 0.99**k
            for n, t in dual.aux.params.items():
                np.testing.assert_allclose(t.data, mk * aux0[n] + (1 - mk) * dual.main.params[n].data, rtol=0, atol=1e-12)


def test_momentum_rejects_mismatch():
    dual, _ = make_dual()
    aux = dual.aux.copy(False)
    aux.params["pr_token"].data = np.zeros((1, 3))
    with pytest.raises(ValueError):
        momentum_update(DualEncoder(dual.main, aux, 0.9))
    with pytest.raises(ValueError):
        DualEncoder(dual.main, dual.aux, momentum=1.5)
    other, _ = make_dual(layers=3)
    with pytest.raises(ValueError):
        DualEncoder(dual.main, other.aux)


# --- training loop ------------------------------------------------------------------------


def test_pretrain_one_batch_reduces_loss():
    dual, head = make_dual(d=16, vocab=40)
    paths = some_paths(6)
    cfg = PretrainConfig(epochs=50, warmup_epochs=5, batch_size=6, seed=2)
    hist = pretrain(dual, head, paths, cfg)
    assert len(hist) == 50
    assert hist[-1].total < hist[0].total


def test_pretrain_aux_replays_ema_fold():
    dual, head = make_dual()
    paths = some_paths(6)
    fold = {n: t.data.copy() for n, t in dual.aux.params.items()}
    m = 0.9

    def on_step(step, d):
        for n, t in d.main.params.items():
            fold[n] = m * fold[n] + (1 - m) * t.data

    pretrain(dual, head, paths, PretrainConfig(epochs=3, warmup_epochs=1, batch_size=3, momentum=m, seed=0), on_step=on_step)
    for n, t in dual.aux.params.items():
        np.testing.assert_allclose(t.data, fold[n], rtol=0, atol=1e-12)


def test_pretrain_is_reproducible(tmp_path):
    outs = []
    for run in range(2):
        dual, head = make_dual()
        cfg = PretrainConfig(epochs=2, warmup_epochs=1, batch_size=4, seed=9)
        hist = pretrain(dual, head, some_paths(8), cfg)
        ck, log = tmp_path / f"c{run}.ckpt", tmp_path / f"l{run}.csv"
        save_pretrained(ck, dual, head, cfg)
        write_log(hist, log)
        outs.append((ck.read_bytes(), log.read_bytes()))
    assert outs[0] == outs[1]
    assert outs[0][1].startswith(b"epoch,lrec,lcn,lcv,total,lr\n")


def test_pretrained_checkpoint_round_trip(tmp_path):
    dual, head = make_dual()
    f = tmp_path / "a.ckpt"
    save_pretrained(f, dual, head)
    d2, h2, meta = load_pretrained(f)
    assert meta["kind"] == "pretrain"
    g = tmp_path / "b.ckpt"
    save_pretrained(g, d2, h2)
    assert f.read_bytes() == g.read_bytes()
    assert not d2.aux.params["enc.0.wq"].requires_grad
    assert "emb" in dict(d2.main.params.trainable())


def test_pretrain_rejects_empty():
    dual, head = make_dual()
    with pytest.raises(ValueError):
        pretrain(dual, head, [], PretrainConfig(epochs=1, warmup_epochs=0))


def test_grid_paths_fit_pipeline():
    net = graph.generate_grid_network(4, 4, seed=0)
    ds = graph.generate_synthetic_paths(net, 4, 6, 1, seed=1)
    cfg = EncoderConfig(vocab=net.vocab_size, max_len=6, d_model=8, n_layers=2, n_heads=2, d_ff=8)
    dual = DualEncoder.from_main(EncoderModel.init(cfg, stream(0, "init")))
    reps = four_representations(dual, ds.paths, ViewConfig(), np.random.default_rng(0))
    assert isinstance(reps, FourReps)
    enc = encode_views(dual, [sparsify(p, 0.4, np.random.default_rng(0)) for p in ds.paths], [full_view(p) for p in ds.paths])
    assert enc.aux2.shape == (4, 8)
