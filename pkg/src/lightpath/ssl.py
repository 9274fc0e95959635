"""Relational-reasoning pretraining with a momentum-updated auxiliary encoder.

Each path yields two sparse views (ratios gamma1, gamma2). The main encoder
and the auxiliary encoder both embed both views; a relation head scores
concatenated pairs as same-path (1) or different-path (0). The auxiliary
encoder only moves through the exponential moving average of the main one.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ckpt
from .encoder import EncodedBatch, EncoderConfig, EncoderModel, SparsePath, decode_batch, encode_batch, reconstruction_loss, sparsify
from .numerics import AdamWState, ParameterSet, Tensor, adamw_step, backward, bce, concat, cosine_lr, gather, matmul, no_grad, relu, sigmoid
from .rng import stream


@dataclass(frozen=True)
class ViewConfig:
    gamma1: float = 0.4
    gamma2: float = 0.8

    def __post_init__(self):
        for g in (self.gamma1, self.gamma2):
            if not 0.0 <= g < 1.0:
                raise ValueError(f"reduction ratio {g} outside [0, 1)")
        if self.gamma1 == self.gamma2:
            raise ValueError("the two views need different reduction ratios")


class RelationHead:
    """sigmoid(W2 relu(W1 [a; b] + b1) + b2) with hidden width d."""

    def __init__(self, params: ParameterSet):
        self.params = params

    @classmethod
    def init(cls, d: int, rng: np.random.Generator) -> RelationHead:
        p = ParameterSet()
        b1, b2 = 1.0 / np.sqrt(2 * d), 1.0 / np.sqrt(d)
        p.add("w1", rng.uniform(-b1, b1, size=(2 * d, d)))
        p.add("b1", rng.uniform(-b1, b1, size=(d,)))
        p.add("w2", rng.uniform(-b2, b2, size=(d, 1)))
        p.add("b2", rng.uniform(-b2, b2, size=(1,)))
        return cls(p)

    @property
    def dim(self) -> int:
        return self.params["w1"].shape[1]


def relation_score(head: RelationHead, a, b) -> Tensor:
    """Relation probability for row-aligned pairs; ``a``, ``b`` are ``(d,)`` or ``(K, d)``."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.shape[-1] != head.dim or b.shape[-1] != head.dim:
        raise ValueError(f"representation width must be {head.dim}")
    single = a.ndim == 1
    if single:
        a, b = a[None, :], b[None, :]
    p = head.params
    hidden = relu(matmul(concat([a, b], axis=-1), p["w1"]) + p["b1"])
    out = sigmoid(matmul(hidden, p["w2"]) + p["b2"])[:, 0]
    return out[0] if single else out


@dataclass
class DualEncoder:
    main: EncoderModel
    aux: EncoderModel
    momentum: float = 0.99

    def __post_init__(self):
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum must lie in [0, 1]")
        if self.main.params.names() != self.aux.params.names():
            raise ValueError("main and auxiliary encoders differ in architecture")

    @classmethod
    def from_main(cls, main: EncoderModel, momentum: float = 0.99) -> DualEncoder:
        return cls(main, main.copy(requires_grad=False), momentum)


def momentum_update(dual: DualEncoder) -> None:
    """aux <- m * aux + (1 - m) * main, for every parameter."""
    m = dual.momentum
    for name, a in dual.aux.params.items():
        w = dual.main.params[name].data
        if w.shape != a.data.shape:
            raise ValueError(f"shape mismatch for {name}")
        # written as a step towards main so that aux == main is an exact fixed point
        a.data = w.copy() if m == 0.0 else a.data + (1.0 - m) * (w - a.data)


def build_views(path: Sequence[int], views: ViewConfig, rng: np.random.Generator) -> tuple[SparsePath, SparsePath]:
    return sparsify(path, views.gamma1, rng), sparsify(path, views.gamma2, rng)


@dataclass
class FourReps:
    main1: EncodedBatch
    main2: EncodedBatch
    aux1: np.ndarray  # (K, d), no graph
    aux2: np.ndarray

    @property
    def pr1(self) -> Tensor:
        return self.main1.pr

    @property
    def pr2(self) -> Tensor:
        return self.main2.pr


def encode_views(dual: DualEncoder, views1: Sequence[SparsePath], views2: Sequence[SparsePath]) -> FourReps:
    main1 = encode_batch(dual.main, views1)
    main2 = encode_batch(dual.main, views2)
    with no_grad():
        aux1 = encode_batch(dual.aux, views1).pr.data
        aux2 = encode_batch(dual.aux, views2).pr.data
    return FourReps(main1, main2, aux1, aux2)


def four_representations(dual: DualEncoder, paths: Sequence[Sequence[int]], views: ViewConfig, rng: np.random.Generator) -> FourReps:
    pairs = [build_views(p, views, rng) for p in paths]
    return encode_views(dual, [a for a, _ in pairs], [b for _, b in pairs])


def draw_negatives(k: int, rng: np.random.Generator) -> np.ndarray:
    """For each i, a uniform index from ``range(k)`` other than i."""
    if k < 2:
        raise ValueError("need at least 2 paths in a minibatch to draw negatives")
    r = rng.integers(0, k - 1, size=k)
    return r + (r >= np.arange(k))


@dataclass
class PairBatch:
    left: Tensor
    right: Tensor
    targets: np.ndarray
    normaliser: int

    def loss(self, head: RelationHead) -> Tensor:
        probs = relation_score(head, self.left, self.right)
        return bce(probs, self.targets, reduction="sum") * (1.0 / self.normaliser)


def cross_network_pairs(reps: FourReps, rng: np.random.Generator, positive_mode: str = "equation") -> PairBatch:
    """Pairs (main view j, aux view j') for j in {1, 2}; j' = j in equation mode,
    the other view in "prose" mode. One positive and one negative per (i, j)."""
    k = reps.aux1.shape[0]
    if positive_mode == "equation":
        partner = {1: reps.aux1, 2: reps.aux2}
    elif positive_mode == "prose":
        partner = {1: reps.aux2, 2: reps.aux1}
    else:
        raise ValueError(f"unknown positive mode {positive_mode!r}")
    left, right, targets = [], [], []
    for j, main in ((1, reps.pr1), (2, reps.pr2)):
        neg = draw_negatives(k, rng)
        left += [main, main]
        right += [Tensor(partner[j]), Tensor(partner[j][neg])]
        targets += [np.ones(k), np.zeros(k)]
    return PairBatch(concat(left, axis=0), concat(right, axis=0), np.concatenate(targets), 2 * k)


def cross_view_pairs(reps: FourReps, rng: np.random.Generator) -> PairBatch:
    k = reps.aux1.shape[0]
    neg = draw_negatives(k, rng)
    left = concat([reps.pr1, reps.pr1], axis=0)
    right = concat([reps.pr2, gather(reps.pr2, neg)], axis=0)
    return PairBatch(left, right, np.concatenate([np.ones(k), np.zeros(k)]), k)


def cross_network_loss(head: RelationHead, reps: FourReps, rng: np.random.Generator, positive_mode: str = "equation") -> Tensor:
    return cross_network_pairs(reps, rng, positive_mode).loss(head)


def cross_view_loss(head: RelationHead, reps: FourReps, rng: np.random.Generator) -> Tensor:
    return cross_view_pairs(reps, rng).loss(head)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class PretrainConfig:
    gamma1: float = 0.4
    gamma2: float = 0.8
    batch_size: int = 64
    epochs: int = 400
    warmup_epochs: int = 40
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.01
    momentum: float = 0.99
    positive_mode: str = "equation"
    seed: int = 0

    @property
    def views(self) -> ViewConfig:
        return ViewConfig(self.gamma1, self.gamma2)


@dataclass
class PretrainLog:
    epoch: int
    lrec: float
    lcn: float
    lcv: float
    total: float
    lr: float


@dataclass
class StepLosses:
    total: Tensor
    lrec: Tensor
    lcn: Tensor
    lcv: Tensor


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches; a trailing singleton is folded into the previous batch."""
    if n < 2:
        raise ValueError("need at least 2 paths")
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def joint_loss(
    dual: DualEncoder,
    head: RelationHead,
    paths: Sequence[Sequence[int]],
    views: ViewConfig,
    view_rng: np.random.Generator,
    neg_rng: np.random.Generator,
    positive_mode: str = "equation",
) -> StepLosses:
    """Reconstruction (averaged over both views) + cross-network + cross-view."""
    pairs = [build_views(p, views, view_rng) for p in paths]
    reps = encode_views(dual, [a for a, _ in pairs], [b for _, b in pairs])
    recs = [decode_batch(dual.main, enc) for enc in (reps.main1, reps.main2)]
    lrec = (
        reconstruction_loss(recs[0].predicted, recs[0].target, recs[0].removed, recs[0].valid)
        + reconstruction_loss(recs[1].predicted, recs[1].target, recs[1].removed, recs[1].valid)
    ) * 0.5
    lcn = cross_network_loss(head, reps, neg_rng, positive_mode)
    lcv = cross_view_loss(head, reps, neg_rng)
    return StepLosses(lrec + lcn + lcv, lrec, lcn, lcv)


def trainable(**groups: ParameterSet) -> dict[str, Tensor]:
    return {f"{g}.{n}": t for g, ps in groups.items() for n, t in ps.trainable()}


def pretrain(
    dual: DualEncoder,
    head: RelationHead,
    paths: Sequence[Sequence[int]],
    config: PretrainConfig,
    on_step: Callable[[int, DualEncoder], None] | None = None,
) -> list[PretrainLog]:
    """Minimise L_rec + L_cn + L_cv over main encoder, decoder and head; EMA the auxiliary."""
    if not paths:
        raise ValueError("empty dataset")
    views = config.views
    shuffle_rng = stream(config.seed, "shuffle")
    view_rng = stream(config.seed, "sparsify")
    neg_rng = stream(config.seed, "negatives")
    dual.momentum = config.momentum
    params = trainable(main=dual.main.params, head=head.params)
    opt = AdamWState(lr=config.lr, betas=tuple(config.betas), weight_decay=config.weight_decay)
    steps_per_epoch = len(minibatches(len(paths), config.batch_size, np.random.default_rng(0)))
    total_steps = config.epochs * steps_per_epoch
    warmup = config.warmup_epochs * steps_per_epoch
    history: list[PretrainLog] = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(4)
        batches = minibatches(len(paths), config.batch_size, shuffle_rng)
        for idx in batches:
            batch = [paths[i] for i in idx]
            losses = joint_loss(dual, head, batch, views, view_rng, neg_rng, config.positive_mode)
            for t in params.values():
                t.grad = None
            backward(losses.total)
            step += 1
            opt.lr = cosine_lr(step, warmup, total_steps, config.lr)
            adamw_step(params, {n: _grad(t) for n, t in params.items()}, opt)
            momentum_update(dual)
            sums += [losses.lrec.item(), losses.lcn.item(), losses.lcv.item(), losses.total.item()]
            if on_step is not None:
                on_step(step, dual)
        mean = sums / len(batches)
        history.append(PretrainLog(epoch, *map(float, mean), lr=opt.lr))
    return history


def _grad(t: Tensor) -> np.ndarray:
    return np.zeros_like(t.data) if t.grad is None else t.grad


def relation_accuracy(
    dual: DualEncoder, head: RelationHead, paths: Sequence[Sequence[int]], views: ViewConfig, seed: int
) -> float:
    """Fraction of cross-network and cross-view pairs classified correctly at 0.5."""
    rng = stream(seed, "relation-eval")
    with no_grad():
        reps = four_representations(dual, paths, views, rng)
        correct = total = 0
        for pb in (cross_network_pairs(reps, rng), cross_view_pairs(reps, rng)):
            probs = relation_score(head, pb.left, pb.right).data
            correct += int(((probs > 0.5) == (pb.targets > 0.5)).sum())
            total += pb.targets.size
    return correct / total


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_pretrained(file, dual: DualEncoder, head: RelationHead, config: PretrainConfig | None = None) -> None:
    meta = {
        "kind": "pretrain",
        "encoder": dual.main.config.to_dict(),
        "momentum": dual.momentum,
        "head_dim": head.dim,
    }
    if config is not None:
        meta["pretrain"] = asdict(config)
    arrays = ckpt.prefixed("main", dual.main.params) + ckpt.prefixed("aux", dual.aux.params) + ckpt.prefixed("head", head.params)
    ckpt.save_checkpoint(file, meta, arrays)


def load_pretrained(file) -> tuple[DualEncoder, RelationHead, dict]:
    meta, arrays = ckpt.load_checkpoint(file)
    if meta.get("kind") != "pretrain":
        raise ckpt.CheckpointError(f"expected a pretrain checkpoint, got {meta.get('kind')!r}")
    cfg = EncoderConfig.from_dict(meta["encoder"])
    main = _model_from(cfg, ckpt.strip_prefix("main", arrays), requires_grad=True)
    aux = _model_from(cfg, ckpt.strip_prefix("aux", arrays), requires_grad=False)
    hp = ParameterSet()
    for n, arr in ckpt.strip_prefix("head", arrays).items():
        hp.add(n, arr)
    return DualEncoder(main, aux, meta["momentum"]), RelationHead(hp), meta


def _model_from(cfg: EncoderConfig, arrays: dict[str, np.ndarray], requires_grad: bool) -> EncoderModel:
    ps = ParameterSet()
    for n, arr in arrays.items():
        ps.add(n, arr, requires_grad=requires_grad)
    reference = EncoderModel.init(cfg, np.random.default_rng(0)).params.names()
    if ps.names() != reference:
        raise ckpt.CheckpointError("checkpoint parameters do not match the encoder config")
    model = EncoderModel(cfg, ps)
    model.params["emb"].requires_grad = requires_grad and not cfg.freeze_embeddings
    return model


def write_log(history: Sequence[PretrainLog], file) -> None:
    with open(file, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "lrec", "lcn", "lcv", "total", "lr"])
        for h in history:
            w.writerow([h.epoch, repr(h.lrec), repr(h.lcn), repr(h.lcv), repr(h.total), repr(h.lr)])
