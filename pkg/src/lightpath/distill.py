"""Global-local knowledge distillation from a frozen teacher into a slim student.

The global term matches temperature-scaled path representations, the local
term matches temperature-scaled kept-edge states, and the objective is
``alpha * global + (1 - alpha) * local``. Teacher and student always see
the same sparse view.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt
from .encoder import EncodedBatch, EncoderConfig, EncoderModel, SparsePath, encode_batch, sparsify
from .numerics import AdamWState, Tensor, adamw_step, backward, cosine_lr, exp, no_grad, softmax, sum_
from .rng import stream
from .ssl import _grad, minibatches, trainable


@dataclass
class DistillConfig:
    alpha: float = 0.6
    temperature: float = 9.0
    gamma: float = 0.4
    student_layers: int = 2
    epochs: int = 50
    warmup_epochs: int = 5
    batch_size: int = 32
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.01
    sp: str = "exp"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha {self.alpha} outside [0, 1]")
        _check_t(self.temperature)
        if self.sp not in ("exp", "softmax"):
            raise ValueError(f"unknown sp {self.sp!r}")


@dataclass
class DistillPair:
    teacher: EncoderModel
    student: EncoderModel

    def __post_init__(self):
        if self.teacher.config.d_model != self.student.config.d_model:
            raise ValueError("teacher and student must share d_model")
        for _, p in self.teacher.params.items():
            p.requires_grad = False


def _check_t(t: float) -> None:
    if not t > 0:
        raise ValueError(f"temperature must be positive, got {t}")


def make_student(teacher: EncoderModel, layers: int, rng: np.random.Generator) -> EncoderModel:
    """Fresh one-head encoder with ``layers`` layers; edge embeddings copied from the teacher."""
    tc = teacher.config
    if not 1 <= layers < tc.n_layers:
        raise ValueError(f"student layers {layers} must be in [1, {tc.n_layers})")
    cfg = dataclasses.replace(tc, n_layers=layers, n_heads=1, dec_layers=min(tc.dec_layers, layers - 1))
    student = EncoderModel.init(cfg, rng)
    student.set_edge_embeddings(teacher.params["emb"].data)
    return student


def soften(x: Tensor, t: float, sp: str = "exp") -> Tensor:
    _check_t(t)
    scaled = x * (1.0 / t)
    return exp(scaled) if sp == "exp" else softmax(scaled, axis=-1)


def global_kd_from(teacher_pr, student_pr: Tensor, t: float, sp: str = "exp") -> Tensor:
    """Mean over the batch of ||sp(PR_T / t) - sp(PR_S / t)||^2."""
    s = student_pr if isinstance(student_pr, Tensor) else Tensor(student_pr)
    tt = Tensor(soften(Tensor(np.asarray(teacher_pr.data if isinstance(teacher_pr, Tensor) else teacher_pr)), t, sp).data)
    diff = soften(s, t, sp) - tt
    batch = 1 if s.ndim == 1 else s.shape[0]
    return sum_(diff * diff) * (1.0 / batch)


def local_kd_from(teacher_states, student_states: Tensor, t: float, valid: np.ndarray | None = None, sp: str = "exp") -> Tensor:
    """Per path (1/N') * sum_i ||sp(F_T(e_i)/t) - sp(F_S(e_i)/t)||^2, averaged over the batch.

    States are ``(N', d)`` or ``(B, N', d)``; ``valid`` masks padded rows.
    """
    s = student_states if isinstance(student_states, Tensor) else Tensor(student_states)
    t_arr = teacher_states.data if isinstance(teacher_states, Tensor) else np.asarray(teacher_states)
    squeeze = s.ndim == 2
    if squeeze:
        s = s[None]
        t_arr = t_arr[None]
    if valid is None:
        valid = np.ones(s.shape[:2], dtype=bool)
    counts = valid.sum(axis=1, keepdims=True)
    if (counts == 0).any():
        raise ValueError("local distillation needs at least one kept edge per path")
    weight = (valid / counts / s.shape[0])[..., None]
    diff = soften(s, t, sp) - Tensor(soften(Tensor(t_arr), t, sp).data)
    return sum_(diff * diff * weight)


@dataclass
class GLKDLosses:
    glkd: Tensor
    lglobal: Tensor
    llocal: Tensor


def glkd_from(teacher: EncodedBatch, student: EncodedBatch, alpha: float, t: float, sp: str = "exp") -> GLKDLosses:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    lg = global_kd_from(teacher.pr, student.pr, t, sp)
    ll = local_kd_from(teacher.edge_states, student.edge_states, t, student.edge_valid, sp)
    return GLKDLosses(lg * alpha + ll * (1.0 - alpha), lg, ll)


def _encode_pair(pair: DistillPair, views: Sequence[SparsePath]) -> tuple[EncodedBatch, EncodedBatch]:
    with no_grad():
        te = encode_batch(pair.teacher, views)
    return te, encode_batch(pair.student, views)


def global_kd_loss(pair: DistillPair, views: Sequence[SparsePath], t: float, sp: str = "exp") -> Tensor:
    te, se = _encode_pair(pair, views)
    return global_kd_from(te.pr, se.pr, t, sp)


def local_kd_loss(pair: DistillPair, views: Sequence[SparsePath], t: float, sp: str = "exp") -> Tensor:
    te, se = _encode_pair(pair, views)
    return local_kd_from(te.edge_states, se.edge_states, t, se.edge_valid, sp)


def glkd_loss(pair: DistillPair, views: Sequence[SparsePath], config: DistillConfig) -> GLKDLosses:
    te, se = _encode_pair(pair, views)
    return glkd_from(te, se, config.alpha, config.temperature, config.sp)


@dataclass
class DistillLog:
    epoch: int
    lglobal: float
    llocal: float
    glkd: float
    lr: float


def distill(pair: DistillPair, paths: Sequence[Sequence[int]], config: DistillConfig) -> list[DistillLog]:
    if not paths:
        raise ValueError("empty dataset")
    shuffle_rng = stream(config.seed, "shuffle")
    view_rng = stream(config.seed, "sparsify")
    params = trainable(student=pair.student.params)
    opt = AdamWState(lr=config.lr, betas=tuple(config.betas), weight_decay=config.weight_decay)
    steps_per_epoch = len(minibatches(len(paths), config.batch_size, np.random.default_rng(0)))
    total = config.epochs * steps_per_epoch
    warmup = config.warmup_epochs * steps_per_epoch
    history = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(3)
        batches = minibatches(len(paths), config.batch_size, shuffle_rng)
        for idx in batches:
            views = [sparsify(paths[i], config.gamma, view_rng) for i in idx]
            losses = glkd_loss(pair, views, config)
            for t in params.values():
                t.grad = None
            backward(losses.glkd)
            step += 1
            opt.lr = cosine_lr(step, warmup, total, config.lr)
            adamw_step(params, {n: _grad(t) for n, t in params.items()}, opt)
            sums += [losses.lglobal.item(), losses.llocal.item(), losses.glkd.item()]
        mean = sums / len(batches)
        history.append(DistillLog(epoch, float(mean[0]), float(mean[1]), float(mean[2]), opt.lr))
    return history


def evaluate_glkd(pair: DistillPair, paths: Sequence[Sequence[int]], config: DistillConfig, seed: int) -> float:
    """GLKD loss on one fixed set of views (no training)."""
    rng = stream(seed, "glkd-eval")
    views = [sparsify(p, config.gamma, rng) for p in paths]
    with no_grad():
        return glkd_loss(pair, views, config).glkd.item()


def save_student(file, pair: DistillPair, config: DistillConfig | None = None, teacher_digest: str | None = None) -> None:
    meta = {"kind": "distill", "encoder": pair.student.config.to_dict()}
    if config is not None:
        meta["distill"] = asdict(config)
    if teacher_digest is not None:
        meta["teacher_sha256"] = teacher_digest
    ckpt.save_checkpoint(file, meta, ckpt.prefixed("student", pair.student.params))


def write_log(history: Sequence[DistillLog], file) -> None:
    with open(file, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "lglobal", "llocal", "glkd", "lr"])
        for h in history:
            w.writerow([h.epoch, repr(h.lglobal), repr(h.llocal), repr(h.glkd), repr(h.lr)])


def load_encoder(file) -> EncoderModel:
    """Deployable encoder from a checkpoint: the main encoder of a pretrain
    checkpoint or the student of a distill checkpoint."""
    from .ssl import _model_from

    meta, arrays = ckpt.load_checkpoint(file)
    kind = meta.get("kind")
    prefix = {"pretrain": "main", "distill": "student"}.get(kind)
    if prefix is None:
        raise ckpt.CheckpointError(f"unknown checkpoint kind {kind!r}")
    return _model_from(EncoderConfig.from_dict(meta["encoder"]), ckpt.strip_prefix(prefix, arrays), requires_grad=True)
