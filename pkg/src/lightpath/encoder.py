"""Sparse path auto-encoder.

A path is thinned by :func:`sparsify`, a path-representation (PR) token is
prepended at position 0, learnable position embeddings are added at the
kept edges' original orders, and a post-norm transformer stack encodes the
result. Row 0 of the output is the path representation. A shallow decoder
re-inserts a shared mask token at the removed orders and regresses the
original edge embeddings.

All batched functions pad variable-length inputs; padded keys are masked
out of attention and padded rows never reach a loss.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .numerics import (
    ParameterSet,
    Tensor,
    concat,
    gather,
    layer_norm,
    matmul,
    mse,
    relu,
    softmax,
    transpose,
)

MASK_BIAS = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    vocab: int
    max_len: int
    d_model: int = 32
    n_layers: int = 4
    n_heads: int = 2
    d_ff: int = 64
    dec_layers: int = 1
    freeze_embeddings: bool = False
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.vocab < 1 or self.max_len < 1:
            raise ValueError("vocab and max_len must be positive")
        if self.n_layers < 1 or self.n_heads < 1 or self.d_ff < 1:
            raise ValueError("n_layers, n_heads and d_ff must be positive")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0 <= self.dec_layers < self.n_layers:
            raise ValueError("decoder must be shallower than the encoder (0 <= dec_layers < n_layers)")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> EncoderConfig:
        return cls(**d)


@dataclass(frozen=True)
class SparsePath:
    """Kept edges of ``parent`` with their 1-based orders ``omega``."""

    parent: tuple[int, ...]
    edges: tuple[int, ...]
    omega: tuple[int, ...]

    def __post_init__(self):
        if len(self.edges) != len(self.omega) or not self.edges:
            raise ValueError("sparse path needs one order per kept edge and at least one edge")
        if any(b <= a for a, b in zip(self.omega, self.omega[1:])):
            raise ValueError("omega must be strictly increasing")
        if self.omega[0] < 1 or self.omega[-1] > len(self.parent):
            raise ValueError("omega outside the parent path's orders")

    @property
    def n_full(self) -> int:
        return len(self.parent)

    @property
    def removed(self) -> tuple[int, ...]:
        kept = set(self.omega)
        return tuple(i for i in range(1, self.n_full + 1) if i not in kept)


def n_removed(n: int, gamma: float) -> int:
    # guard against e.g. 0.29 * 100 == 28.999999999999996
    return int(math.floor(gamma * n + 1e-9))


def sparsify(
    path: Sequence[int],
    gamma: float,
    rng: np.random.Generator | None = None,
    removed: Iterable[int] | None = None,
) -> SparsePath:
    """Drop ``floor(gamma * N)`` uniformly chosen edges, keeping order.

    ``removed`` (1-based orders) forces the removal set instead of sampling.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"reduction ratio {gamma} outside [0, 1)")
    path = tuple(int(e) for e in path)
    n = len(path)
    if n < 2:
        raise ValueError("path needs at least 2 edges")
    k = n_removed(n, gamma)
    if removed is None:
        if rng is None:
            raise ValueError("need an rng when no removal set is given")
        drop = set((rng.choice(n, size=k, replace=False) + 1).tolist()) if k else set()
    else:
        drop = set(int(i) for i in removed)
        if len(drop) != k or not drop <= set(range(1, n + 1)):
            raise ValueError(f"forced removal set must hold {k} distinct orders in 1..{n}")
    omega = tuple(i for i in range(1, n + 1) if i not in drop)
    return SparsePath(path, tuple(path[i - 1] for i in omega), omega)


def full_view(path: Sequence[int]) -> SparsePath:
    path = tuple(int(e) for e in path)
    return SparsePath(path, path, tuple(range(1, len(path) + 1)))


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

_LAYER_KEYS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b")


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _add_layer(params: ParameterSet, prefix: str, cfg: EncoderConfig, rng: np.random.Generator) -> None:
    d, f = cfg.d_model, cfg.d_ff
    for proj in ("q", "k", "v", "o"):
        params.add(f"{prefix}.w{proj}", _uniform(rng, (d, d), d))
        params.add(f"{prefix}.b{proj}", _uniform(rng, (d,), d))
    params.add(f"{prefix}.ln1_g", np.ones(d))
    params.add(f"{prefix}.ln1_b", np.zeros(d))
    params.add(f"{prefix}.w1", _uniform(rng, (d, f), d))
    params.add(f"{prefix}.b1", _uniform(rng, (f,), d))
    params.add(f"{prefix}.w2", _uniform(rng, (f, d), f))
    params.add(f"{prefix}.b2", _uniform(rng, (d,), f))
    params.add(f"{prefix}.ln2_g", np.ones(d))
    params.add(f"{prefix}.ln2_b", np.zeros(d))


class EncoderModel:
    """Edge embeddings, PR/mask tokens, position table, encoder and decoder stacks."""

    def __init__(self, config: EncoderConfig, params: ParameterSet):
        self.config = config
        self.params = params
        if config.freeze_embeddings:
            params["emb"].requires_grad = False

    @classmethod
    def init(cls, config: EncoderConfig, rng: np.random.Generator) -> EncoderModel:
        d = config.d_model
        p = ParameterSet()
        # lookup tables hold inputs, not weights: fan_in taken as 1
        p.add("emb", rng.uniform(-1.0, 1.0, size=(config.vocab, d)))
        p.add("pr_token", rng.uniform(-1.0, 1.0, size=(1, d)))
        p.add("mask_token", rng.uniform(-1.0, 1.0, size=(1, d)))
        p.add("pos", rng.uniform(-1.0, 1.0, size=(config.max_len + 1, d)))
        for i in range(config.n_layers):
            _add_layer(p, f"enc.{i}", config, rng)
        for i in range(config.dec_layers):
            _add_layer(p, f"dec.{i}", config, rng)
        p.add("dec.proj_w", _uniform(rng, (d, d), d))
        p.add("dec.proj_b", _uniform(rng, (d,), d))
        return cls(config, p)

    def layer(self, stack: str, i: int) -> dict[str, Tensor]:
        return {k: self.params[f"{stack}.{i}.{k}"] for k in _LAYER_KEYS}

    def copy(self, requires_grad: bool | None = None) -> EncoderModel:
        model = EncoderModel(self.config, self.params.copy(requires_grad))
        if requires_grad is None:
            model.params["emb"].requires_grad = self.params["emb"].requires_grad
        return model

    def param_count(self) -> int:
        return self.params.count()

    def set_edge_embeddings(self, table: np.ndarray) -> None:
        table = np.asarray(table, dtype=np.float64)
        if table.shape != self.params["emb"].shape:
            raise ValueError(f"embedding table shape {table.shape} != {self.params['emb'].shape}")
        self.params["emb"].data = table.copy()


def load_edge_embeddings(file, vocab: int) -> np.ndarray:
    """Read ``edge_id,v1,...,vd`` lines (e.g. exported node2vec vectors) into a table."""
    rows: dict[int, list[float]] = {}
    with open(file, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            try:
                rows[int(parts[0])] = [float(x) for x in parts[1:]]
            except ValueError:
                raise ValueError(f"line {lineno}: malformed embedding row") from None
    dims = {len(v) for v in rows.values()}
    if len(dims) != 1:
        raise ValueError("embedding rows have inconsistent widths")
    table = np.zeros((vocab, dims.pop()))
    for eid, vec in rows.items():
        if not 0 <= eid < vocab:
            raise ValueError(f"edge id {eid} outside vocabulary of size {vocab}")
        table[eid] = vec
    return table


# ---------------------------------------------------------------------------
# transformer blocks
# ---------------------------------------------------------------------------


def multi_head_attention(
    layer: dict[str, Tensor],
    x: Tensor,
    n_heads: int,
    key_bias: np.ndarray | None = None,
    attn_out: list | None = None,
) -> Tensor:
    """softmax(Q_h K_h^T / sqrt(d_head)) V_h per head, heads concatenated, then W^O.

    ``key_bias`` (broadcastable to the score matrix) masks padded keys.
    Attention matrices are appended to ``attn_out`` when given.
    """
    d = x.shape[-1]
    if layer["wq"].shape[0] != d:
        raise ValueError(f"input width {d} != model width {layer['wq'].shape[0]}")
    dh = d // n_heads
    q = matmul(x, layer["wq"]) + layer["bq"]
    k = matmul(x, layer["wk"]) + layer["bk"]
    v = matmul(x, layer["wv"]) + layer["bv"]
    scale = 1.0 / math.sqrt(dh)
    heads = []
    for h in range(n_heads):
        cols = (Ellipsis, slice(h * dh, (h + 1) * dh))
        scores = matmul(q[cols], transpose(k[cols])) * scale
        if key_bias is not None:
            scores = scores + key_bias
        attn = softmax(scores, axis=-1)
        if attn_out is not None:
            attn_out.append(attn.data)
        heads.append(matmul(attn, v[cols]))
    ctx = heads[0] if n_heads == 1 else concat(heads, axis=-1)
    return matmul(ctx, layer["wo"]) + layer["bo"]


def feed_forward(layer: dict[str, Tensor], z: Tensor) -> Tensor:
    return matmul(relu(matmul(z, layer["w1"]) + layer["b1"]), layer["w2"]) + layer["b2"]


def encoder_layer(
    layer: dict[str, Tensor],
    x: Tensor,
    n_heads: int,
    key_bias: np.ndarray | None = None,
    eps: float = 1e-5,
    attn_out: list | None = None,
) -> Tensor:
    z = layer_norm(x + multi_head_attention(layer, x, n_heads, key_bias, attn_out), layer["ln1_g"], layer["ln1_b"], eps)
    return layer_norm(z + feed_forward(layer, z), layer["ln2_g"], layer["ln2_b"], eps)


# ---------------------------------------------------------------------------
# encode / decode
# ---------------------------------------------------------------------------


@dataclass
class EncodedBatch:
    hidden: Tensor  # (B, T, d), row 0 is the PR
    views: list[SparsePath]
    valid: np.ndarray  # (B, T) bool
    pr: Tensor = field(init=False)

    def __post_init__(self):
        self.pr = self.hidden[:, 0, :]

    @property
    def edge_states(self) -> Tensor:
        return self.hidden[:, 1:, :]

    @property
    def edge_valid(self) -> np.ndarray:
        return self.valid[:, 1:]


@dataclass
class EncodedPath:
    pr: Tensor  # (d,)
    edge_states: Tensor  # (N', d)
    omega: tuple[int, ...]


def _key_bias(valid: np.ndarray) -> np.ndarray:
    return np.where(valid, 0.0, MASK_BIAS)[:, None, :]


def assemble_batch(model: EncoderModel, views: Sequence[SparsePath]) -> tuple[Tensor, np.ndarray]:
    """Stacked inputs ``(B, T, d)`` with ``T = max N' + 1`` and a validity mask."""
    cfg = model.config
    if not views:
        raise ValueError("empty batch")
    t = max(len(v.edges) for v in views) + 1
    b = len(views)
    idx = np.zeros((b, t - 1), dtype=np.int64)
    pos = np.zeros((b, t), dtype=np.int64)
    valid = np.zeros((b, t), dtype=bool)
    for r, v in enumerate(views):
        if v.omega[-1] > cfg.max_len:
            raise ValueError(f"path order {v.omega[-1]} exceeds max_len {cfg.max_len}")
        n = len(v.edges)
        idx[r, :n] = v.edges
        pos[r, 1 : n + 1] = v.omega
        valid[r, : n + 1] = True
    if idx.max() >= cfg.vocab:
        raise ValueError(f"edge id {int(idx.max())} outside vocabulary of size {cfg.vocab}")
    p = model.params
    tokens = concat([gather(p["pr_token"], np.zeros((b, 1), dtype=np.int64)), gather(p["emb"], idx)], axis=1)
    return tokens + gather(p["pos"], pos), valid


def assemble_input(model: EncoderModel, view: SparsePath) -> Tensor:
    """Rows: PR token + pos[0], then embedding(e) + pos[omega_k]."""
    x, _ = assemble_batch(model, [view])
    return x[0]


def run_stack(model: EncoderModel, stack: str, n: int, x: Tensor, valid: np.ndarray, attn_out: list | None = None) -> Tensor:
    cfg = model.config
    bias = _key_bias(valid)
    for i in range(n):
        x = encoder_layer(model.layer(stack, i), x, cfg.n_heads, bias, cfg.ln_eps, attn_out)
    return x


def encode_batch(model: EncoderModel, views: Sequence[SparsePath], attn_out: list | None = None) -> EncodedBatch:
    x, valid = assemble_batch(model, views)
    h = run_stack(model, "enc", model.config.n_layers, x, valid, attn_out)
    return EncodedBatch(h, list(views), valid)


def encode(model: EncoderModel, view: SparsePath) -> EncodedPath:
    enc = encode_batch(model, [view])
    return EncodedPath(enc.hidden[0, 0, :], enc.hidden[0, 1:, :], view.omega)


@dataclass
class Reconstruction:
    predicted: Tensor  # (B, N_max, d) for orders 1..N
    target: np.ndarray  # (B, N_max, d) input edge embeddings
    removed: np.ndarray  # (B, N_max) bool
    valid: np.ndarray  # (B, N_max) bool


def decode_batch(model: EncoderModel, enc: EncodedBatch) -> Reconstruction:
    """Scatter encoder rows back to their orders, fill removed orders with the
    mask token, add positions everywhere, run the decoder, project rows 1..N."""
    cfg = model.config
    p = model.params
    views = enc.views
    b = len(views)
    n_max = max(v.n_full for v in views)
    if n_max > cfg.max_len:
        raise ValueError(f"path length {n_max} exceeds max_len {cfg.max_len}")
    t_enc = enc.hidden.shape[1]
    select = np.zeros((b, n_max + 1, t_enc))
    is_mask = np.zeros((b, n_max + 1, 1))
    valid = np.zeros((b, n_max + 1), dtype=bool)
    removed = np.zeros((b, n_max), dtype=bool)
    edges = np.zeros((b, n_max), dtype=np.int64)
    for r, v in enumerate(views):
        if v.omega[-1] > v.n_full:
            raise ValueError("omega index beyond the full path length")
        select[r, 0, 0] = 1.0
        for k, order in enumerate(v.omega):
            select[r, order, k + 1] = 1.0
        for order in v.removed:
            is_mask[r, order, 0] = 1.0
            removed[r, order - 1] = True
        valid[r, : v.n_full + 1] = True
        edges[r, : v.n_full] = v.parent
    full = matmul(Tensor(select), enc.hidden) + Tensor(is_mask) * p["mask_token"]
    full = full + gather(p["pos"], np.arange(n_max + 1))
    h = run_stack(model, "dec", cfg.dec_layers, full, valid)
    pred = matmul(h[:, 1:, :], p["dec.proj_w"]) + p["dec.proj_b"]
    target = p["emb"].data[edges]
    return Reconstruction(pred, target, removed, valid[:, 1:])


def decode_reconstruct(model: EncoderModel, encoded: EncodedPath, view: SparsePath) -> Tensor:
    """Single-path decode; returns predicted edge representations ``(N, d)``."""
    if tuple(encoded.omega) != tuple(view.omega):
        raise ValueError("encoded path and view disagree on omega")
    enc = EncodedBatch(
        concat([encoded.pr[None, :] if encoded.pr.ndim == 1 else encoded.pr, encoded.edge_states], axis=0)[None],
        [view],
        np.ones((1, len(view.edges) + 1), dtype=bool),
    )
    return decode_batch(model, enc).predicted[0]


def reconstruction_loss(predicted: Tensor, target, removed: np.ndarray, valid: np.ndarray | None = None) -> Tensor:
    """MSE over removed orders only; a path with nothing removed uses all its orders.

    ``predicted``/``target`` are ``(..., N, d)``; ``removed``/``valid`` are ``(..., N)``.
    """
    removed = np.asarray(removed, dtype=bool)
    valid = np.ones_like(removed) if valid is None else np.asarray(valid, dtype=bool)
    if not valid.any():
        raise ValueError("empty path")
    weight = removed & valid
    none_removed = ~weight.any(axis=-1, keepdims=True)
    weight = np.where(none_removed, valid, weight)
    return mse(predicted, target, weight[..., None].astype(np.float64))


def removed_mask(n: int, removed_orders: Iterable[int]) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    for i in removed_orders:
        mask[int(i) - 1] = True
    return mask


def reconstruct_loss_batch(model: EncoderModel, views: Sequence[SparsePath]) -> tuple[Tensor, EncodedBatch]:
    enc = encode_batch(model, views)
    rec = decode_batch(model, enc)
    return reconstruction_loss(rec.predicted, rec.target, rec.removed, rec.valid), enc
