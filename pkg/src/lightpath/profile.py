"""Analytic cost model for the sparse-path encoder.

Conventions:
    * one multiply-accumulate counts as 2 FLOPs;
    * softmax and layer norm cost 5 FLOPs per element;
    * bias adds, residual adds and activations are not counted;
    * the encoder sees N' + 1 tokens (kept edges plus the PR token), the
      decoder sees N + 1 tokens.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

from .encoder import EncoderConfig, n_removed

FLOPS_PER_MAC = 2
FLOPS_PER_NORM_ELEMENT = 5
BYTES_PER_VALUE = 8

TABLE5_N = (50, 100, 150, 200)
TABLE5_GAMMA = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9)


def reference_config(vocab: int = 1, max_len: int = 200, n_layers: int = 12) -> EncoderConfig:
    """Large configuration: 8 heads, d_model 512, d_ff 1024, one decoder layer.

    The vocabulary only shifts the parameter intercept; it defaults to 1.
    """
    return EncoderConfig(vocab=vocab, max_len=max_len, d_model=512, n_layers=n_layers, n_heads=8, d_ff=1024, dec_layers=1)


@dataclass
class CostReport:
    params: int = 0
    flops: int = 0
    activation_bytes: int = 0
    # quantity ("params" / "flops" / "activation_bytes") -> component -> count
    breakdown: dict[str, dict[str, int]] = field(default_factory=dict)

    def check(self) -> None:
        for key, parts in self.breakdown.items():
            if sum(parts.values()) != getattr(self, key):
                raise AssertionError(f"{key} breakdown does not sum to the total")

    @property
    def gflops(self) -> float:
        return self.flops / 1e9

    @property
    def mem_gib(self) -> float:
        return self.activation_bytes / 2**30


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def layer_params(d: int, d_ff: int) -> int:
    attention = 4 * (d * d + d)
    ffn = d * d_ff + d_ff + d_ff * d + d
    norms = 4 * d
    return attention + ffn + norms


def count_params(config: EncoderConfig, include_decoder: bool = True, include_head: bool = False) -> CostReport:
    d = config.d_model
    per_layer = layer_params(d, config.d_ff)
    parts = {
        "edge_embeddings": config.vocab * d,
        "pr_token": d,
        "mask_token": d,
        "positions": (config.max_len + 1) * d,
        "encoder_layers": config.n_layers * per_layer,
    }
    if include_decoder:
        parts["decoder_layers"] = config.dec_layers * per_layer
        parts["decoder_projection"] = d * d + d
    if include_head:
        parts["relation_head"] = 2 * d * d + d + d + 1
    report = CostReport(params=sum(parts.values()), breakdown={"params": parts})
    report.check()
    return report


# ---------------------------------------------------------------------------
# FLOPs
# ---------------------------------------------------------------------------


def kept_length(n: int, gamma: float) -> int:
    if n < 2:
        raise ValueError("path length N must be >= 2")
    return n - n_removed(n, gamma)


def layer_flops(tokens: int, config: EncoderConfig) -> dict[str, int]:
    """FLOPs of one transformer layer over ``tokens`` rows."""
    t, d, m = tokens, config.d_model, config.n_heads
    return {
        "projections": FLOPS_PER_MAC * 4 * t * d * d,
        "attention_scores": FLOPS_PER_MAC * 2 * t * t * d,
        "softmax": FLOPS_PER_NORM_ELEMENT * m * t * t,
        "feed_forward": FLOPS_PER_MAC * 2 * t * d * config.d_ff,
        "layer_norm": FLOPS_PER_NORM_ELEMENT * 2 * t * d,
    }


def count_flops(config: EncoderConfig, n: int, gamma: float, include_decoder: bool = True) -> CostReport:
    """Forward FLOPs for one path of ``n`` edges at reduction ratio ``gamma``."""
    t_enc = kept_length(n, gamma) + 1
    parts: dict[str, int] = {}
    for key, v in layer_flops(t_enc, config).items():
        parts[f"encoder.{key}"] = config.n_layers * v
    if include_decoder:
        t_dec = n + 1
        for key, v in layer_flops(t_dec, config).items():
            parts[f"decoder.{key}"] = config.dec_layers * v
        parts["decoder.output_projection"] = FLOPS_PER_MAC * t_dec * config.d_model**2
    report = CostReport(flops=sum(parts.values()), breakdown={"flops": parts})
    report.check()
    return report


# ---------------------------------------------------------------------------
# memory
# ---------------------------------------------------------------------------


def layer_activations(tokens: int, config: EncoderConfig) -> int:
    """Values kept for the backward pass by one layer (per path)."""
    t, d, m = tokens, config.d_model, config.n_heads
    # input, q, k, v, context, attention output, residual, norm output
    row_tensors = 8 * t * d
    scores = 2 * m * t * t  # logits and probabilities
    ffn = 2 * t * config.d_ff + t * d  # hidden pre/post activation, output
    norm2 = 2 * t * d
    return row_tensors + scores + ffn + norm2


def memory_estimate(config: EncoderConfig, n: int, gamma: float, batch: int = 1, include_decoder: bool = True) -> CostReport:
    if batch < 1:
        raise ValueError("batch must be >= 1")
    t_enc = kept_length(n, gamma) + 1
    scale = batch * BYTES_PER_VALUE
    parts = {
        "encoder_input": scale * t_enc * config.d_model,
        "encoder_layers": scale * config.n_layers * layer_activations(t_enc, config),
    }
    if include_decoder:
        t_dec = n + 1
        parts["decoder_input"] = scale * t_dec * config.d_model
        parts["decoder_layers"] = scale * config.dec_layers * layer_activations(t_dec, config)
        parts["decoder_output"] = scale * t_dec * config.d_model
    report = CostReport(activation_bytes=sum(parts.values()), breakdown={"activation_bytes": parts})
    report.check()
    return report


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


def cost_report(config: EncoderConfig, n: int, gamma: float, batch: int = 1, include_decoder: bool = True) -> CostReport:
    p = count_params(config, include_decoder=include_decoder)
    f = count_flops(config, n, gamma, include_decoder)
    m = memory_estimate(config, n, gamma, batch, include_decoder)
    report = CostReport(p.params, f.flops, m.activation_bytes, {**p.breakdown, **f.breakdown, **m.breakdown})
    report.check()
    return report


@dataclass
class ScalabilityTable:
    n_list: list[int]
    gamma_list: list[float]
    cells: dict[tuple[int, float], CostReport]
    batch: int
    include_decoder: bool

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "gamma", "params", "gflops", "mem_gib"])
        for n in self.n_list:
            for g in self.gamma_list:
                c = self.cells[(n, g)]
                w.writerow([n, repr(g), c.params, repr(c.gflops), repr(c.mem_gib)])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "conventions": {
                "flops_per_mac": FLOPS_PER_MAC,
                "flops_per_norm_element": FLOPS_PER_NORM_ELEMENT,
                "bytes_per_value": BYTES_PER_VALUE,
                "batch": self.batch,
                "include_decoder": self.include_decoder,
            },
            "cells": [
                {"N": n, "gamma": g, "params": c.params, "flops": c.flops, "activation_bytes": c.activation_bytes, "breakdown": c.breakdown}
                for (n, g), c in self.cells.items()
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def scalability_report(
    config: EncoderConfig,
    n_list: Sequence[int] = TABLE5_N,
    gamma_list: Sequence[float] = TABLE5_GAMMA,
    batch: int = 64,
    include_decoder: bool = True,
) -> ScalabilityTable:
    """Cost grid with rows N and columns gamma."""
    if not n_list or not gamma_list:
        raise ValueError("need at least one N and one gamma")
    if max(n_list) > config.max_len:
        raise ValueError(f"N={max(n_list)} exceeds max_len {config.max_len}")
    cells = {(n, g): cost_report(config, n, g, batch, include_decoder) for n in n_list for g in gamma_list}
    return ScalabilityTable(list(n_list), list(gamma_list), cells, batch, include_decoder)


def per_layer_increment(config: EncoderConfig) -> int:
    """Parameters added by one more encoder layer."""
    more = dataclasses.replace(config, n_layers=config.n_layers + 1)
    return count_params(more).params - count_params(config).params
