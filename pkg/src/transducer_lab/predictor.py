"""Causal predictor with relative positional attention and segment memory.

The attention score between query i and key j combines a content term and a
relative-position term, each with its own learned global bias vector; the
position term is looked up by distance i - j from a sinusoid table, so the
model generalizes to sequences longer than it was trained on. Per-layer
hidden states from previous segments are cached (frozen, no gradient) and
prepended to the keys/values, extending the effective context.

Position 0 of the output is a dedicated learned start-of-sequence state that
conditions the first emission; token ids occupy 1..V.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, InputError
from . import tensor as tl


@dataclass
class PredictorConfig:
    layers: int = 1
    dim: int = 32
    heads: int = 2
    ff_dim: int = 64
    memory: int = 16
    vocab_size: int = 8

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.memory < 0:
            raise ConfigError("memory length must be >= 0")


@dataclass
class SegmentMemory:
    """Frozen per-layer hidden states from previous segments."""
    states: list = field(default_factory=list)   # ndarray [<=M, d] per layer
    offset: int = 0                              # tokens consumed so far

    @classmethod
    def empty(cls, layers: int, dim: int) -> "SegmentMemory":
        return cls(states=[np.zeros((0, dim)) for _ in range(layers)], offset=0)


def sinusoid_table(max_dist: int, dim: int) -> np.ndarray:
    """Rows indexed by distance 0..max_dist, standard sinusoid formulation."""
    pos = np.arange(max_dist + 1)[:, None]
    i = np.arange(0, dim, 2)[None, :]
    angle = pos / np.power(10000.0, i / dim)
    table = np.zeros((max_dist + 1, dim))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def _init(rng, fan_in, *shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class _Affine:
    def __init__(self, rng, d_in, d_out, prefix):
        self.w = tl.parameter(_init(rng, d_in, d_in, d_out))
        self.b = tl.parameter(np.zeros(d_out))
        self.prefix = prefix

    def __call__(self, x):
        return tl.affine(x, self.w, self.b)

    def parameters(self):
        return {f"{self.prefix}.w": self.w, f"{self.prefix}.b": self.b}


class _LayerNorm:
    def __init__(self, d, prefix):
        self.gain = tl.parameter(np.ones(d))
        self.bias = tl.parameter(np.zeros(d))
        self.prefix = prefix

    def __call__(self, x):
        return tl.layernorm(x, self.gain, self.bias)

    def parameters(self):
        return {f"{self.prefix}.gain": self.gain, f"{self.prefix}.bias": self.bias}


class RelMultiHeadAttention:
    """Relative-position attention over [memory ; segment] with causal masking."""

    def __init__(self, rng, dim, heads, prefix):
        self.dim = dim
        self.heads = heads
        self.dk = dim // heads
        self.q = _Affine(rng, dim, dim, f"{prefix}.q")
        self.k = _Affine(rng, dim, dim, f"{prefix}.k")
        self.v = _Affine(rng, dim, dim, f"{prefix}.v")
        self.o = _Affine(rng, dim, dim, f"{prefix}.o")
        self.r = _Affine(rng, dim, dim, f"{prefix}.r")   # projects sinusoids
        self.u_bias = tl.parameter(np.zeros(dim))        # content global bias
        self.v_bias = tl.parameter(np.zeros(dim))        # position global bias
        self.prefix = prefix

    def __call__(self, x: tl.GraphValue, mem_x: tl.GraphValue) -> tl.GraphValue:
        L = x.shape[0]
        M = mem_x.shape[0]
        full = tl.concat_rows([mem_x, x]) if M else x
        q, k, v = self.q(x), self.k(full), self.v(full)

        # distance of query i (absolute M+i) to key j: (M+i) - j, causal >= 0
        dist = (np.arange(L)[:, None] + M) - np.arange(L + M)[None, :]
        causal = (dist >= 0).astype(np.float64)
        rel = tl.constant(sinusoid_table(L + M - 1, self.dim))
        r_proj = self.r(rel)                              # [L+M, dim]

        outs = []
        scale = 1.0 / np.sqrt(self.dk)
        for h in range(self.heads):
            lo, hi = h * self.dk, (h + 1) * self.dk
            qh = tl.slice_lastdim(q, lo, hi)
            kh = tl.slice_lastdim(k, lo, hi)
            vh = tl.slice_lastdim(v, lo, hi)
            rh = tl.slice_lastdim(r_proj, lo, hi)
            uh = tl.slice_lastdim(self.u_bias, lo, hi)
            vbh = tl.slice_lastdim(self.v_bias, lo, hi)
            content = tl.matmul(tl.add(qh, uh), tl.transpose2d(kh))     # [L, L+M]
            pos_all = tl.matmul(tl.add(qh, vbh), tl.transpose2d(rh))    # [L, L+M]
            pos = tl.gather_lastdim(pos_all, np.maximum(dist, 0))
            scores = tl.scale(tl.add(content, pos), scale)
            weights = tl.masked_softmax_lastdim(scores, causal)
            outs.append(tl.matmul(weights, vh))
        return self.o(tl.concat_lastdim(outs))

    def parameters(self):
        out = {f"{self.prefix}.u_bias": self.u_bias,
               f"{self.prefix}.v_bias": self.v_bias}
        for m in (self.q, self.k, self.v, self.o, self.r):
            out.update(m.parameters())
        return out


class PredictorLayer:
    def __init__(self, rng, cfg: PredictorConfig, index: int):
        p = f"predictor.layer{index}"
        self.ln_att = _LayerNorm(cfg.dim, f"{p}.ln_att")
        self.attn = RelMultiHeadAttention(rng, cfg.dim, cfg.heads, f"{p}.attn")
        self.ln_ff = _LayerNorm(cfg.dim, f"{p}.ln_ff")
        self.ff_in = _Affine(rng, cfg.dim, cfg.ff_dim, f"{p}.ff_in")
        self.ff_out = _Affine(rng, cfg.ff_dim, cfg.dim, f"{p}.ff_out")

    def __call__(self, x: tl.GraphValue, mem: np.ndarray) -> tl.GraphValue:
        mem_x = tl.constant(mem)          # frozen: gradient never crosses segments
        # memory enters through the same pre-attention layernorm as the segment
        normed_mem = self.ln_att(mem_x) if mem.shape[0] else mem_x
        x = tl.add(x, self.attn(self.ln_att(x), normed_mem))
        x = tl.add(x, self.ff_out(tl.swish(self.ff_in(self.ln_ff(x)))))
        return x

    def parameters(self):
        out = {}
        for m in (self.ln_att, self.attn, self.ln_ff, self.ff_in, self.ff_out):
            out.update(m.parameters())
        return out


class Predictor:
    def __init__(self, cfg: PredictorConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embedding = tl.parameter(_init(rng, cfg.dim, cfg.vocab_size + 1, cfg.dim))
        self.start = tl.parameter(_init(rng, cfg.dim, 1, cfg.dim))
        self.layers = [PredictorLayer(rng, cfg, i) for i in range(cfg.layers)]
        self.ln_out = _LayerNorm(cfg.dim, "predictor.ln_out")

    def predict(self, labels, mem: SegmentMemory | None = None,
                update_memory: bool = False):
        """Encode a label prefix to [(U+1), d] states; optionally roll memory.

        Without memory, row 0 is the start state and row u conditions on
        y_1..y_u. With memory, the start row is only prepended on the first
        segment (offset 0).
        """
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.size and (labels.min() < 1 or labels.max() > self.cfg.vocab_size):
            raise InputError(f"token ids must lie in 1..{self.cfg.vocab_size}")
        mem = mem or SegmentMemory.empty(self.cfg.layers, self.cfg.dim)
        first_segment = mem.offset == 0
        emb = tl.gather_rows(self.embedding, labels) if labels.size else None
        if first_segment:
            x = tl.concat_rows([self.start, emb]) if emb is not None else self.start
        else:
            if emb is None:
                raise InputError("continuation segment must contain tokens")
            x = emb

        new_states = []
        for layer, layer_mem in zip(self.layers, mem.states):
            new_states.append(x.value.copy())
            x = layer(x, layer_mem)
        h = self.ln_out(x)

        if update_memory:
            keep = self.cfg.memory
            states = [np.concatenate([old, new], axis=0)[-keep:] if keep else
                      np.zeros((0, self.cfg.dim))
                      for old, new in zip(mem.states, new_states)]
            mem = SegmentMemory(states=states,
                                offset=mem.offset + x.shape[0])
        return h, mem

    def parameters(self) -> dict:
        out = {"predictor.embedding": self.embedding, "predictor.start": self.start}
        for layer in self.layers:
            out.update(layer.parameters())
        out.update(self.ln_out.parameters())
        return out
