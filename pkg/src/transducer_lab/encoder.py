"""Masked conformer encoder.

Each block runs half-step feed-forward, band-masked multi-head self-attention,
a depthwise-convolution sublayer, another half-step feed-forward, and a final
layernorm, all with residual connections (pre-norm). Masked positions are
excluded from the attention normalizer, not just zeroed after the fact, so a
band mask with right context 0 yields strictly causal attention; causal layers
also switch the conv sublayer to left-only padding.

A small strided-convolution front-end reduces the input frame rate by the
subsample factor (default 4) and projects to the model width.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, InputError
from . import tensor as tl


@dataclass(frozen=True)
class AttentionMask:
    """Band mask: position i may attend to l with -left <= l-i <= right.

    ``None`` means unbounded on that side. The diagonal is always unmasked.
    """
    left: int | None = None
    right: int | None = None

    def __post_init__(self):
        for v in (self.left, self.right):
            if v is not None and v < 0:
                raise ConfigError(f"mask context must be nonnegative, got {v}")

    def band_matrix(self, length: int) -> np.ndarray:
        offset = np.arange(length)[None, :] - np.arange(length)[:, None]
        ok = np.ones((length, length), dtype=bool)
        if self.left is not None:
            ok &= offset >= -self.left
        if self.right is not None:
            ok &= offset <= self.right
        return ok.astype(np.float64)

    @property
    def causal(self) -> bool:
        return self.right == 0


def masked_attention(q: tl.GraphValue, k: tl.GraphValue, v: tl.GraphValue,
                     mask: np.ndarray) -> tl.GraphValue:
    """Single-head scaled-dot-product attention under a binary mask."""
    L, dk = q.shape
    if k.shape != (mask.shape[1], dk) or mask.shape[0] != L:
        raise DimensionError(f"mask {mask.shape} inconsistent with Q {q.shape} "
                             f"/ K {k.shape}")
    scores = tl.scale(tl.matmul(q, tl.transpose2d(k)), 1.0 / np.sqrt(dk))
    weights = tl.masked_softmax_lastdim(scores, mask)
    return tl.matmul(weights, v)


@dataclass
class EncoderConfig:
    layers: int = 2
    dim: int = 32
    heads: int = 4
    ff_dim: int = 64
    conv_kernel: int = 7
    subsample: int = 4
    feature_dim: int = 8
    mask_left: object = None       # int, None, or per-layer list
    mask_right: object = None

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.conv_kernel % 2 == 0:
            raise ConfigError(f"conv kernel must be odd, got {self.conv_kernel}")
        if self.subsample not in (1, 2, 4):
            raise ConfigError(f"subsample must be 1, 2 or 4, got {self.subsample}")

    def layer_masks(self) -> list[AttentionMask]:
        def per_layer(v):
            if isinstance(v, (list, tuple)):
                if len(v) != self.layers:
                    raise ConfigError(f"per-layer mask list length {len(v)} != "
                                      f"layers {self.layers}")
                return list(v)
            return [v] * self.layers
        lefts, rights = per_layer(self.mask_left), per_layer(self.mask_right)
        return [AttentionMask(left=l, right=r) for l, r in zip(lefts, rights)]


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


class MultiHeadSelfAttention:
    def __init__(self, rng, dim, heads, prefix):
        self.heads = heads
        self.dk = dim // heads
        self.q = _Affine(rng, dim, dim, f"{prefix}.q")
        self.k = _Affine(rng, dim, dim, f"{prefix}.k")
        self.v = _Affine(rng, dim, dim, f"{prefix}.v")
        self.o = _Affine(rng, dim, dim, f"{prefix}.o")

    def __call__(self, x: tl.GraphValue, mask: np.ndarray) -> tl.GraphValue:
        q, k, v = self.q(x), self.k(x), self.v(x)
        outs = []
        for h in range(self.heads):
            lo, hi = h * self.dk, (h + 1) * self.dk
            outs.append(masked_attention(tl.slice_lastdim(q, lo, hi),
                                         tl.slice_lastdim(k, lo, hi),
                                         tl.slice_lastdim(v, lo, hi), mask))
        return self.o(tl.concat_lastdim(outs))

    def parameters(self):
        out = {}
        for m in (self.q, self.k, self.v, self.o):
            out.update(m.parameters())
        return out


class ConformerBlock:
    def __init__(self, rng, cfg: EncoderConfig, mask: AttentionMask, index: int):
        d, p = cfg.dim, f"encoder.block{index}"
        self.mask = mask
        self.ln_ff1 = _LayerNorm(d, f"{p}.ln_ff1")
        self.ff1_in = _Affine(rng, d, cfg.ff_dim, f"{p}.ff1_in")
        self.ff1_out = _Affine(rng, cfg.ff_dim, d, f"{p}.ff1_out")
        self.ln_att = _LayerNorm(d, f"{p}.ln_att")
        self.attn = MultiHeadSelfAttention(rng, d, cfg.heads, f"{p}.attn")
        self.ln_conv = _LayerNorm(d, f"{p}.ln_conv")
        self.conv_in = _Affine(rng, d, 2 * d, f"{p}.conv_in")
        self.conv_kernel = tl.parameter(_init(rng, cfg.conv_kernel, cfg.conv_kernel, d))
        self.conv_out = _Affine(rng, d, d, f"{p}.conv_out")
        self.ln_ff2 = _LayerNorm(d, f"{p}.ln_ff2")
        self.ff2_in = _Affine(rng, d, cfg.ff_dim, f"{p}.ff2_in")
        self.ff2_out = _Affine(rng, cfg.ff_dim, d, f"{p}.ff2_out")
        self.ln_final = _LayerNorm(d, f"{p}.ln_final")
        self._prefix = p

    def _ffn(self, x, ln, fin, fout):
        return tl.scale(fout(tl.swish(fin(ln(x)))), 0.5)

    def _conv(self, x):
        h = self.conv_in(self.ln_conv(x))
        d = x.shape[-1]
        gated = tl.mul(tl.slice_lastdim(h, 0, d),
                       tl.sigmoid(tl.slice_lastdim(h, d, 2 * d)))
        padding = "causal-left" if self.mask.causal else "same-centered"
        conv = tl.depthwise_conv1d(gated, self.conv_kernel, padding)
        return self.conv_out(tl.swish(conv))

    def __call__(self, x: tl.GraphValue) -> tl.GraphValue:
        band = self.mask.band_matrix(x.shape[0])
        x = tl.add(x, self._ffn(x, self.ln_ff1, self.ff1_in, self.ff1_out))
        x = tl.add(x, self.attn(self.ln_att(x), band))
        x = tl.add(x, self._conv(x))
        x = tl.add(x, self._ffn(x, self.ln_ff2, self.ff2_in, self.ff2_out))
        return self.ln_final(x)

    def parameters(self):
        out = {f"{self._prefix}.conv_kernel": self.conv_kernel}
        for m in (self.ln_ff1, self.ff1_in, self.ff1_out, self.ln_att, self.attn,
                  self.ln_conv, self.conv_in, self.conv_out, self.ln_ff2,
                  self.ff2_in, self.ff2_out, self.ln_final):
            out.update(m.parameters())
        return out


class SubsampleFrontend:
    """Strided-conv front-end: [T_raw, f] -> [ceil(T_raw/factor), d]."""

    _KERNEL = 3

    def __init__(self, rng, cfg: EncoderConfig):
        self.factor = cfg.subsample
        stages = {1: [], 2: [2], 4: [2, 2]}[cfg.subsample]
        self.strides = stages
        self.kernels = []
        d_in = cfg.feature_dim
        for i, _ in enumerate(stages):
            self.kernels.append(tl.parameter(
                _init(rng, self._KERNEL * d_in, self._KERNEL, d_in, cfg.dim)))
            d_in = cfg.dim
        self.proj = _Affine(rng, d_in, cfg.dim, "encoder.frontend.proj")

    def __call__(self, features: tl.GraphValue) -> tl.GraphValue:
        if features.shape[0] < 1:
            raise InputError("input must contain at least one frame")
        h = features
        for kern, stride in zip(self.kernels, self.strides):
            h = tl.swish(tl.strided_conv1d(h, kern, stride))
        return self.proj(h)

    def parameters(self):
        out = {f"encoder.frontend.conv{i}": k for i, k in enumerate(self.kernels)}
        out.update(self.proj.parameters())
        return out


class Encoder:
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.frontend = SubsampleFrontend(rng, cfg)
        self.blocks = [ConformerBlock(rng, cfg, m, i)
                       for i, m in enumerate(cfg.layer_masks())]

    def encode(self, features) -> tl.GraphValue:
        x = features if isinstance(features, tl.GraphValue) else tl.constant(features)
        if x.value.ndim != 2 or x.shape[1] != self.cfg.feature_dim:
            raise InputError(f"features must be [T_raw, {self.cfg.feature_dim}], "
                             f"got {x.shape}")
        h = self.frontend(x)
        for block in self.blocks:
            h = block(h)
        return h

    def parameters(self) -> dict:
        out = self.frontend.parameters()
        for b in self.blocks:
            out.update(b.parameters())
        return out
