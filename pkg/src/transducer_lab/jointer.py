"""Joint network: combine encoder and predictor states into per-cell logits.

The combine is logits(t, u) = FC(tanh(h_enc(t) + h_pre(u))) over the full
T x (U+1) grid. Backward, the grid gradient sums over the opposite axis into
each side; with normalization enabled those sums are rescaled per utterance
(encoder side divided by the number of predictor positions, predictor side by
T) via an identity-forward / scale-backward node, so forward values are
untouched and each gradient block keeps its direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from . import tensor as tl


@dataclass
class JointConfig:
    joint_dim: int = 32
    vocab_size: int = 8          # excluding blank
    normalize: bool = False
    # True: encoder divisor is the actual summand count U+1 (includes the
    # start position); False: divisor is U as written, clamped to >= 1.
    divisor_includes_start: bool = True

    def __post_init__(self):
        if self.joint_dim < 1 or self.vocab_size < 1:
            raise ConfigError("joint_dim and vocab_size must be >= 1")


@dataclass
class GradStats:
    """Per-step gradient instrumentation for one utterance."""
    step: int
    T: int
    U: int
    enc_norm_before: float
    enc_var_before: float
    pre_norm_before: float
    pre_var_before: float
    enc_norm_after: float
    enc_var_after: float
    pre_norm_after: float
    pre_var_after: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def encoder_divisor(cfg: JointConfig, U: int) -> float:
    return float(U + 1) if cfg.divisor_includes_start else float(max(U, 1))


def aggregate_grads(d_z: np.ndarray):
    """Sum the grid gradient into per-frame and per-position gradients."""
    d_z = np.asarray(d_z, dtype=np.float64)
    if d_z.ndim != 3:
        raise DimensionError(f"d_z must be [T, U+1, d], got {d_z.shape}")
    return d_z.sum(axis=1), d_z.sum(axis=0)


def normalize_grads(d_h_enc: np.ndarray, d_h_pre: np.ndarray, T: int, U: int,
                    cfg: JointConfig | None = None):
    """Rescale the aggregated gradients by the opposite sequence length."""
    cfg = cfg or JointConfig()
    div_u = encoder_divisor(cfg, U)
    return np.asarray(d_h_enc) / div_u, np.asarray(d_h_pre) / float(T)


def sample_variance(x: np.ndarray) -> float:
    """Two-pass sample variance (ddof=1) of the flattened array."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size < 2:
        return 0.0
    mu = x.mean()
    return float(((x - mu) ** 2).sum() / (x.size - 1))


def record_stats(step: int, T: int, U: int,
                 enc_before: np.ndarray, pre_before: np.ndarray,
                 enc_after: np.ndarray, pre_after: np.ndarray) -> GradStats:
    return GradStats(
        step=step, T=T, U=U,
        enc_norm_before=float(np.linalg.norm(enc_before)),
        enc_var_before=sample_variance(enc_before),
        pre_norm_before=float(np.linalg.norm(pre_before)),
        pre_var_before=sample_variance(pre_before),
        enc_norm_after=float(np.linalg.norm(enc_after)),
        enc_var_after=sample_variance(enc_after),
        pre_norm_after=float(np.linalg.norm(pre_after)),
        pre_var_after=sample_variance(pre_after),
    )


class Jointer:
    """Owns the pre-joint projections and the output FC."""

    def __init__(self, enc_dim: int, pre_dim: int, cfg: JointConfig,
                 rng: np.random.Generator):
        self.cfg = cfg
        d, v1 = cfg.joint_dim, cfg.vocab_size + 1
        self.w_enc = tl.parameter(_init(rng, enc_dim, d))
        self.b_enc = tl.parameter(np.zeros(d))
        self.w_pre = tl.parameter(_init(rng, pre_dim, d))
        self.b_pre = tl.parameter(np.zeros(d))
        self.w_out = tl.parameter(_init(rng, d, v1))
        self.b_out = tl.parameter(np.zeros(v1))

    def parameters(self) -> dict:
        return {"jointer.w_enc": self.w_enc, "jointer.b_enc": self.b_enc,
                "jointer.w_pre": self.w_pre, "jointer.b_pre": self.b_pre,
                "jointer.w_out": self.w_out, "jointer.b_out": self.b_out}

    def project_enc(self, h_enc: tl.GraphValue) -> tl.GraphValue:
        return tl.affine(h_enc, self.w_enc, self.b_enc)

    def project_pre(self, h_pre: tl.GraphValue) -> tl.GraphValue:
        return tl.affine(h_pre, self.w_pre, self.b_pre)

    def forward(self, h_enc: tl.GraphValue, h_pre: tl.GraphValue,
                normalize: bool | None = None) -> tl.GraphValue:
        """Joint-dim inputs [T, d] and [U+1, d] to logits [T, U+1, V+1]."""
        if h_enc.shape[-1] != self.cfg.joint_dim or h_pre.shape[-1] != self.cfg.joint_dim:
            raise DimensionError(
                f"joint width mismatch: {h_enc.shape} / {h_pre.shape}, "
                f"expected last dim {self.cfg.joint_dim}")
        normalize = self.cfg.normalize if normalize is None else normalize
        if normalize:
            T = h_enc.shape[0]
            U = h_pre.shape[0] - 1
            h_enc = tl.inverse_scale_grad(h_enc, encoder_divisor(self.cfg, U))
            h_pre = tl.inverse_scale_grad(h_pre, float(T))
        combined = tl.tanh(tl.outer_add(h_enc, h_pre))
        return tl.affine(combined, self.w_out, self.b_out)


def joint_forward(h_enc: np.ndarray, h_pre: np.ndarray,
                  w_out: np.ndarray, b_out: np.ndarray) -> np.ndarray:
    """Plain-array joint for oracles: FC(tanh(h_enc[t] + h_pre[u]))."""
    h_enc = np.asarray(h_enc, dtype=np.float64)
    h_pre = np.asarray(h_pre, dtype=np.float64)
    if h_enc.shape[-1] != h_pre.shape[-1]:
        raise DimensionError(f"width mismatch: {h_enc.shape} vs {h_pre.shape}")
    combined = np.tanh(h_enc[:, None, :] + h_pre[None, :, :])
    return combined @ w_out + b_out


def _init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))
