"""Full transducer model: encoder + predictor + jointer + loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tl
from .encoder import Encoder, EncoderConfig
from .errors import InputError
from .jointer import JointConfig, Jointer, record_stats
from .predictor import Predictor, PredictorConfig
from .rnnt import rnnt_loss_graph


@dataclass
class GradTaps:
    """Graph nodes whose grads give the jointer-boundary gradients.

    ``*_before`` sees the raw grid sum (ahead of any rescaling);
    ``*_after`` sees what actually reaches the sub-network.
    """
    enc_before: tl.GraphValue
    enc_after: tl.GraphValue
    pre_before: tl.GraphValue
    pre_after: tl.GraphValue
    T: int
    U: int


class TransducerModel:
    def __init__(self, enc_cfg: EncoderConfig, pre_cfg: PredictorConfig,
                 joint_cfg: JointConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(enc_cfg, rng)
        self.predictor = Predictor(pre_cfg, rng)
        self.jointer = Jointer(enc_cfg.dim, pre_cfg.dim, joint_cfg, rng)

    def parameters(self) -> dict:
        out = {}
        out.update(self.encoder.parameters())
        out.update(self.predictor.parameters())
        out.update(self.jointer.parameters())
        return out

    def utterance_loss(self, features: np.ndarray, labels,
                       normalize: bool | None = None):
        """Loss graph for one utterance; returns (loss_node, taps)."""
        labels = np.asarray(labels, dtype=np.int64)
        h_enc = self.jointer.project_enc(self.encoder.encode(features))
        h_pre_raw, _ = self.predictor.predict(labels)
        h_pre = self.jointer.project_pre(h_pre_raw)

        cfg = self.jointer.cfg
        normalize = cfg.normalize if normalize is None else normalize
        T = h_enc.shape[0]
        U = labels.size
        if normalize:
            from .jointer import encoder_divisor
            enc_mid = tl.inverse_scale_grad(h_enc, encoder_divisor(cfg, U))
            pre_mid = tl.inverse_scale_grad(h_pre, float(T))
        else:
            enc_mid, pre_mid = h_enc, h_pre
        combined = tl.tanh(tl.outer_add(enc_mid, pre_mid))
        logits = tl.affine(combined, self.jointer.w_out, self.jointer.b_out)
        loss = rnnt_loss_graph(logits, labels)
        taps = GradTaps(enc_before=enc_mid, enc_after=h_enc,
                        pre_before=pre_mid, pre_after=h_pre, T=T, U=U)
        return loss, taps

    def batch_loss(self, batch, normalize: bool | None = None):
        """Mean per-utterance loss over a ragged batch of (features, labels)."""
        if not batch:
            raise InputError("empty batch")
        losses, taps = [], []
        for features, labels in batch:
            loss, tap = self.utterance_loss(features, labels, normalize=normalize)
            losses.append(loss)
            taps.append(tap)
        total = losses[0]
        for l in losses[1:]:
            total = tl.add(total, l)
        return tl.scale(total, 1.0 / len(batch)), taps

    def grad_stats(self, taps, step: int):
        return [record_stats(step, tap.T, tap.U,
                             tap.enc_before.grad, tap.pre_before.grad,
                             tap.enc_after.grad, tap.pre_after.grad)
                for tap in taps]
