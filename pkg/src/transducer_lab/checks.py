"""Finite-difference check suites used by the CLI and the tests."""

from __future__ import annotations

import numpy as np

from . import tensor as tl
from .config import default_config, build_model
from .gradcheck import max_rel_error
from .rnnt import rnnt_loss, PosteriorGrid, log_total_probability


def _loss_checks(seed: int):
    rng = np.random.default_rng(seed)
    results = []
    for T, U, V in ((4, 3, 3), (3, 2, 2), (5, 1, 4)):
        logits = rng.normal(size=(T, U + 1, V + 1))
        labels = rng.integers(1, V + 1, size=U)
        _, d = rnnt_loss(logits, labels)

        def f(x):
            return rnnt_loss(x, labels)[0]

        err, idx = max_rel_error(f, logits, d, rng=rng)
        results.append((f"loss T={T} U={U} V={V} (worst at {idx})", err))
    return results


def _encoder_checks(seed: int):
    from .encoder import Encoder, EncoderConfig
    rng = np.random.default_rng(seed)
    cfg = EncoderConfig(layers=1, dim=8, heads=2, ff_dim=12, conv_kernel=3,
                        subsample=2, feature_dim=4)
    enc = Encoder(cfg, rng)
    feats = rng.normal(size=(6, 4))
    params = enc.parameters()
    # random output weighting: a plain sum through the final layernorm has a
    # degenerate (near-zero) gradient
    w = tl.constant(rng.normal(size=(3, 8)))

    def run():
        return float(tl.sum_all(tl.mul(enc.encode(feats), w)).value)

    results = []
    for name in ("encoder.frontend.conv0", "encoder.block0.attn.q.w",
                 "encoder.block0.conv_kernel", "encoder.block0.ln_att.gain"):
        p = params[name]
        tl.zero_grads(params.values())
        tl.backward(tl.sum_all(tl.mul(enc.encode(feats), w)))
        analytic = p.grad.copy()

        def f(x):
            return run()

        err, idx = max_rel_error(f, p.value, analytic, sample=24, rng=rng)
        results.append((f"encoder {name} (worst at {idx})", err))
    return results


def _predictor_checks(seed: int):
    from .predictor import Predictor, PredictorConfig
    rng = np.random.default_rng(seed)
    cfg = PredictorConfig(layers=1, dim=8, heads=2, ff_dim=12, memory=4,
                          vocab_size=5)
    pred = Predictor(cfg, rng)
    labels = [2, 4, 1]
    params = pred.parameters()
    w = tl.constant(rng.normal(size=(4, 8)))

    def run():
        return float(tl.sum_all(tl.mul(pred.predict(labels)[0], w)).value)

    results = []
    for name in ("predictor.embedding", "predictor.layer0.attn.q.w",
                 "predictor.layer0.attn.u_bias", "predictor.layer0.attn.r.w"):
        p = params[name]
        tl.zero_grads(params.values())
        tl.backward(tl.sum_all(tl.mul(pred.predict(labels)[0], w)))
        analytic = p.grad.copy()

        def f(x):
            return run()

        err, idx = max_rel_error(f, p.value, analytic, sample=24, rng=rng)
        results.append((f"predictor {name} (worst at {idx})", err))
    return results


def _joint_checks(seed: int):
    from .jointer import JointConfig, Jointer
    rng = np.random.default_rng(seed)
    cfg = JointConfig(joint_dim=6, vocab_size=4)
    joint = Jointer(enc_dim=6, pre_dim=6, cfg=cfg, rng=rng)
    he = tl.constant(rng.normal(size=(3, 6)))
    hp = tl.constant(rng.normal(size=(4, 6)))
    params = joint.parameters()

    results = []
    for name in ("jointer.w_out", "jointer.b_out"):
        p = params[name]
        tl.zero_grads(list(params.values()) + [he, hp])
        tl.backward(tl.sum_all(joint.forward(he, hp)))
        analytic = p.grad.copy()

        def f(x):
            return float(tl.sum_all(joint.forward(he, hp)).value)

        err, idx = max_rel_error(f, p.value, analytic, rng=rng)
        results.append((f"joint {name} (worst at {idx})", err))
    return results


def end_to_end_check(seed: int, sample_per_param: int = 4):
    """Whole-model loss gradient vs finite differences at reduced desk dims."""
    cfg = default_config()
    cfg.update({"seed": seed, "encoder.dim": 8, "encoder.heads": 2,
                "encoder.ff_dim": 12, "encoder.conv_kernel": 3,
                "encoder.subsample": 2, "predictor.dim": 8,
                "predictor.ff_dim": 12, "jointer.dim": 8,
                "task.feature_dim": 4, "task.vocab": 4})
    model = build_model(cfg)
    rng = np.random.default_rng(seed + 1)
    features = rng.normal(size=(6, 4))
    labels = rng.integers(1, 5, size=3)
    params = model.parameters()

    tl.zero_grads(params.values())
    loss, _ = model.utterance_loss(features, labels)
    tl.backward(loss)
    grads = {name: p.grad.copy() for name, p in params.items()}

    worst = 0.0
    worst_name = None
    for name, p in params.items():
        def f(x):
            l, _ = model.utterance_loss(features, labels)
            return float(l.value)

        err, idx = max_rel_error(f, p.value, grads[name],
                                 sample=sample_per_param, rng=rng)
        if err > worst:
            worst, worst_name = err, (name, idx)
    return worst, worst_name


def run_gradcheck(scope: str, seed: int):
    """Returns a list of (check name, max relative error)."""
    suites = {"loss": _loss_checks, "encoder": _encoder_checks,
              "predictor": _predictor_checks, "joint": _joint_checks}
    results = []
    scopes = list(suites) if scope == "all" else [scope]
    for s in scopes:
        results.extend(suites[s](seed))
    if scope == "all":
        err, where = end_to_end_check(seed)
        results.append((f"end-to-end (worst at {where})", err))
    return results
