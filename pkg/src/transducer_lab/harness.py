"""Synthetic tasks, optimizer, training loop, decoding and evaluation."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tl
from .checkpoint import save_checkpoint
from .errors import ConfigError, InputError, NumericError
from .metrics import MetricsWriter
from .model import TransducerModel

EVAL_SEED_OFFSET = 900_001   # keeps eval draws disjoint from training draws


@dataclass
class ToyTask:
    """Copy-style task: each token emits a noisy burst of its feature vector.

    A fixed random embedding per seed maps tokens to feature vectors, so the
    mapping is learnable; generation is deterministic given (seed, offset).
    """
    vocab: int = 8
    u_min: int = 2
    u_max: int = 6
    frames_min: int = 3
    frames_max: int = 5
    feature_dim: int = 8
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.vocab < 1:
            raise ConfigError("vocab must be >= 1")
        if not (1 <= self.u_min <= self.u_max):
            raise ConfigError(f"bad U range [{self.u_min}, {self.u_max}]")
        if not (1 <= self.frames_min <= self.frames_max):
            raise ConfigError(f"bad frames-per-token range "
                              f"[{self.frames_min}, {self.frames_max}]")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        emb_rng = np.random.default_rng(self.seed)
        # rows 1..V are token prototypes; row 0 unused (blank never emits)
        self.token_features = emb_rng.normal(size=(self.vocab + 1, self.feature_dim))


def generate_batch(task: ToyTask, n: int, offset: int = 0):
    """Deterministic ragged batch of (features [T_raw, f], labels [U])."""
    if n < 1:
        raise ConfigError("batch size must be >= 1")
    rng = np.random.default_rng((task.seed, offset))
    batch = []
    for _ in range(n):
        U = int(rng.integers(task.u_min, task.u_max + 1))
        labels = rng.integers(1, task.vocab + 1, size=U)
        frames = [task.token_features[tok]
                  for tok in labels
                  for _ in range(int(rng.integers(task.frames_min,
                                                  task.frames_max + 1)))]
        features = np.stack(frames) + task.noise * rng.normal(
            size=(len(frames), task.feature_dim))
        batch.append((features, labels.astype(np.int64)))
    return batch


@dataclass
class TrainConfig:
    batch: int = 8
    steps: int = 600
    warmup: int = 300
    init_lr: float = 1e-7
    peak_lr: float = 5e-4
    floor_lr: float = 1e-5
    decay: float = 0.98
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_interval: int = 50
    eval_size: int = 32
    normalize: bool = False
    seed: int = 0
    max_symbols_per_frame: int = 5

    def __post_init__(self):
        if self.warmup < 1:
            raise ConfigError("warmup_steps must be >= 1")
        if not (0 < self.floor_lr <= self.peak_lr):
            raise ConfigError("need 0 < floor_lr <= peak_lr")


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear rise to the peak over warmup, then exponential decay with floor."""
    if step < 1:
        raise InputError("step must be >= 1")
    if step <= cfg.warmup:
        frac = (step - 1) / max(cfg.warmup - 1, 1)
        return cfg.init_lr + frac * (cfg.peak_lr - cfg.init_lr)
    lr = cfg.peak_lr * cfg.decay ** ((step - cfg.warmup) / cfg.warmup)
    return max(lr, cfg.floor_lr)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Standard bias-corrected Adam update over named GraphValue parameters."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NumericError(f"NaN/Inf gradient for parameter {name!r}")
        m = state.m.setdefault(name, np.zeros_like(p.value))
        v = state.v.setdefault(name, np.zeros_like(p.value))
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        p.value -= lr * mhat / (np.sqrt(vhat) + eps)


def levenshtein(a, b) -> int:
    """Edit distance between two token sequences."""
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1,
                           prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def greedy_decode(model: TransducerModel, features: np.ndarray,
                  max_symbols_per_frame: int = 5):
    """Frame-synchronous greedy decoding with a per-frame emission cap."""
    from .predictor import SegmentMemory

    h_enc = model.jointer.project_enc(model.encoder.encode(features)).value
    mem = SegmentMemory.empty(model.predictor.cfg.layers, model.predictor.cfg.dim)
    h_start, mem = model.predictor.predict([], mem, update_memory=True)
    h_pre = model.jointer.project_pre(h_start).value[-1]
    w_out, b_out = model.jointer.w_out.value, model.jointer.b_out.value

    output = []
    for t in range(h_enc.shape[0]):
        for _ in range(max_symbols_per_frame):
            logits = np.tanh(h_enc[t] + h_pre) @ w_out + b_out
            sym = int(np.argmax(logits))
            if sym == 0:
                break
            output.append(sym)
            h_step, mem = model.predictor.predict([sym], mem, update_memory=True)
            h_pre = model.jointer.project_pre(h_step).value[-1]
    return output


def evaluate(model: TransducerModel, task: ToyTask, n_eval: int,
             max_symbols_per_frame: int = 5, compute_loss: bool = False):
    """Token error rate and exact-sequence accuracy on a held-out draw."""
    batch = generate_batch(task, n_eval, offset=EVAL_SEED_OFFSET)
    edits = ref_tokens = exact = 0
    loss_total = 0.0
    for features, labels in batch:
        hyp = greedy_decode(model, features, max_symbols_per_frame)
        edits += levenshtein(hyp, labels.tolist())
        ref_tokens += len(labels)
        exact += int(hyp == labels.tolist())
        if compute_loss:
            loss, _ = model.utterance_loss(features, labels, normalize=False)
            loss_total += float(loss.value)
    ter = edits / max(ref_tokens, 1)
    result = {"token_error_rate": ter,
              "sequence_accuracy": exact / len(batch)}
    if compute_loss:
        result["eval_loss"] = loss_total / len(batch)
    return result


def train(task: ToyTask, model: TransducerModel, cfg: TrainConfig,
          out_dir: str, run_id: str, config_snapshot: dict | None = None):
    """Full training loop; writes metrics and checkpoints under ``out_dir``.

    Returns (records, final_checkpoint_path, best_checkpoint_path).
    """
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, f"{run_id}.metrics.jsonl")
    final_ckpt = os.path.join(out_dir, f"{run_id}.final.ckpt")
    best_ckpt = os.path.join(out_dir, f"{run_id}.best.ckpt")
    snapshot = config_snapshot or {}
    params = model.parameters()
    state = AdamState()
    best_ter = np.inf
    records = []

    with MetricsWriter(metrics_path, run_id, cfg.seed) as writer:
        for step in range(1, cfg.steps + 1):
            batch = generate_batch(task, cfg.batch, offset=step)
            tl.zero_grads(params.values())
            loss, taps = model.batch_loss(batch, normalize=cfg.normalize)
            tl.backward(loss)
            lr = lr_schedule(step, cfg)
            stats = model.grad_stats(taps, step)
            grad_norm = float(np.sqrt(sum(np.sum(p.grad ** 2)
                                          for p in params.values())))
            try:
                adam_step(params, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            except NumericError:
                # divergence: stop, keep the last-good checkpoint on disk
                save_checkpoint(final_ckpt, _values(params), snapshot)
                raise
            records.append(writer.write(
                "train", step, loss=float(loss.value), lr=lr,
                grad_norm=grad_norm,
                grad_stats=[s.to_dict() for s in stats]))
            if step % cfg.eval_interval == 0 or step == cfg.steps:
                ev = evaluate(model, task, cfg.eval_size,
                              cfg.max_symbols_per_frame, compute_loss=True)
                records.append(writer.write("eval", step, **ev))
                if ev["token_error_rate"] < best_ter:
                    best_ter = ev["token_error_rate"]
                    save_checkpoint(best_ckpt, _values(params), snapshot)
        save_checkpoint(final_ckpt, _values(params), snapshot)
    return records, final_ckpt, best_ckpt


def _values(params: dict) -> dict:
    return {name: p.value for name, p in params.items()}
