"""Command-line interface.

Exit codes: 0 success, 1 check/assertion failure, 2 usage or I/O error.
Every command is deterministic given its flags and seed; the environment
variable ``TRANSDUCER_LAB_SEED`` is the seed fallback when no flag is given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import ConfigError, InputError, TransducerError

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


def _default_seed() -> int:
    return int(os.environ.get("TRANSDUCER_LAB_SEED", "0"))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="transducer-lab",
        description="Desk-scale neural transducer laboratory")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap (default 1 for reproducibility)")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    g.add_argument("--scope", default="all",
                   choices=["loss", "encoder", "predictor", "joint", "all"])
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--tol", type=float, default=1e-4)

    o = sub.add_parser("loss-oracle",
                       help="compare the DP loss against path enumeration")
    o.add_argument("--instances", type=int, default=200)
    o.add_argument("--seed", type=int, default=None)
    o.add_argument("--tol", type=float, default=1e-9)

    v = sub.add_parser("variance-study",
                       help="gradient-variance amplification measurements")
    v.add_argument("--umax", type=int, default=64)
    v.add_argument("--trials", type=int, default=10000)
    v.add_argument("--seed", type=int, default=None)
    v.add_argument("--out", default="out")

    for name in ("train", "eval", "decode"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE")
        p.add_argument("--out", default="out")
        if name == "train":
            p.add_argument("--run-id", default=None)
        else:
            p.add_argument("--ckpt", required=True)
        if name == "decode":
            p.add_argument("--n", type=int, default=8,
                           help="number of held-out utterances to decode")

    r = sub.add_parser("report", help="render figures from metrics files")
    r.add_argument("metrics", nargs="+")
    r.add_argument("--out", default="out")
    return parser


def _load_config(args):
    from .config import apply_overrides, default_config, load_config_file
    cfg = default_config()
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise InputError(f"config file not found: {args.config}")
        cfg = load_config_file(args.config, cfg)
    apply_overrides(cfg, args.overrides)
    if "seed" not in [k.split("=")[0] for k in args.overrides] and not args.config:
        cfg["seed"] = cfg["seed"] or _default_seed()
    return cfg


def cmd_gradcheck(args) -> int:
    from .checks import run_gradcheck
    seed = args.seed if args.seed is not None else _default_seed()
    results = run_gradcheck(args.scope, seed)
    failed = False
    for name, err in results:
        status = "pass" if err < args.tol else "FAIL"
        if err >= args.tol:
            failed = True
        print(f"[{status}] {name}: max rel err {err:.3e} (tol {args.tol:g})")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_loss_oracle(args) -> int:
    from .rnnt import PosteriorGrid, oracle_loss, rnnt_loss
    seed = args.seed if args.seed is not None else _default_seed()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(args.instances):
        T = int(rng.integers(1, 6))
        U = int(rng.integers(0, 5))
        V = int(rng.integers(1, 4))
        logits = rng.normal(size=(T, U + 1, V + 1))
        labels = rng.integers(1, V + 1, size=U)
        loss, _ = rnnt_loss(logits, labels)
        oracle = oracle_loss(PosteriorGrid.from_logits(logits), labels)
        rel = abs(loss - oracle) / max(abs(oracle), 1e-12)
        worst = max(worst, rel)
    status = "pass" if worst < args.tol else "FAIL"
    print(f"[{status}] loss vs oracle over {args.instances} instances: "
          f"max rel err {worst:.3e} (tol {args.tol:g})")
    return EXIT_OK if worst < args.tol else EXIT_CHECK_FAILED


def cmd_variance_study(args) -> int:
    from .config import build_model, default_config
    from .report import plot_variance_study
    from .variance import run_variance_study
    if args.umax < 2:
        raise ConfigError("--umax must be >= 2")
    seed = args.seed if args.seed is not None else _default_seed()
    cfg = default_config()
    cfg["seed"] = seed
    model = build_model(cfg)
    records = run_variance_study(args.umax, args.trials, seed, model=model)
    os.makedirs(args.out, exist_ok=True)
    out_jsonl = os.path.join(args.out, "variance_study.jsonl")
    with open(out_jsonl, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    fig = plot_variance_study(records, os.path.join(args.out, "variance_study.png"))
    print(f"wrote {out_jsonl} and {fig}")
    for record in records:
        if "positions" in record:
            print(f"  count {record['positions']:3d}: "
                  f"ratio {record['synthetic_ratio_before']:.2f} "
                  f"(expect {record['expected_before']:.0f}), normalized "
                  f"{record['synthetic_ratio_after']:.4f} "
                  f"(expect {record['expected_after']:.4f})")
        else:
            print(f"  real-gradient rank corr before {record['rank_corr_before']:.3f} "
                  f"after {record['rank_corr_after']:.3f}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .config import build_model, build_task, build_train_config
    from .harness import train
    cfg = _load_config(args)
    model = build_model(cfg)
    task = build_task(cfg)
    tc = build_train_config(cfg)
    run_id = args.run_id or f"run-seed{cfg['seed']}" + (
        "-norm" if cfg["jointer.normalize"] else "-base")
    records, final_ckpt, best_ckpt = train(task, model, tc, args.out, run_id,
                                           config_snapshot=cfg)
    evals = [r for r in records if r["kind"] == "eval"]
    last = evals[-1] if evals else {}
    print(f"finished {tc.steps} steps; final token error "
          f"{last.get('token_error_rate', float('nan')):.3f}; "
          f"checkpoints: {final_ckpt}, {best_ckpt}")
    return EXIT_OK


def _restore(args):
    from .checkpoint import restore_model
    if not os.path.exists(args.ckpt):
        raise InputError(f"checkpoint not found: {args.ckpt}")
    return restore_model(args.ckpt)


def cmd_eval(args) -> int:
    from .config import build_task
    from .harness import evaluate
    model, cfg = _restore(args)
    from .config import apply_overrides
    apply_overrides(cfg, args.overrides)
    task = build_task(cfg)
    result = evaluate(model, task, cfg["train.eval_size"],
                      cfg["train.max_symbols_per_frame"])
    print(f"token error rate {result['token_error_rate']:.4f}  "
          f"sequence accuracy {result['sequence_accuracy']:.4f}")
    return EXIT_OK


def cmd_decode(args) -> int:
    from .config import apply_overrides, build_task
    from .harness import generate_batch, greedy_decode, EVAL_SEED_OFFSET
    model, cfg = _restore(args)
    apply_overrides(cfg, args.overrides)
    task = build_task(cfg)
    batch = generate_batch(task, args.n, offset=EVAL_SEED_OFFSET)
    for i, (features, labels) in enumerate(batch):
        hyp = greedy_decode(model, features, cfg["train.max_symbols_per_frame"])
        print(f"utt {i}: ref {labels.tolist()} hyp {hyp}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .metrics import validate_file
    from .report import plot_error_curves, plot_training_curves
    for path in args.metrics:
        if not os.path.exists(path):
            raise InputError(f"metrics file not found: {path}")
        validate_file(path)
    os.makedirs(args.out, exist_ok=True)
    losses = plot_training_curves(args.metrics,
                                  os.path.join(args.out, "loss_curves.png"))
    errors = plot_error_curves(args.metrics,
                               os.path.join(args.out, "error_curves.png"))
    print(f"wrote {losses} and {errors}")
    return EXIT_OK


_COMMANDS = {
    "gradcheck": cmd_gradcheck,
    "loss-oracle": cmd_loss_oracle,
    "variance-study": cmd_variance_study,
    "train": cmd_train,
    "eval": cmd_eval,
    "decode": cmd_decode,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TransducerError as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
