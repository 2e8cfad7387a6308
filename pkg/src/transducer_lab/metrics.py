"""Newline-delimited metrics records: one JSON object per line.

Every record carries ``run_id``, ``seed``, ``kind`` and ``step``. ``kind`` is
``"train"`` (loss, lr, grad norms, per-utterance grad stats) or ``"eval"``
(token error rate, exact-sequence accuracy).
"""

from __future__ import annotations

import json

from .errors import InputError

TRAIN_REQUIRED = {"run_id", "seed", "kind", "step", "loss", "lr", "grad_norm"}
EVAL_REQUIRED = {"run_id", "seed", "kind", "step", "token_error_rate",
                 "sequence_accuracy"}


class MetricsWriter:
    def __init__(self, path: str, run_id: str, seed: int):
        self.path = path
        self.run_id = run_id
        self.seed = seed
        self._fh = open(path, "w", encoding="utf-8")
        self._last_step = -1

    def write(self, kind: str, step: int, **fields) -> dict:
        if step < self._last_step:
            raise InputError(f"non-monotone step index {step} after {self._last_step}")
        self._last_step = step
        record = {"run_id": self.run_id, "seed": self.seed,
                  "kind": kind, "step": step, **fields}
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()
        return record

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path: str) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: bad metrics line: {exc}") from exc
    return records


def validate_record(record: dict) -> None:
    kind = record.get("kind")
    if kind == "train":
        required = TRAIN_REQUIRED
    elif kind == "eval":
        required = EVAL_REQUIRED
    else:
        raise InputError(f"unknown metrics record kind {kind!r}")
    missing = required - set(record)
    if missing:
        raise InputError(f"metrics record missing fields: {sorted(missing)}")


def validate_file(path: str) -> list[dict]:
    records = read_metrics(path)
    last = -1
    for record in records:
        validate_record(record)
        if record["step"] < last:
            raise InputError("metrics steps are not monotone")
        last = record["step"]
    return records
