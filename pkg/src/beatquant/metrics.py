"""Onset F1, note-value accuracy and note-value MSE."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .core import TICKS_PER_QUARTER, ScoreNote, ScoreSequence
from .tokenizer import VOCAB_VERSION, decode, decode_with_repairs


@dataclass
class EvalReport:
    onset_precision: float
    onset_recall: float
    onset_f1: float
    # None when no onset matched at all
    nv_accuracy: float | None
    nv_mse: float | None
    # mean over all matched notes instead of per example
    nv_mse_global: float | None = None
    true_positives: int = 0
    predicted: int = 0
    reference: int = 0
    matched: int = 0
    examples: int = 0
    vocab_version: str = ""
    repairs: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def prf(tp: int, n_pred: int, n_ref: int) -> tuple[float, float, float]:
    if n_pred == 0 and n_ref == 0:
        return 1.0, 1.0, 1.0
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_ref if n_ref else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def onset_f1(
    pred: ScoreSequence | Sequence[ScoreNote],
    ref: ScoreSequence | Sequence[ScoreNote],
) -> tuple[float, float, float, list[tuple[ScoreNote, ScoreNote]]]:
    """Exact (measure, onset, pitch) multiset matching.

    Each reference note is consumed by at most one prediction; pairs are
    formed in sequence order within each key.
    """
    pred, ref = list(pred), list(ref)
    pool: dict[tuple, list[ScoreNote]] = defaultdict(list)
    for r in ref:
        pool[(r.measure, r.onset_ticks, r.pitch)].append(r)
    pairs = []
    for p in pred:
        bucket = pool.get((p.measure, p.onset_ticks, p.pitch))
        if bucket:
            pairs.append((p, bucket.pop(0)))
    precision, recall, f1 = prf(len(pairs), len(pred), len(ref))
    return precision, recall, f1, pairs


def nv_metrics(pairs: Iterable[tuple[ScoreNote, ScoreNote]]) -> tuple[float | None, float | None]:
    """(accuracy, MSE in squared quarter notes); both None when there are no pairs."""
    pairs = list(pairs)
    if not pairs:
        return None, None
    exact = sum(p.value_ticks == r.value_ticks for p, r in pairs)
    mse = sum(((p.value_ticks - r.value_ticks) / TICKS_PER_QUARTER) ** 2 for p, r in pairs)
    return exact / len(pairs), mse / len(pairs)


def aggregate(results: Sequence[tuple[ScoreSequence, ScoreSequence]], vocab_version: str = "") -> EvalReport:
    """Corpus report: F1 from global counts, MSE averaged per example then across examples."""
    tp = n_pred = n_ref = 0
    all_pairs = []
    per_example_mse = []
    for pred, ref in results:
        _, _, _, pairs = onset_f1(pred, ref)
        tp += len(pairs)
        n_pred += len(pred)
        n_ref += len(ref)
        all_pairs.extend(pairs)
        _, mse = nv_metrics(pairs)
        if mse is not None:
            per_example_mse.append(mse)
    precision, recall, f1 = prf(tp, n_pred, n_ref)
    acc, mse_global = nv_metrics(all_pairs)
    mse = sum(per_example_mse) / len(per_example_mse) if per_example_mse else None
    return EvalReport(
        precision, recall, f1, acc, mse, mse_global,
        true_positives=tp, predicted=n_pred, reference=n_ref,
        matched=len(all_pairs), examples=len(results), vocab_version=vocab_version,
    )


def evaluate_corpus(checkpoint, examples, beam: int = 5) -> EvalReport:
    """Decode every example with the checkpoint's model and score it."""
    from .model.decode import beam_decode

    if checkpoint.vocab_version != VOCAB_VERSION:
        raise ValueError(
            f"vocabulary mismatch: checkpoint {checkpoint.vocab_version}, code {VOCAB_VERSION}"
        )
    model = checkpoint.build_model()
    results = []
    repairs = 0
    for ex in examples:
        src = decode(ex.input_tokens)
        out = beam_decode(model, ex.input_tokens, beam=beam, expected_notes=len(src),
                          measure_budget=src.measure_count)
        decoded = decode_with_repairs(out, strict=False)
        repairs += decoded.repairs
        results.append((decoded.score, decode(ex.target_tokens)))
    report = aggregate(results, VOCAB_VERSION)
    report.repairs = repairs
    return report

