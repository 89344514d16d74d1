import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beatquant.core import ScoreNote, ScoreSequence
from beatquant.metrics import aggregate, evaluate_corpus, nv_metrics, onset_f1
from beatquant.model.checkpoint import Checkpoint
from beatquant.model.transformer import ModelConfig, Seq2Seq

from conftest import random_score, synthetic_examples


def seq(*notes, measures=2):
    return ScoreSequence(tuple(ScoreNote(*n) for n in notes), measures)


REF = seq((60, 0, 12, 0), (64, 12, 12, 0), (67, 24, 24, 0), (72, 0, 48, 1))


def test_identity():
    p, r, f, pairs = onset_f1(REF, REF)
    assert (p, r, f, len(pairs)) == (1.0, 1.0, 1.0, 4)
    assert nv_metrics(pairs) == (1.0, 0.0)


def test_three_of_four():
    pred = seq((60, 0, 12, 0), (64, 12, 12, 0), (67, 24, 24, 0), (72, 6, 48, 1))
    p, r, f, _ = onset_f1(pred, REF)
    assert (p, r, f) == (0.75, 0.75, 0.75)


def test_duplicate_prediction_counted_once():
    pred = seq((60, 0, 12, 0), (60, 0, 12, 0))
    p, r, f, pairs = onset_f1(pred, seq((60, 0, 12, 0)))
    assert len(pairs) == 1 and p == 0.5 and r == 1.0


def test_empty_cases():
    assert onset_f1(seq(), seq())[:3] == (1.0, 1.0, 1.0)
    assert onset_f1(seq(), REF)[:3] == (0.0, 0.0, 0.0)
    assert nv_metrics([]) == (None, None)


def test_nv_mse_quarter_units():
    pairs = [(ScoreNote(60, 0, 24), ScoreNote(60, 0, 12))]
    assert nv_metrics(pairs) == (0.0, 1.0)


def test_nv_only_over_matched_notes():
    pred = seq((60, 0, 12, 0), (64, 12, 12, 0), (67, 24, 24, 0), (72, 0, 48, 1))
    dropped = seq((60, 0, 12, 0), (64, 12, 12, 0), (67, 24, 24, 0))
    a = aggregate([(pred, REF)])
    b = aggregate([(dropped, REF)])
    assert a.onset_f1 != b.onset_f1
    assert a.nv_accuracy == b.nv_accuracy == 1.0


def test_corpus_mse_is_mean_of_example_means():
    ex1 = (seq((60, 0, 24, 0)), seq((60, 0, 12, 0)))  # mse 1
    ex2 = (seq((60, 0, 12, 0), (62, 12, 12, 0)), seq((60, 0, 12, 0), (62, 12, 12, 0)))  # mse 0
    r = aggregate([ex1, ex2])
    assert r.nv_mse == 0.5
    assert r.nv_mse_global == pytest.approx(1 / 3)
    assert (r.true_positives, r.predicted, r.reference, r.matched, r.examples) == (3, 3, 3, 3, 2)
    assert json.loads(r.to_json())["nv_mse"] == 0.5


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000))
def test_properties(seed):
    rng = np.random.default_rng(seed)
    a = random_score(rng, max_measures=2, max_notes=10)
    b = random_score(rng, max_measures=2, max_notes=10)
    # reuse some notes so matches actually happen
    b = ScoreSequence(tuple(sorted(b.notes + a.notes[: len(a) // 2], key=lambda n: n.measure)),
                      max(a.measure_count, b.measure_count))
    p, r, f, pairs = onset_f1(a, b)
    key = lambda n: (n.measure, n.onset_ticks, n.pitch)
    tp = sum((Counter(map(key, a)) & Counter(map(key, b))).values())
    assert len(pairs) == tp
    p2, r2, f2, _ = onset_f1(b, a)
    assert (p, r, f) == pytest.approx((r2, p2, f2))
    perm = [a.notes[i] for i in rng.permutation(len(a))]
    assert onset_f1(perm, b)[:3] == (p, r, f)
    assert 0 <= f <= 1


def test_evaluate_corpus_checks_vocab_and_is_deterministic():

    cfg = ModelConfig(layers=1, heads=2, d_model=16, d_kv=8, d_ff=32, dropout=0.0)
    ckpt = Checkpoint(cfg, Seq2Seq(cfg).state_dict())
    examples = synthetic_examples(2)
    a = evaluate_corpus(ckpt, examples, beam=2)
    b = evaluate_corpus(ckpt, examples, beam=2)
    assert a == b and a.predicted == a.reference
    ckpt.vocab_version = "other"
    with pytest.raises(ValueError, match="vocabulary"):
        evaluate_corpus(ckpt, examples)
