import numpy as np
import pytest
import torch

from beatquant.core import ScoreNote, ScoreSequence
from beatquant.model.decode import beam_decode, greedy_decode, legal_mask
from beatquant.model.transformer import ModelConfig, Seq2Seq
from beatquant.tokenizer import EOS, NEW_MEASURE, ONSET_OFFSET, PITCH_OFFSET, VALUE_OFFSET, decode, encode

from conftest import random_score

SMALL = ModelConfig(layers=1, heads=2, d_model=16, d_kv=8, d_ff=32, dropout=0.0)


def test_legal_mask_phases():
    m = legal_mask(0, 0, 1, 2, 2)
    assert m[PITCH_OFFSET:ONSET_OFFSET].all() and m[NEW_MEASURE] and not m[EOS]
    m = legal_mask(0, 2, 2, 2, 2)
    assert m[EOS] and not m[NEW_MEASURE] and not m[PITCH_OFFSET:ONSET_OFFSET].any()
    m = legal_mask(1, 0, 1, 2, 2, max_onset=35)
    assert m.sum() == 36 and m[ONSET_OFFSET + 35] and not m[ONSET_OFFSET + 36]
    m = legal_mask(2, 0, 1, 2, 2)
    assert m.sum() == 48 and m[VALUE_OFFSET:].all()


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(3)
    return Seq2Seq(SMALL).eval()


def test_outputs_respect_grammar(model):
    rng = np.random.default_rng(0)
    for _ in range(25):
        src = random_score(rng, max_measures=2, max_notes=8)
        out = beam_decode(model, encode(src), beam=3, expected_notes=len(src), measure_budget=src.measure_count)
        got = decode(out, strict=True)
        assert len(got) == len(src)
        assert got.measure_count <= src.measure_count


def test_beam_one_equals_greedy(model):
    rng = np.random.default_rng(1)
    for _ in range(10):
        src = random_score(rng, max_measures=2, max_notes=6)
        kw = dict(expected_notes=len(src), measure_budget=src.measure_count)
        assert beam_decode(model, encode(src), beam=1, **kw) == greedy_decode(model, encode(src), **kw)


def test_empty_input_emits_eos_only(model):
    out = beam_decode(model, encode(ScoreSequence((), 1)), expected_notes=0, measure_budget=1)
    assert out.ids == (EOS,)


def test_onset_limit(model):
    src = ScoreSequence(tuple(ScoreNote(60, 0, 12, 0) for _ in range(6)), 1)
    out = decode(beam_decode(model, encode(src), expected_notes=6, measure_budget=1, max_onset=11))
    assert all(n.onset_ticks <= 11 for n in out)


def test_argument_checks(model):
    with pytest.raises(ValueError):
        beam_decode(model, [EOS], beam=0)
    with pytest.raises(ValueError):
        beam_decode(model, [EOS], measure_budget=0)


def test_deterministic(model):
    src = encode(ScoreSequence((ScoreNote(60, 0, 12, 0), ScoreNote(64, 12, 12, 0)), 2))
    a = beam_decode(model, src, expected_notes=2, measure_budget=2)
    b = beam_decode(model, src, expected_notes=2, measure_budget=2)
    assert a == b
