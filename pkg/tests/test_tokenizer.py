import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beatquant.core import ScoreNote, ScoreSequence
from beatquant.tokenizer import (
    EOS,
    NEW_MEASURE,
    PAD,
    VOCAB_SIZE,
    DecodeError,
    EncodeError,
    TokenSeq,
    category,
    decode,
    decode_with_repairs,
    encode,
    onset_token,
    pitch_token,
    token_to_tuple,
    tuple_to_token,
    value_token,
)


def test_layout():
    assert (PAD, EOS, NEW_MEASURE) == (0, 1, 2)
    assert pitch_token(21) == 3 and pitch_token(108) == 90
    assert onset_token(0) == 91 and onset_token(47) == 138
    assert value_token(1) == 139 and value_token(48) == 186
    assert VOCAB_SIZE == 187


def test_category_counts():
    counts = {}
    for t in range(VOCAB_SIZE):
        counts[category(t)] = counts.get(category(t), 0) + 1
    assert counts == {"pad": 1, "eos": 1, "new_measure": 1, "pitch": 88, "onset": 48, "value": 48}
    with pytest.raises(ValueError):
        category(VOCAB_SIZE)


def test_tuple_bijection():
    assert [tuple_to_token(*token_to_tuple(t)) for t in range(VOCAB_SIZE)] == list(range(VOCAB_SIZE))


def test_encode_example():
    seq = ScoreSequence((ScoreNote(60, 0, 12, 0), ScoreNote(64, 12, 36, 0), ScoreNote(67, 0, 48, 1)), 2)
    ids = encode(seq).ids
    assert ids == (
        pitch_token(60), onset_token(0), value_token(12),
        pitch_token(64), onset_token(12), value_token(36),
        NEW_MEASURE,
        pitch_token(67), onset_token(0), value_token(48),
        EOS,
    )
    assert decode(ids) == seq


def test_empty_and_trailing_measures():
    assert encode(ScoreSequence((), 1)).ids == (EOS,)
    assert encode(ScoreSequence((), 3)).ids == (NEW_MEASURE, NEW_MEASURE, EOS)
    seq = ScoreSequence((ScoreNote(60, 0, 12, 1),), 4)
    assert encode(seq).ids.count(NEW_MEASURE) == 3
    assert decode(encode(seq)) == seq


def test_encode_with_first_measure():
    notes = [ScoreNote(60, 0, 12, 5), ScoreNote(62, 0, 12, 6)]
    ids = encode(notes, measure_count=2, first_measure=5).ids
    assert ids.count(NEW_MEASURE) == 1
    with pytest.raises(EncodeError):
        encode(notes, measure_count=1, first_measure=5)
    with pytest.raises(EncodeError):
        encode(list(reversed(notes)))


def test_strict_decode_errors():
    with pytest.raises(DecodeError) as info:
        decode([pitch_token(60), pitch_token(60), value_token(3), EOS])
    assert info.value.position == 1
    with pytest.raises(DecodeError, match="EOS inside"):
        decode([pitch_token(60), EOS])
    with pytest.raises(DecodeError, match="missing EOS"):
        decode([pitch_token(60), onset_token(0), value_token(3)])
    with pytest.raises(DecodeError, match="after EOS"):
        decode([EOS, pitch_token(60)])
    # trailing padding is fine
    assert decode([EOS, PAD, PAD]) == ScoreSequence((), 1)


def test_lenient_decode_drops_wrong_slot_tokens():
    got = decode_with_repairs([42, 91, 91, 150, 1], strict=False)
    assert got.repairs == 1
    assert got.score.notes == (ScoreNote(60, 0, 12, 0),)


def test_lenient_decode_missing_eos_and_partial_note():
    got = decode_with_repairs([pitch_token(60), onset_token(0), value_token(3), pitch_token(61)], strict=False)
    assert len(got.score) == 1 and got.repairs == 2


def test_token_text_round_trip():
    seq = encode(ScoreSequence((ScoreNote(60, 0, 12, 0),), 2))
    assert TokenSeq.from_text(seq.to_text()) == seq
    with pytest.raises(ValueError):
        TokenSeq((VOCAB_SIZE,))


notes_st = st.builds(
    lambda p, o, v, m: (p, o, v, m),
    st.integers(21, 108), st.integers(0, 47), st.integers(1, 48), st.integers(0, 3),
)


@settings(max_examples=300, deadline=None)
@given(st.lists(notes_st, max_size=20), st.integers(0, 3))
def test_round_trip_property(raw, extra):
    raw = sorted(raw, key=lambda n: n[3])
    count = max([n[3] for n in raw], default=0) + 1 + extra
    seq = ScoreSequence(tuple(ScoreNote(*n) for n in raw), count)
    assert decode(encode(seq)) == seq


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, VOCAB_SIZE - 1), max_size=40))
def test_lenient_decode_never_raises(ids):
    got = decode_with_repairs(ids, strict=False)
    assert got.repairs >= 0
    # whatever survives is a valid sequence that encodes again
    assert decode(encode(got.score)) == got.score


def test_single_note_ids():
    assert encode(ScoreSequence((ScoreNote(60, 0, 12, 0),), 1)).ids == (42, 91, 150, 1)


def test_onset_first_rejected_at_position_zero():
    with pytest.raises(DecodeError) as info:
        decode([91, 42, 150, 1])
    assert info.value.position == 0


def test_encoded_length_formula():
    seq = ScoreSequence(tuple(ScoreNote(60, 0, 12, m) for m in range(3) for _ in range(2)), 3)
    assert len(encode(seq)) == 3 * 6 + (3 - 1) + 1
