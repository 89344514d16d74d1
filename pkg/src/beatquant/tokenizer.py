"""187-token vocabulary: structural tokens, pitch, measure onset, note value.

Layout::

    0        PAD
    1        EOS
    2        NEW_MEASURE
    3..90    pitch 21..108
    91..138  onset 0..47
    139..186 note value 1..48
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import MAX_ONSET, MAX_VALUE, PITCH_MAX, PITCH_MIN, ScoreNote, ScoreSequence

VOCAB_VERSION = "beatquant-vocab-1"

PAD = 0
EOS = 1
NEW_MEASURE = 2
PITCH_OFFSET = 3
ONSET_OFFSET = PITCH_OFFSET + (PITCH_MAX - PITCH_MIN + 1)  # 91
VALUE_OFFSET = ONSET_OFFSET + (MAX_ONSET + 1)  # 139
VOCAB_SIZE = VALUE_OFFSET + MAX_VALUE  # 187

PITCH, ONSET, VALUE = "pitch", "onset", "value"


class EncodeError(ValueError):
    pass


class DecodeError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"position {position}: {message}")
        self.position = position


def pitch_token(pitch: int) -> int:
    return PITCH_OFFSET + pitch - PITCH_MIN


def onset_token(onset: int) -> int:
    return ONSET_OFFSET + onset


def value_token(value: int) -> int:
    return VALUE_OFFSET + value - 1


def category(token: int) -> str:
    if token == PAD:
        return "pad"
    if token == EOS:
        return "eos"
    if token == NEW_MEASURE:
        return "new_measure"
    if PITCH_OFFSET <= token < ONSET_OFFSET:
        return PITCH
    if ONSET_OFFSET <= token < VALUE_OFFSET:
        return ONSET
    if VALUE_OFFSET <= token < VOCAB_SIZE:
        return VALUE
    raise ValueError(f"token id out of range: {token}")


def token_to_tuple(token: int) -> tuple[str, int]:
    """Map an id to ``(category, value)``."""
    kind = category(token)
    if kind == PITCH:
        return kind, token - PITCH_OFFSET + PITCH_MIN
    if kind == ONSET:
        return kind, token - ONSET_OFFSET
    if kind == VALUE:
        return kind, token - VALUE_OFFSET + 1
    return kind, 0


def tuple_to_token(kind: str, value: int = 0) -> int:
    if kind == PITCH:
        return pitch_token(value)
    if kind == ONSET:
        return onset_token(value)
    if kind == VALUE:
        return value_token(value)
    return {"pad": PAD, "eos": EOS, "new_measure": NEW_MEASURE}[kind]


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        for i in self.ids:
            if not 0 <= i < VOCAB_SIZE:
                raise ValueError(f"token id out of range: {i}")

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)

    def to_text(self) -> str:
        return " ".join(map(str, self.ids))

    @classmethod
    def from_text(cls, text: str) -> TokenSeq:
        return cls(tuple(int(t) for t in text.split()))


def encode(
    notes: ScoreSequence | Iterable,
    measure_count: int | None = None,
    first_measure: int | None = None,
) -> TokenSeq:
    """Encode notes carrying ``pitch``, ``onset_ticks``, ``value_ticks``, ``measure``.

    Measures are counted from ``first_measure`` (default: the first note's
    measure, or 0 for a ScoreSequence).  A
    ScoreSequence contributes ``measure_count - 1`` NEW_MEASURE tokens in
    total, so trailing and interior empty measures survive a round trip.
    """
    if isinstance(notes, ScoreSequence):
        measure_count = notes.measure_count
        notes = notes.notes
        first_measure = 0
    notes = list(notes)
    if first_measure is None:
        first_measure = notes[0].measure if notes else 0
    base = first_measure
    ids: list[int] = []
    current = 0
    for i, n in enumerate(notes):
        m = n.measure - base
        if m < current:
            raise EncodeError(f"note {i}: measure index decreases")
        if not PITCH_MIN <= n.pitch <= PITCH_MAX:
            raise EncodeError(f"note {i}: pitch {n.pitch} out of range")
        if not 0 <= n.onset_ticks <= MAX_ONSET:
            raise EncodeError(f"note {i}: onset {n.onset_ticks} out of range")
        if not 1 <= n.value_ticks <= MAX_VALUE:
            raise EncodeError(f"note {i}: value {n.value_ticks} out of range")
        ids.extend([NEW_MEASURE] * (m - current))
        current = m
        ids += [pitch_token(n.pitch), onset_token(n.onset_ticks), value_token(n.value_ticks)]
    if measure_count is not None:
        if measure_count - 1 < current:
            raise EncodeError(f"measure_count {measure_count} smaller than used measures")
        ids.extend([NEW_MEASURE] * (measure_count - 1 - current))
    ids.append(EOS)
    return TokenSeq(tuple(ids))


@dataclass(frozen=True)
class Decoded:
    score: ScoreSequence
    repairs: int = 0


def decode(tokens: TokenSeq | Sequence[int], strict: bool = True) -> ScoreSequence:
    return decode_with_repairs(tokens, strict).score


def decode_with_repairs(tokens: TokenSeq | Sequence[int], strict: bool = True) -> Decoded:
    """Parse ``[NEW_MEASURE*] pitch onset value`` groups until EOS.

    In lenient mode a token that does not fit the current slot is dropped
    and counted as a repair; the parser stays on the same slot.  A missing
    EOS or a truncated final note also count as repairs.
    """
    ids = tokens.ids if isinstance(tokens, TokenSeq) else tuple(tokens)
    slots = (PITCH, ONSET, VALUE)
    notes: list[ScoreNote] = []
    measure = 0
    slot = 0
    partial: list[int] = []
    repairs = 0
    ended = False

    for pos, tok in enumerate(ids):
        kind, val = token_to_tuple(tok)
        if kind == "eos":
            if slot != 0:
                if strict:
                    raise DecodeError(f"EOS inside a note, expected {slots[slot]}", pos)
                repairs += 1
            ended = True
            rest = ids[pos + 1:]
            if strict and any(t != PAD for t in rest):
                raise DecodeError("tokens after EOS", pos + 1)
            break
        if kind == "new_measure" and slot == 0:
            measure += 1
            continue
        if kind != slots[slot]:
            if strict:
                raise DecodeError(f"expected {slots[slot]} token, got {kind}", pos)
            repairs += 1
            continue
        partial.append(val)
        slot += 1
        if slot == 3:
            notes.append(ScoreNote(partial[0], partial[1], partial[2], measure))
            partial = []
            slot = 0

    if not ended:
        if strict:
            raise DecodeError("missing EOS", len(ids))
        repairs += 1 + (slot != 0)
    return Decoded(ScoreSequence(tuple(notes), measure + 1), repairs)
