"""Domain types shared across the quantization pipeline.

Musical time is integer ticks throughout: a quarter note is 12 ticks and a
whole note 48.  Fractional musical time never leaves the grid module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

PITCH_MIN = 21
PITCH_MAX = 108
TICKS_PER_QUARTER = 12
MAX_ONSET = 47
MAX_VALUE = 48


class ValidationError(ValueError):
    """An invariant of a domain type was violated."""


def _check_pitch(pitch: int) -> None:
    if not PITCH_MIN <= pitch <= PITCH_MAX:
        raise ValidationError(
            f"pitch out of range [{PITCH_MIN},{PITCH_MAX}]: {pitch}"
        )


@dataclass(frozen=True)
class PerformanceNote:
    pitch: int
    onset_s: float
    duration_s: float

    def __post_init__(self):
        _check_pitch(self.pitch)
        if not math.isfinite(self.onset_s) or self.onset_s < 0:
            raise ValidationError(f"onset_s must be finite and >= 0: {self.onset_s}")
        if not math.isfinite(self.duration_s) or self.duration_s <= 0:
            raise ValidationError(f"duration_s must be finite and > 0: {self.duration_s}")

    @property
    def offset_s(self) -> float:
        return self.onset_s + self.duration_s


@dataclass(frozen=True)
class PerformanceSequence:
    notes: tuple[PerformanceNote, ...] = ()
    # set by the MIDI reader when note-ons were closed at end of track
    dangling: int = 0

    def __post_init__(self):
        object.__setattr__(self, "notes", tuple(self.notes))
        for a, b in zip(self.notes, self.notes[1:]):
            if (a.onset_s, a.pitch) > (b.onset_s, b.pitch):
                raise ValidationError("notes must be sorted by (onset_s, pitch)")

    @classmethod
    def from_unsorted(cls, notes: Iterable[PerformanceNote], dangling: int = 0):
        return cls(tuple(sorted(notes, key=lambda n: (n.onset_s, n.pitch))), dangling)

    def sorted(self) -> PerformanceSequence:
        return PerformanceSequence.from_unsorted(self.notes, self.dangling)

    def __len__(self):
        return len(self.notes)

    def __iter__(self):
        return iter(self.notes)


@dataclass(frozen=True)
class ScoreNote:
    pitch: int
    onset_ticks: int
    value_ticks: int
    measure: int = 0

    def __post_init__(self):
        _check_pitch(self.pitch)
        if not 0 <= self.onset_ticks <= MAX_ONSET:
            raise ValidationError(f"onset_ticks out of range [0,{MAX_ONSET}]: {self.onset_ticks}")
        if not 1 <= self.value_ticks <= MAX_VALUE:
            raise ValidationError(f"value_ticks out of range [1,{MAX_VALUE}]: {self.value_ticks}")
        if self.measure < 0:
            raise ValidationError(f"measure must be >= 0: {self.measure}")


@dataclass(frozen=True)
class ScoreSequence:
    notes: tuple[ScoreNote, ...] = ()
    measure_count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "notes", tuple(self.notes))
        if self.measure_count < 1:
            raise ValidationError(f"measure_count must be positive: {self.measure_count}")
        prev = 0
        for n in self.notes:
            if n.measure < prev:
                raise ValidationError("measure indices must be non-decreasing")
            if n.measure >= self.measure_count:
                raise ValidationError(
                    f"note measure {n.measure} >= measure_count {self.measure_count}"
                )
            prev = n.measure

    def __len__(self):
        return len(self.notes)

    def __iter__(self):
        return iter(self.notes)

    def by_measure(self) -> list[list[ScoreNote]]:
        out: list[list[ScoreNote]] = [[] for _ in range(self.measure_count)]
        for n in self.notes:
            out[n.measure].append(n)
        return out


@dataclass(frozen=True)
class TimeSignature:
    numerator: int
    denominator: int

    def __post_init__(self):
        if self.numerator < 1 or self.denominator not in (1, 2, 4, 8, 16, 32):
            raise ValidationError(f"invalid time signature {self.numerator}/{self.denominator}")

    def __str__(self):
        return f"{self.numerator}/{self.denominator}"

    @classmethod
    def parse(cls, text: str) -> TimeSignature:
        num, _, den = text.strip().partition("/")
        try:
            return cls(int(num), int(den))
        except ValueError as exc:
            raise ValidationError(f"invalid time signature {text!r}") from exc

    @property
    def capacity(self) -> int:
        """Measure length in ticks with the quarter note at 12 ticks."""
        return self.numerator * 4 * TICKS_PER_QUARTER // self.denominator

    @property
    def is_compound(self) -> bool:
        return self.denominator >= 8 and self.numerator > 3 and self.numerator % 3 == 0

    @property
    def beats_per_measure(self) -> int:
        """Number of annotated beats: compound meters are counted in dotted units."""
        return self.numerator // 3 if self.is_compound else self.numerator

    @property
    def ticks_per_beat(self) -> int:
        """Grid density keeping the quarter note at 12 ticks (18 for 6/8, 12 for 4/4)."""
        return self.capacity // self.beats_per_measure


@dataclass(frozen=True)
class BeatAnnotations:
    beats: tuple[float, ...]
    downbeats: tuple[float, ...]
    # (downbeat index, numerator, denominator)
    time_signature_map: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "beats", tuple(float(b) for b in self.beats))
        object.__setattr__(self, "downbeats", tuple(float(b) for b in self.downbeats))
        object.__setattr__(
            self, "time_signature_map", tuple(tuple(e) for e in self.time_signature_map)
        )
        if len(self.beats) < 2:
            raise ValidationError("N_beat >= 2 violated")
        if any(b <= a for a, b in zip(self.beats, self.beats[1:])):
            raise ValidationError("beats must be strictly increasing")
        if any(b <= a for a, b in zip(self.downbeats, self.downbeats[1:])):
            raise ValidationError("downbeats must be strictly increasing")
        beat_set = set(self.beats)
        for d in self.downbeats:
            if d not in beat_set:
                raise ValidationError(f"downbeat {d} is not a beat (downbeats must be a subset of beats)")

    def downbeat_beat_indices(self) -> list[int]:
        index = {b: i for i, b in enumerate(self.beats)}
        return [index[d] for d in self.downbeats]

    def signature_at(self, downbeat_index: int) -> TimeSignature | None:
        current = None
        for k, num, den in self.time_signature_map:
            if k <= downbeat_index:
                current = TimeSignature(num, den)
            else:
                break
        return current

    def signatures(self) -> set[TimeSignature]:
        return {TimeSignature(num, den) for _, num, den in self.time_signature_map}


@dataclass(frozen=True)
class TickGrid:
    ticks: tuple[float, ...]
    ticks_per_beat: int = 12

    def __post_init__(self):
        object.__setattr__(self, "ticks", tuple(self.ticks))
        if self.ticks_per_beat < 1:
            raise ValidationError("ticks_per_beat must be positive")
        if any(b <= a for a, b in zip(self.ticks, self.ticks[1:])):
            raise ValidationError("ticks must be strictly increasing")

    def __len__(self):
        return len(self.ticks)
