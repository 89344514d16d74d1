"""Beat-grid fusion: tick interpolation, nearest-tick snapping, pre-quantization."""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .core import (
    MAX_ONSET,
    MAX_VALUE,
    BeatAnnotations,
    PerformanceNote,
    PerformanceSequence,
    TickGrid,
    TimeSignature,
    ValidationError,
)

DEFAULT_TICKS_PER_BEAT = 12


@dataclass(frozen=True)
class PreQuantizedNote:
    pitch: int
    global_onset_ticks: int
    value_ticks: int
    measure: int
    onset_in_measure: int

    def __post_init__(self):
        if self.onset_in_measure < 0:
            raise ValidationError("onset_in_measure must be >= 0")
        if not 1 <= self.value_ticks <= MAX_VALUE:
            raise ValidationError(f"value_ticks out of range [1,{MAX_VALUE}]")

    @property
    def onset_ticks(self) -> int:
        return self.onset_in_measure


@dataclass
class Measure:
    index: int
    capacity: int
    annotated_ticks: int
    signature: TimeSignature | None
    notes: list[PreQuantizedNote] = field(default_factory=list)
    overflow: list[int] = field(default_factory=list)  # positions in `notes`


def interpolate_ticks(beats: BeatAnnotations | Sequence[float], ticks_per_beat: int = DEFAULT_TICKS_PER_BEAT) -> TickGrid:
    """Place ``ticks_per_beat`` equidistant ticks in every inter-beat interval.

    The interval after the last beat is extrapolated from the last
    inter-beat interval so notes after the final beat still land on the grid.
    """
    times = beats.beats if isinstance(beats, BeatAnnotations) else tuple(beats)
    if ticks_per_beat < 1:
        raise ValidationError("ticks_per_beat must be >= 1")
    if len(times) < 2:
        raise ValidationError("N_beat >= 2 violated")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValidationError("beats must be strictly increasing")

    ticks = []
    bounds = list(zip(times, times[1:]))
    bounds.append((times[-1], times[-1] + (times[-1] - times[-2])))
    for start, end in bounds:
        step = (end - start) / ticks_per_beat
        ticks.append(start)
        ticks.extend(start + m * step for m in range(1, ticks_per_beat))
    return TickGrid(tuple(ticks), ticks_per_beat)


def snap(grid: TickGrid | Sequence[float], t: float) -> int:
    """Index of the tick nearest to ``t``; exact ties go to the lower index."""
    ticks = grid.ticks if isinstance(grid, TickGrid) else grid
    i = bisect_left(ticks, t)
    if i == 0:
        return 0
    if i == len(ticks):
        return len(ticks) - 1
    if t - ticks[i - 1] <= ticks[i] - t:
        return i - 1
    return i


def downbeat_ticks(beats: BeatAnnotations, ticks_per_beat: int) -> list[int]:
    return [i * ticks_per_beat for i in beats.downbeat_beat_indices()]


def quantize_note(
    grid: TickGrid,
    note: PerformanceNote,
    measure: int,
    measure_start: int,
    measure_length: int,
) -> PreQuantizedNote:
    """Snap one note and express its onset relative to a given measure start."""
    on = snap(grid, note.onset_s)
    off = snap(grid, note.offset_s)
    value = min(MAX_VALUE, max(1, off - on))
    local = min(max(0, on - measure_start), MAX_ONSET, max(0, measure_length - 1))
    return PreQuantizedNote(note.pitch, on, value, measure, local)


def prequantize(
    perf: PerformanceSequence | Sequence[PerformanceNote],
    beats: BeatAnnotations,
    ticks_per_beat: int = DEFAULT_TICKS_PER_BEAT,
    grid: TickGrid | None = None,
) -> list[PreQuantizedNote]:
    notes = perf.notes if isinstance(perf, PerformanceSequence) else tuple(perf)
    if grid is None:
        grid = interpolate_ticks(beats, ticks_per_beat)
    starts = downbeat_ticks(beats, ticks_per_beat) or [0]
    ends = starts[1:] + [len(grid)]

    out = []
    for note in notes:
        on = snap(grid, note.onset_s)
        m = max(0, bisect_right(starts, on) - 1)
        out.append(quantize_note(grid, note, m, starts[m], ends[m] - starts[m]))
    return out


def segment_measures(
    prequantized: Sequence[PreQuantizedNote],
    beats: BeatAnnotations,
    ticks_per_beat: int = DEFAULT_TICKS_PER_BEAT,
) -> list[Measure]:
    """Group notes per measure and attach the capacity implied by the signature."""
    beat_idx = beats.downbeat_beat_indices() or [0]
    n_beats = len(beats.beats) + 1  # includes the extrapolated beat
    measures = []
    for k, start in enumerate(beat_idx):
        end = beat_idx[k + 1] if k + 1 < len(beat_idx) else n_beats
        sig = beats.signature_at(k)
        annotated = (end - start) * ticks_per_beat
        capacity = sig.beats_per_measure * ticks_per_beat if sig else annotated
        measures.append(Measure(k, capacity, annotated, sig))
    for note in prequantized:
        m = measures[note.measure]
        if note.onset_in_measure >= m.capacity:
            m.overflow.append(len(m.notes))
        m.notes.append(note)
    return measures


def ticks_per_beat_for(
    signature: TimeSignature | None,
    overrides: Mapping[str, int] | None = None,
) -> int:
    """Grid density for a signature: quarter note = 12 ticks unless overridden."""
    if signature is None:
        return DEFAULT_TICKS_PER_BEAT
    if overrides and str(signature) in overrides:
        return int(overrides[str(signature)])
    return signature.ticks_per_beat


def piece_ticks_per_beat(beats: BeatAnnotations, overrides: Mapping[str, int] | None = None) -> int:
    return ticks_per_beat_for(beats.signature_at(0), overrides)
