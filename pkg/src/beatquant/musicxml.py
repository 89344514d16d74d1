"""Minimal part-wise MusicXML reader: notes, ties, time signatures, measures.

All parts are merged into one stream; voices are only used to pair ties.
"""

from __future__ import annotations

import logging
import xml.etree.ElementTree as ET
from collections import defaultdict, deque
from dataclasses import dataclass, replace
from fractions import Fraction

from .core import MAX_ONSET, MAX_VALUE, PITCH_MAX, PITCH_MIN, ScoreNote, ScoreSequence, TimeSignature

log = logging.getLogger(__name__)

STEP_SEMITONES = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}


class MusicXMLError(ValueError):
    pass


@dataclass(frozen=True)
class RawScoreNote:
    pitch: int
    measure: int
    onset_ticks: int  # measure-relative
    value_ticks: int
    abs_onset: int
    tie_start: bool = False
    tie_stop: bool = False
    # "<part>:<voice>", used to pair ties between overlapping unisons
    voice: str = ""

    @property
    def abs_offset(self) -> int:
        return self.abs_onset + self.value_ticks


@dataclass(frozen=True)
class ScoreMeasure:
    index: int
    start_ticks: int
    actual_ticks: int
    signature: TimeSignature | None


@dataclass
class ScoreDocument:
    notes: list[RawScoreNote]
    measures: list[ScoreMeasure]
    # durations that did not land on the 12-per-quarter grid
    inexact: int = 0

    @property
    def signatures(self) -> set[TimeSignature]:
        return {m.signature for m in self.measures if m.signature is not None}


def _pitch(note: ET.Element) -> int:
    p = note.find("pitch")
    step = p.findtext("step").strip()
    octave = int(p.findtext("octave"))
    alter = round(float(p.findtext("alter") or 0))
    return 12 * (octave + 1) + STEP_SEMITONES[step] + alter


def _tie_flags(note: ET.Element) -> tuple[bool, bool]:
    types = {t.get("type") for t in note.findall("tie")}
    for tied in note.findall("notations/tied"):
        types.add(tied.get("type"))
    return "start" in types, "stop" in types


def read_musicxml(text: str | bytes) -> ScoreDocument:
    """Read an uncompressed part-wise MusicXML document."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MusicXMLError(f"malformed XML: {exc}") from exc
    if root.tag != "score-partwise":
        raise MusicXMLError(f"expected score-partwise root, got {root.tag}")
    parts = root.findall("part")
    if not parts:
        raise MusicXMLError("document has no parts")

    n_measures = max(len(p.findall("measure")) for p in parts)
    lengths = [Fraction(0)] * n_measures
    signatures: list[TimeSignature | None] = [None] * n_measures
    # (measure, part, order, pitch, onset_q, dur_q, tie_start, tie_stop, voice)
    collected = []
    inexact = 0

    for part_idx, part in enumerate(parts):
        divisions = None
        sig = None
        for m_idx, measure in enumerate(part.findall("measure")):
            pos = Fraction(0)
            end = Fraction(0)
            last_onset = Fraction(0)
            for el in measure:
                if el.tag == "attributes":
                    d = el.findtext("divisions")
                    if d is not None:
                        divisions = int(d)
                    t = el.find("time")
                    if t is not None and t.findtext("beats") is not None:
                        beats = t.findtext("beats").split("+")
                        sig = TimeSignature(sum(int(b) for b in beats), int(t.findtext("beat-type")))
                elif el.tag in ("backup", "forward"):
                    if divisions is None:
                        raise MusicXMLError(f"measure {m_idx + 1}: duration before divisions")
                    dur = Fraction(int(el.findtext("duration")), divisions)
                    pos = pos - dur if el.tag == "backup" else pos + dur
                    end = max(end, pos)
                elif el.tag == "note":
                    if el.find("grace") is not None or el.find("cue") is not None:
                        continue
                    if divisions is None:
                        raise MusicXMLError(f"measure {m_idx + 1}: note before divisions")
                    dur = Fraction(int(el.findtext("duration") or 0), divisions)
                    if el.find("chord") is not None:
                        onset = last_onset
                    else:
                        onset = pos
                        pos += dur
                    last_onset = onset
                    end = max(end, onset + dur)
                    if el.find("rest") is not None or el.find("pitch") is None:
                        continue
                    start, stop = _tie_flags(el)
                    voice = f"{part_idx}:{el.findtext('voice', '1').strip()}"
                    collected.append((m_idx, part_idx, len(collected), _pitch(el), onset, dur, start, stop, voice))
            lengths[m_idx] = max(lengths[m_idx], end)
            if signatures[m_idx] is None:
                signatures[m_idx] = sig

    def to_ticks(q: Fraction) -> int:
        nonlocal inexact
        ticks = q * 12
        if ticks.denominator != 1:
            inexact += 1
        return round(ticks)

    measures = []
    start = 0
    for i in range(n_measures):
        actual = to_ticks(lengths[i])
        measures.append(ScoreMeasure(i, start, actual, signatures[i]))
        start += actual

    notes = []
    for m_idx, _, _, pitch, onset_q, dur_q, t_start, t_stop, voice in sorted(collected):
        onset = to_ticks(onset_q)
        notes.append(RawScoreNote(
            pitch, m_idx, onset, max(1, to_ticks(dur_q)),
            measures[m_idx].start_ticks + onset, t_start, t_stop, voice,
        ))
    return ScoreDocument(notes, measures, inexact)


def merge_ties(notes: list[RawScoreNote]) -> list[RawScoreNote]:
    """Fold every tie-stop note into the open tie-start note it continues.

    A stop matches an open start of the same pitch whose offset equals the
    stop's onset, preferring one in the same voice, then the oldest.  Chains
    collapse transitively.  Unmatched stops are kept
    as plain notes.
    """
    order = sorted(range(len(notes)), key=lambda i: (notes[i].abs_onset, i))
    merged: dict[int, RawScoreNote] = {}
    # (pitch, abs offset) -> keys in merged, oldest first (unisons can repeat)
    open_ties: dict[tuple[int, int], deque[int]] = defaultdict(deque)
    for i in order:
        n = notes[i]
        waiting = open_ties.get((n.pitch, n.abs_onset))
        if n.tie_stop and waiting:
            head = next((k for k in waiting if merged[k].voice == n.voice), waiting[0])
            waiting.remove(head)
            h = merged[head]
            h = replace(h, value_ticks=h.value_ticks + n.value_ticks, tie_start=n.tie_start, voice=n.voice)
            merged[head] = h
            if n.tie_start:
                open_ties[(h.pitch, h.abs_offset)].append(head)
            continue
        if n.tie_stop:
            log.warning("unmatched tie end: pitch %d in measure %d", n.pitch, n.measure + 1)
        merged[i] = replace(n, tie_stop=False)
        if n.tie_start:
            open_ties[(n.pitch, n.abs_offset)].append(i)
    return [merged[i] for i in sorted(merged)]


def resolve_ties(notes: list[RawScoreNote], measure_count: int | None = None) -> ScoreSequence:
    """Merge tied notes and return a ScoreSequence with values capped at 48.

    Notes that cannot be represented (onset beyond 47, pitch outside the
    piano range) are dropped with a warning.
    """
    merged = merge_ties(notes)
    out = []
    for n in merged:
        if n.onset_ticks > MAX_ONSET or not PITCH_MIN <= n.pitch <= PITCH_MAX:
            log.warning("dropping unrepresentable note %s", n)
            continue
        out.append(ScoreNote(n.pitch, n.onset_ticks, min(MAX_VALUE, n.value_ticks), n.measure))
    if measure_count is None:
        measure_count = max((n.measure for n in notes), default=0) + 1
    return ScoreSequence(tuple(out), measure_count)
