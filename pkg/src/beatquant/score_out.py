"""Full-piece assembly and MusicXML output for quantized windows."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

from .core import ScoreNote, ScoreSequence, TimeSignature
from .musicxml import merge_ties, read_musicxml

MAX_VOICES = 4
DIVISIONS = 12

# ticks -> (type, dots, triplet)
NOTE_TYPES = {
    48: ("whole", 0, False),
    42: ("half", 2, False),
    36: ("half", 1, False),
    32: ("whole", 0, True),
    24: ("half", 0, False),
    21: ("quarter", 2, False),
    18: ("quarter", 1, False),
    16: ("half", 0, True),
    12: ("quarter", 0, False),
    9: ("eighth", 1, False),
    8: ("quarter", 0, True),
    6: ("eighth", 0, False),
    4: ("eighth", 0, True),
    3: ("16th", 0, False),
    2: ("16th", 0, True),
    1: ("32nd", 0, True),
}
_REPRESENTABLE = sorted(NOTE_TYPES, reverse=True)

STEPS = [("C", 0), ("C", 1), ("D", 0), ("D", 1), ("E", 0), ("F", 0),
         ("F", 1), ("G", 0), ("G", 1), ("A", 0), ("A", 1), ("B", 0)]


def split_value(ticks: int) -> list[int]:
    """Greedy largest-first split into engravable durations."""
    out = []
    while ticks > 0:
        piece = next(v for v in _REPRESENTABLE if v <= ticks)
        out.append(piece)
        ticks -= piece
    return out


def concatenate(
    windows: Sequence[ScoreSequence],
    measure_counts: Sequence[int] | None = None,
) -> ScoreSequence:
    """Join windows in piece order, re-basing measure indices cumulatively."""
    if measure_counts is None:
        measure_counts = [w.measure_count for w in windows]
    if len(measure_counts) != len(windows):
        raise ValueError(
            f"{len(windows)} windows but segmentation plan has {len(measure_counts)}"
        )
    notes = []
    offset = 0
    for window, count in zip(windows, measure_counts):
        if window.measure_count > count:
            raise ValueError(f"window spans {window.measure_count} measures, plan allows {count}")
        notes.extend(ScoreNote(n.pitch, n.onset_ticks, n.value_ticks, n.measure + offset) for n in window)
        offset += count
    return ScoreSequence(tuple(notes), max(offset, 1))


@dataclass
class Segment:
    pitch: int
    onset: int
    value: int
    tie_start: bool = False
    tie_stop: bool = False
    # index of the note in the source sequence
    source: int = -1
    # set when a truncation cut off the chain this segment continues
    dropped: bool = False
    # voice of the tied predecessor, so the tie stays within one voice
    prefer_voice: int = 0
    next: Segment | None = field(default=None, repr=False)


@dataclass
class Chord:
    onset: int
    value: int
    notes: list[Segment]

    @property
    def end(self) -> int:
        return self.onset + self.value


@dataclass
class EngravedMeasure:
    index: int
    signature: TimeSignature
    voices: dict[int, list[Chord]] = field(default_factory=dict)

    @property
    def capacity(self) -> int:
        return self.signature.capacity


@dataclass
class Engraving:
    measures: list[EngravedMeasure]
    repairs: list[str] = field(default_factory=list)


def _signature_list(signatures, count: int) -> list[TimeSignature]:
    if isinstance(signatures, TimeSignature):
        return [signatures] * count
    sigs = list(signatures)
    if not sigs:
        sigs = [TimeSignature(4, 4)]
    while len(sigs) < count:
        sigs.append(sigs[-1])
    return sigs


def _truncate(chord: Chord, new_value: int) -> None:
    chord.value = new_value
    for seg in chord.notes:
        seg.value = new_value
        if seg.tie_start and seg.next is not None:
            seg.tie_start = False
            # later measures are not engraved yet, so the tail can be dropped
            tail = seg.next
            while tail is not None:
                tail.dropped = True
                tail = tail.next
            seg.next = None


def postprocess(seq: ScoreSequence, signatures) -> Engraving:
    """Split barline-crossing notes into ties, merge chords, assign voices.

    ``signatures`` is one TimeSignature or a per-measure list (the last
    entry repeats for any measures added by tie reconstruction).
    """
    sigs = _signature_list(signatures, seq.measure_count)
    per_measure: dict[int, list[Segment]] = defaultdict(list)
    n_measures = seq.measure_count

    for i, note in enumerate(seq.notes):
        m, onset, remaining = note.measure, note.onset_ticks, note.value_ticks
        prev = None
        while True:
            sigs = _signature_list(sigs, m + 1)
            cap = sigs[m].capacity
            if onset >= cap:
                # onset beyond this measure's capacity: carry into the next measure
                onset -= cap
                m += 1
                continue
            length = min(remaining, cap - onset)
            seg = Segment(note.pitch, onset, length, source=i, tie_stop=prev is not None)
            if prev is not None:
                prev.tie_start = True
                prev.next = seg
            per_measure[m].append(seg)
            n_measures = max(n_measures, m + 1)
            remaining -= length
            if remaining == 0:
                break
            prev, m, onset = seg, m + 1, 0

    sigs = _signature_list(sigs, n_measures)
    engraving = Engraving([EngravedMeasure(k, sigs[k]) for k in range(n_measures)])
    for k in range(n_measures):
        chords: dict[tuple[int, int, int, int], Chord] = {}
        for seg in per_measure.get(k, []):
            if seg.dropped:
                continue
            # chords share a voice through ties only when their tied tails match
            key = (seg.onset, seg.value, seg.prefer_voice, _tail(seg))
            if key not in chords:
                chords[key] = Chord(seg.onset, seg.value, [])
            chords[key].notes.append(seg)
        measure = engraving.measures[k]
        # continuations first: at the barline every voice is still free
        order = sorted(chords.items(), key=lambda kv: (kv[0][2] == 0, kv[0][0], -kv[0][1], kv[0][2]))
        for _, chord in order:
            chord.notes.sort(key=lambda s: s.pitch)
            _assign_voice(measure, chord, engraving.repairs)
    return engraving


def _tail(seg: Segment) -> int:
    total, nxt = 0, seg.next
    while nxt is not None:
        total, nxt = total + nxt.value, nxt.next
    return total


def _place(chord: Chord, voice: list[Chord], v: int) -> None:
    voice.append(chord)
    for seg in chord.notes:
        if seg.next is not None:
            seg.next.prefer_voice = v


def _assign_voice(measure: EngravedMeasure, chord: Chord, repairs: list[str]) -> None:
    preferred = sorted({s.prefer_voice for s in chord.notes if s.prefer_voice})
    for v in preferred + [v for v in range(1, MAX_VOICES + 1) if v not in preferred]:
        voice = measure.voices.setdefault(v, [])
        if not voice or voice[-1].end <= chord.onset:
            _place(chord, voice, v)
            return
    # every voice busy: shorten the note that frees up earliest
    v = min(measure.voices, key=lambda v: (measure.voices[v][-1].end, v))
    last = measure.voices[v][-1]
    if last.onset < chord.onset:
        repairs.append(
            f"measure {measure.index + 1}: truncated value {last.value} -> "
            f"{chord.onset - last.onset} at onset {last.onset} (voice {v})"
        )
        _truncate(last, chord.onset - last.onset)
        _place(chord, measure.voices[v], v)
    else:
        repairs.append(
            f"measure {measure.index + 1}: merged value {chord.value} into chord "
            f"of value {last.value} at onset {chord.onset} (voice {v})"
        )
        _truncate(chord, last.value)
        last.notes.extend(chord.notes)
        last.notes.sort(key=lambda s: s.pitch)


def _sub(parent: ET.Element, tag: str, text=None, **attrib) -> ET.Element:
    el = ET.SubElement(parent, tag, {k.replace("_", "-"): str(v) for k, v in attrib.items()})
    if text is not None:
        el.text = str(text)
    return el


def _duration_parts(el: ET.Element, ticks: int) -> None:
    kind, dots, triplet = NOTE_TYPES[ticks]
    _sub(el, "type", kind)
    for _ in range(dots):
        _sub(el, "dot")
    if triplet:
        tm = _sub(el, "time-modification")
        _sub(tm, "actual-notes", 3)
        _sub(tm, "normal-notes", 2)


def _emit_rest(measure_el: ET.Element, ticks: int, voice: int) -> None:
    for piece in split_value(ticks):
        note = _sub(measure_el, "note")
        _sub(note, "rest")
        _sub(note, "duration", piece)
        _sub(note, "voice", voice)
        _duration_parts(note, piece)


def _emit_chord(measure_el: ET.Element, chord: Chord, voice: int) -> None:
    pieces = split_value(chord.value)
    for p_idx, piece in enumerate(pieces):
        for c_idx, seg in enumerate(chord.notes):
            starts = seg.tie_start or p_idx < len(pieces) - 1
            stops = seg.tie_stop or p_idx > 0
            note = _sub(measure_el, "note")
            if c_idx:
                _sub(note, "chord")
            pitch = _sub(note, "pitch")
            step, alter = STEPS[seg.pitch % 12]
            _sub(pitch, "step", step)
            if alter:
                _sub(pitch, "alter", alter)
            _sub(pitch, "octave", seg.pitch // 12 - 1)
            _sub(note, "duration", piece)
            if stops:
                _sub(note, "tie", type="stop")
            if starts:
                _sub(note, "tie", type="start")
            _sub(note, "voice", voice)
            _duration_parts(note, piece)
            if starts or stops:
                notations = _sub(note, "notations")
                if stops:
                    _sub(notations, "tied", type="stop")
                if starts:
                    _sub(notations, "tied", type="start")


def write_musicxml(engraving: Engraving, divisions: int = DIVISIONS, title: str | None = None) -> str:
    """Serialize an engraving as a single-part MusicXML 3.1 document."""
    if divisions != DIVISIONS:
        raise ValueError("only 12 divisions per quarter are supported")
    root = ET.Element("score-partwise", version="3.1")
    if title:
        work = _sub(root, "work")
        _sub(work, "work-title", title)
    part_list = _sub(root, "part-list")
    score_part = _sub(part_list, "score-part", id="P1")
    _sub(score_part, "part-name", "Piano")
    part = _sub(root, "part", id="P1")

    previous_sig = None
    for measure in engraving.measures:
        m_el = _sub(part, "measure", number=measure.index + 1)
        if measure.index == 0 or measure.signature != previous_sig:
            attrs = _sub(m_el, "attributes")
            if measure.index == 0:
                _sub(attrs, "divisions", divisions)
            time = _sub(attrs, "time")
            _sub(time, "beats", measure.signature.numerator)
            _sub(time, "beat-type", measure.signature.denominator)
            if measure.index == 0:
                clef = _sub(attrs, "clef")
                _sub(clef, "sign", "G")
                _sub(clef, "line", 2)
        previous_sig = measure.signature

        cap = measure.capacity
        voices = [v for v in sorted(measure.voices) if measure.voices[v]] or [1]
        for n, v in enumerate(voices):
            if n:
                backup = _sub(m_el, "backup")
                _sub(backup, "duration", cap)
            pos = 0
            for chord in measure.voices.get(v, []):
                if chord.onset > pos:
                    _emit_rest(m_el, chord.onset - pos, v)
                _emit_chord(m_el, chord, v)
                pos = chord.end
            if pos < cap:
                _emit_rest(m_el, cap - pos, v)

    ET.indent(root)
    body = ET.tostring(root, encoding="unicode")
    return (
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>\n'
        '<!DOCTYPE score-partwise PUBLIC "-//Recordare//DTD MusicXML 3.1 Partwise//EN" '
        '"http://www.musicxml.org/dtds/partwise.dtd">\n' + body + "\n"
    )


def check_musicxml(text: str) -> list[str]:
    """Structural problems in a document produced by :func:`write_musicxml`.

    Checks divisions, per-voice duration sums against the time signature,
    and that every tie start has a matching stop (and vice versa).
    """
    problems = []
    root = ET.fromstring(text)
    part = root.find("part")
    if part is None:
        return ["no part"]
    div = part.findtext("measure/attributes/divisions")
    if div is None or int(div) != DIVISIONS:
        problems.append(f"divisions is {div}, expected {DIVISIONS}")
    sig = None
    for measure in part.findall("measure"):
        t = measure.find("attributes/time")
        if t is not None:
            sig = TimeSignature(int(t.findtext("beats")), int(t.findtext("beat-type")))
        if sig is None:
            problems.append(f"measure {measure.get('number')}: no time signature")
            continue
        sums: Counter = Counter()
        for note in measure.findall("note"):
            if note.find("chord") is not None:
                continue
            sums[note.findtext("voice")] += int(note.findtext("duration"))
        for voice, total in sums.items():
            if total != sig.capacity:
                problems.append(
                    f"measure {measure.get('number')} voice {voice}: duration {total} != {sig.capacity}"
                )

    doc = read_musicxml(text)
    starts = Counter((n.pitch, n.abs_offset) for n in doc.notes if n.tie_start)
    stops = Counter((n.pitch, n.abs_onset) for n in doc.notes if n.tie_stop)
    if starts != stops:
        problems.append(f"unpaired ties: starts-only {starts - stops}, stops-only {stops - starts}")
    return problems


def absolute_multiset(seq: ScoreSequence, signatures) -> Counter:
    """(pitch, absolute onset ticks, value) multiset of a sequence."""
    sigs = _signature_list(signatures, seq.measure_count)
    starts = [0]
    for s in sigs:
        starts.append(starts[-1] + s.capacity)
    return Counter((n.pitch, starts[n.measure] + n.onset_ticks, n.value_ticks) for n in seq)


def read_back_multiset(text: str) -> Counter:
    doc = read_musicxml(text)
    return Counter((n.pitch, n.abs_onset, n.value_ticks) for n in merge_ties(doc.notes))
