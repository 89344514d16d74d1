import pytest

from beatquant.core import ScoreNote, TimeSignature
from beatquant.musicxml import MusicXMLError, RawScoreNote, merge_ties, read_musicxml, resolve_ties

# Two parts, divisions 2 (part 1) and 6 (part 2).  Part 1 measure 1 has a
# chord, a grace note, a tie across the barline and a second voice via
# backup; part 2 uses forward.  Measure 2 switches to 3/4.
DOC = """<?xml version="1.0" encoding="UTF-8"?>
<score-partwise version="3.1">
  <part-list>
    <score-part id="P1"><part-name>A</part-name></score-part>
    <score-part id="P2"><part-name>B</part-name></score-part>
  </part-list>
  <part id="P1">
    <measure number="1">
      <attributes><divisions>2</divisions><time><beats>4</beats><beat-type>4</beat-type></time></attributes>
      <note><pitch><step>C</step><octave>4</octave></pitch><duration>2</duration><voice>1</voice></note>
      <note><chord/><pitch><step>E</step><octave>4</octave></pitch><duration>2</duration><voice>1</voice></note>
      <note><grace/><pitch><step>D</step><octave>4</octave></pitch><voice>1</voice></note>
      <note><pitch><step>F</step><alter>1</alter><octave>4</octave></pitch><duration>1</duration><voice>1</voice></note>
      <note><rest/><duration>1</duration><voice>1</voice></note>
      <note><pitch><step>G</step><octave>4</octave></pitch><duration>4</duration><tie type="start"/><voice>1</voice></note>
      <backup><duration>8</duration></backup>
      <note><pitch><step>C</step><octave>3</octave></pitch><duration>8</duration><voice>2</voice></note>
    </measure>
    <measure number="2">
      <attributes><time><beats>3</beats><beat-type>4</beat-type></time></attributes>
      <note><pitch><step>G</step><octave>4</octave></pitch><duration>1</duration><tie type="stop"/><voice>1</voice></note>
      <note><pitch><step>B</step><alter>-1</alter><octave>3</octave></pitch><duration>5</duration><voice>1</voice></note>
    </measure>
  </part>
  <part id="P2">
    <measure number="1">
      <attributes><divisions>6</divisions></attributes>
      <forward><duration>18</duration></forward>
      <note><pitch><step>A</step><octave>2</octave></pitch><duration>2</duration></note>
      <note><pitch><step>A</step><octave>2</octave></pitch><duration>2</duration></note>
      <note><pitch><step>A</step><octave>2</octave></pitch><duration>2</duration></note>
    </measure>
    <measure number="2">
      <note><rest/><duration>18</duration></note>
    </measure>
  </part>
</score-partwise>
"""


def test_reader_notes_and_measures():
    doc = read_musicxml(DOC)
    assert [(m.start_ticks, m.actual_ticks, m.signature) for m in doc.measures] == [
        (0, 48, TimeSignature(4, 4)),
        (48, 36, TimeSignature(3, 4)),
    ]
    got = [(n.measure, n.pitch, n.onset_ticks, n.value_ticks, n.tie_start, n.tie_stop) for n in doc.notes]
    assert got == [
        (0, 60, 0, 12, False, False),
        (0, 64, 0, 12, False, False),
        (0, 66, 12, 6, False, False),
        (0, 67, 24, 24, True, False),
        (0, 48, 0, 48, False, False),
        (0, 45, 36, 4, False, False),  # triplet eighths at 6 divisions
        (0, 45, 40, 4, False, False),
        (0, 45, 44, 4, False, False),
        (1, 67, 0, 6, False, True),
        (1, 58, 6, 30, False, False),
    ]
    assert doc.inexact == 0


def test_resolve_ties_merges_across_barline():
    doc = read_musicxml(DOC)
    seq = resolve_ties(doc.notes, len(doc.measures))
    assert ScoreNote(67, 24, 30, 0) in seq.notes
    assert all(not (n.pitch == 67 and n.measure == 1) for n in seq.notes)
    assert seq.measure_count == 2


def _raw(pitch, measure, onset, value, start=False, stop=False, base=48):
    return RawScoreNote(pitch, measure, onset, value, measure * base + onset, start, stop)


def test_tie_chain_collapses():
    notes = [_raw(60, 0, 24, 24, start=True), _raw(60, 1, 0, 48, True, True), _raw(60, 2, 0, 12, stop=True)]
    [merged] = merge_ties(notes)
    assert merged.value_ticks == 84 and not merged.tie_start
    seq = resolve_ties(notes)
    assert seq.notes == (ScoreNote(60, 24, 48, 0),)  # capped at a whole note
    assert seq.measure_count == 3


def test_unmatched_tie_stop_kept(caplog):
    notes = [_raw(60, 0, 0, 12), _raw(62, 0, 12, 12, stop=True)]
    assert len(merge_ties(notes)) == 2
    assert "unmatched tie" in caplog.text


def test_tie_requires_adjacency():
    # same pitch but a gap between the notes: not merged
    notes = [_raw(60, 0, 0, 12, start=True), _raw(60, 0, 24, 12, stop=True)]
    assert len(merge_ties(notes)) == 2


@pytest.mark.parametrize("text", ["<not-xml", "<score-timewise/>", "<score-partwise/>"])
def test_reader_errors(text):
    with pytest.raises(MusicXMLError):
        read_musicxml(text)


def test_three_tied_eighths_make_one_note():
    notes = [_raw(60, 0, 0, 6, start=True), _raw(60, 0, 6, 6, True, True), _raw(60, 0, 12, 6, stop=True)]
    assert resolve_ties(notes).notes == (ScoreNote(60, 0, 18, 0),)


def test_tied_halves_across_barline_make_whole_note():
    notes = [_raw(60, 0, 24, 24, start=True), _raw(60, 1, 0, 24, stop=True)]
    assert resolve_ties(notes).notes == (ScoreNote(60, 24, 48, 0),)
