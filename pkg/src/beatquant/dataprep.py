"""Training data preparation: filtering, splitting, measure matching,
sequence extraction with synchronized ordering, and augmentation."""

from __future__ import annotations

import json
import logging
import math
import zlib
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import AugmentConfig
from .core import (
    MAX_VALUE,
    PITCH_MAX,
    PITCH_MIN,
    BeatAnnotations,
    PerformanceNote,
    PerformanceSequence,
    ScoreNote,
    ScoreSequence,
    TickGrid,
    TimeSignature,
)
from .grid import downbeat_ticks, interpolate_ticks, piece_ticks_per_beat, quantize_note
from .ingest import parse_annotations, parse_midi
from .musicxml import ScoreMeasure, read_musicxml, resolve_ties
from .tokenizer import TokenSeq, decode, encode
from .util import atomic_write_text

log = logging.getLogger(__name__)


class DataPrepError(ValueError):
    pass


@dataclass
class AlignedPiece:
    piece_id: str
    performance: PerformanceSequence
    score: ScoreSequence
    beats: BeatAnnotations
    measures: list[ScoreMeasure]
    performance_id: str = ""

    @property
    def signatures(self) -> set[TimeSignature]:
        sigs = self.beats.signatures()
        return sigs or {m.signature for m in self.measures if m.signature is not None}

    def signature_of(self, k: int) -> TimeSignature | None:
        sig = self.beats.signature_at(k)
        if sig is None and k < len(self.measures):
            sig = self.measures[k].signature
        return sig


def load_piece(score_path, performance_path, annotation_path, piece_id: str | None = None,
               performance_id: str | None = None) -> AlignedPiece:
    doc = read_musicxml(Path(score_path).read_bytes())
    score = resolve_ties(doc.notes, max(len(doc.measures), 1))
    perf = parse_midi(Path(performance_path).read_bytes())
    beats = parse_annotations(Path(annotation_path).read_text(encoding="utf-8"))
    pid = piece_id or Path(score_path).stem
    return AlignedPiece(pid, perf, score, beats, doc.measures, performance_id or Path(performance_path).stem)


def filter_and_split(
    pieces: Sequence[AlignedPiece],
    signatures: Iterable[str | TimeSignature],
    seed: int = 0,
    fractions: Sequence[float] = (0.8, 0.1, 0.1),
) -> dict[str, list[AlignedPiece]]:
    """Keep pieces with an allowed signature and split them by piece id.

    All performances sharing a piece id go to the same split.
    """
    allowed = {s if isinstance(s, TimeSignature) else TimeSignature.parse(s) for s in signatures}
    kept = [p for p in pieces if p.signatures & allowed]
    if not kept:
        raise DataPrepError("no pieces left after time-signature filtering")
    ids = sorted({p.piece_id for p in kept})
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n = len(order)
    n_test = round(fractions[2] * n)
    n_val = round(fractions[1] * n)
    test = set(order[:n_test])
    val = set(order[n_test:n_test + n_val])
    out: dict[str, list[AlignedPiece]] = {"train": [], "validation": [], "test": []}
    for p in kept:
        key = "test" if p.piece_id in test else "validation" if p.piece_id in val else "train"
        out[key].append(p)
    return out


def measure_intervals(beats: BeatAnnotations, shift_s: float) -> list[tuple[float, float]]:
    """Half-open [start, end) per downbeat, both edges shifted earlier by ``shift_s``."""
    db = beats.downbeats
    return [
        (t - shift_s, db[k + 1] - shift_s if k + 1 < len(db) else math.inf)
        for k, t in enumerate(db)
    ]


def _notes_per_interval(perf: PerformanceSequence, intervals) -> list[list[PerformanceNote]]:
    out: list[list[PerformanceNote]] = [[] for _ in intervals]
    starts = [a for a, _ in intervals]
    for note in perf.notes:
        k = bisect_right(starts, note.onset_s) - 1
        if 0 <= k and note.onset_s < intervals[k][1]:
            out[k].append(note)
    return out


def _annotated_beats(beats: BeatAnnotations) -> list[int | None]:
    idx = beats.downbeat_beat_indices()
    return [idx[k + 1] - idx[k] if k + 1 < len(idx) else None for k in range(len(idx))]


def match_measures(
    piece: AlignedPiece,
    shift_ms: float = 50.0,
    allowed: Iterable[str | TimeSignature] | None = None,
) -> list[int]:
    """Indices of measures usable for training.

    A measure qualifies when the performance notes in its shifted interval
    equal the score note count and the score measure's length, and the
    annotated beat count, agree with the annotated time signature.
    """
    allowed_set = None
    if allowed is not None:
        allowed_set = {s if isinstance(s, TimeSignature) else TimeSignature.parse(s) for s in allowed}
    intervals = measure_intervals(piece.beats, shift_ms / 1000.0)
    perf_counts = [len(x) for x in _notes_per_interval(piece.performance, intervals)]
    score_by_measure = piece.score.by_measure()
    beat_counts = _annotated_beats(piece.beats)
    n = min(len(intervals), len(score_by_measure), len(piece.measures))
    matched = []
    for k in range(n):
        sig = piece.signature_of(k)
        if sig is None or (allowed_set is not None and sig not in allowed_set):
            continue
        if piece.measures[k].actual_ticks != sig.capacity:
            continue
        if beat_counts[k] is not None and beat_counts[k] != sig.beats_per_measure:
            continue
        if perf_counts[k] != len(score_by_measure[k]):
            continue
        matched.append(k)
    return matched


@dataclass
class TrainingExample:
    piece_id: str
    start_measure: int
    measures: int
    # performance side, in pairing order, with window-local measure numbers
    perf_notes: tuple[PerformanceNote, ...]
    perf_measures: tuple[int, ...]
    # score side, paired position-wise with perf_notes
    target_notes: tuple[ScoreNote, ...]
    # tick grid slice and the local tick index where each window measure starts (plus end)
    ticks: tuple[float, ...]
    measure_starts: tuple[int, ...]
    ticks_per_beat: int = 12
    synchronized: bool = True
    # document order of target notes, used when not synchronized
    target_order: tuple[int, ...] = ()
    input_tokens: TokenSeq = field(default=None, repr=False)
    target_tokens: TokenSeq = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.perf_notes) != len(self.target_notes):
            raise DataPrepError("input and target note counts differ")
        if not self.target_order:
            self.target_order = tuple(range(len(self.target_notes)))
        if self.input_tokens is None or self.target_tokens is None:
            self.input_tokens, self.target_tokens = tokenize_example(self)

    def input_notes(self):
        grid = TickGrid(self.ticks, self.ticks_per_beat)
        out = []
        for note, m in zip(self.perf_notes, self.perf_measures):
            start = self.measure_starts[m]
            length = self.measure_starts[m + 1] - start
            out.append(quantize_note(grid, note, m, start, length))
        return out

    def target_sequence(self) -> ScoreSequence:
        order = range(len(self.target_notes)) if self.synchronized else self.target_order
        notes = sorted((self.target_notes[i] for i in order), key=lambda n: n.measure)
        return ScoreSequence(tuple(notes), self.measures)

    def to_record(self) -> dict:
        return {
            "piece_id": self.piece_id,
            "start_measure": self.start_measure,
            "input_ids": list(self.input_tokens.ids),
            "target_ids": list(self.target_tokens.ids),
            "measures": self.measures,
            "synchronized": self.synchronized,
            "ticks_per_beat": self.ticks_per_beat,
            "perf": [[n.pitch, n.onset_s, n.duration_s, m] for n, m in zip(self.perf_notes, self.perf_measures)],
            "target": [[n.pitch, n.onset_ticks, n.value_ticks, n.measure] for n in self.target_notes],
            "target_order": list(self.target_order),
            "ticks": list(self.ticks),
            "measure_starts": list(self.measure_starts),
        }

    @classmethod
    def from_record(cls, rec: dict) -> TrainingExample:
        return cls(
            piece_id=rec["piece_id"],
            start_measure=rec["start_measure"],
            measures=rec["measures"],
            perf_notes=tuple(PerformanceNote(p, o, d) for p, o, d, _ in rec["perf"]),
            perf_measures=tuple(m for *_, m in rec["perf"]),
            target_notes=tuple(ScoreNote(*t) for t in rec["target"]),
            ticks=tuple(rec["ticks"]),
            measure_starts=tuple(rec["measure_starts"]),
            ticks_per_beat=rec["ticks_per_beat"],
            synchronized=rec["synchronized"],
            target_order=tuple(rec["target_order"]),
            input_tokens=TokenSeq(tuple(rec["input_ids"])),
            target_tokens=TokenSeq(tuple(rec["target_ids"])),
        )


def tokenize_example(ex: TrainingExample) -> tuple[TokenSeq, TokenSeq]:
    inputs = encode(ex.input_notes(), measure_count=ex.measures, first_measure=0)
    targets = encode(ex.target_sequence())
    return inputs, targets


def _pair_measure(perf: list[tuple[PerformanceNote, int]], score: list[ScoreNote]):
    """Sort both sides of one measure by (onset, pitch) and pair by position."""
    perf_sorted = sorted(perf, key=lambda x: (x[1], x[0].pitch, x[0].onset_s))
    score_sorted = sorted(range(len(score)), key=lambda i: (score[i].onset_ticks, score[i].pitch, i))
    return [p for p, _ in perf_sorted], score_sorted


def extract_sequences(
    piece: AlignedPiece,
    matched: Sequence[int],
    M: int = 2,
    synchronized: bool = True,
    ticks_per_beat: int | None = None,
    shift_ms: float = 50.0,
) -> list[TrainingExample]:
    """Cut runs of consecutive matched measures into disjoint M-measure windows."""
    if M < 1:
        raise ValueError("M must be >= 1")
    tpb = ticks_per_beat or piece_ticks_per_beat(piece.beats)
    grid = interpolate_ticks(piece.beats, tpb)
    db_ticks = downbeat_ticks(piece.beats, tpb) + [len(grid)]
    per_interval = _notes_per_interval(piece.performance, measure_intervals(piece.beats, shift_ms / 1000.0))
    score_by_measure = piece.score.by_measure()

    runs: list[list[int]] = []
    for k in sorted(matched):
        if runs and runs[-1][-1] == k - 1:
            runs[-1].append(k)
        else:
            runs.append([k])

    examples = []
    for run in runs:
        for w in range(len(run) // M):
            window = run[w * M:(w + 1) * M]
            first = window[0]
            lo = max(0, db_ticks[first] - tpb)
            hi = min(len(grid), db_ticks[window[-1] + 1] + MAX_VALUE + 1)
            ticks = grid.ticks[lo:hi]
            starts = tuple(db_ticks[k] - lo for k in window) + (db_ticks[window[-1] + 1] - lo,)
            local_grid = TickGrid(ticks, tpb)

            perf_notes, perf_measures, target, doc_rank = [], [], [], []
            for j, k in enumerate(window):
                snapped = []
                for note in per_interval[k]:
                    on = quantize_note(local_grid, note, j, starts[j], starts[j + 1] - starts[j])
                    snapped.append((note, on.onset_in_measure))
                score_notes = score_by_measure[k]
                perf_sorted, score_idx = _pair_measure(snapped, score_notes)
                base = len(target)
                for note, i in zip(perf_sorted, score_idx):
                    s = score_notes[i]
                    perf_notes.append(note)
                    perf_measures.append(j)
                    target.append(ScoreNote(s.pitch, s.onset_ticks, s.value_ticks, j))
                # document position of each paired target note
                rank = {i: r for r, i in enumerate(score_idx)}
                doc_rank.extend(base + rank[i] for i in range(len(score_notes)))
            if not target:
                continue
            examples.append(TrainingExample(
                piece.piece_id, first, M, tuple(perf_notes), tuple(perf_measures),
                tuple(target), ticks, starts, tpb, synchronized, tuple(doc_rank),
            ))
    return examples


def augment(ex: TrainingExample, config: AugmentConfig, rng: np.random.Generator) -> TrainingExample:
    """Return a transposed / note-deleted / duration-jittered copy of ``ex``."""
    perf = list(ex.perf_notes)
    target = list(ex.target_notes)
    order = list(ex.target_order)
    measures = list(ex.perf_measures)

    if config.transpose and perf:
        pitches = [n.pitch for n in perf] + [n.pitch for n in target]
        lo, hi = PITCH_MIN - min(pitches), PITCH_MAX - max(pitches)
        shift = int(rng.integers(lo, hi + 1))
        perf = [replace(n, pitch=n.pitch + shift) for n in perf]
        target = [replace(n, pitch=n.pitch + shift) for n in target]

    if config.delete and len(perf) > 1:
        n = len(perf)
        # unbiased rounding of the selected count
        expected = config.delete_select * n
        k = int(expected) + int(rng.random() < expected - int(expected))
        selected = rng.choice(n, size=k, replace=False) if k else []
        drop = {int(i) for i in selected if rng.random() < config.delete_prob}
        if len(drop) == n:
            drop.discard(max(drop))
        keep = [i for i in range(n) if i not in drop]
        remap = {old: new for new, old in enumerate(keep)}
        perf = [perf[i] for i in keep]
        target = [target[i] for i in keep]
        measures = [measures[i] for i in keep]
        order = [remap[i] for i in order if i in remap]

    if config.nv_noise and perf:
        eps = rng.normal(0.0, config.nv_sigma, size=len(perf))
        perf = [
            replace(n, duration_s=max(n.duration_s * (1.0 + e), 1e-4))
            for n, e in zip(perf, eps)
        ]

    return TrainingExample(
        ex.piece_id, ex.start_measure, ex.measures, tuple(perf), tuple(measures),
        tuple(target), ex.ticks, ex.measure_starts, ex.ticks_per_beat, ex.synchronized, tuple(order),
    )


def piece_rng(seed: int, piece_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(piece_id.encode("utf-8"))])


def check_example(ex: TrainingExample) -> None:
    """Raise if either token side fails strict decoding or counts differ."""
    a = decode(ex.input_tokens, strict=True)
    b = decode(ex.target_tokens, strict=True)
    if len(a) != len(b):
        raise DataPrepError(f"{ex.piece_id}@{ex.start_measure}: {len(a)} input vs {len(b)} target notes")


def write_shard(path: Path, examples: Sequence[TrainingExample]) -> None:
    lines = [json.dumps(ex.to_record(), sort_keys=True) for ex in examples]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_shard(path: str | Path) -> list[TrainingExample]:
    with open(path, encoding="utf-8") as fh:
        return [TrainingExample.from_record(json.loads(line)) for line in fh if line.strip()]
