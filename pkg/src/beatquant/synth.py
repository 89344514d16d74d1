"""Synthetic aligned corpus: random rhythms rendered with timing jitter.

Each piece is a score (MusicXML), a performance (MIDI) and beat
annotations, written in the directory layout that ``prepare`` reads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .core import (
    BeatAnnotations,
    PerformanceNote,
    PerformanceSequence,
    ScoreNote,
    ScoreSequence,
    TimeSignature,
)
from .ingest import format_annotations, write_midi
from .score_out import postprocess, write_musicxml

RHYTHM_VALUES = (3, 4, 6, 8, 12, 24)


@dataclass
class SynthConfig:
    pieces: int = 500
    measures: int = 2
    signature: str = "4/4"
    values: tuple[int, ...] = RHYTHM_VALUES
    onset_jitter_s: float = 0.030
    duration_jitter: float = 0.05
    tempo_bpm: tuple[float, float] = (60.0, 120.0)
    # per-beat tempo wobble, relative
    beat_jitter: float = 0.02
    chord_prob: float = 0.15
    pitch_range: tuple[int, int] = (48, 84)
    seed: int = 0


@dataclass
class SynthPiece:
    piece_id: str
    score: ScoreSequence
    signature: TimeSignature
    performance: PerformanceSequence
    beats: BeatAnnotations


@lru_cache(maxsize=None)
def _fillable(values: tuple[int, ...], total: int) -> frozenset[int]:
    """Remainders in [0, total] that can be filled exactly with ``values``."""
    ok = {0}
    for r in range(1, total + 1):
        if any(r - v in ok for v in values if v <= r):
            ok.add(r)
    return frozenset(ok)


def random_rhythm(rng: np.random.Generator, capacity: int, values=RHYTHM_VALUES) -> list[int]:
    """Random sequence of note values summing exactly to ``capacity``."""
    values = tuple(sorted(values))
    fillable = _fillable(values, capacity)
    if capacity not in fillable:
        raise ValueError(f"capacity {capacity} cannot be filled with {values}")
    out = []
    remaining = capacity
    while remaining:
        choices = [v for v in values if v <= remaining and remaining - v in fillable]
        v = int(choices[rng.integers(len(choices))])
        out.append(v)
        remaining -= v
    return out


def synthesize_piece(rng: np.random.Generator, piece_id: str, cfg: SynthConfig) -> SynthPiece:
    sig = TimeSignature.parse(cfg.signature)
    cap = sig.capacity
    tpb = sig.ticks_per_beat
    n_beats = sig.beats_per_measure * cfg.measures

    period = 60.0 / rng.uniform(*cfg.tempo_bpm) * (tpb / 12)
    start = rng.uniform(0.5, 1.0)
    beat_times = [start]
    for _ in range(n_beats):
        beat_times.append(beat_times[-1] + period * (1 + rng.uniform(-cfg.beat_jitter, cfg.beat_jitter)))

    def to_seconds(abs_ticks: float) -> float:
        b = min(int(abs_ticks // tpb), n_beats - 1)
        frac = (abs_ticks - b * tpb) / tpb
        return beat_times[b] + frac * (beat_times[b + 1] - beat_times[b])

    lo, hi = cfg.pitch_range
    pitch = int(rng.integers(lo + 6, hi - 6))
    score_notes, perf_notes = [], []
    for m in range(cfg.measures):
        onset = 0
        for value in random_rhythm(rng, cap, cfg.values):
            pitch = int(np.clip(pitch + rng.integers(-4, 5), lo, hi))
            chord = [pitch]
            if rng.random() < cfg.chord_prob:
                for _ in range(int(rng.integers(1, 3))):
                    chord.append(int(np.clip(chord[-1] - rng.integers(3, 8), 21, 108)))
            for p in sorted(set(chord)):
                score_notes.append(ScoreNote(p, onset, value, m))
                abs_on = m * cap + onset
                t_on = to_seconds(abs_on)
                t_off = to_seconds(abs_on + value)
                jit_on = max(0.0, t_on + rng.uniform(-cfg.onset_jitter_s, cfg.onset_jitter_s))
                dur = (t_off - t_on) * (1 + rng.uniform(-cfg.duration_jitter, cfg.duration_jitter))
                perf_notes.append(PerformanceNote(p, jit_on, dur))
            onset += value

    beats_used = beat_times[:n_beats]
    downbeats = beats_used[::sig.beats_per_measure]
    beats = BeatAnnotations(tuple(beats_used), tuple(downbeats), ((0, sig.numerator, sig.denominator),))
    return SynthPiece(
        piece_id,
        ScoreSequence(tuple(score_notes), cfg.measures),
        sig,
        PerformanceSequence.from_unsorted(perf_notes),
        beats,
    )


def synthesize_corpus(cfg: SynthConfig) -> list[SynthPiece]:
    rng = np.random.default_rng(cfg.seed)
    width = max(4, len(str(cfg.pieces - 1)))
    return [synthesize_piece(rng, f"synth_{i:0{width}d}", cfg) for i in range(cfg.pieces)]


def write_corpus(pieces: list[SynthPiece], out_dir: str | Path) -> dict[str, Path]:
    """Write ``scores/``, ``performances/`` and ``annotations/`` under ``out_dir``."""
    out = Path(out_dir)
    dirs = {name: out / name for name in ("scores", "performances", "annotations")}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    for p in pieces:
        xml = write_musicxml(postprocess(p.score, p.signature), title=p.piece_id)
        (dirs["scores"] / f"{p.piece_id}.musicxml").write_text(xml, encoding="utf-8")
        (dirs["performances"] / f"{p.piece_id}.mid").write_bytes(write_midi(p.performance))
        (dirs["annotations"] / f"{p.piece_id}.txt").write_text(format_annotations(p.beats), encoding="utf-8")
    return dirs
