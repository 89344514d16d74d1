"""End-to-end stages used by the command line: prepare, quantize, evaluate."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .config import Config
from .core import BeatAnnotations, PerformanceSequence, ScoreSequence, TimeSignature
from .dataprep import (
    DataPrepError,
    TrainingExample,
    check_example,
    extract_sequences,
    filter_and_split,
    load_piece,
    match_measures,
    read_shard,
    write_shard,
)
from .grid import interpolate_ticks, piece_ticks_per_beat, prequantize
from .model.checkpoint import Checkpoint
from .model.decode import beam_decode
from .score_out import concatenate, postprocess, write_musicxml
from .tokenizer import VOCAB_VERSION, decode_with_repairs, encode
from .util import atomic_write_json

log = logging.getLogger(__name__)

SCORE_SUFFIXES = (".musicxml", ".xml")
MIDI_SUFFIXES = (".mid", ".midi")
SPLITS = ("train", "validation", "test")


@dataclass
class PieceFiles:
    piece_id: str
    performance_id: str
    score: Path
    performance: Path
    annotations: Path


def discover(score_dir, perf_dir, ann_dir) -> tuple[list[PieceFiles], list[dict]]:
    """Pair every performance with its score and annotation file.

    A performance ``<piece>.mid`` or ``<piece>_<suffix>.mid`` belongs to the
    score ``<piece>.musicxml``; its annotations are ``<performance>.txt``.
    """
    scores = {p.stem: p for p in sorted(Path(score_dir).iterdir()) if p.suffix.lower() in SCORE_SUFFIXES}
    found, errors = [], []
    for perf in sorted(Path(perf_dir).iterdir()):
        if perf.suffix.lower() not in MIDI_SUFFIXES:
            continue
        owners = [s for s in scores if perf.stem == s or perf.stem.startswith(s + "_")]
        if not owners:
            errors.append({"file": str(perf), "error": "no matching score"})
            continue
        ann = Path(ann_dir) / f"{perf.stem}.txt"
        if not ann.exists():
            errors.append({"file": str(perf), "error": "no annotation file"})
            continue
        piece = max(owners, key=len)
        found.append(PieceFiles(piece, perf.stem, scores[piece], perf, ann))
    return found, errors


def _load(files: PieceFiles):
    try:
        return load_piece(files.score, files.performance, files.annotations, files.piece_id, files.performance_id)
    except (OSError, ValueError) as exc:
        return f"{type(exc).__name__}: {exc}"


def prepare(score_dir, perf_dir, ann_dir, out_dir, config: Config | None = None, jobs: int = 1) -> dict:
    """Build shards, a manifest and a per-piece report under ``out_dir``.

    Raises DataPrepError when no training example survives.
    """
    config = config or Config()
    seq = config.sequence
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    files, errors = discover(score_dir, perf_dir, ann_dir)
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            loaded = list(pool.map(_load, files))
    else:
        loaded = [_load(f) for f in files]

    pieces, report = [], {}
    for f, result in zip(files, loaded):
        if isinstance(result, str):
            errors.append({"file": str(f.performance), "error": result})
            report[f.performance_id] = {"piece_id": f.piece_id, "status": "unreadable", "reason": result}
        else:
            pieces.append(result)

    allowed = {TimeSignature.parse(s) for s in seq.signatures}
    try:
        splits = filter_and_split(pieces, allowed, seq.seed, seq.split)
    except DataPrepError:
        splits = {name: [] for name in SPLITS}
    split_of = {p.performance_id: name for name, ps in splits.items() for p in ps}

    shards: dict[str, list[TrainingExample]] = {name: [] for name in SPLITS}
    for p in pieces:
        entry = {"piece_id": p.piece_id, "measures": len(p.measures)}
        report[p.performance_id] = entry
        if p.performance_id not in split_of:
            entry.update(status="dropped", reason="time signature not allowed")
            continue
        matched = match_measures(p, seq.shift_ms, allowed)
        tpb = piece_ticks_per_beat(p.beats, config.grid.ticks_per_beat)
        examples = extract_sequences(p, matched, seq.measures, seq.synchronized, tpb, seq.shift_ms)
        for ex in examples:
            check_example(ex)
        entry.update(split=split_of[p.performance_id], matched_measures=len(matched), examples=len(examples))
        if not matched:
            entry.update(status="dropped", reason="no measure passed note-count matching")
        elif not examples:
            entry.update(status="dropped", reason=f"no run of {seq.measures} consecutive matched measures")
        else:
            entry["status"] = "kept"
        shards[split_of[p.performance_id]].extend(examples)

    if not any(shards.values()):
        atomic_write_json(out / "report.json", {"errors": errors, "pieces": report})
        raise DataPrepError("preparation produced no examples")

    for name in SPLITS:
        write_shard(out / f"{name}.jsonl", shards[name])
    manifest = {
        "vocab_version": VOCAB_VERSION,
        "config": config.to_dict(),
        "shards": {name: {"file": f"{name}.jsonl", "examples": len(shards[name])} for name in SPLITS},
        "pieces": {
            name: sorted({p.piece_id for p in splits[name] if report[p.performance_id].get("status") == "kept"})
            for name in SPLITS
        },
    }
    atomic_write_json(out / "manifest.json", manifest)
    atomic_write_json(out / "report.json", {"errors": errors, "pieces": report})
    return manifest


def load_shards(path, split: str) -> tuple[list[TrainingExample], str]:
    """Read one split from a prepared directory; returns (examples, vocab version)."""
    path = Path(path)
    if path.is_dir():
        manifest = json.loads((path / "manifest.json").read_text())
        return read_shard(path / manifest["shards"][split]["file"]), manifest["vocab_version"]
    return read_shard(path), VOCAB_VERSION


def _signature_for(beats: BeatAnnotations, k: int, beats_in_measure: int, tpb: int) -> TimeSignature:
    sig = beats.signature_at(k)
    if sig is not None:
        return sig
    # infer from the annotation: measure length in quarter-note ticks
    ticks = beats_in_measure * tpb
    if ticks % 12 == 0:
        return TimeSignature(ticks // 12, 4)
    return TimeSignature(ticks // 6, 8) if ticks % 6 == 0 else TimeSignature(4, 4)


@dataclass
class QuantizeResult:
    score: ScoreSequence
    signatures: list[TimeSignature]
    musicxml: str
    window_repairs: list[int] = field(default_factory=list)
    engraving_repairs: list[str] = field(default_factory=list)


def quantize(
    perf: PerformanceSequence,
    beats: BeatAnnotations,
    checkpoint: Checkpoint,
    measures: int = 2,
    beam: int = 5,
    ticks_per_beat: dict[str, int] | None = None,
    title: str | None = None,
) -> QuantizeResult:
    """Performance + beats to a quantized score, decoded window by window."""
    if checkpoint.vocab_version != VOCAB_VERSION:
        raise ValueError(f"vocabulary mismatch: checkpoint {checkpoint.vocab_version}, code {VOCAB_VERSION}")
    tpb = piece_ticks_per_beat(beats, ticks_per_beat)
    grid = interpolate_ticks(beats, tpb)
    if perf.notes and (perf.notes[0].onset_s < grid.ticks[0] or perf.notes[-1].onset_s > grid.ticks[-1]):
        log.warning("notes outside the beat grid are clamped to its ends")
    if not beats.downbeats:
        log.warning("no downbeats annotated; the whole piece is treated as one measure")
    notes = prequantize(perf, beats, tpb, grid)

    beat_idx = beats.downbeat_beat_indices() or [0]
    n_measures = len(beat_idx)
    bounds = beat_idx + [len(beats.beats) + 1]
    signatures = [
        _signature_for(beats, k, bounds[k + 1] - bounds[k], tpb) for k in range(n_measures)
    ]
    model = checkpoint.build_model()

    windows, plan, repairs = [], [], []
    for first in range(0, n_measures, measures):
        count = min(measures, n_measures - first)
        chunk = sorted(
            (n for n in notes if first <= n.measure < first + count),
            key=lambda n: (n.measure, n.onset_in_measure, n.pitch),
        )
        plan.append(count)
        if not chunk:
            windows.append(ScoreSequence((), count))
            repairs.append(0)
            continue
        src = encode(chunk, measure_count=count, first_measure=first)
        max_onset = min(47, max(s.capacity for s in signatures[first:first + count]) - 1)
        out = beam_decode(model, src, beam=beam, expected_notes=len(chunk),
                          measure_budget=count, max_onset=max_onset)
        decoded = decode_with_repairs(out, strict=False)
        windows.append(ScoreSequence(decoded.score.notes, count))
        repairs.append(decoded.repairs)

    score = concatenate(windows, plan)
    engraving = postprocess(score, signatures)
    xml = write_musicxml(engraving, title=title)
    return QuantizeResult(score, signatures, xml, repairs, engraving.repairs)

