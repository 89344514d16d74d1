import logging
import re

import numpy as np
import pytest
import torch

from beatquant.core import BeatAnnotations, ScoreNote, ScoreSequence
from beatquant.dataprep import AlignedPiece, extract_sequences, match_measures
from beatquant.musicxml import ScoreMeasure
from beatquant.synth import SynthConfig, synthesize_corpus


def random_score(rng: np.random.Generator, max_measures: int = 4, max_notes: int = 12) -> ScoreSequence:
    measures = int(rng.integers(1, max_measures + 1))
    n = int(rng.integers(0, max_notes + 1))
    ms = sorted(int(m) for m in rng.integers(0, measures, size=n))
    notes = tuple(
        ScoreNote(int(rng.integers(21, 109)), int(rng.integers(0, 48)), int(rng.integers(1, 49)), m)
        for m in ms
    )
    return ScoreSequence(notes, measures)


def regular_beats(n: int, period: float = 1.0, start: float = 0.0, per_measure: int = 4, sig=(4, 4)) -> BeatAnnotations:
    beats = tuple(start + i * period for i in range(n))
    return BeatAnnotations(beats, beats[::per_measure], ((0, *sig),))


def synthetic_examples(n, seed=0):
    """Training examples built in memory from ``n`` synthetic pieces."""
    out = []
    for p in synthesize_corpus(SynthConfig(pieces=n, seed=seed)):
        cap = p.signature.capacity
        measures = [ScoreMeasure(k, k * cap, cap, p.signature) for k in range(p.score.measure_count)]
        piece = AlignedPiece(p.piece_id, p.performance, p.score, p.beats, measures, p.piece_id)
        out += extract_sequences(piece, match_measures(piece), M=2)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)
    yield


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.WARNING)
    yield


_ACCEPTANCE: dict[int, dict] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_c(\d+)_(\w+)", report.nodeid)
    if m is None or (report.when != "call" and report.passed):
        return
    entry = _ACCEPTANCE.setdefault(int(m.group(1)), {"name": m.group(2).replace("_", " "), "ok": True})
    entry["ok"] = entry["ok"] and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if e['ok'] else 'FAIL'}  {e['name']}")
