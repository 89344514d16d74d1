import json
import xml.etree.ElementTree as ET

import pytest

from beatquant.cli import EXIT_DIVERGED, EXIT_INPUT, EXIT_OK, EXIT_VALIDATION, main, parse_tpb
from beatquant.core import BeatAnnotations, PerformanceNote, PerformanceSequence, TimeSignature
from beatquant.ingest import write_midi
from beatquant.model.checkpoint import Checkpoint, save_checkpoint
from beatquant.model.transformer import ModelConfig, Seq2Seq
from beatquant.pipeline import quantize
from beatquant.score_out import check_musicxml

TINY_YAML = """\
model: {layers: 1, heads: 2, d_model: 16, d_kv: 8, d_ff: 32, dropout: 0.0}
train: {batch_size: 4, max_epochs: 3, patience: 2}
"""
TINY = ModelConfig(layers=1, heads=2, d_model=16, d_kv=8, d_ff=32, dropout=0.0)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert main(["synthesize", "--out", str(root), "--pieces", "10", "--seed", "3"]) == EXIT_OK
    return root


def prepare_args(corpus, out, *extra):
    return ["prepare", "--scores", str(corpus / "scores"), "--performances", str(corpus / "performances"),
            "--annotations", str(corpus / "annotations"), "--out", str(out), *extra]


def test_parse_tpb():
    assert parse_tpb("6/8=18, 12/8=18") == {"6/8": 18, "12/8": 18}
    with pytest.raises(ValueError):
        parse_tpb("6/8")


def test_prepare_manifest_and_determinism(corpus, tmp_path):
    assert main(prepare_args(corpus, tmp_path / "a")) == EXIT_OK
    assert main(prepare_args(corpus, tmp_path / "b", "--jobs", "2")) == EXIT_OK
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert sum(len(v) for v in manifest["pieces"].values()) == 10
    assert manifest["shards"]["train"]["examples"] == 8
    for name in ("train.jsonl", "validation.jsonl", "test.jsonl", "manifest.json", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_prepare_reports_dropped_and_unreadable(corpus, tmp_path):
    import shutil

    work = tmp_path / "c"
    shutil.copytree(corpus, work)
    # an extra performance note in every measure defeats note-count matching
    perf = PerformanceSequence.from_unsorted(
        [PerformanceNote(60, 1.0 + 0.5 * i, 0.1) for i in range(30)])
    (work / "performances" / "synth_0001.mid").write_bytes(write_midi(perf))
    (work / "performances" / "synth_0002.mid").write_bytes(b"garbage")
    assert main(prepare_args(work, tmp_path / "out")) == EXIT_OK
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["pieces"]["synth_0001"]["status"] == "dropped"
    assert "matching" in report["pieces"]["synth_0001"]["reason"]
    assert report["pieces"]["synth_0002"]["status"] == "unreadable"
    assert any("synth_0002" in e["file"] for e in report["errors"])


def test_prepare_empty_output_fails(corpus, tmp_path):
    assert main(prepare_args(corpus, tmp_path / "x", "--signatures", "3/4")) == EXIT_VALIDATION
    assert not (tmp_path / "x" / "manifest.json").exists()


def test_missing_input_is_input_error(tmp_path):
    assert main(prepare_args(tmp_path / "nope", tmp_path / "out")) == EXIT_INPUT


def test_train_resume_evaluate(corpus, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(TINY_YAML)
    assert main(prepare_args(corpus, tmp_path / "data")) == EXIT_OK
    run = tmp_path / "run"
    assert main(["train", "--data", str(tmp_path / "data"), "--out", str(run), "--config", str(cfg),
                 "--max-epochs", "1"]) == EXIT_OK
    lines = (run / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["step"] == 2

    run2 = tmp_path / "run2"
    assert main(["train", "--data", str(tmp_path / "data"), "--out", str(run2), "--config", str(cfg),
                 "--resume", str(run / "last.ckpt")]) == EXIT_OK
    steps = [json.loads(x)["step"] for x in (run2 / "metrics.jsonl").read_text().splitlines()]
    assert steps == [4, 6]

    report = tmp_path / "report.json"
    assert main(["evaluate", "--checkpoint", str(run2 / "best.ckpt"), "--data", str(tmp_path / "data"),
                 "--out", str(report), "--beam", "2"]) == EXIT_OK
    data = json.loads(report.read_text())
    assert data["examples"] == 1 and 0 <= data["onset_f1"] <= 1

    # quantize a corpus performance end to end
    out = tmp_path / "q.musicxml"
    assert main(["quantize", str(corpus / "performances" / "synth_0000.mid"),
                 str(corpus / "annotations" / "synth_0000.txt"),
                 "--checkpoint", str(run2 / "best.ckpt"), "--out", str(out)]) == EXIT_OK
    assert check_musicxml(out.read_text()) == []


def test_train_divergence_exit_code(corpus, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(
        "model: {layers: 1, heads: 2, d_model: 16, d_kv: 8, d_ff: 32, dropout: 0.0}\n"
        "train: {batch_size: 4, max_epochs: 3, patience: 2, relative_step: false, lr: 1.0e+30, scale_parameter: false}\n"
    )
    assert main(prepare_args(corpus, tmp_path / "data")) == EXIT_OK
    code = main(["train", "--data", str(tmp_path / "data"), "--out", str(tmp_path / "run"), "--config", str(cfg)])
    assert code == EXIT_DIVERGED


def test_bad_config_is_validation_error(corpus, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("train: {bogus: 1}\n")
    assert main(prepare_args(corpus, tmp_path / "d", "--config", str(cfg))) == EXIT_VALIDATION


def _ckpt():
    return Checkpoint(TINY, Seq2Seq(TINY).state_dict())


def test_quantize_empty_performance_gives_empty_measures():
    beats = BeatAnnotations(tuple(float(i) for i in range(12)), (0.0, 4.0, 8.0), ((0, 4, 4),))
    result = quantize(PerformanceSequence(()), beats, _ckpt())
    root = ET.fromstring(result.musicxml)
    assert len(root.findall("part/measure")) == 3
    assert root.find(".//pitch") is None
    assert check_musicxml(result.musicxml) == []


def test_quantize_compound_meter_uses_18_ticks():
    # 6/8 counted in two: beats are dotted quarters
    beats = BeatAnnotations(tuple(0.9 * i for i in range(4)), (0.0, 1.8), ((0, 6, 8),))
    perf = PerformanceSequence.from_unsorted([PerformanceNote(60, 0.3, 0.2), PerformanceNote(62, 2.1, 0.6)])
    result = quantize(perf, beats, _ckpt(), beam=2)
    assert result.signatures == [TimeSignature(6, 8)] * 2
    assert len(result.score) == 2
    assert all(n.onset_ticks < 36 for n in result.score)
    assert check_musicxml(result.musicxml) == []


def test_quantize_rejects_vocab_mismatch():
    ckpt = _ckpt()
    ckpt.vocab_version = "old"
    beats = BeatAnnotations((0.0, 1.0), (0.0,))
    with pytest.raises(ValueError, match="vocabulary"):
        quantize(PerformanceSequence(()), beats, ckpt)


def test_quantize_cli_input_errors(tmp_path):
    ckpt_path = tmp_path / "m.ckpt"
    save_checkpoint(ckpt_path, _ckpt())
    midi = tmp_path / "p.mid"
    midi.write_bytes(b"not midi")
    ann = tmp_path / "p.txt"
    ann.write_text("0\t0\tdb\n1\t1\tb\n")
    assert main(["quantize", str(midi), str(ann), "--checkpoint", str(ckpt_path), "--out", str(tmp_path / "o.xml")]) == EXIT_INPUT
    bad_ckpt = tmp_path / "bad.ckpt"
    bad_ckpt.write_bytes(b"nope")
    midi.write_bytes(write_midi(PerformanceSequence(())))
    assert main(["quantize", str(midi), str(ann), "--checkpoint", str(bad_ckpt), "--out", str(tmp_path / "o.xml")]) == EXIT_INPUT
    assert not (tmp_path / "o.xml").exists()
