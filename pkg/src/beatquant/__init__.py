"""Beat-based rhythm quantization of performance MIDI."""

from .core import (
    BeatAnnotations,
    PerformanceNote,
    PerformanceSequence,
    ScoreNote,
    ScoreSequence,
    TimeSignature,
    ValidationError,
)
from .tokenizer import VOCAB_SIZE, VOCAB_VERSION, decode, encode

__version__ = "0.1.0"

__all__ = [
    "BeatAnnotations",
    "PerformanceNote",
    "PerformanceSequence",
    "ScoreNote",
    "ScoreSequence",
    "TimeSignature",
    "ValidationError",
    "VOCAB_SIZE",
    "VOCAB_VERSION",
    "decode",
    "encode",
]
