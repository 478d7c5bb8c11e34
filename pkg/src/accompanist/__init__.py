"""Score following and automatic accompaniment with error-tolerant HMMs."""

from .errors import (
    AccompanistError,
    EmptyScore,
    NumericalUnderflow,
    OneHandEmpty,
    ParseError,
    UnsupportedFormat,
)
from .score import (
    AccompanimentNote,
    Hand,
    QuantizedScore,
    Score,
    ScoreEvent,
    ScoreFormat,
    ScoreUnit,
    parse_score,
    pitch_class_of,
    quantize,
)
from .hmm import CompileOptions, HmmParams, StateLayout, TrainOptions, baum_welch, compile_score

__version__ = "0.1.0"

__all__ = [
    "AccompanistError", "EmptyScore", "NumericalUnderflow", "OneHandEmpty", "ParseError",
    "UnsupportedFormat", "AccompanimentNote", "Hand", "QuantizedScore", "Score", "ScoreEvent",
    "ScoreFormat", "ScoreUnit", "parse_score", "pitch_class_of", "quantize", "CompileOptions",
    "HmmParams", "StateLayout", "TrainOptions", "baum_welch", "compile_score",
]
