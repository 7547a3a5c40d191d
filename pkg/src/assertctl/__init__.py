"""Clinical assertion detection toolkit."""

from .core import (
    DATASETS,
    ENGINES,
    LABELS,
    AnnotatedInstance,
    AssertionLabel,
    ConceptSpan,
    Prediction,
    ReasoningTrace,
    label_set,
    parse_label,
)

__version__ = "0.1.0"

__all__ = [
    "DATASETS",
    "ENGINES",
    "LABELS",
    "AnnotatedInstance",
    "AssertionLabel",
    "ConceptSpan",
    "Prediction",
    "ReasoningTrace",
    "label_set",
    "parse_label",
]
