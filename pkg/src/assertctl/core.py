"""Label scheme plus the instance and prediction records shared across modules."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .errors import UnknownDataset, UnknownLabel


class AssertionLabel(Enum):
    """The six assertion categories, declared in canonical ordinal order.

    The declaration order doubles as the tie-breaking order used by every
    aggregation step (lower ordinal wins).
    """

    POSITIVE = "positive"
    NEGATED = "negated"
    POSSIBLE = "possible"
    HYPOTHETICAL = "hypothetical"
    HISTORICAL = "historical"
    FAMILY = "family"

    @property
    def ordinal(self) -> int:
        return _ORDINALS[self]

    @property
    def display(self) -> str:
        return self.value.capitalize()

    @classmethod
    def from_ordinal(cls, ordinal: int) -> "AssertionLabel":
        return LABELS[ordinal]

    def __str__(self) -> str:
        return self.value


LABELS: tuple[AssertionLabel, ...] = tuple(AssertionLabel)
_ORDINALS = {label: i for i, label in enumerate(LABELS)}

# i2b2 names for the same categories
_ALIASES = {
    "present": AssertionLabel.POSITIVE,
    "absent": AssertionLabel.NEGATED,
}

ENGINES = ("rule", "simple", "cot", "sc", "tot")
DATASETS = ("i2b2", "sleep", "all")


def parse_label(text: str) -> AssertionLabel:
    """Parse a label name, case-insensitively, accepting i2b2 aliases."""
    key = text.strip().lower()
    try:
        return AssertionLabel(key)
    except ValueError:
        pass
    if key in _ALIASES:
        return _ALIASES[key]
    raise UnknownLabel(f"unknown assertion label: {text!r}")


def label_set(dataset: str) -> frozenset[AssertionLabel]:
    """Labels annotated in ``dataset``; i2b2 has no Historical category."""
    if dataset == "i2b2":
        return frozenset(LABELS) - {AssertionLabel.HISTORICAL}
    if dataset in ("sleep", "all"):
        return frozenset(LABELS)
    raise UnknownDataset(f"unknown dataset {dataset!r}; expected one of {DATASETS}")


@dataclass(frozen=True)
class ConceptSpan:
    start: int
    end: int
    surface: str


@dataclass(frozen=True)
class AnnotatedInstance:
    id: str
    text: str
    concept: ConceptSpan
    gold: Optional[AssertionLabel] = None
    dataset: str = "all"

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"instance {self.id!r}: empty text")
        c = self.concept
        if not 0 <= c.start < c.end <= len(self.text):
            raise ValueError(
                f"instance {self.id!r}: span [{c.start}, {c.end}) outside text of length {len(self.text)}"
            )
        if self.text[c.start:c.end] != c.surface:
            raise ValueError(f"instance {self.id!r}: surface does not match text at span")

    @classmethod
    def from_offsets(cls, id: str, text: str, start: int, end: int,
                     gold: Optional[AssertionLabel] = None,
                     dataset: str = "all") -> "AnnotatedInstance":
        return cls(id, text, ConceptSpan(start, end, text[start:end]), gold, dataset)

    @classmethod
    def from_surface(cls, id: str, text: str, surface: str,
                     gold: Optional[AssertionLabel] = None,
                     dataset: str = "all") -> "AnnotatedInstance":
        """Build an instance whose concept is the first occurrence of ``surface``."""
        start = text.find(surface)
        if start < 0:
            raise ValueError(f"{surface!r} not found in text")
        return cls.from_offsets(id, text, start, start + len(surface), gold, dataset)


@dataclass(frozen=True)
class ReasoningTrace:
    """Everything an engine saw and produced on the way to one label.

    ``steps`` holds (prompt, completion) pairs in call order. For
    self-consistency ``votes`` has one slot per sampled path, ``None`` where
    the path could not be parsed. For tree-of-thought ``path_scores`` holds
    the heuristic value of every complete path in generation order.
    """

    steps: tuple[tuple[str, str], ...] = ()
    votes: Optional[tuple[Optional[AssertionLabel], ...]] = None
    path_scores: Optional[tuple[float, ...]] = None
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "steps": [{"prompt": p, "completion": c} for p, c in self.steps],
            "votes": None if self.votes is None else [None if v is None else v.value for v in self.votes],
            "path_scores": None if self.path_scores is None else list(self.path_scores),
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class Prediction:
    instance_id: str
    label: AssertionLabel
    engine: str
    trace: ReasoningTrace = field(default_factory=ReasoningTrace)

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}")
