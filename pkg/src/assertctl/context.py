"""ConText-style rule engine.

Trigger phrases from a lexicon open a scope over neighbouring tokens of the
same sentence. A scope runs until the sentence boundary, a termination
phrase, or ``SCOPE_CAP`` tokens, whichever comes first. Every dimension whose
scope reaches the concept contributes, and the most specific one decides the
label (see ``PRECEDENCE``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence, Union

from .core import AnnotatedInstance, AssertionLabel
from .errors import DuplicateTrigger, MalformedLexiconLine

SCOPE_CAP = 10

_WORD = re.compile(r"\d+(?:\.\d+)?|[a-z0-9]+(?:[/'\-][a-z0-9]+)*", re.IGNORECASE)
_HARD_TERMINATORS = set("!?\n")
ABBREVIATIONS = frozenset({
    "dr", "mr", "mrs", "ms", "prof", "sr", "jr", "st", "pt", "pts", "vs",
    "approx", "dept", "hosp",
})


class Dimension(str, Enum):
    NEGATION = "negation"
    UNCERTAINTY = "uncertainty"
    HYPOTHETICAL = "hypothetical"
    HISTORICAL = "historical"
    EXPERIENCER = "experiencer"


class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    BIDIRECTIONAL = "bidirectional"


DIMENSION_LABEL = {
    Dimension.NEGATION: AssertionLabel.NEGATED,
    Dimension.UNCERTAINTY: AssertionLabel.POSSIBLE,
    Dimension.HYPOTHETICAL: AssertionLabel.HYPOTHETICAL,
    Dimension.HISTORICAL: AssertionLabel.HISTORICAL,
    Dimension.EXPERIENCER: AssertionLabel.FAMILY,
}
# highest priority first
PRECEDENCE = (
    Dimension.EXPERIENCER,
    Dimension.HISTORICAL,
    Dimension.HYPOTHETICAL,
    Dimension.NEGATION,
    Dimension.UNCERTAINTY,
)


class Token(NamedTuple):
    norm: str
    start: int
    end: int


class TokenRange(NamedTuple):
    """Half-open range ``[start, end)`` of token indices."""

    start: int
    end: int

    def __contains__(self, index: object) -> bool:  # type: ignore[override]
        return isinstance(index, int) and self.start <= index < self.end

    def __len__(self) -> int:
        return max(0, self.end - self.start)

    def indices(self) -> range:
        return range(self.start, self.end)


def tokenize(text: str) -> list[Token]:
    return [Token(m.group().lower(), m.start(), m.end()) for m in _WORD.finditer(text)]


def _ends_sentence(token: Token, gap: str) -> bool:
    if any(ch in _HARD_TERMINATORS for ch in gap):
        return True
    if "." in gap:
        return not (gap.startswith(".") and token.norm in ABBREVIATIONS)
    return False


def _sentences(text: str, tokens: Sequence[Token]) -> list[TokenRange]:
    ranges = []
    start = 0
    for i, tok in enumerate(tokens):
        gap_end = tokens[i + 1].start if i + 1 < len(tokens) else len(text)
        if _ends_sentence(tok, text[tok.end:gap_end]):
            ranges.append(TokenRange(start, i + 1))
            start = i + 1
    if start < len(tokens):
        ranges.append(TokenRange(start, len(tokens)))
    return ranges


def split_sentences(text: str) -> list[TokenRange]:
    """Split ``text`` into sentences, returned as ranges over ``tokenize(text)``.

    Breaks on ``.``, ``!``, ``?`` and newlines found between tokens. A period
    directly after a known abbreviation ("Dr.") does not end a sentence.
    """
    return _sentences(text, tokenize(text))


# -- lexicon ------------------------------------------------------------------


@dataclass(frozen=True)
class Trigger:
    phrase: tuple[str, ...]
    dimension: Optional[Dimension]
    direction: Optional[Direction]
    is_termination: bool = False

    def __post_init__(self):
        if not self.phrase:
            raise ValueError("empty trigger phrase")
        if self.is_termination:
            if self.dimension is not None or self.direction is not None:
                raise ValueError("termination triggers carry no dimension or direction")
        elif self.dimension is None or self.direction is None:
            raise ValueError("non-termination triggers need a dimension and direction")

    @property
    def text(self) -> str:
        return " ".join(self.phrase)

    def __len__(self) -> int:
        return len(self.phrase)


@dataclass(frozen=True)
class Lexicon:
    triggers: tuple[Trigger, ...]
    version: str = "unversioned"

    def __post_init__(self):
        index: dict[tuple[str, ...], list[Trigger]] = {}
        for trig in self.triggers:
            index.setdefault(trig.phrase, []).append(trig)
        by_first: dict[str, list[tuple[str, ...]]] = {}
        for phrase in index:
            by_first.setdefault(phrase[0], []).append(phrase)
        for phrases in by_first.values():
            phrases.sort(key=len, reverse=True)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_by_first", by_first)

    def __len__(self) -> int:
        return len(self.triggers)

    def match_at(self, norms: Sequence[str], pos: int, limit: int) -> list[Trigger]:
        """Triggers for the longest phrase starting at ``pos`` and ending before ``limit``."""
        for phrase in self._by_first.get(norms[pos], ()):  # type: ignore[attr-defined]
            end = pos + len(phrase)
            if end <= limit and tuple(norms[pos:end]) == phrase:
                return self._index[phrase]  # type: ignore[attr-defined]
        return []

    def dimensions(self) -> set[Dimension]:
        return {t.dimension for t in self.triggers if t.dimension is not None}


def _phrase_tokens(phrase: str) -> tuple[str, ...]:
    return tuple(t.norm for t in tokenize(phrase))


def parse_lexicon(lines: Iterable[str]) -> Lexicon:
    triggers = []
    seen: dict[tuple, int] = {}
    version = "unversioned"
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        if line.lstrip().startswith("#"):
            m = re.match(r"#\s*version:\s*(\S+)", line.strip())
            if m:
                version = m.group(1)
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise MalformedLexiconLine(lineno, f"expected 4 tab-separated columns, got {len(cols)}")
        phrase_text, dim_text, dir_text, term_text = (c.strip() for c in cols)
        phrase = _phrase_tokens(phrase_text)
        if not phrase:
            raise MalformedLexiconLine(lineno, "empty phrase")
        if term_text.lower() not in ("true", "false"):
            raise MalformedLexiconLine(lineno, f"is_termination must be true or false, got {term_text!r}")
        is_term = term_text.lower() == "true"
        try:
            dimension = None if is_term and dim_text == "-" else Dimension(dim_text.lower())
            direction = None if is_term and dir_text == "-" else Direction(dir_text.lower())
        except ValueError as exc:
            raise MalformedLexiconLine(lineno, str(exc)) from None
        try:
            trigger = Trigger(phrase, None if is_term else dimension, None if is_term else direction, is_term)
        except ValueError as exc:
            raise MalformedLexiconLine(lineno, str(exc)) from None
        key = (trigger.phrase, trigger.dimension, trigger.direction)
        if key in seen:
            raise DuplicateTrigger(lineno, f"{phrase_text!r} duplicates line {seen[key]}")
        seen[key] = lineno
        triggers.append(trigger)
    return Lexicon(tuple(triggers), version)


def load_lexicon(path: Union[str, Path, None] = None) -> Lexicon:
    """Load a lexicon file, or the embedded default when ``path`` is None."""
    if path is None:
        text = resources.files("assertctl").joinpath("data/default_lexicon.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_lexicon(text.splitlines())


_DEFAULT: Optional[Lexicon] = None


def default_lexicon() -> Lexicon:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_lexicon()
    return _DEFAULT


# -- scope and classification -------------------------------------------------


def resolve_scope(trigger_position: int, trigger: Trigger, sentence: TokenRange,
                  terminators: Sequence[TokenRange] = ()) -> TokenRange:
    """Token range governed by ``trigger`` occurring at ``trigger_position``.

    Bidirectional triggers return the hull of both sides; the trigger's own
    tokens are never counted as in scope (use ``scope_indices``).
    """
    after = trigger_position + len(trigger)
    fwd = TokenRange(after, after)
    bwd = TokenRange(trigger_position, trigger_position)

    if trigger.direction in (Direction.FORWARD, Direction.BIDIRECTIONAL):
        end = min(sentence.end, after + SCOPE_CAP)
        for term in terminators:
            if after <= term.start < end:
                end = term.start
        fwd = TokenRange(after, max(after, end))
    if trigger.direction in (Direction.BACKWARD, Direction.BIDIRECTIONAL):
        start = max(sentence.start, trigger_position - SCOPE_CAP)
        for term in terminators:
            if start < term.end <= trigger_position:
                start = term.end
        bwd = TokenRange(min(start, trigger_position), trigger_position)

    if trigger.direction is Direction.FORWARD:
        return fwd
    if trigger.direction is Direction.BACKWARD:
        return bwd
    if not len(bwd):
        return fwd
    if not len(fwd):
        return bwd
    return TokenRange(bwd.start, fwd.end)


def scope_indices(scope: TokenRange, trigger_position: int, trigger: Trigger) -> set[int]:
    own = range(trigger_position, trigger_position + len(trigger))
    return {i for i in scope.indices() if i not in own}


@dataclass(frozen=True)
class FiredTrigger:
    trigger: Trigger
    position: int
    scope: TokenRange


@dataclass(frozen=True)
class RuleTrace:
    fired: tuple[FiredTrigger, ...] = ()
    final_dimensions: frozenset[Dimension] = frozenset()

    def describe(self) -> tuple[str, ...]:
        out = []
        for f in self.fired:
            kind = "terminate" if f.trigger.is_termination else f"{f.trigger.dimension.value}/{f.trigger.direction.value}"
            out.append(f"{f.trigger.text!r} @{f.position} {kind} scope=[{f.scope.start},{f.scope.end})")
        out.append("dimensions=" + ",".join(sorted(d.value for d in self.final_dimensions)))
        return tuple(out)


def label_for(dimensions: Iterable[Dimension]) -> AssertionLabel:
    present = set(dimensions)
    for dim in PRECEDENCE:
        if dim in present:
            return DIMENSION_LABEL[dim]
    return AssertionLabel.POSITIVE


def classify_rule(instance: AnnotatedInstance, lexicon: Optional[Lexicon] = None) -> tuple[AssertionLabel, RuleTrace]:
    """Label one concept mention with the rule engine."""
    lexicon = lexicon or default_lexicon()
    tokens = tokenize(instance.text)
    span = instance.concept
    concept = [i for i, t in enumerate(tokens) if t.start < span.end and t.end > span.start]
    if not concept:
        return AssertionLabel.POSITIVE, RuleTrace()
    sentence = next(s for s in _sentences(instance.text, tokens) if concept[0] in s)
    concept_set = set(concept)
    norms = [t.norm for t in tokens]

    matches: list[tuple[int, Trigger]] = []
    for pos in sentence.indices():
        for trig in lexicon.match_at(norms, pos, sentence.end):
            # triggers inside the concept mention itself are part of the concept
            if concept_set.isdisjoint(range(pos, pos + len(trig))):
                matches.append((pos, trig))

    terminators = [TokenRange(pos, pos + len(t)) for pos, t in matches if t.is_termination]
    fired = []
    dimensions = set()
    for pos, trig in matches:
        if trig.is_termination:
            fired.append(FiredTrigger(trig, pos, TokenRange(pos, pos + len(trig))))
            continue
        scope = resolve_scope(pos, trig, sentence, terminators)
        fired.append(FiredTrigger(trig, pos, scope))
        if not concept_set.isdisjoint(scope_indices(scope, pos, trig)):
            dimensions.add(trig.dimension)
    return label_for(dimensions), RuleTrace(tuple(fired), frozenset(dimensions))
