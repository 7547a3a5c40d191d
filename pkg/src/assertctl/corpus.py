"""Annotated corpus I/O and label statistics.

Two input formats are supported:

* the native format: one JSON object per line with the keys
  ``id, text, start, end, gold, dataset`` (``gold`` may be omitted);
* i2b2 2010 assertion standoff lines,
  ``c="<surface>" L:T L:T||t="problem"||a="<assertion>"``, resolved against
  the note text they annotate.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Union

from .core import LABELS, AnnotatedInstance, AssertionLabel, ConceptSpan, label_set, parse_label
from .errors import (
    CoordinateOutOfRange,
    DuplicateId,
    MalformedRecord,
    MissingGold,
    SpanOutOfBounds,
    StandoffParseError,
    TokenMismatch,
    UnknownLabel,
)

PathLike = Union[str, Path]

FIELDS = ("id", "text", "start", "end", "gold", "dataset")
_REQUIRED = {"id": str, "text": str, "start": int, "end": int, "dataset": str}


@dataclass(frozen=True)
class Corpus:
    instances: tuple[AnnotatedInstance, ...] = ()
    dataset: str = "all"

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        seen = set()
        for inst in self.instances:
            if inst.id in seen:
                raise ValueError(f"duplicate instance id {inst.id!r}")
            seen.add(inst.id)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def by_id(self) -> dict[str, AnnotatedInstance]:
        return {inst.id: inst for inst in self.instances}


def _dataset_tag(instances: Iterable[AnnotatedInstance]) -> str:
    tags = {inst.dataset for inst in instances}
    return tags.pop() if len(tags) == 1 else "all"


def instance_to_record(inst: AnnotatedInstance) -> dict:
    rec = {"id": inst.id, "text": inst.text, "start": inst.concept.start, "end": inst.concept.end}
    if inst.gold is not None:
        rec["gold"] = inst.gold.value
    rec["dataset"] = inst.dataset
    return rec


def record_to_instance(rec: object, line: int) -> AnnotatedInstance:
    if not isinstance(rec, dict):
        raise MalformedRecord(line, "record is not a JSON object")
    unknown = set(rec) - set(FIELDS)
    if unknown:
        raise MalformedRecord(line, f"unexpected fields {sorted(unknown)}")
    for key, typ in _REQUIRED.items():
        if key not in rec:
            raise MalformedRecord(line, f"missing field {key!r}")
        value = rec[key]
        # bool is an int subclass; reject it explicitly
        if not isinstance(value, typ) or isinstance(value, bool):
            raise MalformedRecord(line, f"field {key!r} must be {typ.__name__}")
    text, start, end = rec["text"], rec["start"], rec["end"]
    if not text:
        raise MalformedRecord(line, "empty text")
    if not 0 <= start < end <= len(text):
        raise SpanOutOfBounds(line, f"span [{start}, {end}) outside text of length {len(text)}")
    gold = rec.get("gold")
    if gold is not None:
        if not isinstance(gold, str):
            raise MalformedRecord(line, "field 'gold' must be a string")
        try:
            gold = parse_label(gold)
        except UnknownLabel as exc:
            raise MalformedRecord(line, str(exc)) from None
    return AnnotatedInstance(rec["id"], text, ConceptSpan(start, end, text[start:end]), gold, rec["dataset"])


def parse_corpus(path: PathLike) -> Corpus:
    """Parse a native corpus file, preserving line order."""
    instances = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(lineno, f"invalid JSON: {exc.msg}") from None
            inst = record_to_instance(rec, lineno)
            if inst.id in seen:
                raise DuplicateId(lineno, f"id {inst.id!r} already used on line {seen[inst.id]}")
            seen[inst.id] = lineno
            instances.append(inst)
    return Corpus(tuple(instances), _dataset_tag(instances))


def dumps_record(inst: AnnotatedInstance) -> str:
    return json.dumps(instance_to_record(inst), ensure_ascii=False)


def serialize_corpus(corpus: Corpus, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in corpus.instances:
            fh.write(dumps_record(inst) + "\n")


# -- i2b2 standoff ------------------------------------------------------------

_STANDOFF = re.compile(
    r'^c="(?P<surface>.*)" (?P<l1>\d+):(?P<t1>\d+) (?P<l2>\d+):(?P<t2>\d+)'
    r'\|\|t="(?P<type>[^"]*)"\|\|a="(?P<assertion>[^"]*)"$'
)
_TOKEN = re.compile(r"[^ \t\n\r\f\v]+")

I2B2_ASSERTIONS = {
    "present": AssertionLabel.POSITIVE,
    "absent": AssertionLabel.NEGATED,
    "possible": AssertionLabel.POSSIBLE,
    "hypothetical": AssertionLabel.HYPOTHETICAL,
    "associated_with_someone_else": AssertionLabel.FAMILY,
    "family": AssertionLabel.FAMILY,
}
SKIPPED_ASSERTIONS = {"conditional"}


class StandoffResult(NamedTuple):
    instances: list[AnnotatedInstance]
    skipped: list[str]


def _normalize_ws(s: str) -> str:
    return " ".join(s.split())


def parse_i2b2_assertion(text: str, assertion_lines: Iterable[str],
                         doc_id: str = "i2b2") -> StandoffResult:
    """Convert i2b2 line:token assertion annotations to character spans.

    Line numbers are 1-based, token offsets 0-based and the end token is
    inclusive. Tokens are maximal runs of non-whitespace. Concepts spanning
    more than one line are rejected. Conditional annotations are returned in
    ``skipped`` rather than as instances.
    """
    lines = text.split("\n")
    line_starts = []
    pos = 0
    for ln in lines:
        line_starts.append(pos)
        pos += len(ln) + 1

    instances: list[AnnotatedInstance] = []
    skipped: list[str] = []
    for k, raw in enumerate(assertion_lines):
        entry = raw.rstrip("\r\n")
        if not entry.strip():
            continue
        m = _STANDOFF.match(entry)
        if m is None:
            raise StandoffParseError(f"cannot parse standoff line: {entry!r}")
        if m["type"] != "problem":
            raise StandoffParseError(f"unsupported concept type {m['type']!r}: {entry!r}")
        assertion = m["assertion"].strip().lower()
        if assertion in SKIPPED_ASSERTIONS:
            skipped.append(entry)
            continue
        if assertion not in I2B2_ASSERTIONS:
            raise StandoffParseError(f"unknown assertion {m['assertion']!r}: {entry!r}")

        l1, t1, l2, t2 = (int(m[g]) for g in ("l1", "t1", "l2", "t2"))
        if l1 != l2:
            raise CoordinateOutOfRange(f"concept spans lines {l1}-{l2}: {entry!r}")
        if not 1 <= l1 <= len(lines):
            raise CoordinateOutOfRange(f"line {l1} outside note of {len(lines)} lines")
        tokens = list(_TOKEN.finditer(lines[l1 - 1]))
        if not 0 <= t1 <= t2 < len(tokens):
            raise CoordinateOutOfRange(f"tokens {t1}-{t2} outside line {l1} of {len(tokens)} tokens")

        start = line_starts[l1 - 1] + tokens[t1].start()
        end = line_starts[l1 - 1] + tokens[t2].end()
        recovered = text[start:end]
        # i2b2 lowercases concept strings
        if _normalize_ws(recovered).lower() != _normalize_ws(m["surface"]).lower():
            raise TokenMismatch(f"tokens {l1}:{t1}-{l2}:{t2} read {recovered!r}, annotation says {m['surface']!r}")
        instances.append(AnnotatedInstance(
            f"{doc_id}_{k}", text, ConceptSpan(start, end, recovered),
            I2B2_ASSERTIONS[assertion], "i2b2",
        ))
    return StandoffResult(instances, skipped)


# -- distribution -------------------------------------------------------------


@dataclass(frozen=True)
class DistributionRow:
    count: int
    percent: Decimal


@dataclass(frozen=True)
class DistributionTable:
    rows: dict[AssertionLabel, DistributionRow] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(r.count for r in self.rows.values())

    def render(self) -> str:
        lines = [f"{'Label':<14}{'Count':>8}  {'Percent':>8}"]
        for label, row in self.rows.items():
            lines.append(f"{label.display:<14}{row.count:>8}  {row.percent:>7}%")
        lines.append(f"{'Total':<14}{self.total:>8}")
        return "\n".join(lines)


def _percent(count: int, total: int) -> Decimal:
    return (Decimal(100 * count) / Decimal(total)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


def corpus_stats(corpus: Corpus, dataset: Optional[str] = None) -> DistributionTable:
    """Per-label counts and percentages, in canonical label order.

    Every label of the corpus's dataset gets a row (possibly zero); an empty
    corpus yields an empty table.
    """
    counts: Counter[AssertionLabel] = Counter()
    for inst in corpus.instances:
        if inst.gold is None:
            raise MissingGold(inst.id)
        counts[inst.gold] += 1
    total = sum(counts.values())
    if total == 0:
        return DistributionTable({})
    wanted = label_set(dataset or corpus.dataset) | set(counts)
    rows = {label: DistributionRow(counts[label], _percent(counts[label], total))
            for label in LABELS if label in wanted}
    return DistributionTable(rows)
