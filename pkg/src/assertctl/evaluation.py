"""F1 scoring from confusion matrices, plus side-by-side comparison with published scores."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .core import LABELS, AssertionLabel, parse_label
from .errors import DuplicatePrediction, EmptyEvaluation, UnknownInstanceId, UnknownSlice

log = logging.getLogger(__name__)

N_LABELS = len(LABELS)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts indexed ``[gold ordinal, predicted ordinal]``."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((N_LABELS, N_LABELS), dtype=np.int64))
    skipped: int = 0

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        if counts.shape != (N_LABELS, N_LABELS) or (counts < 0).any():
            raise ValueError("confusion counts must be a 6x6 non-negative matrix")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[AssertionLabel, AssertionLabel]]) -> "ConfusionMatrix":
        counts = np.zeros((N_LABELS, N_LABELS), dtype=np.int64)
        for gold, pred in pairs:
            counts[gold.ordinal, pred.ordinal] += 1
        return cls(counts)


def build_confusion(predictions, corpus) -> ConfusionMatrix:
    """Tabulate predictions against gold labels.

    ``predictions`` are objects with ``instance_id`` and ``label``. Instances
    without a gold label are skipped and counted in ``skipped``.
    """
    by_id = {inst.id: inst for inst in corpus}
    counts = np.zeros((N_LABELS, N_LABELS), dtype=np.int64)
    seen = set()
    skipped = 0
    for pred in predictions:
        inst = by_id.get(pred.instance_id)
        if inst is None:
            raise UnknownInstanceId(f"prediction for unknown instance {pred.instance_id!r}")
        if pred.instance_id in seen:
            raise DuplicatePrediction(f"more than one prediction for {pred.instance_id!r}")
        seen.add(pred.instance_id)
        if inst.gold is None:
            skipped += 1
            continue
        counts[inst.gold.ordinal, pred.label.ordinal] += 1
    if skipped:
        log.warning("skipped %d predictions for instances without gold labels", skipped)
    return ConfusionMatrix(counts, skipped)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def _f1(p: float, r: float) -> float:
    return _ratio(2 * p * r, p + r)


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float


def per_class_f1(matrix: ConfusionMatrix) -> dict[AssertionLabel, ClassScores]:
    c = matrix.counts
    out = {}
    for label in LABELS:
        i = label.ordinal
        tp = int(c[i, i])
        fp = int(c[:, i].sum()) - tp
        fn = int(c[i, :].sum()) - tp
        p = _ratio(tp, tp + fp)
        r = _ratio(tp, tp + fn)
        out[label] = ClassScores(p, r, _f1(p, r))
    return out


def micro_f1(matrix: ConfusionMatrix) -> float:
    """F1 from true/false positives and negatives pooled over all classes."""
    if matrix.n == 0:
        raise EmptyEvaluation("no scored instances")
    c = matrix.counts
    tp = int(np.trace(c))
    fp = sum(int(c[:, i].sum() - c[i, i]) for i in range(N_LABELS))
    fn = sum(int(c[i, :].sum() - c[i, i]) for i in range(N_LABELS))
    return _f1(_ratio(tp, tp + fp), _ratio(tp, tp + fn))


def macro_f1(matrix: ConfusionMatrix) -> float:
    """Unweighted mean F1 over labels that have gold support."""
    scores = per_class_f1(matrix)
    support = matrix.counts.sum(axis=1)
    present = [scores[l].f1 for l in LABELS if support[l.ordinal] > 0]
    return float(np.mean(present)) if present else 0.0


@dataclass(frozen=True)
class MetricReport:
    per_class: dict[AssertionLabel, ClassScores]
    micro_f1: float
    macro_f1: float
    support: dict[AssertionLabel, int]
    predicted: dict[AssertionLabel, int]
    n: int
    confusion: ConfusionMatrix

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "per_class": {
                l.value: {
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                    "support": self.support[l],
                    "predicted": self.predicted[l],
                }
                for l, s in self.per_class.items()
            },
            "labels": [l.value for l in LABELS],
            "confusion": self.confusion.counts.tolist(),
            "skipped": self.confusion.skipped,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricReport":
        per_class, support, predicted = {}, {}, {}
        for name, row in data["per_class"].items():
            label = parse_label(name)
            per_class[label] = ClassScores(row["precision"], row["recall"], row["f1"])
            support[label] = int(row["support"])
            predicted[label] = int(row["predicted"])
        return cls(per_class, data["micro_f1"], data["macro_f1"], support, predicted, data["n"],
                   ConfusionMatrix(np.array(data["confusion"]), data.get("skipped", 0)))

    def render(self) -> str:
        lines = [f"{'Label':<14}{'Precision':>10}{'Recall':>10}{'F1':>10}{'Support':>9}"]
        for label, s in self.per_class.items():
            lines.append(f"{label.display:<14}{s.precision:>10.4f}{s.recall:>10.4f}{s.f1:>10.4f}{self.support[label]:>9}")
        lines.append(f"micro-F1 {self.micro_f1:.4f}   macro-F1 {self.macro_f1:.4f}   n={self.n}")
        return "\n".join(lines)


def evaluate(matrix: ConfusionMatrix) -> MetricReport:
    c = matrix.counts
    return MetricReport(
        per_class=per_class_f1(matrix),
        micro_f1=micro_f1(matrix),
        macro_f1=macro_f1(matrix),
        support={l: int(c[l.ordinal, :].sum()) for l in LABELS},
        predicted={l: int(c[:, l.ordinal].sum()) for l in LABELS},
        n=matrix.n,
        confusion=matrix,
    )


def save_report(report: MetricReport, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_report(path: Union[str, Path]) -> MetricReport:
    return MetricReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- published reference scores ----------------------------------------------


@dataclass(frozen=True)
class ReferenceCell:
    text: str

    @property
    def value(self) -> Optional[float]:
        return None if self.text == "-" else float(self.text)


def _column(model: str, method: Optional[str]) -> str:
    return f"{model}/{method or '-'}".lower()


@dataclass(frozen=True)
class ReferenceTable:
    """Published F1 by (dataset, model, method, label). Display only."""

    cells: dict[tuple[str, str, str, AssertionLabel], ReferenceCell]
    columns: tuple[str, ...]
    version: str = "unversioned"

    def has_slice(self, dataset: str, model: str, method: Optional[str]) -> bool:
        ds = dataset.lower()
        col = _column(model, method)
        return any(k[0] == ds and f"{k[1]}/{k[2]}" == col for k in self.cells)

    def cell(self, dataset: str, model: str, method: Optional[str], label: AssertionLabel) -> ReferenceCell:
        m, _, meth = _column(model, method).partition("/")
        key = (dataset.lower(), m, meth, label)
        if key not in self.cells:
            raise UnknownSlice(f"no published score for {dataset}/{model}/{method or '-'}/{label.display}")
        return self.cells[key]

    def get(self, dataset: str, model: str, method: Optional[str], label: AssertionLabel) -> Optional[float]:
        return self.cell(dataset, model, method, label).value


def load_reference(path: Union[str, Path, None] = None) -> ReferenceTable:
    if path is None:
        text = resources.files("assertctl").joinpath("data/reference_f1.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    header = None
    version = "unversioned"
    cells = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            if line.startswith("# version:"):
                version = line.split(":", 1)[1].strip()
            continue
        cols = line.split("\t")
        if header is None:
            header = cols
            continue
        if len(cols) != len(header):
            raise ValueError(f"reference row has {len(cols)} columns, header has {len(header)}")
        dataset, label = cols[0].lower(), parse_label(cols[1])
        for name, value in zip(header[2:], cols[2:]):
            model, _, method = name.lower().partition("/")
            cells[(dataset, model, method, label)] = ReferenceCell(value.strip())
    if header is None:
        raise ValueError("reference table has no header")
    return ReferenceTable(cells, tuple(header[2:]), version)


def compare_report(report: MetricReport, reference: ReferenceTable, dataset: str, model: str,
                   method: Optional[str] = None) -> str:
    """Observed F1 next to the published F1 for one reference column."""
    if not reference.has_slice(dataset, model, method):
        raise UnknownSlice(f"no published column for {dataset}/{model}/{method or '-'}")
    lines = [
        f"Slice: {dataset} / {model} / {method or '-'}   (published values are reference, not targets)",
        f"{'Label':<14}{'Observed':>10}{'Published':>11}{'Delta':>10}",
    ]
    for label in LABELS:
        cell = reference.cell(dataset, model, method, label)
        scored = report.support.get(label, 0) or report.predicted.get(label, 0)
        observed = report.per_class[label].f1 if scored else None
        obs_text = "-" if observed is None else f"{observed:.4f}"
        if observed is None or cell.value is None:
            delta_text = "-"
        else:
            delta_text = f"{observed - cell.value:+.4f}"
        lines.append(f"{label.display:<14}{obs_text:>10}{cell.text:>11}{delta_text:>10}")
    return "\n".join(lines)
