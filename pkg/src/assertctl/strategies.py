"""Prompting engines: Simple, Chain-of-Thought, Self-Consistency, Tree-of-Thought.

Every prompt ends with the output contract ``ANSWER: <label>``; the
tree-of-thought scorer answers ``SCORE: <decimal in [0, 1]>``.
"""

from __future__ import annotations

import itertools
import re
from collections import Counter
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from statistics import fmean
from typing import Optional, Sequence, Union

from .backend import DEFAULT_MAX_IN_FLIGHT, Backend, CompletionRequest, complete_batch
from .context import Lexicon, classify_rule
from .core import LABELS, AnnotatedInstance, AssertionLabel, Prediction, ReasoningTrace, parse_label
from .errors import AllPathsUnparseable, AssertctlError, AuthFailure, Unparseable

STRATEGIES = ("simple", "cot", "sc", "tot")
PROMPT_VERSION = "1"

LABEL_HELP = {
    AssertionLabel.POSITIVE: "the condition is present in the patient now",
    AssertionLabel.NEGATED: "the note denies or rules out the condition",
    AssertionLabel.POSSIBLE: "the note is uncertain whether the condition is there",
    AssertionLabel.HYPOTHETICAL: "the condition is discussed as something that could happen later",
    AssertionLabel.HISTORICAL: "the condition belonged to the patient's past and is not current",
    AssertionLabel.FAMILY: "the condition concerns a relative rather than the patient",
}

_PLACEHOLDER = re.compile(r"\{(concept|text|labels|examples|steps|step)\}")
_ANSWER_LINE = re.compile(r"^\s*ANSWER\s*:\s*\**\s*([A-Za-z]+)\s*\**\s*\.?\s*$", re.IGNORECASE)
_LABEL_WORD = re.compile(r"\b(" + "|".join(l.value for l in LABELS) + r")\b", re.IGNORECASE)
_SCORE_LINE = re.compile(r"^\s*SCORE\s*:\s*([0-9]*\.?[0-9]+)\s*$", re.IGNORECASE)
FALLBACK_WINDOW = 200


class ScoreUnparseable(AssertctlError):
    pass


@dataclass(frozen=True)
class StrategyConfig:
    """Knobs for the LLM engines.

    ``m`` is the self-consistency path count; ``branching`` and ``depth``
    shape the tree-of-thought beam. Sampled calls (self-consistency paths,
    ToT candidate steps) use their own temperature; every other call uses
    ``temperature``.
    """

    strategy: str = "simple"
    m: int = 5
    temperature: float = 0.0
    temperature_sc: float = 0.7
    temperature_tot: float = 0.7
    branching: int = 2
    depth: int = 2
    few_shot: tuple[tuple[AnnotatedInstance, AssertionLabel], ...] = ()
    seed: int = 0
    max_tokens: int = 512

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.m < 1 or self.branching < 1 or self.depth < 1:
            raise ValueError("m, branching and depth must be >= 1")
        if self.strategy == "sc" and self.temperature_sc <= 0:
            raise ValueError("self-consistency needs temperature_sc > 0")


@dataclass(frozen=True)
class ScoredPath:
    steps: tuple[str, ...]
    label: Optional[AssertionLabel]
    score: float


@dataclass(frozen=True)
class EngineFailure:
    """Error slot standing in for the prediction of one instance."""

    instance_id: str
    engine: str
    error: str
    kind: str


# -- prompts ------------------------------------------------------------------


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    raw = resources.files("assertctl").joinpath(f"prompts/{name}.txt").read_text(encoding="utf-8")
    return "".join(line for line in raw.splitlines(keepends=True) if not line.startswith("# prompt-version:"))


def render(template: str, **values: str) -> str:
    # single pass so substituted note text is never re-expanded
    return _PLACEHOLDER.sub(lambda m: values.get(m.group(1), m.group(0)), template)


def format_labels() -> str:
    return "\n".join(f"- {label.display}: {LABEL_HELP[label]}" for label in LABELS)


def format_examples(few_shot: Sequence[tuple[AnnotatedInstance, AssertionLabel]]) -> str:
    if not few_shot:
        return ""
    blocks = []
    for k, (inst, gold) in enumerate(few_shot, start=1):
        blocks.append(
            f"Example {k}\n"
            f'Note: """{inst.text}"""\n'
            f'Concept: "{inst.concept.surface}"\n'
            f"ANSWER: {gold.display}\n"
        )
    return "Worked examples:\n\n" + "\n".join(blocks) + "\nNow the case to decide.\n\n"


def _values(instance: AnnotatedInstance, config: StrategyConfig) -> dict:
    return {
        "concept": instance.concept.surface,
        "text": instance.text,
        "labels": format_labels(),
        "examples": format_examples(config.few_shot),
    }


def build_prompt(strategy: str, instance: AnnotatedInstance, config: StrategyConfig,
                 steps: Sequence[str] = ()) -> CompletionRequest:
    """Request for one call of ``strategy`` on ``instance``.

    ``sc`` produces the CoT prompt at the sampling temperature; ``tot``
    produces the next-step prompt extending ``steps``.
    """
    values = _values(instance, config)
    if strategy == "simple":
        user, temp = render(load_template("simple"), **values), config.temperature
    elif strategy == "cot":
        user, temp = render(load_template("cot"), **values), config.temperature
    elif strategy == "sc":
        user, temp = render(load_template("cot"), **values), config.temperature_sc
    elif strategy == "tot":
        so_far = "\n".join(f"{i}. {s}" for i, s in enumerate(steps, start=1)) or "(none yet)"
        user, temp = render(load_template("tot_step"), steps=so_far, **values), config.temperature_tot
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return CompletionRequest(
        system=load_template("system").strip(),
        user=user,
        temperature=temp,
        max_tokens=config.max_tokens,
        instance_id=instance.id,
    )


def build_score_prompt(instance: AnnotatedInstance, step: str, config: StrategyConfig) -> CompletionRequest:
    user = render(load_template("tot_score"), concept=instance.concept.surface, text=instance.text, step=step)
    return CompletionRequest(system=load_template("system").strip(), user=user,
                             temperature=config.temperature, max_tokens=config.max_tokens,
                             instance_id=instance.id)


# -- parsing ------------------------------------------------------------------


def parse_answer(completion: str) -> AssertionLabel:
    """Label from the last ``ANSWER: <label>`` line, else from the last label
    word in the final 200 characters."""
    for line in reversed(completion.splitlines()):
        m = _ANSWER_LINE.match(line)
        if m:
            try:
                return parse_label(m.group(1))
            except ValueError:
                continue
    words = _LABEL_WORD.findall(completion[-FALLBACK_WINDOW:])
    if words:
        return parse_label(words[-1])
    raise Unparseable(completion[-80:])


def parse_score(completion: str) -> float:
    for line in reversed(completion.splitlines()):
        m = _SCORE_LINE.match(line)
        if m:
            value = float(m.group(1))
            if 0.0 <= value <= 1.0:
                return value
            break
    raise ScoreUnparseable(f"no SCORE in [0,1]: {completion[-80:]!r}")


# -- aggregation --------------------------------------------------------------


def aggregate_sc(votes: Sequence[AssertionLabel]) -> AssertionLabel:
    """Most frequent vote; ties go to the lowest canonical ordinal."""
    if not votes:
        raise ValueError("cannot aggregate an empty vote set")
    counts = Counter(votes)
    return min(counts, key=lambda label: (-counts[label], label.ordinal))


def select_best(scores: Sequence[float]) -> int:
    """Index of the highest score; the earliest index wins ties."""
    if not scores:
        raise ValueError("no paths to select from")
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return best


# -- engines ------------------------------------------------------------------


def _responses(backend: Backend, requests: Sequence[CompletionRequest], max_in_flight: int) -> list:
    results = complete_batch(backend, requests, max_in_flight, return_exceptions=True)
    for r in results:
        if isinstance(r, AuthFailure):
            raise r
    return results


def _single_prediction(engine: str, request: CompletionRequest, response) -> Prediction:
    if isinstance(response, Exception):
        raise response
    label = parse_answer(response.text)
    return Prediction(request.instance_id, label, engine, ReasoningTrace(steps=((request.user, response.text),)))


def _sc_requests(instance: AnnotatedInstance, config: StrategyConfig) -> list[CompletionRequest]:
    base = build_prompt("sc", instance, config)
    return [replace(base, seed=config.seed + i, call_index=i) for i in range(config.m)]


def _sc_prediction(instance: AnnotatedInstance, requests, responses) -> Prediction:
    for r in responses:
        if isinstance(r, Exception):
            raise r
    votes: list[Optional[AssertionLabel]] = []
    notes = []
    for i, resp in enumerate(responses):
        try:
            votes.append(parse_answer(resp.text))
        except Unparseable:
            votes.append(None)
            notes.append(f"path {i} unparseable; dropped from vote")
    valid = [v for v in votes if v is not None]
    if not valid:
        raise AllPathsUnparseable(f"all {len(votes)} self-consistency paths unparseable for {instance.id!r}")
    trace = ReasoningTrace(
        steps=tuple((req.user, resp.text) for req, resp in zip(requests, responses)),
        votes=tuple(votes),
        notes=tuple(notes),
    )
    return Prediction(instance.id, aggregate_sc(valid), "sc", trace)


def run_simple(instance: AnnotatedInstance, config: StrategyConfig, backend: Backend) -> Prediction:
    req = replace(build_prompt("simple", instance, config), call_index=0)
    return _single_prediction("simple", req, backend.complete(req))


def run_cot(instance: AnnotatedInstance, config: StrategyConfig, backend: Backend) -> Prediction:
    req = replace(build_prompt("cot", instance, config), call_index=0)
    return _single_prediction("cot", req, backend.complete(req))


def run_sc(instance: AnnotatedInstance, config: StrategyConfig, backend: Backend,
           max_in_flight: int = DEFAULT_MAX_IN_FLIGHT) -> Prediction:
    """Sample ``m`` CoT paths (seeds seed..seed+m-1) and take the majority label."""
    requests = _sc_requests(instance, config)
    return _sc_prediction(instance, requests, _responses(backend, requests, max_in_flight))


@dataclass(frozen=True)
class _Node:
    steps: tuple[str, ...]
    scores: tuple[float, ...]
    order: int

    @property
    def value(self) -> float:
        return fmean(self.scores) if self.scores else 0.0


def run_tot(instance: AnnotatedInstance, config: StrategyConfig, backend: Backend,
            max_in_flight: int = DEFAULT_MAX_IN_FLIGHT) -> Prediction:
    """Breadth-first beam search over reasoning steps.

    Each level expands every frontier node into ``branching`` candidate
    steps and asks the model to score each one. The ``branching`` nodes
    with the best mean step score survive. The answer comes from the final step of the
    best complete path.
    """
    b, d = config.branching, config.depth
    call_index = itertools.count()
    created = itertools.count()
    log: list[tuple[str, str]] = []
    notes: list[str] = []
    frontier = [_Node((), (), next(created))]

    for level in range(d):
        gen_reqs, parents = [], []
        for node in frontier:
            base = build_prompt("tot", instance, config, node.steps)
            for j in range(b):
                gen_reqs.append(replace(base, seed=config.seed + j, call_index=next(call_index)))
                parents.append(node)
        gens = _responses(backend, gen_reqs, max_in_flight)
        for g in gens:
            if isinstance(g, Exception):
                raise g
        log.extend((req.user, g.text) for req, g in zip(gen_reqs, gens))

        score_reqs = [replace(build_score_prompt(instance, g.text.strip(), config), call_index=next(call_index))
                      for g in gens]
        scored = _responses(backend, score_reqs, max_in_flight)
        for s in scored:
            if isinstance(s, Exception):
                raise s
        log.extend((req.user, s.text) for req, s in zip(score_reqs, scored))

        candidates = []
        for parent, g, s in zip(parents, gens, scored):
            try:
                value = parse_score(s.text)
            except ScoreUnparseable:
                value = 0.0
                notes.append(f"level {level}: step score unparseable, scored 0.0")
            candidates.append(_Node(parent.steps + (g.text.strip(),), parent.scores + (value,), next(created)))
        # stable sort keeps generation order among equal values
        frontier = sorted(candidates, key=lambda n: -n.value)[:b]

    frontier.sort(key=lambda n: n.order)
    paths = []
    for node in frontier:
        try:
            label: Optional[AssertionLabel] = parse_answer(node.steps[-1])
        except Unparseable:
            label = None
        paths.append(ScoredPath(node.steps, label, node.value))
    usable = [i for i, p in enumerate(paths) if p.label is not None]
    if not usable:
        raise AllPathsUnparseable(f"no tree-of-thought path yielded a label for {instance.id!r}")
    chosen = usable[select_best([paths[i].score for i in usable])]
    notes.append(f"selected path {chosen} of {len(paths)}")
    trace = ReasoningTrace(steps=tuple(log), path_scores=tuple(p.score for p in paths), notes=tuple(notes))
    return Prediction(instance.id, paths[chosen].label, "tot", trace)


def _failure(instance: AnnotatedInstance, engine: str, exc: Exception) -> EngineFailure:
    return EngineFailure(instance.id, engine, str(exc), type(exc).__name__)


PredictionResult = Union[Prediction, EngineFailure]


def run_engine(engine: str, corpus, config: Optional[StrategyConfig] = None,
               backend: Optional[Backend] = None, lexicon: Optional[Lexicon] = None,
               max_in_flight: int = DEFAULT_MAX_IN_FLIGHT) -> list[PredictionResult]:
    """One result per instance, in corpus order.

    Per-instance failures become ``EngineFailure`` slots; an authentication
    failure aborts the whole run.
    """
    instances = list(corpus)
    if engine == "rule":
        out: list[PredictionResult] = []
        for inst in instances:
            label, rule_trace = classify_rule(inst, lexicon)
            out.append(Prediction(inst.id, label, "rule", ReasoningTrace(notes=rule_trace.describe())))
        return out
    if engine not in STRATEGIES:
        raise ValueError(f"unknown engine {engine!r}")
    if backend is None:
        raise ValueError(f"engine {engine!r} needs a backend")
    config = replace(config or StrategyConfig(strategy=engine), strategy=engine)

    if engine in ("simple", "cot"):
        requests = [replace(build_prompt(engine, inst, config), call_index=0) for inst in instances]
        responses = _responses(backend, requests, max_in_flight)
        out = []
        for inst, req, resp in zip(instances, requests, responses):
            try:
                out.append(_single_prediction(engine, req, resp))
            except AssertctlError as exc:
                out.append(_failure(inst, engine, exc))
        return out

    if engine == "sc":
        per_instance = [_sc_requests(inst, config) for inst in instances]
        flat = [r for reqs in per_instance for r in reqs]
        responses = _responses(backend, flat, max_in_flight)
        out = []
        for k, (inst, reqs) in enumerate(zip(instances, per_instance)):
            chunk = responses[k * config.m:(k + 1) * config.m]
            try:
                out.append(_sc_prediction(inst, reqs, chunk))
            except AssertctlError as exc:
                out.append(_failure(inst, engine, exc))
        return out

    out = []
    for inst in instances:
        try:
            out.append(run_tot(inst, config, backend, max_in_flight))
        except AuthFailure:
            raise
        except AssertctlError as exc:
            out.append(_failure(inst, engine, exc))
    return out
