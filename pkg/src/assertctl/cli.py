"""assertctl command line: stats / predict / evaluate / compare / lexicon-check.

Exit codes: 0 success, 1 no instance could be predicted, 2 input error,
3 backend authentication failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from .backend import API_KEY_ENV, DEFAULT_MAX_IN_FLIGHT, HttpBackend, MockBackend, MockScript
from .context import Dimension, load_lexicon
from .core import ENGINES, Prediction, parse_label
from .corpus import corpus_stats, parse_corpus
from .errors import AuthFailure, InputError, MalformedRecord
from .evaluation import (
    build_confusion,
    compare_report,
    evaluate,
    load_reference,
    load_report,
)
from .strategies import PROMPT_VERSION, EngineFailure, StrategyConfig, run_engine

log = logging.getLogger("assertctl")

EXIT_OK, EXIT_FAILED, EXIT_INPUT, EXIT_AUTH = 0, 1, 2, 3
HEADER_PREFIX = "# assertctl "


@dataclass(frozen=True)
class RunConfig:
    corpus: str
    engine: str
    out: str
    m: int = 5
    branching: int = 2
    depth: int = 2
    temperature: Optional[float] = None
    seed: int = 0
    few_shot: Optional[str] = None
    backend_url: Optional[str] = None
    model: str = "gpt-3.5-turbo"
    mock_script: Optional[str] = None
    lexicon: Optional[str] = None
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}")
        if self.engine != "rule" and (self.backend_url is None) == (self.mock_script is None):
            raise ValueError("LLM engines need exactly one of --backend-url or --mock-script")
        if self.max_in_flight < 1:
            raise ValueError("--max-in-flight must be >= 1")

    def recorded(self) -> dict:
        """Settings that determine the outputs; the output directory does not."""
        rec = asdict(self)
        del rec["out"]
        rec["prompt_version"] = PROMPT_VERSION
        return rec

    def fingerprint(self) -> str:
        blob = json.dumps(self.recorded(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def strategy_config(self) -> StrategyConfig:
        cfg = StrategyConfig(
            strategy=self.engine if self.engine != "rule" else "simple",
            m=self.m, branching=self.branching, depth=self.depth, seed=self.seed,
        )
        if self.temperature is not None:
            field = {"sc": "temperature_sc", "tot": "temperature_tot"}.get(self.engine, "temperature")
            cfg = replace(cfg, **{field: self.temperature})
        if self.few_shot:
            shots = []
            for inst in parse_corpus(self.few_shot):
                if inst.gold is None:
                    raise InputError(f"few-shot instance {inst.id!r} has no gold label")
                shots.append((inst, inst.gold))
            cfg = replace(cfg, few_shot=tuple(shots))
        return cfg


def _header(kind: str, fingerprint: str, config: dict) -> str:
    return HEADER_PREFIX + json.dumps({"kind": kind, "fingerprint": fingerprint, "config": config}, sort_keys=True)


def _write_lines(path: Path, lines: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


# -- commands -----------------------------------------------------------------


def cmd_stats(args) -> int:
    corpus = parse_corpus(args.corpus)
    table = corpus_stats(corpus)
    if table.rows:
        print(table.render())
    else:
        print("(empty corpus)")
    return EXIT_OK


def cmd_predict(args) -> int:
    config = RunConfig(
        corpus=args.corpus, engine=args.engine, out=args.out, m=args.m,
        branching=args.branching, depth=args.depth, temperature=args.temperature,
        seed=args.seed, few_shot=args.few_shot, backend_url=args.backend_url,
        model=args.model, mock_script=args.mock_script, lexicon=args.lexicon,
        max_in_flight=args.max_in_flight,
    )
    corpus = parse_corpus(config.corpus)
    lexicon = load_lexicon(config.lexicon) if config.engine == "rule" or config.lexicon else None
    backend = None
    if config.engine != "rule":
        if config.mock_script:
            backend = MockBackend(MockScript.load(config.mock_script))
        else:
            backend = HttpBackend(config.backend_url, model=config.model)

    try:
        results = run_engine(config.engine, corpus, config.strategy_config(), backend, lexicon,
                             config.max_in_flight)
    finally:
        if isinstance(backend, HttpBackend):
            backend.close()

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    fp = config.fingerprint()
    head = config.recorded()
    pred_lines = [_header("predictions", fp, head)]
    trace_lines = [_header("traces", fp, head)]
    ok = 0
    for res in results:
        if isinstance(res, Prediction):
            ok += 1
            pred_lines.append(json.dumps({"instance_id": res.instance_id, "engine": res.engine,
                                          "label": res.label.value}, ensure_ascii=False))
            trace_lines.append(json.dumps({"instance_id": res.instance_id, "engine": res.engine,
                                           "trace": res.trace.to_dict()}, ensure_ascii=False))
        else:
            pred_lines.append(json.dumps({"instance_id": res.instance_id, "engine": res.engine,
                                          "error": res.error, "kind": res.kind}, ensure_ascii=False))
            log.warning("%s: %s", res.instance_id, res.error)
    _write_lines(out / "predictions.jsonl", pred_lines)
    _write_lines(out / "traces.jsonl", trace_lines)
    failed = len(results) - ok
    print(f"{ok} predictions, {failed} errors -> {out / 'predictions.jsonl'} (fingerprint {fp})")
    if results and not ok:
        return EXIT_FAILED
    return EXIT_OK


def read_predictions(path) -> tuple[list[Prediction], list[EngineFailure]]:
    preds, failures = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip() or raw.startswith("#"):
                continue
            try:
                rec = json.loads(raw)
                if "error" in rec:
                    failures.append(EngineFailure(rec["instance_id"], rec["engine"], rec["error"], rec.get("kind", "")))
                else:
                    preds.append(Prediction(rec["instance_id"], parse_label(rec["label"]), rec["engine"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MalformedRecord(lineno, f"bad prediction record: {exc}") from None
    return preds, failures


def cmd_evaluate(args) -> int:
    corpus = parse_corpus(args.corpus)
    preds, failures = read_predictions(args.predictions)
    report = evaluate(build_confusion(preds, corpus))
    data = report.to_dict()
    canonical = sorted((p.instance_id, p.label.value) for p in preds)
    data["fingerprint"] = hashlib.sha256(
        json.dumps({"predictions": canonical,
                    "corpus": hashlib.sha256(Path(args.corpus).read_bytes()).hexdigest()}).encode()
    ).hexdigest()[:16]
    data["failed_predictions"] = len(failures)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    print(report.render())
    if failures:
        print(f"({len(failures)} instances had no prediction)")
    return EXIT_OK


def cmd_compare(args) -> int:
    report = load_report(args.report)
    reference = load_reference(args.reference)
    print(compare_report(report, reference, args.dataset, args.model, args.method))
    return EXIT_OK


def cmd_lexicon_check(args) -> int:
    lexicon = load_lexicon(args.lexicon)
    print(f"lexicon version {lexicon.version}: {len(lexicon)} triggers")
    for dim in Dimension:
        n = sum(1 for t in lexicon.triggers if t.dimension is dim)
        print(f"  {dim.value:<13}{n:>4}")
    print(f"  {'termination':<13}{sum(t.is_termination for t in lexicon.triggers):>4}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="assertctl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="label distribution of a corpus")
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("predict", help="run an engine over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--engine", required=True, choices=ENGINES)
    p.add_argument("--out", default="out")
    p.add_argument("--lexicon")
    p.add_argument("--backend-url")
    p.add_argument("--model", default="gpt-3.5-turbo")
    p.add_argument("--mock-script")
    p.add_argument("--m", type=int, default=5, help="self-consistency path count")
    p.add_argument("--branching", type=int, default=2)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--temperature", type=float, help="sampling temperature of the chosen engine")
    p.add_argument("--few-shot", help="corpus file of gold-labelled exemplars")
    p.add_argument("--max-in-flight", type=int, default=DEFAULT_MAX_IN_FLIGHT)
    p.add_argument("--seed", type=int, default=0, help="first self-consistency / ToT seed")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="F1 report for a predictions file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="observed vs published F1")
    p.add_argument("report")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--method")
    p.add_argument("--reference", help="reference table (default: shipped table)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("lexicon-check", help="validate a trigger lexicon")
    p.add_argument("--lexicon")
    p.set_defaults(func=cmd_lexicon_check)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AuthFailure as exc:
        print(f"error: authentication failed ({exc}); check {API_KEY_ENV}", file=sys.stderr)
        return EXIT_AUTH
    except (InputError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
