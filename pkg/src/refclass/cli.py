"""Command-line interface: ``classify``, ``generate``, ``evaluate`` and ``taxonomy``.

Exit codes: 0 success, 1 invalid arguments or input data, 2 I/O failure,
3 internal invariant violation. Outputs are staged and only moved into the
output directory once every file has been written.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .corpus import CorpusError, RESEARCH_DOC_TYPES, DocType, filter_doc_types, load_corpus
from .engine import (
    ClassificationResult,
    EngineError,
    Level,
    Mode,
    PipelineConfig,
    SizeMetric,
    TiebreakSource,
    run_pipeline,
)
from .metrics import DEFAULT_SAMPLE_SIZE, MetricsError, compute_metrics, export_sample, write_category_sizes, write_coverage
from .results import ResultFileError, read_result, write_distributions, write_result
from .synth import (
    GeneratorConfig,
    GeneratorError,
    generate,
    generated_taxonomy,
    read_truth,
    score_against_truth,
    write_generated,
)
from .taxonomy import TaxonomyError, load_taxonomy, serialize_taxonomy
from .textfallback import TextFallbackError, apply_text_fallback

log = logging.getLogger("refclass")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3
THREADS_ENV = "REFCLASS_THREADS"


class UsageError(Exception):
    pass


class InvariantViolation(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    if raw == "max":
        return os.cpu_count() or 1
    return _threads(raw)


def _threads(value: str) -> int:
    if value == "max":
        return os.cpu_count() or 1
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("thread count must be >= 1")
    return n


def _probability(value: str) -> float:
    p = float(value)
    if not 0.0 <= p <= 1.0:
        raise argparse.ArgumentTypeError(f"{value} is not a probability in [0, 1]")
    return p


def _doc_types(value: str):
    if value == "all":
        return "all"
    out = []
    for part in value.split(","):
        name = part.strip().upper()
        if name not in DocType.__members__:
            raise argparse.ArgumentTypeError(f"unknown document type {part!r}")
        out.append(DocType[name])
    return out


def sha256_of(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@contextmanager
def staged_output(out_dir: Path):
    """Yield a scratch directory whose files are moved into ``out_dir`` on success."""
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".refclass-", dir=out_dir.parent))
    try:
        yield stage
        out_dir.mkdir(parents=True, exist_ok=True)
        for f in sorted(stage.iterdir()):
            os.replace(f, out_dir / f.name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def _require_files(*paths) -> None:
    for p in paths:
        if p is None:
            continue
        if p == "default":
            continue
        if not Path(p).is_file():
            raise FileNotFoundError(f"input file not found: {p}")


def _write_manifest(stage: Path, command: str, config: dict, inputs: dict[str, str | None]) -> None:
    outputs = {f.name: sha256_of(f) for f in sorted(stage.iterdir())}
    manifest = {
        "artifact": "refclass",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {
            name: {"path": str(p), "sha256": sha256_of(p) if p not in (None, "default") else None}
            for name, p in inputs.items() if p is not None
        },
        "outputs": outputs,
    }
    (stage / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _levels(value: str) -> list[Level]:
    return [Level.SUBJECT, Level.BROAD] if value == "both" else [Level(value)]


def _check_result(result: ClassificationResult, n_items: int, width: int) -> None:
    if result.n_items != n_items:
        raise InvariantViolation("result does not cover the corpus")
    lab = result.label
    if len(lab) and (lab.max() >= width or lab.min() < -1):
        raise InvariantViolation("label outside the label space")
    if np.any((lab >= 0) != (result.reason == 0)):
        raise InvariantViolation("assignments and unclassified reasons do not partition the corpus")


# -- classify ----------------------------------------------------------------------------


@dataclass
class RunConfig:
    items: str
    refs: str
    taxonomy: str = "default"
    level: str = "subject"
    passes: int = 1
    mode: str = Mode.REFERENCES.value
    size_metric: str = SizeMetric.OCCURRENCES.value
    tiebreak_source: str = TiebreakSource.ORIGINAL.value
    retain_distributions: bool | None = None
    eval_doc_types: list[str] = field(default_factory=lambda: sorted(d.label for d in RESEARCH_DOC_TYPES))
    text_fallback: bool = False
    strict: bool = False
    out: str = "out"
    seed: int = 0

    def validate(self) -> None:
        if self.level not in ("subject", "broad", "both"):
            raise UsageError(f"invalid level {self.level!r}")
        if self.passes < 1:
            raise UsageError("--passes must be >= 1")
        for enum, value in ((Mode, self.mode), (SizeMetric, self.size_metric), (TiebreakSource, self.tiebreak_source)):
            try:
                enum(value)
            except ValueError:
                raise UsageError(f"invalid {enum.__name__} {value!r}") from None


def cmd_classify(args: argparse.Namespace) -> int:
    doc_types = args.eval_doc_types
    cfg = RunConfig(
        items=args.items, refs=args.refs, taxonomy=args.taxonomy, level=args.level, passes=args.passes,
        mode=args.mode, size_metric=args.size_metric, tiebreak_source=args.tiebreak_source,
        retain_distributions=args.retain_distributions,
        eval_doc_types="all" if doc_types == "all" else [d.label for d in doc_types],
        text_fallback=args.text_fallback, strict=args.strict, out=args.out, seed=args.seed,
    )
    cfg.validate()
    _require_files(cfg.items, cfg.refs, cfg.taxonomy, args.truth)

    t = load_taxonomy(cfg.taxonomy)
    started = time.perf_counter()
    corpus, report = load_corpus(cfg.items, cfg.refs, t, strict=cfg.strict)
    log.info("ingest took %.1fs", time.perf_counter() - started)
    mask = filter_doc_types(corpus, None if doc_types == "all" else doc_types)
    truth = read_truth(args.truth, corpus, t) if args.truth else None

    out_dir = Path(cfg.out)
    with staged_output(out_dir) as stage:
        (stage / "ingest_report.json").write_text(report.to_json(), encoding="utf-8")
        results = []
        for level in _levels(cfg.level):
            pc = PipelineConfig(level=level, passes=cfg.passes, mode=cfg.mode, size_metric=cfg.size_metric,
                                retain_distributions=cfg.retain_distributions,
                                tiebreak_source=cfg.tiebreak_source, threads=args.threads)
            started = time.perf_counter()
            result = run_pipeline(corpus, t, pc)
            if cfg.text_fallback and corpus.has_titles:
                result = apply_text_fallback(result, corpus, t)
            log.info("%s classification took %.1fs", level, time.perf_counter() - started)
            _check_result(result, corpus.n_items, t.n_categories if level is Level.SUBJECT else t.n_areas)
            results.append(result)
            metrics = compute_metrics(result, corpus, t, mask)
            if truth is not None:
                metrics.recovery = score_against_truth(result, truth)
            (stage / f"metrics.{level}.json").write_text(metrics.to_json(), encoding="utf-8")
            write_category_sizes(result, t, stage / f"category_sizes.{level}.tsv")
            write_coverage(result, corpus, stage / f"coverage_by_year.{level}.tsv", mask)
            if result.distribution is not None:
                write_distributions(result, corpus, t, stage / f"distributions.{level}.tsv")
            _print_summary(level, result, metrics)
        write_result(results, corpus, t, stage / "result.tsv")
        _write_manifest(stage, "classify", asdict(cfg),
                        {"items": cfg.items, "refs": cfg.refs, "taxonomy": cfg.taxonomy, "truth": args.truth})
    print(f"wrote {out_dir}")
    return EXIT_OK


def _print_summary(level, result, metrics) -> None:
    parts = [f"{level}: classified {result.n_classified}/{result.n_items}"]
    if metrics.agreement_rate is not None:
        parts.append(f"agreement {metrics.agreement_rate:.4f}")
    if metrics.granularity is not None:
        parts.append(f"granularity {metrics.granularity:.6g}")
    parts.append(f"tie rate {metrics.tie_rate:.4f}")
    if metrics.recovery is not None:
        parts.append(f"recovery {metrics.recovery:.4f}")
    print(", ".join(parts))


# -- generate ----------------------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    taxonomy = None
    if args.taxonomy != "generated":
        _require_files(args.taxonomy)
        taxonomy = load_taxonomy(args.taxonomy)
    cfg = GeneratorConfig(
        n_items=args.n_items, n_categories=args.n_categories, n_areas=args.n_areas, taxonomy=taxonomy,
        refs_mean=args.refs_mean, refs_dispersion=args.refs_dispersion,
        within_category_prob=args.within_category_prob,
        multi_category_fraction=args.multi_category_fraction,
        multidisciplinary_fraction=args.multidisciplinary_fraction,
        titleless_fraction=args.titleless_fraction, refless_fraction=args.refless_fraction,
        year_range=(args.year_min, args.year_max), size_exponent=args.size_exponent,
        titles=not args.no_titles, seed=args.seed,
    )
    try:
        cfg.validate()
    except GeneratorError as exc:
        raise UsageError(str(exc)) from None
    corpus, truth = generate(cfg)
    t = generated_taxonomy(cfg)
    out_dir = Path(args.out)
    with staged_output(out_dir) as stage:
        write_generated(corpus, truth, t, stage)
        config = {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name != "taxonomy"}
        config["taxonomy"] = args.taxonomy
        _write_manifest(stage, "generate", config, {"taxonomy": args.taxonomy if taxonomy is not None else None})
    print(f"generated {corpus.n_items} items, {corpus.n_edges} references in {out_dir}")
    return EXIT_OK


# -- evaluate ----------------------------------------------------------------------------


def cmd_evaluate(args: argparse.Namespace) -> int:
    _require_files(args.result, args.items, args.refs, args.taxonomy, args.truth)
    t = load_taxonomy(args.taxonomy)
    corpus, _ = load_corpus(args.items, args.refs, t, strict=args.strict)
    results = read_result(args.result, corpus, t)
    doc_types = args.eval_doc_types
    mask = filter_doc_types(corpus, None if doc_types == "all" else doc_types)
    truth = read_truth(args.truth, corpus, t) if args.truth else None
    out_dir = Path(args.out) if args.out else Path(args.result).parent
    with staged_output(out_dir) as stage:
        for level, result in sorted(results.items(), key=lambda kv: kv[0].value != "subject"):
            metrics = compute_metrics(result, corpus, t, mask)
            if truth is not None:
                metrics.recovery = score_against_truth(result, truth)
            (stage / f"metrics.{level}.json").write_text(metrics.to_json(), encoding="utf-8")
            write_category_sizes(result, t, stage / f"category_sizes.{level}.tsv")
            write_coverage(result, corpus, stage / f"coverage_by_year.{level}.tsv", mask)
            if args.export_sample is not None:
                n, seed = args.export_sample
                export_sample(result, corpus, t, n=n, seed=seed, out_dir=stage, mask=mask)
            _print_summary(level, result, metrics)
    print(f"wrote {out_dir}")
    return EXIT_OK


# -- taxonomy ----------------------------------------------------------------------------


def cmd_taxonomy(args: argparse.Namespace) -> int:
    if args.taxonomy_command == "check":
        _require_files(args.path)
        t = load_taxonomy(args.path)
        n_md = int(t.multidisciplinary.sum())
        print(f"{t.n_categories} categories, {t.n_areas} broad areas, {n_md} multidisciplinary, "
              f"{len(t.without_area())} without broad area")
        return EXIT_OK
    text = serialize_taxonomy(load_taxonomy(args.path))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="refclass", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"refclass {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON file with defaults for any flag of this command")
        p.add_argument("--taxonomy", default="default", help="taxonomy TSV, or 'default' for the shipped table")
        p.add_argument("--eval-doc-types", type=_doc_types, default=sorted(RESEARCH_DOC_TYPES),
                       help="comma-separated document types evaluated, or 'all' (default: article,proceedings_paper)")
        p.add_argument("--strict", action="store_true", help="abort on unknown category labels")
        p.add_argument("--truth", help="planted-truth TSV to score recovery against")

    p = sub.add_parser("classify", help="reclassify a corpus")
    common(p)
    p.add_argument("--items", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--level", default="subject", choices=["subject", "broad", "both"])
    p.add_argument("--passes", type=int, default=1)
    p.add_argument("--mode", default="references", choices=[m.value for m in Mode])
    p.add_argument("--size-metric", default="occurrences", choices=[s.value for s in SizeMetric])
    p.add_argument("--tiebreak-source", default="original", choices=[s.value for s in TiebreakSource],
                   help="labels added on a tie in iterative passes")
    p.add_argument("--retain-distributions", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--text-fallback", action="store_true", help="label remaining titled items by title similarity")
    p.add_argument("--threads", type=_threads, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_classify)
    classify = p

    p = sub.add_parser("generate", help="write a synthetic corpus with planted truth")
    p.add_argument("--config", help="JSON file with defaults for any flag of this command")
    p.add_argument("--out", required=True)
    p.add_argument("--taxonomy", default="generated", help="'generated', 'default', or a taxonomy TSV")
    p.add_argument("--n-items", type=int, default=10_000)
    p.add_argument("--n-categories", type=int, default=25)
    p.add_argument("--n-areas", type=int, default=None)
    p.add_argument("--refs-mean", type=float, default=15.0)
    p.add_argument("--refs-dispersion", type=float, default=0.0)
    p.add_argument("--within-category-prob", type=_probability, default=0.9)
    p.add_argument("--multi-category-fraction", type=_probability, default=0.0)
    p.add_argument("--multidisciplinary-fraction", type=_probability, default=0.0)
    p.add_argument("--titleless-fraction", type=_probability, default=0.0)
    p.add_argument("--refless-fraction", type=_probability, default=0.0)
    p.add_argument("--year-min", type=int, default=1950)
    p.add_argument("--year-max", type=int, default=2017)
    p.add_argument("--size-exponent", type=float, default=1.0)
    p.add_argument("--no-titles", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)
    gen = p

    p = sub.add_parser("evaluate", help="metrics for an existing result file")
    common(p)
    p.add_argument("--items", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--result", required=True)
    p.add_argument("--export-sample", nargs=2, type=int, metavar=("N", "SEED"),
                   help=f"blinded sample for manual checks (paper-style default N is {DEFAULT_SAMPLE_SIZE})")
    p.add_argument("--out", default=None, help="output directory (default: next to the result file)")
    p.set_defaults(func=cmd_evaluate)
    evaluate = p

    p = sub.add_parser("taxonomy", help="taxonomy utilities")
    tsub = p.add_subparsers(dest="taxonomy_command", required=True, parser_class=_Parser)
    chk = tsub.add_parser("check", help="validate a taxonomy file and print a summary")
    chk.add_argument("path", nargs="?", default="default")
    exp = tsub.add_parser("export", help="print a taxonomy in canonical form")
    exp.add_argument("path", nargs="?", default="default")
    exp.add_argument("--out")
    p.set_defaults(func=cmd_taxonomy)
    return parser, {"classify": classify, "generate": gen, "evaluate": evaluate}


def parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser, subparsers = build_parser()
    required = [a for sp in subparsers.values() for a in sp._actions if a.required]
    # first pass only locates the config file; required flags may come from it
    for action in required:
        action.required = False
    args = parser.parse_args(argv)
    for action in required:
        action.required = True
    config_path = getattr(args, "config", None)
    if not config_path:
        args = parser.parse_args(argv)
    else:
        _require_files(config_path)
        try:
            values = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{config_path}: {exc}") from None
        if not isinstance(values, dict):
            raise UsageError(f"{config_path}: expected a JSON object")
        sp = subparsers[args.command]
        known = {a.dest: a for a in sp._actions}
        defaults = {}
        for key, value in values.items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                raise UsageError(f"{config_path}: unknown option {key!r}")
            action = known[dest]
            if action.type is not None and isinstance(value, str):
                try:
                    value = action.type(value)
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise UsageError(f"{config_path}: {key}: {exc}") from None
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"{config_path}: {key}: invalid choice {value!r}")
            defaults[dest] = value
            # required flags are satisfied by the config file
            action.required = False
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if getattr(args, "threads", "unset") is None:
        args.threads = _default_threads()
    return args


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    except (ValueError, argparse.ArgumentTypeError) as exc:
        print(f"refclass: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"refclass: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, TaxonomyError, CorpusError, EngineError, GeneratorError, MetricsError,
            ResultFileError, TextFallbackError, KeyError, ValueError) as exc:
        print(f"refclass: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"refclass: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InvariantViolation, AssertionError) as exc:
        print(f"refclass: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
