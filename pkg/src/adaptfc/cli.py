"""Command-line entry points: preprocess, train, evaluate, predict, export-embeddings."""

import argparse
import json
import logging
import os
import sys

from . import data, evaluation, synthetic
from .config import AdaptationConfig, parse_override
from .errors import (AdaptFCError, CheckpointError, ConfigError, IntegrityError, LabelError,
                     ParseError, SplitError)

log = logging.getLogger("adaptfc")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_TRAINING = 3
EXIT_EVALUATION = 4

CACHE_ENV = "ADAPTFC_CACHE_DIR"
VALIDATION_ERRORS = (ConfigError, ParseError, IntegrityError, LabelError, SplitError,
                     CheckpointError, OSError)

# boolean config fields exposed as --no-... style switches
ABLATION_FLAGS = ("no_reverse", "no_align", "no_retriever_adapt", "no_claim_adapt", "no_doc_adapt",
                  "no_reader_adapt", "uniform_ranking")


class CommandError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _load_corpus(path, docs=None, label_set=None):
    return data.load_corpus(path, documents_path=docs, label_set=label_set)


def _chart(spec):
    if spec in data.CHARTS:
        return data.CHARTS[spec]
    return data.DomainMappingChart.load(spec)


def build_config(args):
    """Config file (complete, if given) then explicit flags, then ``--set`` overrides."""
    cfg = AdaptationConfig.load(args.config) if args.config else AdaptationConfig()
    if getattr(args, "benchmark", False):
        cfg = synthetic.benchmark_config(cfg)
    changes = {}
    for name in ("seed", "lambda1", "lambda2", "p", "k", "num_seeds", "negatives", "num_negatives",
                 "adapt_steps", "disc_warmup_steps"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    for flag in ABLATION_FLAGS:
        if getattr(args, flag, False):
            changes[flag] = True
    cfg = cfg.replace(**changes) if changes else cfg
    for assignment in getattr(args, "set", None) or ():
        cfg = parse_override(cfg, assignment)
    return cfg


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_preprocess(args):
    corpora = data.preprocess_dump(args.input, _chart(args.chart), args.scheme, n=args.n,
                                   seed=args.seed, train_fraction=args.train_fraction)
    os.makedirs(args.out, exist_ok=True)
    for domain, corpus in corpora.items():
        path = os.path.join(args.out, f"{domain}.jsonl")
        data.write_corpus(corpus, path)
        print(f"{domain}\t{len(corpus)} claims\t{len(corpus.documents)} documents\t{path}")
    return EXIT_OK


def cmd_make_synthetic(args):
    spec = synthetic.READER_SHIFT if args.preset == "reader" else synthetic.RETRIEVAL_SHIFT
    source, target = synthetic.domain_pair(spec, args.seed, args.source_name, args.target_name)
    os.makedirs(args.out, exist_ok=True)
    for role, corpus in (("source", source), ("target", target)):
        path = os.path.join(args.out, f"{role}.jsonl")
        data.write_corpus(corpus, path)
        print(f"{role}\t{corpus.name}\t{len(corpus)} claims\t{path}")
    return EXIT_OK


def cmd_config(args):
    cfg = build_config(args)
    sys.stdout.write(cfg.to_json() + "\n")
    return EXIT_OK


def cmd_train(args):
    from .errors import StageError, TrainingError
    from .pipeline import train_pipeline

    cfg = build_config(args)
    source = _load_corpus(args.source, args.source_docs)
    target = _load_corpus(args.target, args.target_docs, source.label_set)
    cache_dir = args.cache_dir or os.environ.get(CACHE_ENV) or None
    try:
        pipe = train_pipeline(source, target, cfg, cache_dir=cache_dir)
    except (StageError, TrainingError) as exc:
        raise CommandError(f"training failed: {exc}", EXIT_TRAINING) from exc
    manifest = pipe.save(args.out)
    _write_json(os.path.join(args.out, "traces.json"), pipe.traces)
    print(f"pipeline written to {args.out} (reader {manifest['artifacts']['reader'][:12]})")
    return EXIT_OK


def _load_pipeline(directory):
    from .pipeline import Pipeline

    return Pipeline.load(directory)


def cmd_evaluate(args):
    pipe = _load_pipeline(args.pipeline)
    corpus = _load_corpus(args.test, args.test_docs, pipe.label_set)
    manifest = pipe.manifest
    source = manifest.get("source", {}).get("name", corpus.name)
    cfg_hash = AdaptationConfig.from_dict(manifest["config"]).config_hash() \
        if "config" in manifest else ""
    common = dict(source=source, config_hash=cfg_hash, seed=manifest.get("seed"))
    try:
        if args.component == "retriever":
            report = evaluation.evaluate_retriever(pipe.bi_encoder, corpus, args.part, k=10,
                                                   **common)
        elif args.component == "reader":
            report = evaluation.evaluate_reader(pipe.reader, corpus, args.part, **common)
        else:
            report = evaluation.evaluate_pipeline(pipe, corpus, args.part, **common)
    except VALIDATION_ERRORS:
        raise
    except (AdaptFCError, ValueError) as exc:
        raise CommandError(f"evaluation failed: {exc}", EXIT_EVALUATION) from exc
    evaluation.write_reports([report], f"{args.out}.json", f"{args.out}.md")
    print(f"{report.scenario}\t{report.metric}\t{report.mean:.4f}")
    return EXIT_OK


def _predict_line(pipe, lineno, line):
    from .data import Claim

    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        return {"line": lineno, "error": {"type": "ParseError", "message": exc.msg}}
    claim_id = record.get("id") if isinstance(record, dict) else None
    try:
        if not isinstance(record, dict):
            raise ParseError("record must be a JSON object", line=lineno)
        text = record.get("text")
        if not isinstance(claim_id, str) or not claim_id.strip():
            raise ParseError("field 'id' must be a non-empty string", line=lineno)
        if not isinstance(text, str):
            raise ParseError("field 'text' must be a string", line=lineno)
        out = pipe.verify(Claim(claim_id, text, record.get("domain") or ""))
        return dict(out.to_dict(), line=lineno)
    except AdaptFCError as exc:
        return {"line": lineno, "claim_id": claim_id,
                "error": {"type": type(exc).__name__, "message": str(exc)}}


def cmd_predict(args):
    pipe = _load_pipeline(args.pipeline)
    written = failed = 0
    with open(args.claims, encoding="utf-8") as src, open(args.out, "w", encoding="utf-8") as out:
        for lineno, line in enumerate(src, start=1):
            if not line.strip():
                continue
            result = _predict_line(pipe, lineno, line)
            failed += "error" in result
            written += 1
            out.write(json.dumps(result, sort_keys=True) + "\n")
    print(f"{written} lines written, {failed} errors")
    return EXIT_OK


def cmd_export_embeddings(args):
    pipe = _load_pipeline(args.pipeline)
    corpus = _load_corpus(args.corpus, args.docs)
    if args.which == "claims":
        n = evaluation.export_embeddings(pipe.bi_encoder.claim_encoder, corpus.claims, args.out)
    else:
        n = evaluation.export_embeddings(pipe.bi_encoder.doc_encoder, corpus.documents, args.out)
    print(f"{n} {args.which} embeddings written to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_config_flags(p):
    p.add_argument("--config", help="complete JSON config file; flags override its values")
    p.add_argument("--benchmark", action="store_true",
                   help="apply the synthetic-benchmark hyperparameters before other flags")
    p.add_argument("--seed", type=int)
    p.add_argument("--num-seeds", dest="num_seeds", type=int)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--p", type=int, help="pseudo-evidence documents per target claim")
    p.add_argument("--k", type=int, help="documents aggregated per claim")
    p.add_argument("--negatives", choices=("in-batch", "sampled"))
    p.add_argument("--num-negatives", dest="num_negatives", type=int,
                   help="negatives per claim in sampled mode")
    p.add_argument("--adapt-steps", dest="adapt_steps", type=int)
    p.add_argument("--warmup-steps", dest="disc_warmup_steps", type=int)
    for flag in ABLATION_FLAGS:
        p.add_argument("--" + flag.replace("_", "-"), dest=flag, action="store_true")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config field; repeatable")


def build_parser():
    parser = argparse.ArgumentParser(prog="adaptfc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="map a raw dump to per-domain corpora")
    p.add_argument("--input", required=True)
    p.add_argument("--chart", required=True, help="'multifc', 'snopes' or a chart JSON path")
    p.add_argument("--scheme", required=True, choices=data.SCHEMES)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=2, help="evidence documents kept per claim")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-fraction", type=float, default=0.6)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("make-synthetic", help="write a synthetic source/target pair")
    p.add_argument("--preset", choices=("retrieval", "reader"), default="reader")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--source-name", default="Source")
    p.add_argument("--target-name", default="Target")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("config", help="print the effective config as JSON")
    _add_config_flags(p)
    p.set_defaults(func=cmd_config)

    p = sub.add_parser("train", help="train a pipeline on a source/target pair")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--source-docs")
    p.add_argument("--target-docs")
    p.add_argument("--out", required=True, help="pipeline directory")
    p.add_argument("--cache-dir", help=f"retriever cache directory (default: ${CACHE_ENV})")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained pipeline on a labeled corpus")
    p.add_argument("--pipeline", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--test-docs")
    p.add_argument("--part", default="test", choices=("train", "test"))
    p.add_argument("--component", default="pipeline", choices=("retriever", "reader", "pipeline"))
    p.add_argument("--out", required=True, help="report path prefix (.json and .md are added)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="verify claims from a jsonl file")
    p.add_argument("--pipeline", required=True)
    p.add_argument("--claims", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("export-embeddings", help="write id,domain,vector CSV rows")
    p.add_argument("--pipeline", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--docs")
    p.add_argument("--which", choices=("claims", "documents"), default="claims")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
