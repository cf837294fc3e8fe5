"""Command-line entry points: generate, evaluate, serve, query."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import datagen, evaluation, service as service_mod
from .adapter import GenerationRequest, run_tool_loop
from .store import build_executor, ingest


def _cmd_generate(args) -> int:
    store = ingest(args.dataset, args.gazetteer)
    templates = []
    for path in args.templates:
        templates.extend(datagen.load_templates(path))
    if args.schema:
        tables = datagen.load_schema(args.schema)
        projections = [
            p for table in tables for p in datagen.enumerate_projections(table)
        ]
        print(f"schema: {len(tables)} tables, {len(projections)} projections")
    sample = store.gazetteer
    if args.locations and args.locations < len(sample):
        sample = sample[: args.locations]
    pairs, drops = datagen.generate_dataset(
        templates, sample, store, paraphrase_count=args.paraphrases
    )
    spec = datagen.SplitSpec(
        seed=args.seed,
        unseen_location_count=args.unseen_locations,
        semantic_variant_fraction=args.semantic_fraction,
    )
    manifest = datagen.split_and_export(pairs, spec, args.out)
    print(f"generated {manifest.total} pairs ({len(drops.dropped)} skeletons dropped)")
    for split, count in manifest.counts.items():
        print(f"  {split}: {count}")
    print(f"content hash: {manifest.content_hash}")
    return 0


def _cmd_evaluate(args) -> int:
    examples = evaluation.load_examples(args.test)
    if args.predictions:
        predictions = evaluation.load_predictions(args.predictions)
        report = evaluation.evaluate_corpus(examples, predictions=predictions)
    else:
        config = service_mod.load_config(args.backend)
        svc = service_mod.build_service(config)
        resolve = svc.store.resolve_location

        executor = build_executor(svc.store)

        def generate(example: evaluation.EvalExample) -> str:
            # generous budget: threshold answers embed long result payloads
            outcome = run_tool_loop(
                GenerationRequest(user_prompt=example.question, max_tokens=8192),
                backend=svc.backend,
                executor=executor,
                retry_budget=config.retry_budget,
            )
            return outcome.final_text

        report = evaluation.evaluate_corpus(
            examples, generate=generate, resolve=resolve
        )
    print(report.render_text())
    if args.report:
        report.write(args.report)
        print(f"report written to {args.report}")
    return 0


def _cmd_serve(args) -> int:
    config = service_mod.load_config(args.config)
    service_mod.serve(config)
    return 0


def _cmd_query(args) -> int:
    config = service_mod.load_config(args.config)
    svc = service_mod.build_service(config)
    answer, trace = svc.handle_query(service_mod.QueryRequest(question=args.question))
    print(answer)
    if args.trace:
        print(json.dumps(trace.to_dict(), indent=2, ensure_ascii=False))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geoqa",
        description="Natural-language querying of geo-accessibility data",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="build the synthetic QA dataset")
    generate.add_argument("--schema", default="")
    generate.add_argument("--templates", action="append", required=True)
    generate.add_argument("--gazetteer", required=True)
    generate.add_argument("--dataset", required=True)
    generate.add_argument("--out", required=True)
    generate.add_argument("--seed", type=int, default=0)
    generate.add_argument("--paraphrases", type=int, default=0)
    generate.add_argument("--locations", type=int, default=0,
                          help="cap the gazetteer sample size")
    generate.add_argument("--unseen-locations", type=int, default=0)
    generate.add_argument("--semantic-fraction", type=float, default=0.0)
    generate.set_defaults(func=_cmd_generate)

    evaluate = commands.add_parser("evaluate", help="score predictions on a test file")
    evaluate.add_argument("--test", required=True)
    source = evaluate.add_mutually_exclusive_group(required=True)
    source.add_argument("--predictions", default="")
    source.add_argument("--backend", default="",
                        help="service config; predictions come from the tool loop")
    evaluate.add_argument("--report", default="")
    evaluate.set_defaults(func=_cmd_evaluate)

    serve = commands.add_parser("serve", help="run the HTTP query service")
    serve.add_argument("--config", required=True)
    serve.set_defaults(func=_cmd_serve)

    query = commands.add_parser("query", help="answer one question, no HTTP")
    query.add_argument("--config", required=True)
    query.add_argument("--question", required=True)
    query.add_argument("--trace", action="store_true")
    query.set_defaults(func=_cmd_query)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
