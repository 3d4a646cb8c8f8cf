"""Command line entry point: ``zerodex <command> ...``.

Without ``--config`` every command runs against the bundled all-mock
configuration, so the whole tool works offline.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import config as cfg
from .extractor import build_extractor_calls, extract_document
from .pipeline import GenerationError, answer
from .request_parser import (
    InferenceRequest,
    KeywordList,
    ParseOutcome,
    TimeAnnotation,
    decide_and_extract,
    parse_timestamp,
    serialize_outcome,
)
from .reranker import rerank
from .segmenter import TaggedDocument, render_tagged, segment
from .web_search import search


def _read_source(spec: str) -> str:
    return sys.stdin.read() if spec == "-" else Path(spec).read_text(encoding="utf-8")


def read_request(spec: str) -> InferenceRequest:
    """A request file holds either a JSON object or the plain request text."""
    raw = _read_source(spec)
    try:
        data = json.loads(raw)
    except json.JSONDecodeError:
        data = None
    if isinstance(data, dict):
        return InferenceRequest.from_dict(data)
    return InferenceRequest("cli", raw.strip())


def _load(args):
    return cfg.load_config(args.config) if args.config else cfg.load_demo()


def _print_json(obj) -> None:
    print(json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True))


def _read_jsonl(path: str) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _outcome_for(keywords: str) -> ParseOutcome:
    return ParseOutcome(True, (KeywordList("und", tuple(keywords.split()), "main"),), TimeAnnotation("none"))


# ---------------------------------------------------------------------------
# commands


def cmd_parse(args) -> int:
    config, backends = _load(args)
    req = read_request(args.request)
    now = parse_timestamp(args.now) if args.now else req.received_at
    print(serialize_outcome(decide_and_extract(backends.parser, req, now, retry_backoff=config.retry_backoff)))
    return 0


def cmd_search(args) -> int:
    engines = cfg.build_engines({"engines": [args.engine]}, Path.cwd())
    kw = KeywordList(args.language, tuple(args.keywords.split()), "main")
    for hit in search(engines[0], kw, args.n):
        print(json.dumps(hit.to_dict(), ensure_ascii=False))
    return 0


def cmd_segment(args) -> int:
    text = sys.stdin.read()
    segs = segment(text, args.max_chars)
    if args.jsonl:
        for s in segs:
            print(json.dumps({"tag_id": s.tag_id, "text": s.text}, ensure_ascii=False))
    else:
        print(render_tagged(TaggedDocument(segments=tuple(segs))))
    return 0


def _read_docs(path: str) -> list[TaggedDocument]:
    return [TaggedDocument.from_dict(d) for d in _read_jsonl(path)]


def cmd_rerank(args) -> int:
    config, backends = _load(args)
    docs = _read_docs(args.docs)
    sel = rerank(backends.embedder, _outcome_for(args.keywords), docs, args.k, max_workers=1)
    _print_json(sel.to_dict())
    return 0


def cmd_extract(args) -> int:
    config, backends = _load(args)
    req = read_request(args.request)
    docs = _read_docs(args.doc)
    if args.dry_run:
        for call in build_extractor_calls(req, docs[0], config.extract_prompt_cap):
            print(call.user_text)
        return 0
    for i, doc in enumerate(docs):
        res = extract_document(backends.extractor, req, doc, i, prompt_cap=config.extract_prompt_cap, retry_backoff=config.retry_backoff)
        print(json.dumps(res.to_dict(), ensure_ascii=False))
    return 0


def cmd_answer(args) -> int:
    config, backends = _load(args)
    req = read_request(args.request)
    try:
        result = answer(req, config, backends)
    except GenerationError as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return 2
    print(result.to_json(timings=not args.no_timings))
    return 0


def cmd_serve(args) -> int:
    from .server import serve

    config, backends = _load(args)
    serve(config, backends, args.host, args.port)
    return 0


def cmd_eval_synth(args) -> int:
    from importlib import resources

    from .evaluation.synthetic import default_haystack, generate_synthetic, load_needles, write_cases

    needles_path = args.needles or str(resources.files("zerodex") / "data" / "needles.jsonl")
    specs = load_needles(needles_path)
    if args.haystack:
        hay = [seg.text for seg in segment(Path(args.haystack).read_text(encoding="utf-8"))]
    else:
        hay = default_haystack()
    cases = generate_synthetic(hay, specs, args.lengths, args.depths)
    if args.out:
        write_cases(cases, args.out)
        print(f"wrote {len(cases)} cases to {args.out}", file=sys.stderr)
    else:
        for c in cases:
            print(json.dumps(c.to_dict(), ensure_ascii=False))
    return 0


def cmd_eval_run(args) -> int:
    from .evaluation.suite import run_suite
    from .evaluation.synthetic import read_cases

    config, backends = _load(args)
    cases = read_cases(args.cases)
    result = run_suite(args.system, cases, backends, config, out_dir=args.out, max_parallel=args.parallel)
    _print_json(result.summary())
    return 0


def cmd_eval_convert(args) -> int:
    from .evaluation.convert import convert, read_records
    from .evaluation.synthetic import write_cases

    cases = convert(args.format, read_records(args.input), args.group)
    n = write_cases(cases, args.out)
    print(f"wrote {n} cases to {args.out}", file=sys.stderr)
    return 0


def cmd_prep_instructions(args) -> int:
    from .training_data.instructions import prepare_instructions

    annotator = cfg.load_role(args.config, "annotator")
    run = prepare_instructions(
        _read_jsonl(args.raw), annotator, seed=args.seed, per_request=args.per_request,
        min_tokens=args.min_tokens, none_target=args.none_target, tolerance=args.tolerance, out_dir=args.out,
    )
    _print_json(run.manifest())
    return 0


def cmd_prep_dpo(args) -> int:
    from .training_data.dpo import prepare_dpo, read_dpo_cases

    config, backends = _load(args)
    alt = cfg.load_role(args.config, "alt_extractor")
    grader = cfg.load_role(args.config, "grader")
    _, manifest = prepare_dpo(
        read_dpo_cases(args.cases), backends.extractor, alt, backends.generator, grader,
        rounds=args.rounds, seed=args.seed, config=config, out_dir=args.out,
    )
    _print_json(manifest)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zerodex", description="Search-augmented generation without a pre-built index.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="TOML config (default: bundled all-mock demo)")
        sp.set_defaults(func=func)
        return sp

    sp = add("parse", cmd_parse, "decide on search and extract keywords")
    sp.add_argument("--request", required=True, help="request file or - for stdin")
    sp.add_argument("--now", help="ISO-8601 timestamp to treat as the current time")

    sp = add("search", cmd_search, "query one search engine")
    sp.add_argument("--keywords", required=True)
    sp.add_argument("--engine", required=True, help="mock:<serp.jsonl>, google or bing")
    sp.add_argument("--language", default="und")
    sp.add_argument("-n", type=int, default=10)

    sp = add("segment", cmd_segment, "tag stdin text into segments")
    sp.add_argument("--jsonl", action="store_true", help="one JSON object per segment")
    sp.add_argument("--max-chars", type=int, default=2000)

    sp = add("rerank", cmd_rerank, "rank documents by snippet and full-text similarity")
    sp.add_argument("--keywords", required=True)
    sp.add_argument("--docs", required=True, help="JSONL of documents")
    sp.add_argument("--k", type=int, default=6)

    sp = add("extract", cmd_extract, "ask the extractor for relevant tags")
    sp.add_argument("--request", required=True)
    sp.add_argument("--doc", required=True, help="JSONL of tagged documents")
    sp.add_argument("--dry-run", action="store_true", help="print the extractor prompt instead")

    sp = add("answer", cmd_answer, "run the whole pipeline for one request")
    sp.add_argument("--request", required=True)
    sp.add_argument("--no-timings", action="store_true", help="omit stage durations for reproducible output")

    sp = add("serve", cmd_serve, "start the HTTP service")
    sp.add_argument("--port", type=int, default=8080)
    sp.add_argument("--host", default="127.0.0.1")

    ev = sub.add_parser("eval", help="benchmarks and comparisons").add_subparsers(dest="eval_command", required=True)
    sp = ev.add_parser("synth", help="generate needle-in-a-haystack cases")
    sp.add_argument("--lengths", type=int, nargs="+", required=True, help="context lengths in characters")
    sp.add_argument("--depths", type=float, nargs="+", required=True)
    sp.add_argument("--needles", help="needle spec JSONL (default: bundled set)")
    sp.add_argument("--haystack", help="text file of filler (default: generated)")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval_synth)

    sp = ev.add_parser("run", help="score and judge a system on benchmark cases")
    sp.add_argument("--system", choices=["ext", "naive", "vector"], required=True)
    sp.add_argument("--cases", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--parallel", type=int, default=4)
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_eval_run)

    sp = ev.add_parser("convert", help="convert a public dataset into cases")
    sp.add_argument("--format", choices=["multihop", "multiple", "mti"], required=True)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--group", type=int, default=3, help="questions per multi-question case (mti)")
    sp.set_defaults(func=cmd_eval_convert)

    pr = sub.add_parser("prep", help="build training files").add_subparsers(dest="prep_command", required=True)
    sp = pr.add_parser("instructions", help="annotated instruction sets")
    sp.add_argument("--raw", required=True, help="request log JSONL")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--per-request", type=int, default=2)
    sp.add_argument("--min-tokens", type=int, default=100)
    sp.add_argument("--none-target", type=float, default=0.05)
    sp.add_argument("--tolerance", type=float, default=0.005)
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_prep_instructions)

    sp = pr.add_parser("dpo", help="preference pairs")
    sp.add_argument("--cases", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--rounds", type=int, default=2)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_prep_dpo)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (cfg.ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
