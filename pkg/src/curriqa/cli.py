"""Command-line entry point binding the pipeline, judge, analytics, review
service, and export into subcommands over a shared run directory.

Exit codes: 0 success, 1 user error, 2 runtime failure, 3 completed with
quarantined items (the manifest's failed list is non-empty).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import analytics
from .config import RunConfig, load_provider_configs, load_run_config
from .curriculum import parse_curriculum
from .datastore import RunStore, export_dataset
from .errors import (
    CurriqaError,
    DuplicateId,
    EmptyCorpus,
    EmptyField,
    GatewayError,
    MalformedRecord,
    NoCatchAll,
    ReviewGateError,
    SchemaViolation,
    StoreError,
)
from .gateway import DirectoryCache, Gateway, load_mock_script
from .judge import (
    Judge,
    RatingsMatrix,
    aggregate_scores,
    cohens_kappa,
    fleiss_kappa,
    score_run,
    scored_pairs_from_store,
)
from .pipeline import run_pipeline

USER_ERRORS = (
    MalformedRecord,
    DuplicateId,
    EmptyField,
    SchemaViolation,
    StoreError,
    ReviewGateError,
    EmptyCorpus,
    NoCatchAll,
    FileNotFoundError,
    IsADirectoryError,
    json.JSONDecodeError,
    ValueError,
)


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.handler(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except GatewayError as exc:
        print(f"provider failure: {exc}", file=sys.stderr)
        return 2
    except CurriqaError as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curriqa",
        description="Curriculum-grounded culture-specific QA dataset builder.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_dir = argparse.ArgumentParser(add_help=False)
    run_dir.add_argument("--run-dir", required=True, help="run directory holding all artifacts")

    gateway = argparse.ArgumentParser(add_help=False)
    gateway.add_argument("--config", help="run config JSON (defaults to the one stored in the run)")
    gateway.add_argument("--seed", type=int, help="override the decoding seed")
    gateway.add_argument("--mock", help="deterministic mock provider script (JSON rules)")
    gateway.add_argument("--providers", help="HTTP provider config JSON")

    report = argparse.ArgumentParser(add_help=False)
    report.add_argument("--json", action="store_true", help="machine-readable output")

    p = sub.add_parser("ingest", parents=[run_dir], help="parse curriculum outcomes into a new run")
    p.add_argument("--input", required=True, help="curriculum file (.jsonl or .csv)")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--seed", type=int, help="override the decoding seed")
    p.add_argument("--run-id", help="run identifier (defaults to the directory name)")
    p.set_defaults(handler=cmd_ingest)

    synth = sub.add_parser("synth", help="generate artifacts through the staged pipeline")
    synth_sub = synth.add_subparsers(dest="phase", required=True)
    p = synth_sub.add_parser(
        "queries", parents=[run_dir, gateway], help="outcome → reviewed query variants"
    )
    p.add_argument("--auto-accept", action="store_true", help="skip the human gate")
    p.set_defaults(handler=cmd_synth_queries)
    p = synth_sub.add_parser(
        "responses", parents=[run_dir, gateway], help="released queries → translations and responses"
    )
    p.add_argument("--auto-accept", action="store_true", help="skip the human gate")
    p.set_defaults(handler=cmd_synth_responses)

    review = sub.add_parser("review", help="human review gate")
    review_sub = review.add_subparsers(dest="action", required=True)
    p = review_sub.add_parser("serve", parents=[run_dir], help="serve the review HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument(
        "--token-env",
        help="name of an environment variable holding the bearer token (unset → open access)",
    )
    p.set_defaults(handler=cmd_review_serve)

    p = sub.add_parser("judge", parents=[run_dir, gateway, report], help="rubric-score stored responses")
    p.add_argument("--group-by", default="language", help="comma list from language,marking,level")
    p.set_defaults(handler=cmd_judge)

    analyze = sub.add_parser("analyze", help="corpus analytics over stored responses")
    analyze_sub = analyze.add_subparsers(dest="metric", required=True)
    p = analyze_sub.add_parser("readability", parents=[run_dir, report])
    p.add_argument("--language", help="restrict to one language")
    p.set_defaults(handler=cmd_analyze_readability)
    p = analyze_sub.add_parser("divergence", parents=[run_dir, report])
    p.add_argument("--labels", required=True, help="JSON file mapping response id → topic id")
    p.add_argument("--group-a", default="Explicit", help="marking of the first group")
    p.add_argument("--group-b", default="NoCountry", help="marking of the second group")
    p.add_argument("--language", help="restrict to one language")
    p.add_argument("--n-perm", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--top-k", type=int, default=5)
    p.set_defaults(handler=cmd_analyze_divergence)

    p = sub.add_parser("agreement", parents=[report], help="inter-rater agreement over label files")
    p.add_argument("--labels", required=True, help="JSONL of {item_id, label, rater_id} records")
    p.add_argument("--method", choices=("cohen", "fleiss"), default="fleiss")
    p.set_defaults(handler=cmd_agreement)

    p = sub.add_parser("export", parents=[run_dir], help="write the dataset to a file")
    p.add_argument("--format", choices=("paired-jsonl", "jsonl"), default="paired-jsonl")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_export)

    return parser


# --- shared plumbing ---


def _store(args) -> RunStore:
    return RunStore(Path(args.run_dir))


def _config_for_run(args, store: RunStore) -> RunConfig:
    """The run's stored config; an explicit --config must agree with it."""
    stored = RunConfig.from_record(store.run_info()["config"])
    if getattr(args, "config", None):
        given = load_run_config(args.config)
        if given.digest() != stored.digest():
            raise StoreError(
                "--config does not match the config this run was initialized with"
            )
    if getattr(args, "seed", None) is not None:
        stored = replace(stored, seed=args.seed)
    if getattr(args, "auto_accept", False):
        stored = replace(stored, auto_accept=True)
    return stored


def _gateway(args, config: RunConfig, store: RunStore) -> Gateway:
    gw = Gateway(cache=DirectoryCache(store.run_dir / "cache"))
    if getattr(args, "mock", None):
        rules = load_mock_script(args.mock)
        for provider_id in sorted({b.provider_id for b in config.roles.values()}):
            gw.register_mock(provider_id, rules)
    elif getattr(args, "providers", None):
        for provider_config in load_provider_configs(args.providers):
            gw.register_http(provider_config)
    else:
        raise StoreError("no provider source: pass --mock SCRIPT or --providers FILE")
    return gw


def _manifest_exit(manifest: dict, awaiting_is_error: bool) -> int:
    if manifest["failed"]:
        for item_id, stage, detail in manifest["failed"]:
            print(f"quarantined: {item_id} ({stage}): {detail}", file=sys.stderr)
        return 3
    if manifest["status"] == "awaiting_review":
        if awaiting_is_error:
            print(
                "the review gate is holding this run; decide or release pending queries first",
                file=sys.stderr,
            )
            return 1
        print("queries ready; run is awaiting review")
    return 0


def _emit_rows(rows: list[dict], columns: list[str], args) -> None:
    if args.json:
        print(json.dumps(rows, ensure_ascii=False, sort_keys=True, indent=2))
        return
    widths = {
        c: max(len(c), *(len(_cell(row.get(c))) for row in rows)) if rows else len(c)
        for c in columns
    }
    print("  ".join(c.ljust(widths[c]) for c in columns))
    for row in rows:
        print("  ".join(_cell(row.get(c)).ljust(widths[c]) for c in columns))


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


# --- subcommands ---


def cmd_ingest(args) -> int:
    config = load_run_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    input_path = Path(args.input)
    format = "csv" if input_path.suffix.lower() == ".csv" else "jsonl"
    with open(input_path, encoding="utf-8") as fh:
        outcomes = parse_curriculum(fh, format=format)
    store = _store(args)
    run_id = args.run_id or Path(args.run_dir).name
    store.init_run(run_id, config.to_record(), config.digest())
    with store.writer():
        added = store.append_batch("outcome", [o.to_record() for o in outcomes])
    print(f"ingested {added} outcomes into {args.run_dir} ({len(outcomes) - added} already present)")
    return 0


def cmd_synth_queries(args) -> int:
    store = _store(args)
    config = _config_for_run(args, store)
    gateway = _gateway(args, config, store)
    manifest = run_pipeline(config, gateway, store, phases=("queries",))
    counts = manifest["stage_counts"]
    print(f"queries: {counts['query']} stored, {counts['dropped']} outcomes dropped")
    return _manifest_exit(manifest, awaiting_is_error=False)


def cmd_synth_responses(args) -> int:
    store = _store(args)
    config = _config_for_run(args, store)
    gateway = _gateway(args, config, store)
    manifest = run_pipeline(config, gateway, store, phases=("translations", "responses"))
    counts = manifest["stage_counts"]
    print(f"queries: {counts['query']}, responses: {counts['response']}")
    return _manifest_exit(manifest, awaiting_is_error=True)


def cmd_review_serve(args) -> int:
    import os

    import uvicorn

    from .review import create_app

    store = _store(args)
    token = os.environ.get(args.token_env) if args.token_env else None
    if args.token_env and token is None:
        raise StoreError(f"--token-env names {args.token_env!r} but it is not set")
    app = create_app(store, token=token)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_judge(args) -> int:
    store = _store(args)
    config = _config_for_run(args, store)
    gateway = _gateway(args, config, store)
    binding = config.roles["judge"]
    judge = Judge(gateway, binding.provider_id, binding.model_id, seed=config.seed)
    result = score_run(store, judge)

    manifest = store.read_manifest()
    pipeline_failed = [f for f in (manifest["failed"] if manifest else []) if f[1] != "judge"]
    extra = (
        {k: v for k, v in manifest["stage_counts"].items() if k in ("retained", "dropped")}
        if manifest
        else {}
    )
    with store.writer():
        manifest = store.write_manifest(
            status=manifest["status"] if manifest else "scored",
            extra_counts=extra,
            failed=pipeline_failed + result["failed"],
            dropped=manifest["dropped"] if manifest else [],
        )

    group_by = [g for g in args.group_by.split(",") if g]
    rows = aggregate_scores(scored_pairs_from_store(store), group_by)
    _emit_rows(rows, group_by + ["n", "ls_accuracy", "ca_mean", "lu_mean"], args)
    print(
        f"scored {result['scored']} pairs ({result['skipped']} already scored,"
        f" {len(result['failed'])} unparseable)",
        file=sys.stderr,
    )
    return 3 if manifest["failed"] else 0


def cmd_analyze_readability(args) -> int:
    store = _store(args)
    queries = {record["id"]: record for record in store.load("query")}
    by_group: dict[tuple[str, str], list[str]] = {}
    by_language: dict[str, list[str]] = {}
    for response in store.load("response"):
        language = queries[response["query_id"]]["language"]
        if args.language and language != args.language:
            continue
        by_group.setdefault((language, response["level"]), []).append(response["text"])
        by_language.setdefault(language, []).append(response["text"])
    if not by_group:
        raise EmptyCorpus("no responses to analyze")
    tables = {
        language: analytics.estimate_zipf(docs, language)
        for language, docs in by_language.items()
    }
    rows = []
    for (language, level), docs in sorted(by_group.items()):
        stats = analytics.readability(docs, language, tables[language])
        rows.append(
            {
                "language": language,
                "level": level,
                "docs": len(docs),
                "tokens_per_doc": stats.n_tokens,
                "sentences_per_doc": stats.n_sentences,
                "tps": stats.tokens_per_sentence,
                "rtr": stats.rare_token_ratio,
            }
        )
    _emit_rows(
        rows,
        ["language", "level", "docs", "tokens_per_doc", "sentences_per_doc", "tps", "rtr"],
        args,
    )
    return 0


def cmd_analyze_divergence(args) -> int:
    store = _store(args)
    with open(args.labels, encoding="utf-8") as fh:
        labels = json.load(fh)
    queries = {record["id"]: record for record in store.load("query")}
    groups: dict[str, list[int]] = {args.group_a: [], args.group_b: []}
    for response in store.load("response"):
        if response["id"] not in labels:
            continue
        query = queries[response["query_id"]]
        if args.language and query["language"] != args.language:
            continue
        if query["marking"] in groups:
            groups[query["marking"]].append(int(labels[response["id"]]))
    labels_a, labels_b = groups[args.group_a], groups[args.group_b]
    if not labels_a or not labels_b:
        raise EmptyCorpus(f"need labeled responses in both {args.group_a} and {args.group_b}")
    observed, p_value = analytics.permutation_test(
        labels_a, labels_b, n_perm=args.n_perm, seed=args.seed
    )
    n_topics = max(labels_a + labels_b) + 1
    dist_a = analytics.topic_distribution(labels_a, n_topics)
    dist_b = analytics.topic_distribution(labels_b, n_topics)
    skews = analytics.top_skewed_topics(dist_a, dist_b, args.top_k)
    result = {
        "group_a": args.group_a,
        "group_b": args.group_b,
        "n_a": len(labels_a),
        "n_b": len(labels_b),
        "jsd": observed,
        "p_value": p_value,
        "n_perm": args.n_perm,
        "seed": args.seed,
        "top_skewed": [
            {"topic_id": s.topic_id, "p_a": s.p, "p_b": s.q, "skew": s.skew} for s in skews
        ],
    }
    if args.json:
        print(json.dumps(result, ensure_ascii=False, sort_keys=True, indent=2))
    else:
        print(f"JSD({args.group_a}, {args.group_b}) = {observed:.6f}  p = {p_value:.6f}")
        for s in skews:
            print(f"  topic {s.topic_id}: {s.p:.4f} vs {s.q:.4f} (skew {s.skew:.4f})")
    return 0


def cmd_agreement(args) -> int:
    by_rater: dict[str, dict[str, str]] = {}
    with open(args.labels, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            by_rater.setdefault(record["rater_id"], {})[record["item_id"]] = record["label"]
    raters = sorted(by_rater)
    if len(raters) < 2:
        raise ValueError("agreement needs at least two raters")
    common = sorted(set.intersection(*(set(by_rater[r]) for r in raters)))
    if not common:
        raise ValueError("raters share no items")
    sequences = [[by_rater[r][item] for item in common] for r in raters]
    if args.method == "cohen":
        if len(raters) != 2:
            raise ValueError("cohen requires exactly two raters")
        kappa = cohens_kappa(sequences[0], sequences[1])
    else:
        kappa = fleiss_kappa(RatingsMatrix.from_labels(sequences))
    result = {
        "method": args.method,
        "kappa": kappa,
        "n_items": len(common),
        "n_raters": len(raters),
    }
    if args.json:
        print(json.dumps(result, sort_keys=True, indent=2))
    else:
        print(f"{args.method} kappa = {kappa:.6f} over {len(common)} items, {len(raters)} raters")
    return 0


def cmd_export(args) -> int:
    store = _store(args)
    lines = export_dataset(store, args.format, args.out)
    print(f"wrote {lines} lines to {args.out}")
    return 0
