"""Command line interface.

Subcommands cover the whole audit workflow: ingest pages, build corpora,
build and ablate the trainable model, capture pre/post evaluations, serve the
annotation console, tally exported annotations, correlate ablation effects
with prevalence scores, run leakage probes, and render reports. `fixtures`
materializes the bundled fixture data so the entire pipeline can be driven
offline.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from datetime import date
from pathlib import Path

from . import fixtures as fixtures_mod
from .coding import (
    GroupBy,
    ablation_effect,
    load_annotations,
    load_tallies,
    save_tallies,
    tally,
)
from .corpus import CorpusRole, build_corpus, load_corpus, load_documents, save_corpus, save_documents
from .correlation import (
    load_prevalence,
    prevalence_correlation,
)
from .crawl import CrawlClient
from .evaluation import (
    GenerationParams,
    Phase,
    load_queries,
    load_responses,
    run_evaluation,
    save_responses,
)
from .leakage import (
    ModelFamily,
    ValueComparator,
    load_records,
    load_reticence_phrases,
    matrix_to_csv,
    matrix_to_json,
    oracle_responder,
    run_matrix,
    ReticenceConfig,
)
from .models import ModelKind, scripted_handle, remote_handle
from .tinylm import TinyEmbeddingLM, load_model, save_model, trainable_handle
from .unlearn import UnlearningConfig, load_step_reports, run_unlearning


def _model_handle_from_spec(spec: str, model_id: str | None = None, kind: str = "base"):
    """Model specs: tinylm:<checkpoint dir>, scripted:<json file>,
    remote:<config json file>."""
    scheme, _, rest = spec.partition(":")
    model_kind = ModelKind(kind)
    if scheme == "tinylm":
        backend = load_model(rest)
        return trainable_handle(backend, model_id or f"tinylm:{Path(rest).name}")
    if scheme == "scripted":
        cfg = json.loads(Path(rest).read_text(encoding="utf-8"))
        return scripted_handle(
            model_id or cfg.get("model_id", "scripted"),
            responses=cfg.get("responses", {}),
            default=cfg.get("default", ""),
            kind=model_kind,
        )
    if scheme == "remote":
        cfg = json.loads(Path(rest).read_text(encoding="utf-8"))
        return remote_handle(
            model_id or cfg.get("model_id", cfg["model"]),
            base_url=cfg["base_url"],
            model=cfg["model"],
            kind=model_kind,
            auth_env=cfg.get("auth_env", ""),
            context_limit=int(cfg.get("context_limit", 8192)),
        )
    raise SystemExit(f"unknown model spec {spec!r}; use tinylm:, scripted: or remote:")


def _family_handle(name: str, cfg: dict | None, kind: ModelKind, records):
    if cfg is None:
        return None
    backend_type = cfg.get("backend", "scripted")
    model_id = cfg.get("model_id", f"{name}-{kind.value}")
    if backend_type == "scripted":
        return scripted_handle(
            model_id, responses=cfg.get("responses", {}), default=cfg.get("default", ""), kind=kind
        )
    if backend_type == "scripted-oracle":
        responder = oracle_responder(
            records,
            known_datasets=set(cfg.get("known_datasets", [])),
            wrong_value=cfg.get("wrong_value", "0"),
            reticent_datasets=set(cfg.get("reticent_datasets", [])),
        )
        return scripted_handle(model_id, responder=responder, kind=kind)
    if backend_type == "tinylm":
        return trainable_handle(load_model(cfg["checkpoint"]), model_id)
    if backend_type == "remote":
        return remote_handle(
            model_id,
            base_url=cfg["base_url"],
            model=cfg["model"],
            kind=kind,
            auth_env=cfg.get("auth_env", ""),
            context_limit=int(cfg.get("context_limit", 8192)),
        )
    raise SystemExit(f"unknown backend type {backend_type!r} in models config")


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_ingest(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.pages:
        docs = fixtures_mod.ingest_local_pages(args.pages)
    else:
        if not args.urls:
            raise SystemExit("ingest needs --urls (network mode) or --pages (local mode)")
        before = date.fromisoformat(args.before)
        client = CrawlClient(
            index_base=args.index_base,
            parallelism=args.parallelism,
            per_host_delay=args.per_host_delay,
        )
        docs = []
        for line in Path(args.urls).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            url, _, topic = line.partition("\t")
            captures = client.lookup_captures(url, before)
            if not captures:
                print(f"[skip] no captures before {before} for {url}", file=sys.stderr)
                continue
            doc = client.fetch_document(captures[0], topic=topic.strip())
            docs.append(doc)
            print(f"[ok] {url} ({captures[0].crawl_id})")
    save_documents(docs, out / "documents.jsonl")
    print(f"wrote {len(docs)} documents to {out / 'documents.jsonl'}")
    return 0


def cmd_build_corpus(args: argparse.Namespace) -> int:
    src = Path(args.in_path)
    docs_file = src / "documents.jsonl" if src.is_dir() else src
    docs = load_documents(docs_file)
    corpus = build_corpus(
        docs,
        role=CorpusRole(args.role),
        chunk_len_tokens=args.chunk_len,
        name=args.name or f"{args.role}-corpus",
    )
    save_corpus(corpus, args.out)
    print(
        f"wrote {args.out}: {len(corpus.documents)} documents, "
        f"{len(corpus.chunks)} chunks (<= {args.chunk_len} tokens each)"
    )
    return 0


def cmd_init_model(args: argparse.Namespace) -> int:
    target = load_corpus(args.target)
    safe = load_corpus(args.safe)
    defaults = fixtures_mod.load_manifest()["fixture_model"]
    model = TinyEmbeddingLM.fit_corpus(
        target.chunk_texts() + safe.chunk_texts(),
        dim=args.dim or defaults["dim"],
        gain=args.gain or defaults["gain"],
        smoothing=defaults["smoothing"],
    )
    save_model(model, args.out)
    print(f"wrote model checkpoint to {args.out} (vocab {len(model.vocab)})")
    return 0


def cmd_unlearn(args: argparse.Namespace) -> int:
    handle = _model_handle_from_spec(args.model, model_id=args.model_id)
    target = load_corpus(args.target)
    safe = load_corpus(args.safe)
    w = [float(x) for x in args.weights.split(",")]
    if len(w) != 3:
        raise SystemExit("--weights must be three comma-separated numbers")
    config = UnlearningConfig(
        w_forget=w[0],
        w_mismatch=w[1],
        w_preserve=w[2],
        learning_rate=args.lr,
        max_steps=args.steps,
        batch_size=args.batch_size,
        kl_alarm_threshold=args.kl_alarm,
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
    )
    run = run_unlearning(handle, target, safe, config, out_dir=args.out)
    s = run.summary
    print(f"run complete: {s.steps_completed} steps -> {args.out}")
    print(
        f"target CE {s.initial_target_loss:.4f} -> {s.final_target_loss:.4f}; "
        f"mean safe KL {s.mean_safe_kl if s.mean_safe_kl is not None else float('nan'):.5f}; "
        f"alarms {s.alarm_steps}; loss-increase trend "
        f"{'pass' if s.eq1_trend_pass else 'fail' if s.eq1_trend_pass is not None else 'n/a'}"
    )
    if s.aborted:
        print(f"ABORTED: {s.abort_reason}", file=sys.stderr)
        return 1
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    handle = _model_handle_from_spec(args.model, model_id=args.model_id, kind=args.kind)
    queries = load_queries(args.queries)
    params = GenerationParams(
        max_new_tokens=args.max_new_tokens, temperature=args.temperature, seed=args.seed
    )
    records = run_evaluation(handle, queries, Phase(args.phase), params)
    save_responses(records, args.out)
    failures = sum(1 for r in records if r.error)
    print(f"wrote {len(records)} responses to {args.out} ({failures} failed)")
    return 0


def cmd_tally(args: argparse.Namespace) -> int:
    annotations = load_annotations(args.annotations)
    by = GroupBy(args.by)
    groups = args.groups.split(",") if args.groups else None
    if groups and by is GroupBy.QUERY:
        groups = [int(g) for g in groups]
    tallies = tally(annotations, by, groups=groups)
    if args.out:
        save_tallies(tallies, args.out)
        print(f"wrote {len(tallies)} tallies to {args.out}")
    else:
        for t in tallies:
            print(
                f"{t.group}\t{t.phase.value}\ttype1={t.type1}\ttype2={t.type2}\ttype2*={t.type2_star}"
            )
    if args.diffs_out:
        if by is not GroupBy.QUERY:
            raise SystemExit("--diffs-out requires --by query")
        control_ids = {int(x) for x in args.control_ids.split(",")} if args.control_ids else set()
        differences, checks = ablation_effect(tallies, control_ids)
        with Path(args.diffs_out).open("w", encoding="utf-8") as fh:
            fh.write("query_id,difference,is_control\n")
            for d in differences:
                fh.write(f"{d.query_id},{d.difference},{int(d.is_control)}\n")
        for check in checks:
            status = "pass" if check.passed else "FAIL"
            print(f"intrusiveness guard (control query {check.query_id}): {status}")
        print(f"wrote {len(differences)} differences to {args.diffs_out}")
    return 0


def _load_diffs_csv(path: Path | str) -> list[tuple[int, int, bool]]:
    import csv

    rows = []
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] in ("query_id", ""):
                continue
            is_control = bool(int(row[2])) if len(row) > 2 else False
            rows.append((int(row[0]), int(row[1]), is_control))
    return rows


def cmd_correlate(args: argparse.Namespace) -> int:
    diffs = _load_diffs_csv(args.diffs)
    scores = {s.query_id: s.score for s in load_prevalence(args.prevalence)}
    xs, ys = [], []
    for qid, diff, is_control in diffs:
        if is_control or qid not in scores:
            continue
        xs.append(float(diff))
        ys.append(float(scores[qid]))
    result = prevalence_correlation(xs, ys)
    payload = {
        "r": result.r,
        "n": result.n,
        "p_value": result.p_value,
        "significant": result.significant,
    }
    print(json.dumps(payload, indent=2))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_probe(args: argparse.Namespace) -> int:
    records = load_records(args.records)
    cfg = json.loads(Path(args.models).read_text(encoding="utf-8"))
    families = []
    for fam in cfg["families"]:
        families.append(
            ModelFamily(
                name=fam["name"],
                base=_family_handle(fam["name"], fam.get("base"), ModelKind.BASE, records),
                instruct=_family_handle(
                    fam["name"], fam.get("instruct"), ModelKind.INSTRUCT, records
                ),
            )
        )
    comparator = ValueComparator(relative_tolerance=args.tolerance)
    reticence = (
        load_reticence_phrases(args.reticence_phrases)
        if args.reticence_phrases
        else ReticenceConfig()
    )
    matrix = run_matrix(
        records,
        families,
        comparator=comparator,
        templates=args.templates.split(","),
        shots=[int(s) for s in args.shots.split(",")],
        reticence=reticence,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    matrix_to_csv(matrix, out / "matrix.csv")
    matrix_to_json(matrix, out / "matrix.json")
    counts = matrix.counts()
    print(
        f"{len(matrix.outcomes)} probes ({len(matrix.non_control_outcomes())} non-control): "
        f"{counts['recalled']} recalled, {counts['not_recalled']} not recalled, "
        f"{counts['reticent']} reticent (non-control)"
    )
    if matrix.failures:
        print(f"{len(matrix.failures)} cells failed after retries", file=sys.stderr)
    print(f"wrote {out / 'matrix.csv'} and {out / 'matrix.json'}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    from . import report as report_mod
    from .leakage import load_matrix_json

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    produced: dict[str, str] = {}

    if args.tallies_by_model:
        tallies = load_tallies(args.tallies_by_model)
        report_mod.figure_type1_by_model(tallies, out / "fig1")
        produced["fig1"] = "type 1 errors per model (csv, png)"
        _, increase = report_mod.figure_type2_by_model(tallies, out / "fig2")
        produced["fig2"] = (
            f"type 2 errors per model (csv, png); mean increase "
            f"{increase:.1f}%" if increase is not None else "type 2 errors per model"
        )
    if args.tallies_by_query:
        tallies = load_tallies(args.tallies_by_query)
        report_mod.figure_type2_by_query(tallies, out / "fig3")
        produced["fig3"] = "type 2 errors per query (csv, png)"
    if args.diffs and args.prevalence:
        from .coding import QueryDifference

        rows = _load_diffs_csv(args.diffs)
        differences = [
            QueryDifference(qid, 0, 0, diff, is_control) for qid, diff, is_control in rows
        ]
        scores = load_prevalence(args.prevalence)
        by_id = {s.query_id: s.score for s in scores}
        xs = [float(d.difference) for d in differences if not d.is_control and d.query_id in by_id]
        ys = [float(by_id[d.query_id]) for d in differences if not d.is_control and d.query_id in by_id]
        corr = prevalence_correlation(xs, ys)
        report_mod.figure_prevalence_scatter(differences, scores, corr, out / "fig4")
        produced["fig4"] = f"effect vs prevalence scatter; r={corr.r:.3f}, p={corr.p_value:.3g}"
    if args.run:
        reports = load_step_reports(args.run)
        report_mod.unlearning_curves(reports, out / "curves")
        produced["curves"] = "target loss and safe KL per step (csv, png)"
    if args.matrix:
        matrix = load_matrix_json(args.matrix)
        report_mod.matrix_table(matrix, out / "matrix")
        produced["matrix"] = "leakage result grid (csv, html)"

    report_mod.write_report_manifest(out, produced)
    for key, desc in produced.items():
        print(f"{key}: {desc}")
    if not produced:
        print("nothing to report; pass input files", file=sys.stderr)
        return 1
    return 0


def cmd_annotate_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .annotation_service import AnnotationStore, create_app

    store = AnnotationStore(
        store_path=args.store,
        responses=load_responses(args.responses),
        queries=load_queries(args.queries),
        display_order_seed=args.seed,
        blind=not args.no_blind,
        side_by_side=args.side_by_side,
    )
    app = create_app(store, static_dir=args.static)
    print(f"serving annotation console on http://{args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_fixtures(args: argparse.Namespace) -> int:
    src = fixtures_mod.fixtures_dir()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for item in src.iterdir():
        dest = out / item.name
        if item.is_dir():
            shutil.copytree(item, dest, dirs_exist_ok=True)
        else:
            shutil.copy2(item, dest)
    print(f"fixture data copied to {out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="provaudit",
        description="Audit how much a document corpus and published statistics contribute to a language model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="fetch pages from the CommonCrawl index (or saved local pages)")
    p.add_argument("--urls", help="file of URLs, one per line, optional tab-separated topic")
    p.add_argument("--before", default="2024-04-01", help="only captures strictly before this date")
    p.add_argument("--out", required=True)
    p.add_argument("--pages", help="directory of saved pages with a manifest.jsonl (offline mode)")
    p.add_argument("--index-base", default="https://index.commoncrawl.org")
    p.add_argument("--parallelism", type=int, default=4)
    p.add_argument("--per-host-delay", type=float, default=1.0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-corpus", help="chunk ingested documents into a corpus file")
    p.add_argument("--in", dest="in_path", required=True, help="ingest output dir or documents.jsonl")
    p.add_argument("--role", choices=["target", "safe"], required=True)
    p.add_argument("--chunk-len", type=int, default=512)
    p.add_argument("--name", default="")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_corpus)

    p = sub.add_parser("init-model", help="fit a trainable model on target+safe corpora")
    p.add_argument("--target", required=True)
    p.add_argument("--safe", required=True)
    p.add_argument("--dim", type=int)
    p.add_argument("--gain", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_model)

    p = sub.add_parser("unlearn", help="ablate the target corpus from a trainable model")
    p.add_argument("--model", required=True, help="model spec, e.g. tinylm:<checkpoint dir>")
    p.add_argument("--model-id")
    p.add_argument("--target", required=True)
    p.add_argument("--safe", required=True)
    p.add_argument("--weights", default="0.25,0,1", help="forget,mismatch,preserve")
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--kl-alarm", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_unlearn)

    p = sub.add_parser("evaluate", help="put the evaluation queries to a model")
    p.add_argument("--model", required=True)
    p.add_argument("--model-id")
    p.add_argument("--kind", choices=["base", "instruct"], default="base")
    p.add_argument("--phase", choices=["pre", "post"], required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--max-new-tokens", type=int, default=256)
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tally", help="count coded errors per model or per query")
    p.add_argument("--annotations", required=True)
    p.add_argument("--by", choices=["model", "query"], required=True)
    p.add_argument("--groups", help="comma-separated group keys to zero-fill")
    p.add_argument("--out")
    p.add_argument("--diffs-out", help="with --by query: write per-query differences CSV")
    p.add_argument("--control-ids", help="comma-separated control query ids")
    p.set_defaults(func=cmd_tally)

    p = sub.add_parser("correlate", help="Pearson correlation of differences vs prevalence")
    p.add_argument("--diffs", required=True, help="CSV: query_id,difference[,is_control]")
    p.add_argument("--prevalence", required=True, help="CSV: query_id,score")
    p.add_argument("--out")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("probe", help="run the statistic-recall probe matrix")
    p.add_argument("--records", required=True)
    p.add_argument("--models", required=True, help="JSON config of model families")
    p.add_argument("--shots", default="0,1,5")
    p.add_argument("--templates", default="a,b,c,d")
    p.add_argument("--tolerance", type=float, default=None, help="relative tolerance (e.g. 0.005)")
    p.add_argument("--reticence-phrases", help="JSON file with a phrases list")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("report", help="render figures and tables from run artifacts")
    p.add_argument("--out", required=True)
    p.add_argument("--run", help="unlearning run directory (for telemetry curves)")
    p.add_argument("--tallies-by-model")
    p.add_argument("--tallies-by-query")
    p.add_argument("--diffs")
    p.add_argument("--prevalence")
    p.add_argument("--matrix", help="matrix.json from probe")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("annotate-serve", help="serve the blinded annotation console")
    p.add_argument("--responses", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--store", required=True, help="append-only annotation store file")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8700)
    p.add_argument("--seed", type=int, default=0, help="display-order shuffle seed")
    p.add_argument("--static", help="directory with the console UI bundle")
    p.add_argument("--no-blind", action="store_true")
    p.add_argument("--side-by-side", action="store_true")
    p.set_defaults(func=cmd_annotate_serve)

    p = sub.add_parser("fixtures", help="copy the bundled fixture data to a directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fixtures)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
