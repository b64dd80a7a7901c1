"""Acceptance criteria, one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -s` to see the lines as they pass.
Thresholds and fixture parameters come from the bundled fixture manifest.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest

from provaudit import fixtures as fx
from provaudit.cli import main as cli_main
from provaudit.codes import CodeClass, CodeLabel, code_class
from provaudit.coding import (
    Annotation,
    GroupBy,
    ResponseKey,
    ablation_effect,
    tally,
)
from provaudit.correlation import prevalence_correlation
from provaudit.evaluation import Phase
from provaudit.leakage import (
    ModelFamily,
    Outcome,
    ProbeMode,
    render_prompt,
    run_matrix,
    oracle_responder,
)
from provaudit.models import ModelKind, scripted_handle
from provaudit.tinylm import ScalarToyModel, trainable_handle
from provaudit.unlearn import (
    UnlearningConfig,
    build_step_objective,
    draw_mismatch_pairs,
    run_unlearning,
    unlearning_objective,
)

GOLDEN_PROMPTS = Path(__file__).parent / "golden" / "prompts"


def report(criterion: str, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    print(f"[{status}] {criterion}: {detail}")
    assert passed, f"{criterion} failed: {detail}"


# ---------------------------------------------------------------------------

def test_a1_unlearning_dynamics() -> None:
    manifest = fx.load_manifest()["ablation_acceptance"]
    target, safe = fx.build_fixture_corpora(n_target_docs=manifest["n_target_docs"])
    assert len(target.documents) <= 10
    handle = fx.fixture_model_handle(target, safe)
    config = UnlearningConfig(
        w_forget=manifest["weights"][0],
        w_mismatch=manifest["weights"][1],
        w_preserve=manifest["weights"][2],
        learning_rate=manifest["learning_rate"],
        max_steps=manifest["steps"],
        batch_size=manifest["batch_size"],
        seed=manifest["seed"],
    )
    started = time.monotonic()
    run = run_unlearning(handle, target, safe, config)
    elapsed = time.monotonic() - started

    ratio = run.summary.final_target_loss / run.summary.initial_target_loss
    ratio_min = manifest["final_to_initial_target_ce_min"]
    kl_max = manifest["mean_safe_kl_max"]
    ok = (
        ratio >= ratio_min
        and run.summary.mean_safe_kl < kl_max
        and elapsed < 600
        and not run.summary.aborted
    )
    report(
        "A1 unlearning dynamics",
        ok,
        f"target CE {run.summary.initial_target_loss:.4f} -> "
        f"{run.summary.final_target_loss:.4f} (ratio {ratio:.3f} >= {ratio_min}); "
        f"mean safe KL {run.summary.mean_safe_kl:.5f} < {kl_max}; {elapsed:.1f}s < 600s",
    )


def test_a2_gradient_correctness() -> None:
    target_batch = ("1 0 1 1 0 1", "0 0 1 1")
    safe_batch = ("0 1 0 0", "1 0 0 0 1")
    pairs = (("1 0", "0 1 1"), ("0", "1 0 0"))
    reference = ScalarToyModel(theta=-0.4)

    worst = 0.0
    for name, weights in (
        ("forget", (1.0, 0.0, 0.0)),
        ("mismatch", (0.0, 1.0, 0.0)),
        ("preserve", (0.0, 0.0, 1.0)),
    ):
        model = ScalarToyModel(theta=0.6)
        config = UnlearningConfig(
            w_forget=weights[0], w_mismatch=weights[1], w_preserve=weights[2]
        )
        objective = build_step_objective(
            trainable_handle(reference, "ref"), target_batch, safe_batch, config, pairs
        )

        def composed(theta: float) -> float:
            model.set_params(np.array([theta]))
            return sum(w * model.term_value(term) for w, term in objective)

        model.set_params(np.array([0.6]))
        analytic = sum(
            w * model.term_value_and_grad(term)[1][0] for w, term in objective
        )
        eps = 1e-6
        fd = (composed(0.6 + eps) - composed(0.6 - eps)) / (2 * eps)
        rel = abs(analytic - fd) / max(abs(fd), 1e-12)
        worst = max(worst, rel)
        assert rel < 1e-4, f"{name} term: analytic {analytic} vs fd {fd} (rel {rel:.2e})"
    report("A2 gradient correctness", worst < 1e-4, f"worst relative error {worst:.2e} < 1e-4")


def test_a3_objective_algebra(small_corpora=None) -> None:
    from provaudit.tinylm import TinyEmbeddingLM

    target, safe = fx.build_fixture_corpora(n_target_docs=4)
    model = TinyEmbeddingLM.fit_corpus(
        target.chunk_texts() + safe.chunk_texts(), dim=24, gain=8.0
    )
    reference = trainable_handle(model.clone(), "ref")

    # preserve term is exactly zero while current equals the reference
    current = trainable_handle(model, "m")
    config = UnlearningConfig(w_forget=0, w_mismatch=0, w_preserve=1)
    value, components = unlearning_objective(
        current, reference, target.chunk_texts()[:3], safe.chunk_texts()[:3], config
    )
    assert value == pytest.approx(0.0, abs=1e-12)
    assert components.preserve_term == pytest.approx(0.0, abs=1e-12)

    rng = np.random.default_rng(99)
    model.set_params(model.get_params() + 0.01 * rng.standard_normal(model.get_params().size))
    worst = 0.0
    for _ in range(100):
        w = rng.random(3) * 2
        config = UnlearningConfig(
            w_forget=float(w[0]), w_mismatch=float(w[1]), w_preserve=float(w[2])
        )
        t_idx = rng.integers(0, len(target.chunks), size=3)
        s_idx = rng.integers(0, len(safe.chunks), size=3)
        target_batch = [target.chunk_texts()[i] for i in t_idx]
        safe_batch = [safe.chunk_texts()[i] for i in s_idx]
        pairs = draw_mismatch_pairs(target_batch, safe.chunk_texts(), rng)
        value, c = unlearning_objective(
            current, reference, target_batch, safe_batch, config, pairs
        )
        expected = (
            config.w_forget * c.forget_term
            + config.w_mismatch * c.mismatch_term
            + config.w_preserve * c.preserve_term
        )
        worst = max(worst, abs(value - expected))
    report(
        "A3 objective algebra",
        worst <= 1e-9,
        f"max |objective - weighted component sum| {worst:.2e} <= 1e-9 over 100 trials; "
        "preserve term 0 at current == reference",
    )


def test_a4_coding_pipeline_fidelity() -> None:
    annotations = fx.load_paired_example_annotations()
    ok = True
    for by in (GroupBy.MODEL, GroupBy.QUERY):
        tallies = tally(annotations, by)
        pre = next(t for t in tallies if t.phase is Phase.PRE)
        post = next(t for t in tallies if t.phase is Phase.POST)
        ok = ok and pre.type2 == 0 and post.type2 == 1

    rng = np.random.default_rng(4096)
    labels = list(CodeLabel)
    synthetic = []
    for i in range(1000):
        qid = int(rng.integers(1, 20))
        model = f"m{int(rng.integers(4))}"
        phase = Phase.PRE if rng.random() < 0.5 else Phase.POST
        k = int(rng.integers(0, 6))
        codes = frozenset(labels[j] for j in rng.choice(len(labels), size=k, replace=False))
        synthetic.append(Annotation(ResponseKey(qid, model, phase), f"a{i}", codes))

    exact = True
    for by, key in (
        (GroupBy.MODEL, lambda a: a.response.model_id),
        (GroupBy.QUERY, lambda a: a.response.query_id),
    ):
        tallies = tally(synthetic, by)
        # brute-force recount over every (annotation, code) pair
        recount: dict = {}
        for a in synthetic:
            for code in a.codes:
                cell = (key(a), a.response.phase, code_class(code))
                recount[cell] = recount.get(cell, 0) + 1
        for t in tallies:
            exact = exact and t.type1 == recount.get((t.group, t.phase, CodeClass.TYPE1), 0)
            exact = exact and t.type2 == recount.get((t.group, t.phase, CodeClass.TYPE2), 0)
            exact = exact and t.type2_star == recount.get(
                (t.group, t.phase, CodeClass.TYPE2_STAR), 0
            )
    report(
        "A4 coding pipeline fidelity",
        ok and exact,
        "paired-example fixture reproduces pre type2=0 / post type2=1 by model and by query; "
        "1000 randomized annotations match the brute-force recount exactly",
    )


def test_a5_intrusiveness_guard() -> None:
    base = [
        Annotation(ResponseKey(4, "m", Phase.PRE), "a1", frozenset({CodeLabel.MISSING_TEXT})),
        Annotation(ResponseKey(4, "m", Phase.POST), "a1", frozenset({CodeLabel.MISSING_TEXT})),
        Annotation(ResponseKey(1, "m", Phase.PRE), "a1", frozenset()),
        Annotation(ResponseKey(1, "m", Phase.POST), "a1", frozenset({CodeLabel.WRONG_TEXT})),
    ]
    _, checks = ablation_effect(tally(base, GroupBy.QUERY), control_query_ids={4})
    identical_passes = checks[0].passed and checks[0].difference == 0

    perturbed = base[:1] + [
        Annotation(
            ResponseKey(4, "m", Phase.POST),
            "a1",
            frozenset({CodeLabel.MISSING_TEXT, CodeLabel.WRONG_VALUE}),
        )
    ] + base[2:]
    _, checks = ablation_effect(tally(perturbed, GroupBy.QUERY), control_query_ids={4})
    perturbed_fails = not checks[0].passed

    report(
        "A5 intrusiveness guard",
        identical_passes and perturbed_fails,
        "control difference 0 reports pass; perturbed control fixture flips the guard to fail",
    )


def test_a6_correlation_math() -> None:
    anti = prevalence_correlation([0, 1, 2], [10, 9, 8])
    pro = prevalence_correlation([1, 2, 3], [1, 2, 3])
    trivial_ok = anti.r == -1.0 and pro.r == 1.0

    diffs = fx.load_fixture_differences()
    prev = {s.query_id: s.score for s in fx.load_fixture_prevalence()}
    x = [float(diffs[qid]) for qid in sorted(diffs)]
    y = [float(prev[qid]) for qid in sorted(diffs)]
    result = prevalence_correlation(x, y)

    # independent oracle: raw-sum definitional formula
    n = len(x)
    sx, sy = sum(x), sum(y)
    sxy = sum(a * b for a, b in zip(x, y))
    sxx, syy = sum(a * a for a in x), sum(b * b for b in y)
    oracle = (n * sxy - sx * sy) / np.sqrt((n * sxx - sx * sx) * (n * syy - sy * sy))

    fixture_ok = (
        n == 18
        and abs(result.r - oracle) <= 1e-9
        and result.r < 0
        and result.p_value < 0.05
    )
    report(
        "A6 correlation math",
        trivial_ok and fixture_ok,
        f"trivial fixtures give r=-1 and r=+1 exactly; 18-pair fixture r={result.r:.4f} matches "
        f"oracle within 1e-9 and is significantly negative (p={result.p_value:.2e} < 0.05)",
    )


def test_a7_prompt_rendering_golden_files() -> None:
    sas = next(r for r in fx.load_fixture_records() if r.dataset_abbrev == "SAS")
    mismatches = []
    for template_id in ("a", "b", "c", "d"):
        for shots in (0, 1, 5):
            rendered = render_prompt(sas, template_id, shots)
            golden = (GOLDEN_PROMPTS / f"sas_{template_id}_{shots}shot.txt").read_text(
                encoding="utf-8"
            )
            if rendered != golden:
                mismatches.append(f"{template_id}/{shots}")
    report(
        "A7 prompt rendering golden files",
        not mismatches,
        "templates a-d at 0/1/5 shots reproduce the golden renderings byte-for-byte"
        if not mismatches
        else f"mismatched: {mismatches}",
    )


def test_a8_matrix_cardinality_and_classification() -> None:
    records = [r for r in fx.load_fixture_records() if not r.is_control]
    assert len(records) == 5

    def family(i: int, known: set[str], reticent: set[str] | None = None) -> ModelFamily:
        responder = oracle_responder(records, known, reticent_datasets=reticent)
        return ModelFamily(
            name=f"fam{i}",
            base=scripted_handle(f"fam{i}-base", responder=responder, kind=ModelKind.BASE),
            instruct=scripted_handle(
                f"fam{i}-instruct", responder=responder, kind=ModelKind.INSTRUCT
            ),
        )

    matrix = run_matrix(records, [family(i, set()) for i in range(3)])
    cardinality_ok = len(matrix.non_control_outcomes()) == 195 and not matrix.failures

    k_ok = True
    for k in range(4):
        known = {r.dataset_abbrev for r in records[:k]}
        single = run_matrix(
            records,
            [ModelFamily(name="f", base=scripted_handle("f-base", responder=oracle_responder(records, known)))],
            templates=("a",),
            shots=(0,),
        )
        k_ok = k_ok and single.counts()["recalled"] == k

    reticent_matrix = run_matrix(records, [family(0, set(), reticent={"SAS", "POL"})])
    reticent_outcomes = [o for o in reticent_matrix.outcomes if o.outcome is Outcome.RETICENT]
    reticent_ok = reticent_outcomes and all(
        o.spec.mode is ProbeMode.INSTRUCT_QA for o in reticent_outcomes
    )

    report(
        "A8 matrix cardinality and classification",
        cardinality_ok and k_ok and bool(reticent_ok),
        "5 records x 3 families -> 195 non-control outcomes; a double knowing k records "
        "yields exactly k recalled; reticent outcomes only under instruct probing",
    )


def test_a9_end_to_end_offline_drill(tmp_path) -> None:
    from fastapi.testclient import TestClient

    from provaudit.annotation_service import AnnotationStore, create_app
    from provaudit.evaluation import load_queries, load_responses

    started = time.monotonic()
    fixtures_dir = fx.fixtures_dir()
    root = tmp_path

    # ingest (local saved pages; no network) and build both corpora
    assert cli_main(["ingest", "--pages", str(fixtures_dir / "target_pages"), "--out", str(root / "docs")]) == 0
    assert cli_main([
        "build-corpus", "--in", str(root / "docs"), "--role", "target",
        "--chunk-len", "32", "--out", str(root / "target.corpus.jsonl"),
    ]) == 0
    assert cli_main([
        "build-corpus", "--in", str(fixtures_dir / "safe_documents.jsonl"), "--role", "safe",
        "--chunk-len", "32", "--out", str(root / "safe.corpus.jsonl"),
    ]) == 0

    # trainable model, then the ablation
    assert cli_main([
        "init-model", "--target", str(root / "target.corpus.jsonl"),
        "--safe", str(root / "safe.corpus.jsonl"), "--out", str(root / "model"),
    ]) == 0
    assert cli_main([
        "unlearn", "--model", f"tinylm:{root / 'model'}",
        "--target", str(root / "target.corpus.jsonl"), "--safe", str(root / "safe.corpus.jsonl"),
        "--weights", "0.25,0,1", "--lr", "2e-4", "--steps", "200", "--seed", "1",
        "--out", str(root / "run"),
    ]) == 0

    # pre/post evaluation from the run's endpoint checkpoints
    for phase, step in (("pre", "step-0"), ("post", "step-200")):
        assert cli_main([
            "evaluate", "--model", f"tinylm:{root / 'run' / 'checkpoints' / step}",
            "--model-id", "fixture-lm", "--phase", phase,
            "--queries", str(fixtures_dir / "queries.jsonl"),
            "--max-new-tokens", "32",
            "--out", str(root / f"responses-{phase}.jsonl"),
        ]) == 0

    # annotation through the HTTP API: blinded tasks in, export out
    responses = load_responses(root / "responses-pre.jsonl") + load_responses(
        root / "responses-post.jsonl"
    )
    queries = load_queries(fixtures_dir / "queries.jsonl")
    store = AnnotationStore(root / "store.jsonl", responses, queries, display_order_seed=3)
    api = TestClient(create_app(store))

    type2_codes = ["2a", "2b", "2d", "2e", "2x"]
    while True:
        task = api.get("/api/tasks/next", params={"annotator_id": "drill"}).json()["task"]
        if task is None:
            break
        # deterministic desk-coding rule applied to the blinded payload
        digest = hashlib.sha256(
            (task["query_text"] + "\n" + task["response_text"]).encode()
        ).digest()
        n_codes = digest[0] % 4
        codes = [type2_codes[b % len(type2_codes)] for b in digest[1 : 1 + n_codes]]
        submit = api.post(
            "/api/annotations",
            json={"task_id": task["task_id"], "annotator_id": "drill",
                  "codes": sorted(set(codes)), "note": ""},
        )
        assert submit.status_code == 200
    exported = api.get("/api/export").json()["annotations"]
    assert len(exported) == len(responses)
    annotations_path = root / "annotations.jsonl"
    with annotations_path.open("w", encoding="utf-8") as fh:
        for record in exported:
            fh.write(json.dumps(record) + "\n")

    # tally -> differences -> correlation -> report
    assert cli_main([
        "tally", "--annotations", str(annotations_path), "--by", "query",
        "--out", str(root / "tallies-query.jsonl"),
        "--diffs-out", str(root / "diffs.csv"), "--control-ids", "4",
    ]) == 0
    assert cli_main([
        "tally", "--annotations", str(annotations_path), "--by", "model",
        "--out", str(root / "tallies-model.jsonl"),
    ]) == 0
    assert cli_main([
        "correlate", "--diffs", str(root / "diffs.csv"),
        "--prevalence", str(fixtures_dir / "prevalence.csv"),
        "--out", str(root / "correlation.json"),
    ]) == 0
    assert cli_main([
        "report", "--out", str(root / "report"), "--run", str(root / "run"),
        "--tallies-by-model", str(root / "tallies-model.jsonl"),
        "--tallies-by-query", str(root / "tallies-query.jsonl"),
        "--diffs", str(root / "diffs.csv"),
        "--prevalence", str(fixtures_dir / "prevalence.csv"),
    ]) == 0

    expected = [
        "fig1.csv", "fig1.png", "fig2.csv", "fig2.png", "fig3.csv", "fig3.png",
        "fig4.csv", "fig4.png", "curves.csv", "curves.png",
    ]
    missing = [name for name in expected if not (root / "report" / name).exists()]
    elapsed = time.monotonic() - started
    report(
        "A9 end-to-end offline drill",
        not missing and elapsed < 1200,
        f"ingest -> build-corpus -> unlearn -> evaluate(pre/post) -> annotate (API) -> "
        f"tally -> correlate -> report completed offline in {elapsed:.1f}s < 1200s; "
        f"all figure data files emitted"
        if not missing
        else f"missing outputs: {missing}",
    )
