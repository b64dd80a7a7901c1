"""Render every report product from fixture-scale inputs: the pre/post error
bars, the effect-vs-prevalence scatter, unlearning telemetry curves, and the
leakage matrix grid. Each image gets a sibling CSV with the plotted numbers.
"""

import tempfile
from pathlib import Path

from provaudit.coding import ErrorTally, QueryDifference
from provaudit.correlation import prevalence_correlation
from provaudit.evaluation import Phase
from provaudit.fixtures import (
    build_fixture_corpora,
    fixture_model_handle,
    load_fixture_differences,
    load_fixture_prevalence,
    load_fixture_records,
)
from provaudit.leakage import ModelFamily, oracle_responder, run_matrix
from provaudit.models import ModelKind, scripted_handle
from provaudit.report import (
    figure_prevalence_scatter,
    figure_type1_by_model,
    figure_type2_by_model,
    figure_type2_by_query,
    matrix_table,
    unlearning_curves,
)
from provaudit.unlearn import UnlearningConfig, run_unlearning

out = Path(tempfile.mkdtemp(prefix="provaudit-report-"))
print(f"writing report products to {out}")

# Error-bar inputs shaped like a five-model study.
tallies = []
for i, model in enumerate(["m-a", "m-b", "m-c", "m-d", "m-e"]):
    tallies.append(ErrorTally(model, Phase.PRE, 1, 8 + i, 0))
    tallies.append(ErrorTally(model, Phase.POST, 1 + (i == 2), 11 + 2 * i, 1))
figure_type1_by_model(tallies, out / "fig1")
_, increase = figure_type2_by_model(tallies, out / "fig2")
print(f"fig1/fig2 written; mean type-2 increase across models: {increase:.1f}%")

query_tallies = []
diffs = load_fixture_differences()
for qid, diff in diffs.items():
    query_tallies.append(ErrorTally(qid, Phase.PRE, 0, 1, 0))
    query_tallies.append(ErrorTally(qid, Phase.POST, 0, 1 + diff, 0))
figure_type2_by_query(query_tallies, out / "fig3")

differences = [QueryDifference(qid, 1, 1 + d, d) for qid, d in sorted(diffs.items())]
scores = load_fixture_prevalence()
by_id = {s.query_id: s.score for s in scores}
corr = prevalence_correlation(
    [float(d.difference) for d in differences],
    [float(by_id[d.query_id]) for d in differences],
)
figure_prevalence_scatter(differences, scores, corr, out / "fig4")
print(f"fig3/fig4 written; r = {corr.r:.3f}, p = {corr.p_value:.2e}")

# A short live ablation for the telemetry curves.
target, safe = build_fixture_corpora(n_target_docs=6)
run = run_unlearning(
    fixture_model_handle(target, safe), target, safe, UnlearningConfig(max_steps=60, seed=1)
)
unlearning_curves(run.reports, out / "curves")
print("curves written from a 60-step ablation")

# The leakage grid from scripted doubles.
records = load_fixture_records()
responder = oracle_responder(records, known_datasets={"BOE"})
families = [
    ModelFamily(
        name="demo",
        base=scripted_handle("demo-base", responder=responder, kind=ModelKind.BASE),
        instruct=scripted_handle("demo-instruct", responder=responder, kind=ModelKind.INSTRUCT),
    )
]
matrix_table(run_matrix(records, families), out / "matrix")
print("matrix grid written")

print("\nproducts:")
for path in sorted(out.iterdir()):
    print(f"  {path.name}")
