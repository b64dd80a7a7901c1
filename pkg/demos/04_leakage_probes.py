"""Statistic-recall probes: rendered prompts, outcome classification, and the
full result matrix against scripted model doubles.
"""

from provaudit.fixtures import load_fixture_records
from provaudit.leakage import (
    ModelFamily,
    oracle_responder,
    render_instruct_probe,
    render_prompt,
    run_matrix,
)
from provaudit.models import ModelKind, scripted_handle

records = load_fixture_records()
sas = next(r for r in records if r.dataset_abbrev == "SAS")

print("=== completion probes for the SAS statistic ===")
for template_id, shots in (("a", 0), ("d", 1), ("d", 5)):
    print(f"--- template {template_id}, {shots}-shot ---")
    print(render_prompt(sas, template_id, shots))
    print()

system, question = render_instruct_probe(sas)
print("=== instruct probe ===")
print(f"system: {system}")
print(f"user:   {question}")
print()

# Three scripted families: one knows the two control statistics, one knows
# one portal statistic, one knows nothing and refuses as an instruct model.
def family(name, known, reticent=frozenset()):
    responder = oracle_responder(records, set(known), reticent_datasets=set(reticent))
    return ModelFamily(
        name=name,
        base=scripted_handle(f"{name}-base", responder=responder, kind=ModelKind.BASE),
        instruct=scripted_handle(f"{name}-instruct", responder=responder, kind=ModelKind.INSTRUCT),
    )

families = [
    family("knows-controls", {"BOE", "POP"}),
    family("knows-sas", {"SAS"}),
    family("knows-nothing", set(), reticent={"SAS", "IBR", "POL", "API", "HSA"}),
]
matrix = run_matrix(records, families)
non_control = matrix.counts(include_controls=False)
print(f"{len(matrix.outcomes)} probes, {len(matrix.non_control_outcomes())} on portal statistics")
print(f"non-control outcomes: {non_control}")
print(f"with controls:        {matrix.counts(include_controls=True)}")
