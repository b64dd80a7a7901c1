"""From coded responses to the headline analysis: tallies, per-query ablation
effect, the control guard, and the prevalence correlation.
"""

from provaudit.coding import GroupBy, ablation_effect, tally
from provaudit.correlation import pair_differences_with_prevalence, prevalence_correlation
from provaudit.fixtures import (
    load_fixture_differences,
    load_fixture_prevalence,
    load_paired_example_annotations,
)

# The bundled paired example: the pre-ablation response needed no codes, the
# post-ablation response picked up a 2d (wrong textual information).
annotations = load_paired_example_annotations()
for t in tally(annotations, GroupBy.MODEL):
    print(f"{t.group} {t.phase.value:4s}  type1={t.type1}  type2={t.type2}  type2*={t.type2_star}")

differences, checks = ablation_effect(tally(annotations, GroupBy.QUERY), control_query_ids={4})
print(f"\nper-query differences: {[(d.query_id, d.difference) for d in differences]}")
for check in checks:
    print(f"control guard (query {check.query_id}): {'pass' if check.passed else 'FAIL'}")

# The paper-shaped fixture: 18 (difference, prevalence) pairs. Queries whose
# topics are widely covered outside government sources sit bottom-right.
diffs = load_fixture_differences()
prevalence = load_fixture_prevalence()
by_id = {s.query_id: s.score for s in prevalence}
x = [float(diffs[q]) for q in sorted(diffs)]
y = [float(by_id[q]) for q in sorted(diffs)]
result = prevalence_correlation(x, y)
print(f"\nprevalence correlation over {result.n} queries:")
print(f"r = {result.r:.4f}, p = {result.p_value:.2e} "
      f"({'significant' if result.significant else 'not significant'} at 0.05)")
print("negative r: the less a topic is covered elsewhere, the more ablating"
      " the government pages hurts")
