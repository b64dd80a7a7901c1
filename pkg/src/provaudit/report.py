"""Turn run artifacts into analysis products: error bars per model and per
query, the ablation-effect vs prevalence scatter, unlearning telemetry curves,
and the leakage matrix table.

Every image gets a sibling CSV holding exactly the numbers that were drawn,
so the figures regenerate deterministically from their data files. All
functions are pure in their inputs and only write under the paths they are
given.
"""

from __future__ import annotations

import csv
import html as html_mod
import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .coding import ErrorTally, QueryDifference
from .correlation import CorrelationResult, PrevalenceScore
from .evaluation import Phase
from .leakage import Outcome, ResultMatrix, _OUTCOME_MARK
from .unlearn import StepReport


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _pre_post_rows(tallies: Sequence[ErrorTally], attr: str) -> list[list]:
    groups = sorted({t.group for t in tallies}, key=str)
    by_cell = {(t.group, t.phase): t for t in tallies}
    rows = []
    for g in groups:
        pre = by_cell.get((g, Phase.PRE))
        post = by_cell.get((g, Phase.POST))
        rows.append(
            [g, getattr(pre, attr) if pre else 0, getattr(post, attr) if post else 0]
        )
    return rows


def _grouped_bars(rows: list[list], title: str, ylabel: str, out_png: Path) -> None:
    labels = [str(r[0]) for r in rows]
    pre = [r[1] for r in rows]
    post = [r[2] for r in rows]
    x = range(len(labels))
    fig, ax = plt.subplots(figsize=(max(6, len(labels) * 0.7), 4))
    width = 0.38
    ax.bar([i - width / 2 for i in x], pre, width, label="pre-ablation", color="#4878cf")
    ax.bar([i + width / 2 for i in x], post, width, label="post-ablation", color="#d1605e")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    out_png.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def figure_type1_by_model(tallies: Sequence[ErrorTally], out_base: Path | str) -> list[list]:
    """Structural error counts per model, pre vs post."""
    out_base = Path(out_base)
    rows = _pre_post_rows(tallies, "type1")
    _write_csv(out_base.with_suffix(".csv"), ["model", "type1_pre", "type1_post"], rows)
    _grouped_bars(rows, "Structural (type 1) errors per model", "type 1 errors", out_base.with_suffix(".png"))
    return rows


def mean_percent_increase(rows: list[list]) -> float | None:
    """Mean over groups of (post - pre) / pre * 100; groups with pre == 0 are
    excluded (their relative increase is undefined)."""
    increases = [(post - pre) / pre * 100.0 for _, pre, post in rows if pre > 0]
    if not increases:
        return None
    return sum(increases) / len(increases)


def figure_type2_by_model(tallies: Sequence[ErrorTally], out_base: Path | str) -> tuple[list[list], float | None]:
    """Knowledge error counts per model, pre vs post, annotated with the mean
    percent increase across models."""
    out_base = Path(out_base)
    rows = _pre_post_rows(tallies, "type2")
    increase = mean_percent_increase(rows)
    _write_csv(out_base.with_suffix(".csv"), ["model", "type2_pre", "type2_post"], rows)
    labels = [str(r[0]) for r in rows]
    title = "Knowledge (type 2) errors per model"
    if increase is not None:
        title += f" (mean increase {increase:.1f}%)"
    _grouped_bars(rows, title, "type 2 errors", out_base.with_suffix(".png"))
    return rows, increase


def figure_type2_by_query(tallies: Sequence[ErrorTally], out_base: Path | str) -> list[list]:
    out_base = Path(out_base)
    rows = _pre_post_rows(tallies, "type2")
    rows.sort(key=lambda r: int(r[0]))
    _write_csv(out_base.with_suffix(".csv"), ["query_id", "type2_pre", "type2_post"], rows)
    _grouped_bars(rows, "Knowledge (type 2) errors per query", "type 2 errors", out_base.with_suffix(".png"))
    return rows


def figure_prevalence_scatter(
    differences: Sequence[QueryDifference],
    scores: Sequence[PrevalenceScore],
    corr: CorrelationResult,
    out_base: Path | str,
) -> list[list]:
    """Ablation effect vs prevalence, one point per non-control query."""
    out_base = Path(out_base)
    by_id = {s.query_id: s.score for s in scores}
    rows = [
        [d.query_id, d.difference, by_id[d.query_id]]
        for d in differences
        if not d.is_control and d.query_id in by_id
    ]
    _write_csv(out_base.with_suffix(".csv"), ["query_id", "difference", "prevalence"], rows)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.scatter([r[2] for r in rows], [r[1] for r in rows], color="#4878cf")
    for qid, diff, score in rows:
        ax.annotate(str(qid), (score, diff), textcoords="offset points", xytext=(4, 3), fontsize=8)
    ax.set_xlabel("prevalence score (answerable non-government results out of 10)")
    ax.set_ylabel("ablation effect (type 2 difference)")
    ax.set_title(f"Ablation effect vs prevalence (r={corr.r:.3f}, p={corr.p_value:.3g}, n={corr.n})")
    fig.tight_layout()
    out_base.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_base.with_suffix(".png"), dpi=120)
    plt.close(fig)
    return rows


def unlearning_curves(reports: Sequence[StepReport], out_base: Path | str) -> list[list]:
    """Target loss and safe-data KL against step number."""
    out_base = Path(out_base)
    rows = [[r.step, r.target_loss, r.safe_kl, int(r.alarm)] for r in reports]
    _write_csv(out_base.with_suffix(".csv"), ["step", "target_loss", "safe_kl", "alarm"], rows)
    fig, ax1 = plt.subplots(figsize=(7, 4))
    steps = [r[0] for r in rows]
    ax1.plot(steps, [r[1] for r in rows], color="#d1605e", label="target cross-entropy")
    ax1.set_xlabel("step")
    ax1.set_ylabel("target cross-entropy (nats/token)", color="#d1605e")
    ax2 = ax1.twinx()
    ax2.plot(steps, [r[2] for r in rows], color="#4878cf", label="safe KL vs reference")
    ax2.set_ylabel("safe KL (nats/token)", color="#4878cf")
    fig.suptitle("Unlearning telemetry")
    fig.tight_layout()
    out_base.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_base.with_suffix(".png"), dpi=120)
    plt.close(fig)
    return rows


def matrix_table(matrix: ResultMatrix, out_base: Path | str) -> list[list]:
    """Publication-style grid: one row per dataset, one column per model and
    prompt setting, base template outcomes folded into one mark string."""
    out_base = Path(out_base)
    settings: list[tuple[str, str]] = []  # (column label, kind)
    for k in matrix.shots:
        settings.append((f"{k}-shot", "base"))
    settings.append(("instruct", "instruct"))

    outcome_index: dict[tuple[str, str, str | None, int | None], Outcome] = {}
    for o in matrix.outcomes:
        outcome_index[
            (o.spec.dataset_abbrev, o.spec.model_id, o.spec.template_id, o.spec.shots)
        ] = o.outcome

    def family_base(name: str) -> str | None:
        return matrix.family_models.get(name, {}).get("base")

    def family_instruct(name: str) -> str | None:
        return matrix.family_models.get(name, {}).get("instruct")

    header = ["dataset"]
    for fam in matrix.families:
        for label, _ in settings:
            header.append(f"{fam} {label}")

    rows = []
    for record in matrix.records:
        row: list[str] = [record.dataset_abbrev + (" (control)" if record.is_control else "")]
        for fam in matrix.families:
            for label, kind in settings:
                if kind == "instruct":
                    mid = family_instruct(fam)
                    outcome = outcome_index.get((record.dataset_abbrev, mid, None, None)) if mid else None
                    row.append(_OUTCOME_MARK[outcome] if outcome else "")
                else:
                    k = int(label.split("-")[0])
                    mid = family_base(fam)
                    marks = []
                    for template_id in matrix.templates:
                        outcome = (
                            outcome_index.get((record.dataset_abbrev, mid, template_id, k))
                            if mid
                            else None
                        )
                        marks.append(_OUTCOME_MARK[outcome] if outcome else "")
                    row.append("".join(marks))
        rows.append(row)

    _write_csv(out_base.with_suffix(".csv"), header, rows)
    _write_matrix_html(header, rows, out_base.with_suffix(".html"))
    return rows


def _write_matrix_html(header: list[str], rows: list[list], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    parts = [
        "<!doctype html><html><head><meta charset='utf-8'><title>leakage matrix</title>",
        "<style>table{border-collapse:collapse}td,th{border:1px solid #999;"
        "padding:4px 8px;font-family:monospace}th{background:#eee}</style></head><body>",
        "<h1>Statistic-recall result matrix</h1>",
        "<p>R = recalled, X = not recalled, * = reticent (instruct only)</p>",
        "<table><tr>",
    ]
    parts.extend(f"<th>{html_mod.escape(str(h))}</th>" for h in header)
    parts.append("</tr>")
    for row in rows:
        parts.append("<tr>")
        parts.extend(f"<td>{html_mod.escape(str(cell))}</td>" for cell in row)
        parts.append("</tr>")
    parts.append("</table></body></html>")
    path.write_text("".join(parts) + "\n", encoding="utf-8")


def write_report_manifest(out_dir: Path | str, produced: dict[str, str]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(produced, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
