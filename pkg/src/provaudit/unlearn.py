"""Three-term ablation of a target corpus from a trainable model.

The per-step objective is

    w_forget * (-CE(current, target batch))
  + w_mismatch * CE(current, target prompts spliced with distractor continuations)
  + w_preserve * KL(reference || current, safe batch)

Descending it raises the model's loss on the target corpus while penalizing
drift of the safe-data distributions away from a frozen pre-run reference.
Preservation is monitored, not enforced: every step logs the safe-data KL
against the reference and raises an alarm flag above a threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus, assert_disjoint
from .models import (
    CrossEntropyTerm,
    KLDivergenceTerm,
    ModelHandle,
    NumericalDivergenceError,
    Objective,
    SplicedCrossEntropyTerm,
    apply_gradient_step,
    next_token_distributions,
    sequence_loss,
    spliced_sequence_loss,
)


@dataclass(frozen=True)
class UnlearningConfig:
    w_forget: float = 0.25
    w_mismatch: float = 0.0
    w_preserve: float = 1.0
    learning_rate: float = 2e-4
    max_steps: int = 1000
    batch_size: int = 4
    kl_alarm_threshold: float = 0.5  # nats/token
    seed: int = 0
    checkpoint_every: int | None = None

    def __post_init__(self) -> None:
        weights = (self.w_forget, self.w_mismatch, self.w_preserve)
        if any(w < 0 for w in weights):
            raise ValueError("loss weights must be non-negative")
        if not any(w > 0 for w in weights):
            raise ValueError("at least one loss weight must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.kl_alarm_threshold <= 0:
            raise ValueError("kl_alarm_threshold must be positive")


@dataclass(frozen=True)
class ObjectiveComponents:
    forget_term: float  # -CE on the target batch
    mismatch_term: float  # CE toward distractor continuations (0.0 when unweighted)
    preserve_term: float  # KL(reference || current) on the safe batch


@dataclass(frozen=True)
class StepReport:
    step: int
    target_loss: float
    safe_kl: float
    combined_objective: float
    alarm: bool


@dataclass
class RunSummary:
    steps_completed: int
    initial_target_loss: float | None  # whole-corpus CE before any step
    final_target_loss: float | None  # whole-corpus CE after the last step
    mean_safe_kl: float | None
    max_safe_kl: float | None
    alarm_steps: int
    eq1_trend_pass: bool | None  # late-window mean target loss above early-window mean
    aborted: bool = False
    abort_reason: str = ""


@dataclass
class UnlearningRun:
    config: UnlearningConfig
    model_id: str
    target_corpus: str
    safe_corpus: str
    reports: list[StepReport]
    summary: RunSummary
    checkpoint_params: dict[int, np.ndarray] = field(default_factory=dict)
    checkpoint_dirs: dict[int, Path] = field(default_factory=dict)


def mean_safe_kl(
    reference: ModelHandle, current: ModelHandle, texts: Sequence[str]
) -> float:
    """Token-mean forward KL(reference || current) computed from the two
    models' next-token distributions."""
    p_dists = next_token_distributions(reference, texts)
    q_dists = next_token_distributions(current, texts)
    total = 0.0
    n_tokens = 0
    for p, q in zip(p_dists, q_dists):
        q = np.clip(q, 1e-300, None)
        contrib = np.where(p > 0, p * (np.log(np.clip(p, 1e-300, None)) - np.log(q)), 0.0)
        total += float(contrib.sum())
        n_tokens += p.shape[0]
    return total / n_tokens


def draw_mismatch_pairs(
    target_batch: Sequence[str],
    distractor_pool: Sequence[str],
    rng: np.random.Generator,
) -> list[tuple[str, str]]:
    """Pair each target chunk's leading half with a random distractor chunk."""
    pairs = []
    for chunk in target_batch:
        words = chunk.split()
        prompt = " ".join(words[: max(1, len(words) // 2)])
        distractor = distractor_pool[int(rng.integers(0, len(distractor_pool)))]
        pairs.append((prompt, distractor))
    return pairs


def unlearning_objective(
    current: ModelHandle,
    reference: ModelHandle,
    target_batch: Sequence[str],
    safe_batch: Sequence[str],
    config: UnlearningConfig,
    mismatch_pairs: Sequence[tuple[str, str]] | None = None,
) -> tuple[float, ObjectiveComponents]:
    """Evaluate the composed objective and its three components.

    The reference handle must be the frozen pre-run snapshot; the preserve
    term is always measured against it, never against the previous step.
    """
    forget_term = -sequence_loss(current, target_batch)
    preserve_term = mean_safe_kl(reference, current, safe_batch)
    if config.w_mismatch > 0:
        if not mismatch_pairs:
            raise ValueError("w_mismatch > 0 requires mismatch pairs")
        mismatch_term = spliced_sequence_loss(current, mismatch_pairs)
    else:
        mismatch_term = 0.0
    components = ObjectiveComponents(forget_term, mismatch_term, preserve_term)
    value = (
        config.w_forget * forget_term
        + config.w_mismatch * mismatch_term
        + config.w_preserve * preserve_term
    )
    if not math.isfinite(value):
        raise NumericalDivergenceError("non-finite objective value")
    return value, components


def build_step_objective(
    reference: ModelHandle,
    target_batch: Sequence[str],
    safe_batch: Sequence[str],
    config: UnlearningConfig,
    mismatch_pairs: Sequence[tuple[str, str]] | None = None,
) -> Objective:
    """The gradient-step form of the same objective, as weighted terms."""
    objective: list[tuple[float, object]] = [
        (-config.w_forget, CrossEntropyTerm(tuple(target_batch))),
        (config.w_preserve, KLDivergenceTerm(reference.require_trainable(), tuple(safe_batch))),
    ]
    if config.w_mismatch > 0:
        if not mismatch_pairs:
            raise ValueError("w_mismatch > 0 requires mismatch pairs")
        objective.append((config.w_mismatch, SplicedCrossEntropyTerm(tuple(mismatch_pairs))))
    return objective  # type: ignore[return-value]


def run_unlearning(
    model: ModelHandle,
    target: Corpus,
    safe: Corpus,
    config: UnlearningConfig,
    out_dir: Path | str | None = None,
) -> UnlearningRun:
    """Run the ablation for config.max_steps gradient steps.

    Batches are sampled with replacement from the corpora's chunk lists,
    seeded by config.seed, so a rerun from the same initial model state is
    reproducible. Numerical divergence aborts the run, preserving the reports
    written so far.
    """
    backend = model.require_trainable()
    if not target.chunks or not safe.chunks:
        raise ValueError("target and safe corpora must be non-empty")
    assert_disjoint(target, safe)

    reference_backend = backend.clone()
    reference = ModelHandle(
        model_id=f"{model.model_id}@reference",
        kind=model.kind,
        capability=model.capability,
        context_limit=model.context_limit,
        backend=reference_backend,
    )

    out_path = Path(out_dir) if out_dir is not None else None
    steps_fh = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        steps_fh = (out_path / "steps.jsonl").open("w", encoding="utf-8")

    target_texts = target.chunk_texts()
    safe_texts = safe.chunk_texts()

    run = UnlearningRun(
        config=config,
        model_id=model.model_id,
        target_corpus=target.name,
        safe_corpus=safe.name,
        reports=[],
        summary=RunSummary(
            steps_completed=0,
            initial_target_loss=sequence_loss(model, target_texts),
            final_target_loss=None,
            mean_safe_kl=None,
            max_safe_kl=None,
            alarm_steps=0,
            eq1_trend_pass=None,
        ),
    )
    _save_checkpoint(run, model, 0, out_path)

    rng = np.random.default_rng(config.seed)

    try:
        for step in range(1, config.max_steps + 1):
            t_idx = rng.integers(0, len(target_texts), size=config.batch_size)
            s_idx = rng.integers(0, len(safe_texts), size=config.batch_size)
            target_batch = [target_texts[i] for i in t_idx]
            safe_batch = [safe_texts[i] for i in s_idx]
            pairs = (
                draw_mismatch_pairs(target_batch, safe_texts, rng)
                if config.w_mismatch > 0
                else None
            )

            value, components = unlearning_objective(
                model, reference, target_batch, safe_batch, config, pairs
            )
            objective = build_step_objective(reference, target_batch, safe_batch, config, pairs)
            apply_gradient_step(model, objective, config.learning_rate)

            report = StepReport(
                step=step,
                target_loss=-components.forget_term,
                safe_kl=components.preserve_term,
                combined_objective=value,
                alarm=components.preserve_term > config.kl_alarm_threshold,
            )
            run.reports.append(report)
            if steps_fh is not None:
                steps_fh.write(json.dumps(asdict(report)) + "\n")
                steps_fh.flush()
            if (
                config.checkpoint_every
                and step % config.checkpoint_every == 0
                and step != config.max_steps
            ):
                _save_checkpoint(run, model, step, out_path)
    except NumericalDivergenceError as exc:
        run.summary.aborted = True
        run.summary.abort_reason = str(exc)
    finally:
        if steps_fh is not None:
            steps_fh.close()

    run.summary.final_target_loss = sequence_loss(model, target_texts)
    _finalize_summary(run)
    _save_checkpoint(run, model, run.summary.steps_completed, out_path)
    if out_path is not None:
        _write_run_json(run, out_path)
    return run


def _finalize_summary(run: UnlearningRun) -> None:
    reports = run.reports
    summary = run.summary
    summary.steps_completed = len(reports)
    if not reports:
        return
    losses = [r.target_loss for r in reports]
    kls = [r.safe_kl for r in reports]
    summary.mean_safe_kl = float(np.mean(kls))
    summary.max_safe_kl = float(np.max(kls))
    summary.alarm_steps = sum(1 for r in reports if r.alarm)
    window = max(1, len(reports) // 10)
    summary.eq1_trend_pass = float(np.mean(losses[-window:])) > float(np.mean(losses[:window]))


def _save_checkpoint(
    run: UnlearningRun, model: ModelHandle, step: int, out_path: Path | None
) -> None:
    backend = model.require_trainable()
    run.checkpoint_params[step] = backend.get_params().copy()
    if out_path is not None:
        from .tinylm import save_model

        ckpt_dir = out_path / "checkpoints" / f"step-{step}"
        save_model(backend, ckpt_dir)  # type: ignore[arg-type]
        run.checkpoint_dirs[step] = ckpt_dir


def _write_run_json(run: UnlearningRun, out_path: Path) -> None:
    payload = {
        "config": asdict(run.config),
        "model_id": run.model_id,
        "target_corpus": run.target_corpus,
        "safe_corpus": run.safe_corpus,
        "summary": asdict(run.summary),
        "checkpoints": {str(k): str(v) for k, v in sorted(run.checkpoint_dirs.items())},
    }
    (out_path / "run.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_step_reports(run_dir: Path | str) -> list[StepReport]:
    reports = []
    with (Path(run_dir) / "steps.jsonl").open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                reports.append(StepReport(**json.loads(line)))
    return reports


@dataclass(frozen=True)
class ProbeLoss:
    text: str
    loss_pre: float
    loss_post: float
    delta: float


def compare_checkpoints(
    pre: ModelHandle, post: ModelHandle, probe_texts: Sequence[str]
) -> list[ProbeLoss]:
    """Per-text loss before and after ablation, sorted by loss increase."""
    rows = []
    for text in probe_texts:
        loss_pre = sequence_loss(pre, [text])
        loss_post = sequence_loss(post, [text])
        rows.append(ProbeLoss(text, loss_pre, loss_post, loss_post - loss_pre))
    rows.sort(key=lambda r: r.delta, reverse=True)
    return rows
