"""Ablation walkthrough: fit the fixture model, forget the target corpus,
watch the telemetry.

The objective per step is
    0.25 * (-CE on a target batch) + 1.0 * KL(reference || current on a safe batch)
so descending it pushes target loss up while anchoring the safe-data
distributions to the frozen pre-run reference.
"""

import time

from provaudit.fixtures import build_fixture_corpora, fixture_model_handle
from provaudit.models import sequence_loss
from provaudit.unlearn import UnlearningConfig, run_unlearning

target, safe = build_fixture_corpora(n_target_docs=10)
handle = fixture_model_handle(target, safe)

print(f"target: {len(target.chunks)} chunks; safe: {len(safe.chunks)} chunks")
print(f"pre-run target CE: {sequence_loss(handle, target.chunk_texts()):.4f} nats/token")

config = UnlearningConfig(max_steps=200, seed=1)  # weights (0.25, 0, 1), rate 2e-4
started = time.monotonic()
run = run_unlearning(handle, target, safe, config)
elapsed = time.monotonic() - started

s = run.summary
print(f"\nran {s.steps_completed} steps in {elapsed:.1f}s")
print(f"target CE: {s.initial_target_loss:.4f} -> {s.final_target_loss:.4f} "
      f"({s.final_target_loss / s.initial_target_loss:.2f}x)")
print(f"safe KL vs frozen reference: mean {s.mean_safe_kl:.5f}, max {s.max_safe_kl:.5f} nats/token")
print(f"KL alarms: {s.alarm_steps}; loss-increase trend: {'pass' if s.eq1_trend_pass else 'fail'}")

print("\nstep    target CE    safe KL")
for r in run.reports[:: len(run.reports) // 10]:
    print(f"{r.step:4d}    {r.target_loss:9.4f}    {r.safe_kl:.5f}")
