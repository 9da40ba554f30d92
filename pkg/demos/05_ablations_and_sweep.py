"""Ablation suites and the creativity-weight sweep, at toy scale.

Every table row of the study layouts can be regenerated through the named
suites; the sweep cross-validates the creativity weight on held-out seen
classes before retraining on everything.
"""

from genzsl import ABLATION_SUITES, SyntheticSpec, TrainConfig, ablate, cross_validate, make_synthetic

dataset = make_synthetic(SyntheticSpec(samples_per_class=60, seed=3))
cfg = TrainConfig(n_steps=200, eval_every=100, batch_size=32, seed=0)

print("available suites:")
for name, bundles in ABLATION_SUITES.items():
    print(f"  {name}: {len(bundles)} rows")

print("\nsemantic-categorizer suite (200-step runs):")
for row in ablate(dataset, cfg, "semantic-categorizer"):
    print(f"  {row.label:24s} top1={row.top1_mean:.3f} auc={row.auc_mean:.3f}")

print("\ncross-validating the creativity weight on a two-point grid:")
from dataclasses import replace
result = cross_validate(dataset, replace(cfg, lambda_grid=(0.0, 0.1)))
print(f"  winner: lambda={result.best_lambda} at step {result.best_step} "
      f"(validation su_auc {result.best_metric:.3f})")
for lam, curve in result.curves.items():
    print(f"  lambda={lam}: " + "  ".join(f"step{s}:{a:.3f}" for s, a, _ in curve))
