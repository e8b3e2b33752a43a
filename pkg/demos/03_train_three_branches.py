"""Train the three-branch model end to end on a reduced dataset.

Uses a smaller sample count and epoch budget than the defaults so the demo
finishes in well under a minute; the printed report shows the
sensitivity-vs-specificity split between branches and the stratified view.
"""

from dataclasses import replace

from multirater.cli import ExperimentConfig, build_datasets
from multirater.metrics import evaluate
from multirater.train import fit

cfg = replace(ExperimentConfig(), n_samples=2000, max_epochs=15, seed=7)

print("=== build train/val/test from the grading simulator ===")
train, val, test = build_datasets(cfg)
print(f"sizes: train {len(train)}, val {len(val)}, test {len(test)}")
print(f"non-consensus share in train: {1 - train.consensus_flags.mean():.3f}")

print()
print("=== fit with consensus loss and uncertainty weighting ===")
records = []
params, log = fit(train, val, cfg.model_config(), cfg.train_config(), on_epoch=records.append)
for rec in records[::5] + records[-1:]:
    print(
        f"epoch {rec['epoch']:>2}  lr {rec['lr']:.1e}  "
        f"sen {rec['loss_sen']:.3f}  spec {rec['loss_spec']:.3f}  "
        f"fusion {rec['loss_fusion']:.3f}  consensus {rec['loss_consensus']:.3f}  "
        f"val auc {rec['val_auc']:.4f}"
    )

print()
print("=== stratified test report ===")
report = evaluate(params, test, threshold=cfg.threshold)
print(report.format_table())
m = report.metrics
print(f"sensitivity by branch:  sen {m['sen']['all']['sen']:.3f} > "
      f"fusion {m['fusion']['all']['sen']:.3f} > spec {m['spec']['all']['sen']:.3f}")
print(f"specificity by branch:  spec {m['spec']['all']['spec']:.3f} > "
      f"fusion {m['fusion']['all']['spec']:.3f} > sen {m['sen']['all']['spec']:.3f}")
print(f"mean uncertainty: consensus {report.mean_uncertainty['consensus']:.4f} "
      f"< non-consensus {report.mean_uncertainty['non_consensus']:.4f}")
