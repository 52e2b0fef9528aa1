"""
A population study in miniature
===============================

The full study simulates 20 structures and evaluates every ordered pair.
Here eight structures keep the run to a few seconds while showing the same
outputs: the hyperparameters chosen on validation structures, correlations
between similarity measures and accuracy, and the mean-accuracy table.
"""

from dataclasses import replace

from modal_transfer.population import PopulationConfig
from modal_transfer.study import StudyConfig, run_numerical_study

# %%
config = StudyConfig(population=replace(PopulationConfig(), n_structures=8, samples_per_class=20),
                     n_validation=4, grid_D=(2, 3, 4, 5), sweep_D=(1, 2, 3, 4, 5, 6))
report, _ = run_numerical_study(config)
print(f"{len(report.tasks)} test tasks; grid search chose D={report.theta['D']}, "
      f"lambda={report.theta['lambda']}")

# %%
# Correlation of each similarity measure with post-alignment accuracy.
for key, r in report.correlations.items():
    print(f"r({key}) = {r:+.3f}")

# %%
print(f"\n{'method':<8} {'source':>7} {'target':>7} {'worse than NCA':>15}")
for name, row in report.mean_table.items():
    neg = report.negative_transfer.get(name, {}).get("strict", float("nan"))
    print(f"{name:<8} {row['source_acc']:7.3f} {row['target_acc']:7.3f} {neg:15.3f}")

# %%
print("\nmean TFC accuracy by number of selected features:")
for D, row in report.sweep["curve"].items():
    print(f"  D={D}: {row['mean']:.3f} ({row['n_infeasible']} infeasible)")
