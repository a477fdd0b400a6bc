"""Scan acceptance seeds for joint criteria margins (not shipped)."""
import sys
import numpy as np

from dramn.datagen import (SurrogateConfig, WindowProtocol, ternary_grid,
                           synthesize_scenario, scenario_seed, ScenarioSpec,
                           subsample_scenarios, window_dataset)
from dramn.training import TrainConfig, train
from dramn.evaluation import evaluate_model, ablation_run

scfg = SurrogateConfig()
grid = ternary_grid(step=2)

for seed in [int(s) for s in sys.argv[1:]]:
    specs = [ScenarioSpec(m, ev) for ev in ('load_increase', 'short_circuit')
             for m in grid]
    specs = subsample_scenarios(specs, 20, seed=seed)
    samples = []
    for sp in specs:
        rec = synthesize_scenario(sp.mix, sp.event, scenario_seed(seed, sp), scfg)
        samples.extend(window_dataset(rec, WindowProtocol()).training)
    tcfg = TrainConfig(epochs=100, early_stop_patience=10, seed=seed)
    entries = ablation_run(samples, ('dramn', 'lseq1', 'lstm'), tcfg)
    by = {e.variant: e for e in entries}
    d, l1, ls = by['dramn'].metrics, by['lseq1'].metrics, by['lstm'].metrics
    print(f'seed {seed}: dramn auroc={d.auroc:.4f} recall={d.recall:.4f} | '
          f'lseq1 {l1.auroc:.4f} | lstm {ls.auroc:.4f} | '
          f'c6={"OK" if d.auroc >= 0.95 and d.recall >= 0.9 else "FAIL"} '
          f'c7={"OK" if d.auroc >= ls.auroc and (by["lseq1"].non_convergent or l1.auroc < d.auroc) else "FAIL"}',
          flush=True)
