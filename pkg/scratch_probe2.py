"""Probe: subset-channel ceilings and train-only augmentation (not shipped)."""
import sys
import time
import numpy as np

from dramn.datagen import (SurrogateConfig, WindowProtocol, ternary_grid,
                           synthesize_scenario, scenario_seed, ScenarioSpec,
                           subsample_scenarios, window_dataset)
from dramn.training import TrainConfig, train, split_dataset
from dramn.evaluation import (evaluate_model, noise_sweep, make_noise_augmented)
from dramn.adjacency import SequenceConfig, SequenceSample, build_adjacency, mean_centered
from dramn.dmd import TimeSeriesWindow

SEED = 11
scfg = SurrogateConfig()
grid = ternary_grid(step=2)
specs = [ScenarioSpec(m, ev) for ev in ('load_increase', 'short_circuit') for m in grid]
specs = subsample_scenarios(specs, 20, seed=SEED)
samples, records = [], []
for sp in specs:
    rec = synthesize_scenario(sp.mix, sp.event, scenario_seed(SEED, sp), scfg)
    records.append(rec)
    samples.extend(window_dataset(rec, WindowProtocol()).training)
names = records[0].channel_names
tcfg = TrainConfig(epochs=100, early_stop_patience=10, seed=SEED)
proto = WindowProtocol()

result = train(samples, tcfg)
rep = evaluate_model(result.params, result.test_samples, result.standardizer)
print(f'full: auroc={rep.auroc:.4f} recall={rep.recall:.4f}', flush=True)

def slice_sample(s, idx):
    ws = [TimeSeriesWindow(data=w.data[:, idx], dt=w.dt,
                           channel_names=[w.channel_names[i] for i in idx],
                           t_start=w.t_start) for w in s.windows]
    ts = [build_adjacency(mean_centered(w), proto.sequence.dmd) for w in ws]
    return SequenceSample(windows=ws, tensors=ts, label=s.label,
                          scenario_id=s.scenario_id, t_end=s.t_end)

for trio in (['v0', 'f0', 'q0'], ['v0', 'v1', 'v2'], ['f0', 'f1', 'f2'],
             ['v0', 'f0', 'v1'], ['q0', 'q1', 'q2']):
    idx = [names.index(c) for c in trio]
    sub = [slice_sample(s, idx) for s in samples]
    r = train(sub, tcfg)
    m = evaluate_model(r.params, r.test_samples, r.standardizer)
    print(f'  {trio}: auroc={m.auroc:.4f} drop={rep.auroc - m.auroc:+.4f}', flush=True)

print('=== train-only augmentation at eval SNRs ===', flush=True)
train_s, val_s, test_s = split_dataset(samples, tcfg)
seq_cfg = SequenceConfig()
aug = make_noise_augmented(train_s, (15, 25, 35), seq_cfg, seed=SEED)
aug_result = train(aug + val_s + test_s, tcfg)
points = noise_sweep(result.params, test_s, result.standardizer, seq_cfg,
                     (5, 15, 25, 35, 85), seed=SEED,
                     augmented_params=aug_result.params,
                     augmented_standardizer=aug_result.standardizer)
for pt in points:
    print(f'  snr={pt.snr_db}: clean={pt.clean_model.auroc:.4f} '
          f'aug={pt.augmented_model.auroc:.4f}', flush=True)
