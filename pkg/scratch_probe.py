"""Scratch probe for the remaining acceptance-critical behaviors (not shipped)."""
import sys
import time
import numpy as np

from dramn.datagen import (SurrogateConfig, WindowProtocol, ternary_grid,
                           synthesize_scenario, scenario_seed, ScenarioSpec,
                           subsample_scenarios, window_dataset)
from dramn.training import TrainConfig, train
from dramn.evaluation import (evaluate_model, ablation_run, noise_sweep,
                              make_noise_augmented)
from dramn.selection import build_report, top_k
from dramn.adjacency import SequenceConfig, SequenceSample, build_adjacency, mean_centered
from dramn.dmd import TimeSeriesWindow

SEED = int(sys.argv[1]) if len(sys.argv) > 1 else 11
scfg = SurrogateConfig()
grid = ternary_grid(step=2)
specs = [ScenarioSpec(m, ev) for ev in ('load_increase', 'short_circuit') for m in grid]
specs = subsample_scenarios(specs, 20, seed=SEED)

t0 = time.time()
samples, records = [], []
for sp in specs:
    rec = synthesize_scenario(sp.mix, sp.event, scenario_seed(SEED, sp), scfg)
    records.append(rec)
    samples.extend(window_dataset(rec, WindowProtocol()).training)
print(f'dataset: {len(samples)} samples in {time.time()-t0:.0f}s', flush=True)

tcfg = TrainConfig(epochs=100, early_stop_patience=10, seed=SEED)

print('=== ablation ===', flush=True)
t0 = time.time()
entries = ablation_run(samples, ('dramn', 'lseq1', 'lstm', 'gcn'), tcfg)
for e in entries:
    print(f'  {e.variant}: auroc={e.metrics.auroc:.4f} recall={e.metrics.recall:.4f} '
          f'nonconv={e.non_convergent} epochs={e.epochs_run}', flush=True)
print(f'ablation took {time.time()-t0:.0f}s', flush=True)

print('=== top-k retrain ===', flush=True)
t0 = time.time()
full_auroc = [e for e in entries if e.variant == 'dramn'][0].metrics.auroc
tensors = []
for s in samples:
    tensors.extend(s.tensors)
names = records[0].channel_names
report = build_report(tensors, 19000, 30000, channel_names=names)
n = len(names)
k = int(np.ceil(0.18 * n))
chans = top_k(report, k)
print(f'  n={n} k={k} channels={chans}', flush=True)
idx = [names.index(c) for c in chans]

proto = WindowProtocol()
def slice_sample(s):
    ws = [TimeSeriesWindow(data=w.data[:, idx], dt=w.dt,
                           channel_names=[w.channel_names[i] for i in idx],
                           t_start=w.t_start) for w in s.windows]
    ts = [build_adjacency(mean_centered(w), proto.sequence.dmd) for w in ws]
    return SequenceSample(windows=ws, tensors=ts, label=s.label,
                          scenario_id=s.scenario_id, t_end=s.t_end)

sub_samples = [slice_sample(s) for s in samples]
sub_result = train(sub_samples, tcfg)
sub_rep = evaluate_model(sub_result.params, sub_result.test_samples, sub_result.standardizer)
print(f'  full auroc={full_auroc:.4f} top-{k} auroc={sub_rep.auroc:.4f} '
      f'drop={full_auroc - sub_rep.auroc:+.4f} ({time.time()-t0:.0f}s)', flush=True)

print('=== noise sweep ===', flush=True)
t0 = time.time()
result = train(samples, tcfg)
train_val = result.train_samples + result.val_samples
seq_cfg = SequenceConfig()
aug = make_noise_augmented(result.train_samples, (15, 25, 35), seq_cfg, seed=SEED)
aug_result = train(aug + result.val_samples + result.test_samples, tcfg)
points = noise_sweep(result.params, result.test_samples, result.standardizer,
                     seq_cfg, (5, 15, 25, 35, 85), seed=SEED,
                     augmented_params=aug_result.params,
                     augmented_standardizer=aug_result.standardizer)
for pt in points:
    print(f'  snr={pt.snr_db}: clean auroc={pt.clean_model.auroc:.4f} '
          f'aug auroc={pt.augmented_model.auroc:.4f}', flush=True)
print(f'noise took {time.time()-t0:.0f}s', flush=True)
