"""Probe: n_units=5 with k=4 subset retrain (not shipped)."""
import numpy as np

from dramn.datagen import (SurrogateConfig, WindowProtocol, ternary_grid,
                           synthesize_scenario, scenario_seed, ScenarioSpec,
                           subsample_scenarios, window_dataset)
from dramn.training import TrainConfig, train
from dramn.evaluation import evaluate_model
from dramn.selection import build_report, top_k
from dramn.adjacency import SequenceSample, build_adjacency, mean_centered
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
print(f'full n={len(names)}: auroc={rep.auroc:.4f} recall={rep.recall:.4f}', flush=True)

tensors = []
for s in samples:
    tensors.extend(s.tensors)
report = build_report(tensors, 19000, 30000, channel_names=names)
k = int(np.ceil(0.18 * len(names)))
chans = top_k(report, k)
print(f'k={k} channels={chans}', flush=True)
idx = [names.index(c) for c in chans]

def slice_sample(s):
    ws = [TimeSeriesWindow(data=w.data[:, idx], dt=w.dt,
                           channel_names=[w.channel_names[i] for i in idx],
                           t_start=w.t_start) for w in s.windows]
    ts = [build_adjacency(mean_centered(w), proto.sequence.dmd) for w in ws]
    return SequenceSample(windows=ws, tensors=ts, label=s.label,
                          scenario_id=s.scenario_id, t_end=s.t_end)

sub = [slice_sample(s) for s in samples]
r = train(sub, tcfg)
m = evaluate_model(r.params, r.test_samples, r.standardizer)
print(f'top-{k}: auroc={m.auroc:.4f} drop={rep.auroc - m.auroc:+.4f}', flush=True)
