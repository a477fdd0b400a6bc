"""Command-line entry point: generate, train, evaluate, select, noise, ablate, bench.

Commands communicate only through files (scenario store, adjacency cache,
checkpoints, reports), so any command can be re-run from the artifacts of
the previous ones. Every report embeds the configuration hash, master seed,
and tool version. Exit codes: 0 success, 2 configuration error, 3 data
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .datagen import (
    ScenarioSpec,
    scenario_seed,
    subsample_scenarios,
    synthesize_scenario,
    ternary_grid,
    window_dataset,
)
from .errors import ConfigError, DataError, NumericalFailureError
from .evaluation import (
    BenchCase,
    ablation_run,
    evaluate_model,
    generalization_eval,
    make_noise_augmented,
    noise_sweep,
    predict_proba,
    timing_benchmark,
)
from .model import load_checkpoint, save_checkpoint
from .selection import (
    aggregate_edges,
    build_report,
    overlap,
    top_k,
    write_edge_list,
    write_strength_report,
)
from .store import (
    ScenarioTensorCache,
    class_balance,
    load_scenario,
    manifest_entry,
    read_manifest,
    read_scenario_header,
    scenario_filename,
    save_scenario,
    write_json_report,
    write_manifest,
    write_table,
)
from .training import Standardizer, split_dataset, train, write_history

METRIC_COLUMNS = ("accuracy", "precision", "recall", "f1", "specificity", "auroc")


def _meta(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "seed": cfg.seed, "version": __version__}


def _ensure_dirs(*paths) -> None:
    for p in paths:
        os.makedirs(p, exist_ok=True)


def _slice_record(record, channels):
    idx = [record.channel_names.index(nm) for nm in channels]
    return dataclasses.replace(
        record,
        trajectory=np.ascontiguousarray(record.trajectory[:, idx]),
        channel_names=tuple(record.channel_names[i] for i in idx),
        channel_offsets=record.channel_offsets[idx],
    )


def _iter_records(cfg: RunConfig, channels=None):
    store = cfg.paths.scenario_store
    manifest = read_manifest(store)
    for entry in manifest["scenarios"]:
        record = load_scenario(os.path.join(store, entry["file"]))
        if channels:
            record = _slice_record(record, channels)
        yield record


def _build_dataset(cfg: RunConfig, width_ms=None, channels=None,
                   include_generalization=False, use_cache=True):
    """Window every stored scenario into sequence samples, using the tensor cache.

    Returns (training samples, generalization samples, stats dict).
    """
    proto = cfg.window_protocol(width_ms)
    token = proto.sequence.cache_token()
    if channels:
        token += "-ch:" + ",".join(channels)
    training, generalization = [], []
    stats = {"scenarios": 0, "diverged": 0, "cache_hits": 0, "cache_misses": 0}
    _ensure_dirs(cfg.paths.adjacency_cache)
    for record in _iter_records(cfg, channels):
        cache = None
        tensor_source = None
        if use_cache:
            cache = ScenarioTensorCache(cfg.paths.adjacency_cache,
                                        record.scenario_id, token)
            from .adjacency import build_adjacency

            tensor_source = cache.source(
                lambda w: build_adjacency(w, proto.sequence.dmd)
            )
        windowed = window_dataset(record, proto,
                                  include_generalization=include_generalization,
                                  tensor_source=tensor_source)
        if cache is not None:
            cache.flush()
            stats["cache_hits"] += cache.hits
            stats["cache_misses"] += cache.misses
        if windowed.skipped_diverged:
            stats["diverged"] += 1
            continue
        stats["scenarios"] += 1
        training.extend(windowed.training)
        generalization.extend(windowed.generalization)
    if not training:
        raise DataError("scenario store produced no training samples")
    return training, generalization, stats


def _checkpoint_path(cfg: RunConfig) -> str:
    return os.path.join(cfg.paths.checkpoints, "model.ckpt")


def _standardizer_path(cfg: RunConfig) -> str:
    return os.path.join(cfg.paths.checkpoints, "standardizer.json")


def _load_model(cfg: RunConfig):
    path = _checkpoint_path(cfg)
    if not os.path.exists(path):
        raise DataError(f"missing checkpoint {path}; run the train command first")
    params, header = load_checkpoint(path)
    spath = _standardizer_path(cfg)
    if not os.path.exists(spath):
        raise DataError(f"missing standardizer {spath}; run the train command first")
    with open(spath, "r", encoding="utf-8") as fh:
        std = Standardizer.from_dict(json.load(fh))
    return params, std, header


def _metric_row(label, report):
    return (
        label, report.accuracy, report.precision, report.recall, report.f1,
        report.specificity,
        report.auroc if report.auroc is not None else float("nan"),
    )


def cmd_generate(cfg: RunConfig, args) -> int:
    store = cfg.paths.scenario_store
    _ensure_dirs(store)
    mixes = ternary_grid(cfg.data.total, cfg.data.min_share, cfg.data.ternary_step)
    specs = [ScenarioSpec(mix, event) for event in cfg.data.events for mix in mixes]
    specs = subsample_scenarios(
        specs, cfg.data.keep_1_in, seed=cfg.seed,
        subsample_unperturbed=cfg.data.subsample_unperturbed,
    )
    surrogate_cfg = cfg.surrogate_config()

    def synth(spec: ScenarioSpec):
        path = os.path.join(store, scenario_filename(spec.scenario_id))
        if args.skip_existing and os.path.exists(path):
            try:
                return read_scenario_header(path)
            except DataError:
                pass  # fall through to regeneration
        record = synthesize_scenario(
            spec.mix, spec.event, scenario_seed(cfg.seed, spec), surrogate_cfg
        )
        save_scenario(record, store)
        return manifest_entry(record)

    workers = 1 if args.deterministic else max(1, args.workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(synth, specs))
    else:
        entries = [synth(spec) for spec in specs]

    write_manifest(store, entries, meta=_meta(cfg))
    balance = class_balance(entries)
    print(f"generated {len(entries)} scenarios into {store}")
    print("event\tstable\tunstable\tdiverged")
    for event in sorted(balance):
        row = balance[event]
        print(f"{event}\t{row['stable']}\t{row['unstable']}\t{row['diverged']}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    samples, _, stats = _build_dataset(cfg)
    print(f"windowed {stats['scenarios']} scenarios -> {len(samples)} samples "
          f"(diverged skipped: {stats['diverged']}, cache hits: {stats['cache_hits']})")
    result = train(samples, cfg.train_config(),
                   embed_dim=cfg.model.embed_dim, hidden_dim=cfg.model.hidden_dim)
    _ensure_dirs(cfg.paths.checkpoints)
    save_checkpoint(result.params, _checkpoint_path(cfg), seed=cfg.seed,
                    meta=_meta(cfg))
    with open(_standardizer_path(cfg), "w", encoding="utf-8") as fh:
        json.dump(result.standardizer.to_dict(), fh, sort_keys=True)
        fh.write("\n")
    write_history(result.history, os.path.join(cfg.paths.checkpoints, "history.tsv"),
                  meta=_meta(cfg), zero_wall=args.deterministic)
    best = min(h.val_loss for h in result.history)
    print(f"trained {len(result.history)} epochs, best validation loss {best:.6f}")
    print(f"checkpoint: {_checkpoint_path(cfg)}")
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    params, std, _ = _load_model(cfg)
    _ensure_dirs(cfg.paths.reports)
    samples, _, _ = _build_dataset(cfg)
    _, _, test_samples = split_dataset(samples, cfg.train_config())
    report = evaluate_model(params, test_samples, std,
                            threshold=cfg.evaluate.threshold)
    rows = [_metric_row("test", report)]
    payload = {"test": report.to_dict(), "meta": _meta(cfg)}

    gen_probs, gen_labels = [], []
    proto = cfg.window_protocol()
    test_ids = {s.scenario_id for s in test_samples}
    for record in _iter_records(cfg):
        if record.diverged or record.scenario_id not in test_ids:
            continue
        windowed = window_dataset(record, proto, include_generalization=True)
        if windowed.generalization:
            probs = predict_proba(params, windowed.generalization, std)
            gen_probs.extend(probs.tolist())
            gen_labels.extend(s.label for s in windowed.generalization)
    if gen_probs:
        from .evaluation import evaluate_scores

        gen_report = evaluate_scores(np.array(gen_probs), np.array(gen_labels),
                                     cfg.evaluate.threshold)
        rows.append(_metric_row("generalization", gen_report))
        payload["generalization"] = gen_report.to_dict()

    if args.window_sweep:
        sweep_rows = []
        for width in cfg.evaluate.window_sweep or (100, 200, 500, 1000, 2000):
            sw_samples, _, _ = _build_dataset(cfg, width_ms=width)
            sw_result = train(sw_samples, cfg.train_config(),
                              embed_dim=cfg.model.embed_dim,
                              hidden_dim=cfg.model.hidden_dim)
            sw_report = evaluate_model(sw_result.params, sw_result.test_samples,
                                       sw_result.standardizer,
                                       threshold=cfg.evaluate.threshold)
            sweep_rows.append((width, sw_report))
        best_f1 = max(r.f1 for _, r in sweep_rows)
        table = []
        for width, r in sweep_rows:
            marker = "best_f1" if r.f1 == best_f1 else ""
            table.append((width,) + _metric_row("", r)[1:] + (marker,))
        write_table(os.path.join(cfg.paths.reports, "window_sweep.tsv"),
                    ("width_ms",) + METRIC_COLUMNS + ("flag",), table, meta=_meta(cfg))
        payload["window_sweep"] = {str(w): r.to_dict() for w, r in sweep_rows}

    if args.node_subsets:
        subset_rows = _node_subset_rows(cfg, args)
        write_table(os.path.join(cfg.paths.reports, "node_subsets.tsv"),
                    ("nodes",) + METRIC_COLUMNS, subset_rows, meta=_meta(cfg))

    write_table(os.path.join(cfg.paths.reports, "metrics.tsv"),
                ("split",) + METRIC_COLUMNS, rows, meta=_meta(cfg))
    write_json_report(os.path.join(cfg.paths.reports, "metrics.json"), payload)
    for row in rows:
        print("\t".join(str(v) for v in row))
    return 0


def _selection_range(cfg: RunConfig):
    t_from = cfg.data.event_ms - cfg.window.width_ms
    t_to = cfg.data.event_ms + (cfg.window.sample_count - 1) * cfg.window.sample_stride_ms
    return t_from, t_to


def _collect_tensors(cfg: RunConfig, events=None):
    """Adjacency tensors of every training window, grouped per event type."""
    proto = cfg.window_protocol()
    token = proto.sequence.cache_token()
    by_event = {}
    names = None
    for record in _iter_records(cfg):
        if record.diverged:
            continue
        if events is not None and record.event not in events:
            continue
        cache = ScenarioTensorCache(cfg.paths.adjacency_cache,
                                    record.scenario_id, token)
        from .adjacency import build_adjacency

        source = cache.source(lambda w: build_adjacency(w, proto.sequence.dmd))
        windowed = window_dataset(record, proto, tensor_source=source)
        cache.flush()
        names = record.channel_names
        bucket = by_event.setdefault(record.event, [])
        for sample in windowed.training:
            bucket.extend(sample.tensors)
    return by_event, names


def _node_subset_rows(cfg: RunConfig, args):
    by_event, names = _collect_tensors(cfg)
    t_from, t_to = _selection_range(cfg)
    all_tensors = [t for bucket in by_event.values() for t in bucket]
    report = build_report(all_tensors, t_from, t_to, channel_names=names)
    rows = []
    for k in cfg.evaluate.node_subsets or (len(names),):
        k = int(k)
        chans = top_k(report, k)
        sub_samples, _, _ = _build_dataset(cfg, channels=chans)
        result = train(sub_samples, cfg.train_config(),
                       embed_dim=cfg.model.embed_dim, hidden_dim=cfg.model.hidden_dim)
        sub_report = evaluate_model(result.params, result.test_samples,
                                    result.standardizer,
                                    threshold=cfg.evaluate.threshold)
        rows.append((k,) + _metric_row("", sub_report)[1:])
    return rows


def cmd_select(cfg: RunConfig, args) -> int:
    _ensure_dirs(cfg.paths.reports)
    by_event, names = _collect_tensors(cfg)
    if not by_event:
        raise DataError("no scenarios available for node-strength analysis")
    t_from, t_to = _selection_range(cfg)
    all_tensors = [t for bucket in by_event.values() for t in bucket]
    combined = build_report(all_tensors, t_from, t_to, channel_names=names)
    write_strength_report(combined,
                          os.path.join(cfg.paths.reports, "node_strength.tsv"),
                          meta=_meta(cfg))
    edges = aggregate_edges(all_tensors, t_from, t_to)
    write_edge_list(edges, os.path.join(cfg.paths.reports, "edges.tsv"),
                    channel_names=names, top_fraction=args.edge_fraction,
                    meta=_meta(cfg))

    payload = {"meta": _meta(cfg), "combined_ranking": top_k(combined, len(names))}
    event_reports = {
        event: build_report(bucket, t_from, t_to, channel_names=names)
        for event, bucket in by_event.items()
    }
    if len(event_reports) >= 2:
        kinds = sorted(event_reports)
        k = min(20, len(names))
        count, jaccard = overlap(top_k(event_reports[kinds[0]], k),
                                 top_k(event_reports[kinds[1]], k))
        payload["event_overlap"] = {
            "events": kinds, "k": k, "count": count, "jaccard": jaccard,
        }
        print(f"top-{k} overlap between {kinds[0]} and {kinds[1]}: "
              f"{count} channels (jaccard {jaccard:.3f})")
    write_json_report(os.path.join(cfg.paths.reports, "node_strength.json"), payload)
    print("top channels:", ", ".join(str(c) for c in top_k(combined, args.k)))
    return 0


def cmd_noise(cfg: RunConfig, args) -> int:
    params, std, _ = _load_model(cfg)
    _ensure_dirs(cfg.paths.reports)
    samples, _, _ = _build_dataset(cfg)
    train_cfg = cfg.train_config()
    train_s, val_s, test_s = split_dataset(samples, train_cfg)

    aug_params = aug_std = None
    if args.augmented:
        # corrupt only the training portion; scenario-level splitting puts
        # the noisy copies back into the training fold and keeps validation
        # and test clean
        seq_cfg = cfg.sequence_config()
        augmented = make_noise_augmented(train_s, cfg.evaluate.augment_snr,
                                         seq_cfg, seed=cfg.seed)
        aug_result = train(augmented + val_s + test_s, train_cfg,
                           embed_dim=cfg.model.embed_dim,
                           hidden_dim=cfg.model.hidden_dim)
        aug_params, aug_std = aug_result.params, aug_result.standardizer

    points = noise_sweep(params, test_s, std, cfg.sequence_config(),
                         cfg.evaluate.snr_list, seed=cfg.seed,
                         augmented_params=aug_params,
                         augmented_standardizer=aug_std,
                         threshold=cfg.evaluate.threshold)
    rows = []
    payload = {"meta": _meta(cfg), "points": []}
    for pt in points:
        row = (pt.snr_db,) + _metric_row("", pt.clean_model)[1:]
        if pt.augmented_model is not None:
            row += (pt.augmented_model.auroc,)
        rows.append(row)
        entry = {"snr_db": pt.snr_db, "clean": pt.clean_model.to_dict()}
        if pt.augmented_model is not None:
            entry["augmented"] = pt.augmented_model.to_dict()
        payload["points"].append(entry)
    columns = ("snr_db",) + METRIC_COLUMNS
    if args.augmented:
        columns += ("augmented_auroc",)
    write_table(os.path.join(cfg.paths.reports, "noise_sweep.tsv"), columns, rows,
                meta=_meta(cfg))
    write_json_report(os.path.join(cfg.paths.reports, "noise_sweep.json"), payload)
    for row in rows:
        print("\t".join(str(v) for v in row))
    return 0


def cmd_ablate(cfg: RunConfig, args) -> int:
    _ensure_dirs(cfg.paths.reports)
    samples, _, _ = _build_dataset(cfg)
    variants = tuple(args.variants.split(",")) if args.variants else (
        "dramn", "lseq1", "lstm", "gcn")
    entries = ablation_run(samples, variants, cfg.train_config(),
                           embed_dim=cfg.model.embed_dim,
                           hidden_dim=cfg.model.hidden_dim,
                           threshold=cfg.evaluate.threshold)
    rows = []
    payload = {"meta": _meta(cfg), "variants": {}}
    for e in entries:
        rows.append((e.variant,) + _metric_row("", e.metrics)[1:]
                    + ("non-convergent" if e.non_convergent else "", e.epochs_run))
        payload["variants"][e.variant] = {
            "metrics": e.metrics.to_dict(),
            "non_convergent": e.non_convergent,
            "epochs_run": e.epochs_run,
        }
    write_table(os.path.join(cfg.paths.reports, "ablation.tsv"),
                ("variant",) + METRIC_COLUMNS + ("flag", "epochs"), rows,
                meta=_meta(cfg))
    write_json_report(os.path.join(cfg.paths.reports, "ablation.json"), payload)
    for row in rows:
        print("\t".join(str(v) for v in row))
    return 0


def cmd_bench(cfg: RunConfig, args) -> int:
    _ensure_dirs(cfg.paths.reports)
    cases = [BenchCase(n=int(n), t=cfg.window.width_ms, l_seq=cfg.window.l_seq,
                       f=cfg.model.embed_dim, h=cfg.model.hidden_dim)
             for n in cfg.evaluate.bench_sizes]
    rows_raw = timing_benchmark(cases, repetitions=cfg.evaluate.bench_repetitions,
                                seed=cfg.seed, dmd_cfg=cfg.dmd_config())
    rows = [(r["stage"], r["n"], r["t"], r["mean_ms"], r["p95_ms"]) for r in rows_raw]
    write_table(os.path.join(cfg.paths.reports, "bench.tsv"),
                ("stage", "n", "t", "mean_ms", "p95_ms"), rows, meta=_meta(cfg))
    write_json_report(os.path.join(cfg.paths.reports, "bench.json"),
                      {"meta": _meta(cfg), "rows": rows_raw})
    for row in rows:
        print("\t".join(str(v) for v in row))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dramn",
        description="Stability forecasting pipeline: synthetic data, dynamic "
                    "adjacency construction, training, and evaluation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True,
                       help="path to a JSON config, or 'demo' for the bundled demo")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config master seed")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--deterministic", action="store_true",
                       help="sequential execution and reproducible artifacts")
        p.add_argument("--skip-existing", action="store_true", dest="skip_existing")

    p = sub.add_parser("generate", help="synthesize the scenario store")
    common(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="window, cache adjacency, train, checkpoint")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="test metrics and generalization ranges")
    common(p)
    p.add_argument("--window-sweep", action="store_true", dest="window_sweep",
                   help="retrain across the configured window sizes")
    p.add_argument("--node-subsets", action="store_true", dest="node_subsets",
                   help="retrain on the configured top-k channel subsets")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("select", help="rank channels by cumulative node strength")
    common(p)
    p.add_argument("--k", type=int, default=13)
    p.add_argument("--edge-fraction", type=float, default=0.5, dest="edge_fraction")
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("noise", help="AUROC sweep over injected noise levels")
    common(p)
    p.add_argument("--augmented", action="store_true",
                   help="also train and report a noise-augmented model")
    p.set_defaults(fn=cmd_noise)

    p = sub.add_parser("ablate", help="train and compare model variants")
    common(p)
    p.add_argument("--variants", default="",
                   help="comma-separated subset of dramn,lseq1,lstm,gcn")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("bench", help="per-stage runtime benchmark")
    common(p)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        return args.fn(cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
