"""``neogat`` command line: synth, preprocess, train, evaluate, explain, stream, gradcheck, bench."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import nsdraw, synth
from .dataset import EpochStore, EpochStoreError, SplitError, extract_epochs, make_split
from .dsp import DECIMATION, RAW_FS, TARGET_FS, FilterDesignError, MissingElectrodeError, SegmentTooShortError
from .dsp import derive_montage, preprocess_recording
from .explain import ExplainError, explain_stream, render_heatmap
from .gradcheck import model_suite, primitive_suite
from .metrics import UndefinedMetricError, aggregate_folds, evaluate_predictions, roc_curve, write_report, write_table_csv
from .model import CHECKPOINT_FORMAT, CheckpointError, Model, ModelConfig, load_checkpoint, read_manifest, save_checkpoint
from .nsdraw import NsdFormatError
from .plotting import probability_figure, roc_figure, training_figure
from .stream import bench_latency, replay_feed, stream_infer
from .train import TrainConfig, TrainingError, train_loop

log = logging.getLogger("neogat")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_INPUT_FORMAT = 3
EXIT_CHECKPOINT = 4
EXIT_PREPROCESS = 5
EXIT_TRAINING = 6
EXIT_METRIC = 7
EXIT_GRADCHECK = 8
EXIT_STREAM = 9


class UsageError(ValueError):
    pass


class StreamInputError(ValueError):
    pass


# most specific first
ERROR_CODES: list[tuple[type[BaseException], int]] = [
    (NsdFormatError, EXIT_INPUT_FORMAT),
    (EpochStoreError, EXIT_INPUT_FORMAT),
    (CheckpointError, EXIT_CHECKPOINT),
    (MissingElectrodeError, EXIT_PREPROCESS),
    (SegmentTooShortError, EXIT_PREPROCESS),
    (FilterDesignError, EXIT_PREPROCESS),
    (SplitError, EXIT_PREPROCESS),
    (ExplainError, EXIT_PREPROCESS),
    (TrainingError, EXIT_TRAINING),
    (UndefinedMetricError, EXIT_METRIC),
    (StreamInputError, EXIT_STREAM),
    (UsageError, EXIT_USAGE),
    (FileNotFoundError, EXIT_USAGE),
]


def exit_code_for(exc: BaseException) -> int:
    for cls, code in ERROR_CODES:
        if isinstance(exc, cls):
            return code
    return EXIT_UNEXPECTED


# run manifests


def sha256_path(path) -> str:
    """Digest of a file, or of a directory's sorted relative names and file digests."""
    path = Path(path)
    h = hashlib.sha256()
    if path.is_file():
        with path.open("rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                h.update(block)
        return h.hexdigest()
    for p in sorted(q for q in path.rglob("*") if q.is_file()):
        h.update(str(p.relative_to(path)).encode())
        h.update(sha256_path(p).encode())
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def write_run_manifest(out_dir, command: str, seed: int | None, config: dict, inputs: list, extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "seed": seed,
        "config": config,
        "config_hash": config_hash(config),
        "inputs": {str(p): sha256_path(p) for p in inputs},
        **(extra or {}),
    }
    path = out / "run.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


# subcommands


def cmd_synth(args) -> int:
    kwargs = {"seizure_freq": args.freq}
    if args.electrodes:
        kwargs["seizure_electrodes"] = tuple(args.electrodes)
    specs = synth.corpus_specs(args.subjects, args.duration, args.seizure_seconds, seed=args.seed, **kwargs)
    paths = synth.write_corpus(specs, args.out)
    config = {"subjects": args.subjects, "duration": args.duration, "seizure_seconds": args.seizure_seconds, **kwargs}
    write_run_manifest(
        args.out,
        "synth",
        args.seed,
        {k: list(v) if isinstance(v, tuple) else v for k, v in config.items()},
        [],
        {"outputs": {p.name: sha256_path(p) for p in paths}, "seizures": {s.subject_id: s.seizure_intervals for s in specs}},
    )
    for p in paths:
        print(p)
    return EXIT_OK


def _load_and_epoch(path: Path):
    raw = nsdraw.read(path)
    clean = preprocess_recording(raw)
    return extract_epochs(clean)


def cmd_preprocess(args) -> int:
    files = sorted(Path(args.data).glob("*.nsd"))
    if not files:
        raise UsageError(f"no *.nsd files in {args.data}")
    # map() keeps input order, so the merged store is independent of --jobs
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        per_file = list(pool.map(_load_and_epoch, files))
    epochs = [e for group in per_file for e in group]
    store = EpochStore.from_epochs(epochs, seed=args.seed)
    store.split = make_split(store.subject_ids(), args.split, args.seed, n_folds=args.folds)
    store.save(args.out)
    write_run_manifest(args.out, "preprocess", args.seed, {"split": args.split, "folds": args.folds}, files)
    bal = store.manifest()["class_balance"]
    print(json.dumps({"epochs": len(store), "subjects": len(store.subject_ids()), **bal}))
    return EXIT_OK


def cmd_train(args) -> int:
    store = EpochStore.load(args.store)
    plan = make_split(store.subject_ids(), args.split, args.seed, n_folds=args.folds)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, seed=args.seed, patience=args.patience, lr=args.lr)
    mcfg = ModelConfig(seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    folds = range(plan.n_folds) if args.split == "kfold" else [0]
    if args.fold is not None:
        folds = [args.fold]
    summaries = []
    for k in folds:
        train_subj, test_subj = plan.train_test(k)
        tr, te = store.indices_for(train_subj), store.indices_for(test_subj)
        fold_dir = out / f"fold{k:02d}"
        fold_dir.mkdir(exist_ok=True)
        with (fold_dir / "train.log.jsonl").open("w") as logf:
            model, manifest = train_loop(store.data, store.labels, tr, te, mcfg, cfg, log_stream=logf)
        manifest.update({"split": plan.to_dict(), "fold": k, "train_subjects": train_subj, "test_subjects": test_subj})
        save_checkpoint(model, fold_dir / "checkpoint", metadata=manifest)
        training_figure(manifest["history"], fold_dir / "training.svg")
        summaries.append({"fold": k, "best_epoch": manifest["best_epoch"], "best_val_auc": manifest["best_val_auc"]})
        print(json.dumps(summaries[-1]))
    write_run_manifest(
        out,
        "train",
        args.seed,
        {"train": cfg.to_dict(), "model_config_hash": mcfg.config_hash(), "split": args.split, "folds": args.folds},
        [args.store],
        {"folds": summaries},
    )
    return EXIT_OK


def find_checkpoints(path) -> list[Path]:
    path = Path(path)
    if (path / "params.bin").exists():
        return [path]
    found = sorted(p.parent for p in path.rglob("manifest.json") if (p.parent / "params.bin").exists())
    found = [p for p in found if read_manifest(p).get("format") == CHECKPOINT_FORMAT]
    if not found:
        raise CheckpointError(f"no checkpoint under {path}")
    return found


def cmd_evaluate(args) -> int:
    store = EpochStore.load(args.store)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports, curves, ckpts = [], [], find_checkpoints(args.checkpoint)
    for ck in ckpts:
        meta = read_manifest(ck).get("metadata", {})
        model = load_checkpoint(ck)
        subjects = store.subject_ids() if args.all_subjects or "test_subjects" not in meta else meta["test_subjects"]
        idx = store.indices_for(subjects)
        if len(idx) == 0:
            raise UsageError(f"no epochs for subjects {subjects} in {args.store}")
        probs = model.predict_proba(store.data[idx])
        rep = evaluate_predictions(probs, store.labels[idx])
        rep.update({"checkpoint": str(ck), "fold": meta.get("fold"), "subjects": list(subjects)})
        reports.append(rep)
        fpr, tpr = roc_curve(probs, store.labels[idx])
        curves.append((fpr, tpr, f"fold {meta.get('fold', len(curves))} (AUC {rep['auc']:.3f})"))
    agg = aggregate_folds(reports)
    write_report(out / "report.json", reports, agg)
    write_table_csv(out / "report.csv", reports, agg)
    roc_figure(curves, out / "roc.svg")
    write_run_manifest(out, "evaluate", None, {"all_subjects": args.all_subjects}, [args.store, *ckpts])
    print(json.dumps({k: agg[k] for k in ("n_folds", "auc_mean", "recall_mean", "accuracy_mean", "kappa_mean")}))
    return EXIT_OK


def cmd_explain(args) -> int:
    model = load_checkpoint(args.checkpoint)
    raw = nsdraw.read(args.recording)
    clean = preprocess_recording(raw)
    out = Path(args.out)
    (out / "heatmaps").mkdir(parents=True, exist_ok=True)
    records = explain_stream(model, clean, threshold=args.threshold, explain=not args.no_heatmaps)
    rendered = 0
    with (out / "probabilities.jsonl").open("w") as fh:
        for r in records:
            fh.write(json.dumps({"t": r["t"], "probability": r["probability"], "seizure": r["seizure"]}) + "\n")
            if "heatmap" in r and rendered < args.max_heatmaps:
                render_heatmap(r["heatmap"], r["epoch"], out / "heatmaps" / f"t{r['t']:05d}", seizure=True)
                rendered += 1
    times = np.array([r["t"] for r in records])
    # a window's reference label is defined only where all 12 consensus seconds agree
    window_truth = np.full(len(times), np.nan)
    for i, t in enumerate(times):
        sec = clean.annotations[t : t + 12]
        if sec.min() == sec.max() and sec[0] >= 0:
            window_truth[i] = sec[0]
    probability_figure(times, [r["probability"] for r in records], out / "probability.svg", labels=window_truth, threshold=args.threshold)
    write_run_manifest(out, "explain", None, {"threshold": args.threshold}, [args.recording, args.checkpoint])
    print(json.dumps({"windows": len(records), "positive": int(sum(r["seizure"] for r in records)), "heatmaps": rendered}))
    return EXIT_OK


def _stdin_feed(stream, fs: int):
    """JSON lines ``{"t": int, "samples": [[...] x 12]}``."""
    for lineno, line in enumerate(stream, 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            samples = np.asarray(rec["samples"], dtype=np.float64)
            t = int(rec["t"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise StreamInputError(f"line {lineno}: {exc}") from exc
        if samples.shape != (12, fs):
            raise StreamInputError(f"line {lineno}: samples shape {samples.shape}, expected (12, {fs})")
        yield t, samples


def _raw_feed(path):
    raw = nsdraw.read(path)
    if int(raw.fs) != RAW_FS:
        raise StreamInputError(f"replay at {RAW_FS} Hz needs a {RAW_FS} Hz recording")
    bipolar = derive_montage(raw)
    for t in range(bipolar.shape[1] // RAW_FS):
        yield t, bipolar[:, t * RAW_FS : (t + 1) * RAW_FS]


def _paced(feed, pace: float):
    for item in feed:
        yield item
        if pace:
            time.sleep(pace)


def cmd_stream(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if args.replay:
        feed = replay_feed(preprocess_recording(nsdraw.read(args.replay))) if args.fs == TARGET_FS else _raw_feed(args.replay)
    else:
        feed = _stdin_feed(sys.stdin, args.fs)
    if args.pretty:
        print(f"{'t':>6}  {'prob':>7}  seizure  {'ms':>7}")
    try:
        for d in stream_infer(model, _paced(feed, args.pace), threshold=args.threshold, input_fs=args.fs):
            if args.pretty:
                print(f"{d['t']:>6}  {d['probability']:7.4f}  {'YES' if d['seizure'] else 'no':>7}  {d['latency_ms']:7.2f}")
            else:
                print(json.dumps(d), flush=True)
    except ValueError as exc:
        if isinstance(exc, (NsdFormatError, CheckpointError, StreamInputError)):
            raise
        raise StreamInputError(str(exc)) from exc
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = primitive_suite(args.seeds, args.seed) + model_suite(args.params, args.seed)
    failed = [r for r in results if not r.ok]
    for r in results if args.verbose else failed:
        print(f"{'ok  ' if r.ok else 'FAIL'} {r.name} rel_err={r.rel_err:.3e} tol={r.tol:g}")
    worst = max(results, key=lambda r: r.rel_err / r.tol)
    print(json.dumps({"checks": len(results), "failed": len(failed), "worst": worst.name, "worst_rel_err": worst.rel_err}))
    return EXIT_GRADCHECK if failed else EXIT_OK


def cmd_bench(args) -> int:
    model = load_checkpoint(args.checkpoint) if args.checkpoint else Model(ModelConfig(seed=args.seed))
    stats = bench_latency(model, n_iter=args.iters, warmup=args.warmup, seed=args.seed, threads=args.threads)
    print(json.dumps(stats, indent=None if not args.pretty else 1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neogat", description=__doc__)
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a deterministic synthetic NSD-RAW corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--subjects", type=int, default=10)
    s.add_argument("--duration", type=int, default=60)
    s.add_argument("--seizure-seconds", type=int, default=20)
    s.add_argument("--freq", type=float, default=3.0)
    s.add_argument("--electrodes", nargs="*", help="electrodes carrying the seizure rhythm (default all)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="NSD-RAW directory -> epoch store")
    s.add_argument("data")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split", choices=("holdout", "kfold"), default="holdout")
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train on an epoch store")
    s.add_argument("store")
    s.add_argument("--out", required=True)
    s.add_argument("--split", choices=("holdout", "kfold"), default="holdout")
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--fold", type=int, help="train a single fold only")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--batch", type=int, default=32)
    s.add_argument("--patience", type=int, default=20)
    s.add_argument("--lr", type=float, default=0.002)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="metrics report for one checkpoint or a run directory")
    s.add_argument("checkpoint")
    s.add_argument("store")
    s.add_argument("--out", required=True)
    s.add_argument("--all-subjects", action="store_true", help="score every epoch, not just held-out subjects")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("explain", help="probability series and heatmaps for one recording")
    s.add_argument("checkpoint")
    s.add_argument("recording")
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--max-heatmaps", type=int, default=50)
    s.add_argument("--no-heatmaps", action="store_true")
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("stream", help="JSON-lines decisions from a replayed file or stdin")
    s.add_argument("checkpoint")
    s.add_argument("--replay", help="NSD-RAW file to replay; stdin JSON lines otherwise")
    s.add_argument("--fs", type=int, choices=(TARGET_FS, TARGET_FS * DECIMATION), default=TARGET_FS)
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--pace", type=float, default=0.0, help="seconds to wait between chunks")
    s.add_argument("--pretty", action="store_true")
    s.set_defaults(func=cmd_stream)

    s = sub.add_parser("gradcheck", help="finite-difference checks; exit 8 on failure")
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--params", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("bench", help="single-epoch inference latency")
    s.add_argument("checkpoint", nargs="?")
    s.add_argument("--iters", type=int, default=100)
    s.add_argument("--warmup", type=int, default=10)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pretty", action="store_true")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # translated to the documented exit codes
        code = exit_code_for(exc)
        print(f"neogat {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        if code == EXIT_UNEXPECTED:
            log.exception("unexpected failure")
        return code


if __name__ == "__main__":
    sys.exit(main())
