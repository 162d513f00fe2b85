"""Command-line entry point: ``soundmix <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import model as M
from .audio_io import CANONICAL_DURATION_S, CANONICAL_RATE, AudioSegment, load_segments, load_wav, resample, save_wav, wav_info
from .errors import DataError, NumericError, SoundMixError
from .features import LOG_MEL, MFCC, FeatureConfig, Standardization, export_png, read_feature, write_feature
from .metrics import report_csv, report_text
from .mixer import MixSpec, build_mix_plan, generate_corpus, read_metadata, summarize_metadata, write_metadata
from .trainer import TrainConfig, build_dataset, evaluate, history_jsonl, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
FEATURE_KINDS = {"melspec": LOG_MEL, "mfcc": MFCC}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("SOUNDMIX_THREADS", "1")))
    except ValueError:
        return 1


def write_manifest(out_dir: Path, command: str, args, **extra) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": [str(a) for a in sys.argv[1:]],
        "config_path": str(getattr(args, "config", "") or ""),
        "seed": getattr(args, "seed", None),
        "input": {k: str(v) for k, v in vars(args).items()
                  if k in ("pool", "input", "features", "meta", "checkpoint", "wav") and v is not None},
        "output": str(out_dir),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        **extra,
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _read_classes(directory: Path) -> list[str] | None:
    path = directory / "classes.json"
    return json.loads(path.read_text()) if path.exists() else None


# pool loading

@dataclass(frozen=True)
class WavSlice:
    class_id: int
    class_name: str
    path: Path
    index: int
    rate: int
    duration_s: float

    @property
    def segment_id(self) -> str:
        return f"{self.path.name}@{self.index * self.duration_s:.6f}"

    def render(self) -> AudioSegment:
        return _file_segments(self.path, self.class_id, self.class_name, self.rate, self.duration_s)[self.index]


@lru_cache(maxsize=8)
def _file_segments(path, class_id, class_name, rate, duration_s):
    return load_segments(path, class_id, class_name, rate, duration_s)


def load_pool(pool_dir: Path, rate: int, duration_s: float) -> tuple[list[WavSlice], list[str]]:
    """Pool layout: ``<pool>/<class_name>/*.wav``; class order from classes.json or sorted names."""
    names = _read_classes(pool_dir) or sorted(p.name for p in pool_dir.iterdir() if p.is_dir())
    if not names:
        raise DataError(f"{pool_dir}: no class folders")
    pool = []
    for cid, name in enumerate(names):
        for wav in sorted((pool_dir / name).glob("*.wav")):
            frames, native = wav_info(wav)
            n_out = int(round(frames * rate / native))
            count = n_out // int(round(duration_s * rate))
            pool.extend(WavSlice(cid, name, wav, i, rate, duration_s) for i in range(count))
    return pool, names


# commands

def cmd_synth(args) -> int:
    from .synthetic import CLASS_NAMES, write_pool

    out = Path(args.out)
    paths = write_pool(out, args.per_class, args.seed, args.sample_rate, args.duration)
    (out / "classes.json").write_text(json.dumps(list(CLASS_NAMES)) + "\n")
    write_manifest(out, "synth", args)
    print(f"wrote {len(paths)} segments for {len(CLASS_NAMES)} classes to {out}")
    return EXIT_OK


def cmd_mix(args) -> int:
    out = Path(args.out)
    pool, names = load_pool(Path(args.pool), args.sample_rate, args.duration)
    mode = "fixed" if args.mode == "fixed3" else "variable"
    spec = MixSpec(mode=mode, total_samples=args.count, num_folds=args.folds, rng_seed=args.seed,
                   class_count=len(names), min_sources=args.min_sources, max_sources=args.max_sources)
    plan = build_mix_plan(spec, pool)
    out.mkdir(parents=True, exist_ok=True)
    if args.plan_only:
        from .mixer import MixDescriptor
        rows = []
        for e in plan:
            comps = sorted((pool[i] for i in e.components), key=lambda s: (s.segment_id, s.class_id))
            rows.append(MixDescriptor(e.file_name, e.fold_id, tuple(sorted({s.class_id for s in comps})),
                                      tuple(s.segment_id for s in comps)))
    else:
        rows = []
        for s in generate_corpus(spec, pool, fetch=lambda i: pool[i].render(), plan=plan):
            folder = out / f"fold{s.fold_id}"
            folder.mkdir(exist_ok=True)
            save_wav(AudioSegment(s.samples, s.sample_rate), folder / s.file_name)
            rows.append(s.descriptor())
    write_metadata(rows, out / "metadata.csv")
    (out / "classes.json").write_text(json.dumps(names) + "\n")
    write_manifest(out, "mix", args, mode=args.mode, count=args.count, folds=args.folds)
    print(f"{len(rows)} mixes over {len({r.fold_id for r in rows})} folds -> {out / 'metadata.csv'}")
    return EXIT_OK


def _feature_path(root: Path, row) -> Path:
    return root / f"fold{row.fold_id}" / (Path(row.file_name).stem + ".smfx")


def cmd_featurize(args) -> int:
    src, out = Path(args.input), Path(args.out)
    meta = Path(args.meta) if args.meta else src / "metadata.csv"
    names = _read_classes(src)
    rows = read_metadata(meta, len(names) if names else None)
    fcfg = FeatureConfig(kind=FEATURE_KINDS[args.feature], sample_rate=args.sample_rate)

    def one(row):
        seg = resample(load_wav(src / row.relative_path), fcfg.sample_rate)
        m = fcfg.extract(seg)
        dest = _feature_path(out, row)
        dest.parent.mkdir(parents=True, exist_ok=True)
        write_feature(m, dest)
        if args.png:
            export_png(m, dest.with_suffix(".png"))
        return m.shape

    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        shapes = list(pool.map(one, rows))
    out.mkdir(parents=True, exist_ok=True)
    (out / "features_config.json").write_text(json.dumps(fcfg.to_json(), indent=2) + "\n")
    if names:
        (out / "classes.json").write_text(json.dumps(names) + "\n")
    write_metadata(rows, out / "metadata.csv")
    write_manifest(out, "featurize", args, feature=args.feature)
    print(f"{len(shapes)} {args.feature} matrices -> {out}")
    return EXIT_OK


PRESETS = {
    "paper": {
        "model": M.ModelConfig().to_json(),
        "train": TrainConfig().to_json(),
        "feature": {"input_size": [128, 128], "per_coefficient_std": False},
    },
    "desk": {
        "model": M.ModelConfig(input_shape=(1, 64, 64), conv_channels=(16, 32, 64), num_classes=6).to_json(),
        "train": TrainConfig(epochs=30).to_json(),
        "feature": {"input_size": [64, 64], "per_coefficient_std": False},
    },
}


def load_run_config(path) -> tuple[M.ModelConfig, TrainConfig, dict]:
    cfg = json.loads(Path(path).read_text()) if path else PRESETS["paper"]
    try:
        model_cfg = M.ModelConfig.from_json({**PRESETS["paper"]["model"], **cfg.get("model", {})})
        train_cfg = TrainConfig.from_json({**PRESETS["paper"]["train"], **cfg.get("train", {})})
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad config: {exc}") from exc
    return model_cfg, train_cfg, cfg.get("feature", {})


def _load_features(features: Path, rows):
    try:
        return [read_feature(_feature_path(features, r)) for r in rows]
    except SoundMixError as exc:
        raise DataError(f"{features}: {exc}") from exc


def cmd_train(args) -> int:
    features, out = Path(args.features), Path(args.out)
    model_cfg, train_cfg, feat_over = load_run_config(args.config)
    names = _read_classes(features)
    rows = read_metadata(args.meta, len(names) if names else None)
    num_classes = len(names) if names else 1 + max(c for r in rows for c in r.label_ids)
    names = names or [f"class_{c}" for c in range(num_classes)]
    fcfg = FeatureConfig.from_json(json.loads((features / "features_config.json").read_text()))
    fcfg = replace(fcfg, input_size=tuple(model_cfg.input_shape[1:]),
                   per_coefficient_std=bool(feat_over.get("per_coefficient_std", False)))
    model_cfg = replace(model_cfg, num_classes=num_classes)

    matrices = _load_features(features, rows)
    labels = np.stack([r.labels(num_classes) for r in rows])
    ds = build_dataset(matrices, labels, fcfg, train_cfg, names, [r.relative_path for r in rows])
    out.mkdir(parents=True, exist_ok=True)

    def sink(rec):
        print(json.dumps(rec), file=sys.stderr if args.quiet else sys.stdout)

    params, history = train(ds, model_cfg, train_cfg, sink)
    extra = {
        "feature": fcfg.to_json(),
        "stats": ds.stats.to_json(),
        "class_names": names,
        "threshold": train_cfg.threshold,
        "duration_s": CANONICAL_DURATION_S,
        "test_files": [ds.names[i] for i in ds.test_idx],
    }
    M.save_checkpoint(params, out / "checkpoint.smck", extra)
    (out / "history.jsonl").write_text(history_jsonl(history))
    from .plotting import plot_history
    plot_history(history, out / "history.svg")
    write_manifest(out, "train", args, train=train_cfg.to_json(), model=model_cfg.to_json())
    best = min(history, key=lambda h: h["val_loss"])
    print(f"best epoch {best['epoch']} val_loss {best['val_loss']:.5f} -> {out / 'checkpoint.smck'}")
    return EXIT_OK


def _load_model(path):
    params, extra = M.load_checkpoint(path)
    fcfg = FeatureConfig.from_json(extra["feature"])
    stats = Standardization.from_json(extra["stats"])
    return params, extra, fcfg, stats


def cmd_eval(args) -> int:
    params, extra, fcfg, stats = _load_model(args.checkpoint)
    features = Path(args.features)
    names = extra["class_names"]
    rows = read_metadata(args.meta, len(names))
    if args.split == "test" and extra.get("test_files"):
        keep = set(extra["test_files"])
        rows = [r for r in rows if r.relative_path in keep]
    if not rows:
        raise DataError("no metadata rows to evaluate")
    x = np.stack([fcfg.to_input(m, stats) for m in _load_features(features, rows)])[:, None]
    y = np.stack([r.labels(len(names)) for r in rows])
    report = evaluate(params, x, y, extra.get("threshold", 0.5))
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report_csv(report, names))
    text = report_text(report, names)
    (out / "report.txt").write_text(text)
    from .plotting import plot_report
    plot_report(report, names, out / "report.svg")
    print(text, end="")
    return EXIT_OK


def predict_file(checkpoint, wav) -> tuple[list[str], np.ndarray, float]:
    params, extra, fcfg, stats = _load_model(checkpoint)
    seg = resample(load_wav(wav), fcfg.sample_rate)
    n = int(round(extra.get("duration_s", CANONICAL_DURATION_S) * fcfg.sample_rate))
    x = np.zeros(n)
    x[: min(n, len(seg.samples))] = seg.samples[:n]
    inp = fcfg.to_input(fcfg.extract(x), stats)[None, None]
    probs = M.predict_proba(params, inp)[0]
    return extra["class_names"], probs, float(extra.get("threshold", 0.5))


def write_plot_data(path, names, probs, threshold) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class_name", "probability", "log10_probability", "above_threshold"])
        for name, p in zip(names, probs):
            w.writerow([name, f"{p:.8g}", f"{np.log10(p):.6f}", int(p >= threshold)])


def cmd_predict(args) -> int:
    names, probs, threshold = predict_file(args.checkpoint, args.wav)
    for name, p in zip(names, probs):
        mark = "*" if p >= threshold else " "
        print(f"{mark} {name:<28} {p:.6f}")
    if args.plot_out:
        plot_path = Path(args.plot_out)
        plot_path.parent.mkdir(parents=True, exist_ok=True)
        write_plot_data(plot_path, names, probs, threshold)
        from .plotting import plot_class_probabilities
        plot_class_probabilities(names, probs, threshold, plot_path.with_suffix(".svg"),
                                 title=Path(args.wav).name)
    return EXIT_OK


def cmd_summarize(args) -> int:
    summary = summarize_metadata(read_metadata(args.meta))
    print("\n".join(summary.lines()))
    return EXIT_OK


def cmd_config(args) -> int:
    print(json.dumps(PRESETS[args.preset], indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="soundmix", description="Multilabel mixed-audio classification pipeline.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic six-class segment pool")
    s.add_argument("--out", required=True)
    s.add_argument("--per-class", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sample-rate", type=int, default=CANONICAL_RATE)
    s.add_argument("--duration", type=float, default=CANONICAL_DURATION_S)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("mix", help="build a mixed-audio corpus from a segment pool")
    s.add_argument("--pool", required=True)
    s.add_argument("--mode", choices=["fixed3", "variable"], required=True)
    s.add_argument("--count", type=int, default=8000)
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--min-sources", type=int, default=1)
    s.add_argument("--max-sources", type=int, default=4)
    s.add_argument("--sample-rate", type=int, default=CANONICAL_RATE)
    s.add_argument("--duration", type=float, default=CANONICAL_DURATION_S)
    s.add_argument("--plan-only", action="store_true", help="write metadata without rendering audio")
    s.set_defaults(func=cmd_mix)

    s = sub.add_parser("featurize", help="compute log-Mel or MFCC matrices for a corpus")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--feature", choices=sorted(FEATURE_KINDS), required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--meta", help="metadata CSV (default: <in>/metadata.csv)")
    s.add_argument("--png", action="store_true")
    s.add_argument("--sample-rate", type=int, default=CANONICAL_RATE)
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("train", help="train the CNN on featurized data")
    s.add_argument("--features", required=True)
    s.add_argument("--meta", required=True)
    s.add_argument("--config", help="JSON with model/train/feature sections (default: paper preset)")
    s.add_argument("--out", required=True)
    s.add_argument("--quiet", action="store_true", help="send per-epoch records to stderr")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--meta", required=True)
    s.add_argument("--split", choices=["test", "all"], default="test")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="class probabilities for one WAV file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--wav", required=True)
    s.add_argument("--plot-out")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("summarize", help="count segments, classes and folds in a metadata CSV")
    s.add_argument("--meta", required=True)
    s.set_defaults(func=cmd_summarize)

    s = sub.add_parser("config", help="print a preset run configuration")
    s.add_argument("--preset", choices=sorted(PRESETS), default="paper")
    s.set_defaults(func=cmd_config)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError(parser.format_help())
        return args.func(args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"soundmix: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SoundMixError, OSError, ValueError, KeyError) as exc:
        print(f"soundmix: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
