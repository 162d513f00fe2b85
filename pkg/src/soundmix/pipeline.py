"""End-to-end desk-scale experiment on the synthetic corpus."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .features import LOG_MEL, FeatureConfig
from .metrics import EvalReport
from .mixer import MixSpec, build_mix_plan, generate_corpus
from .synthetic import CLASS_NAMES, synthetic_pool
from .trainer import Dataset, TrainConfig, build_dataset, evaluate, train


@dataclass(frozen=True)
class DeskConfig:
    per_class: int = 100
    mixes: int = 600
    min_sources: int = 1
    max_sources: int = 3
    seed: int = 0
    feature: FeatureConfig = FeatureConfig(kind=LOG_MEL, input_size=(64, 64))
    model: M.ModelConfig = M.ModelConfig(input_shape=(1, 64, 64), conv_channels=(16, 32, 64),
                                         num_classes=len(CLASS_NAMES))
    train: TrainConfig = TrainConfig(epochs=30, batch_size=16, learning_rate=0.001)


@dataclass
class DeskResult:
    params: M.ModelParams
    history: list[dict]
    report: EvalReport
    dataset: Dataset
    timings: dict = field(default_factory=dict)


def desk_experiment(cfg: DeskConfig = DeskConfig(), sink=None) -> DeskResult:
    t0 = time.perf_counter()
    pool = synthetic_pool(cfg.per_class, cfg.seed)
    spec = MixSpec(mode="variable", total_samples=cfg.mixes, num_folds=10, rng_seed=cfg.seed,
                   class_count=len(CLASS_NAMES), min_sources=cfg.min_sources,
                   max_sources=cfg.max_sources)
    plan = build_mix_plan(spec, pool)
    matrices, labels, names = [], [], []
    for s in generate_corpus(spec, pool, fetch=lambda i: pool[i].render(), plan=plan):
        matrices.append(cfg.feature.extract(s.samples))
        labels.append(s.labels)
        names.append(s.file_name)
    t1 = time.perf_counter()
    ds = build_dataset(matrices, np.stack(labels), cfg.feature, cfg.train, CLASS_NAMES, names)
    params, history = train(ds, cfg.model, cfg.train, sink)
    t2 = time.perf_counter()
    report = evaluate(params, *ds.subset("test"), threshold=cfg.train.threshold)
    return DeskResult(params, history, report, ds,
                      {"corpus_s": t1 - t0, "train_s": t2 - t1, "total_s": time.perf_counter() - t0})


def full_reproduction(pool_dir, out_dir, seed: int = 0) -> dict[str, dict]:
    """Run the full-size configuration through the CLI on a real segment pool.

    Builds 8000 variable-mode mixes, featurizes them both ways, trains the
    128x128 network for 100 epochs on each and evaluates on the test split.
    Returns ``{"melspec": {...}, "mfcc": {...}}`` with accuracy and macro-F1.
    Expect this to take days on a CPU.
    """
    import json
    from pathlib import Path

    from .cli import PRESETS, run
    from .metrics import parse_report_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "paper_config.json"
    cfg_path.write_text(json.dumps(PRESETS["paper"], indent=2))

    def step(*argv):
        code = run([str(a) for a in argv])
        if code != 0:
            raise RuntimeError(f"soundmix {argv[0]} exited with {code}")

    step("mix", "--pool", pool_dir, "--mode", "variable", "--count", 8000, "--folds", 10,
         "--seed", seed, "--out", out / "mix")
    results = {}
    for kind in ("melspec", "mfcc"):
        feat, run_dir = out / f"feat_{kind}", out / f"run_{kind}"
        step("featurize", "--in", out / "mix", "--feature", kind, "--out", feat)
        step("train", "--features", feat, "--meta", feat / "metadata.csv", "--config", cfg_path,
             "--out", run_dir, "--quiet")
        step("eval", "--checkpoint", run_dir / "checkpoint.smck", "--features", feat,
             "--meta", feat / "metadata.csv", "--out", run_dir / "eval")
        text = (run_dir / "eval" / "report.txt").read_text()
        acc = float(next(l for l in text.splitlines() if l.startswith("element-wise accuracy"))
                    .split(":")[1].strip().rstrip("%"))
        macro = parse_report_csv((run_dir / "eval" / "report.csv").read_text())[-1]
        results[kind] = {"accuracy": acc, "macro_f1": float(macro["f1"])}
    return results
