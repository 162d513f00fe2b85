"""Mixed-audio corpus generation and metadata bookkeeping.

A mix merges one to four source segments drawn from distinct classes by
taking their sample-wise mean. Its label vector is the union of the
component classes, and each mix is dropped into one of ``num_folds`` folders
at random.
"""
from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .audio_io import AudioSegment
from .errors import (
    BadRow,
    InsufficientPool,
    IoFailure,
    LengthMismatch,
    RateMismatch,
    UnknownSchema,
)

PEAK_TARGET = 0.9
METADATA_HEADER = ["file_name", "fold_id", "labels", "component_files"]

_NAME_COLUMNS = ("slice_file_name", "segment_name", "file_name", "filename", "segment", "name")
_CLASS_COLUMNS = ("classid", "class_id")
_FOLD_COLUMNS = ("fold", "fold_id", "folder_id", "folder")
_CLASS_NAME_COLUMNS = ("class", "class_name")


@dataclass(frozen=True)
class MixSpec:
    mode: str = "variable"  # "fixed" or "variable"
    total_samples: int = 8000
    num_folds: int = 10
    rng_seed: int = 0
    class_count: int = 21
    fixed_sources: int = 3
    min_sources: int = 1
    max_sources: int = 4

    def __post_init__(self):
        if self.mode not in ("fixed", "variable"):
            raise ValueError(f"unknown mix mode {self.mode!r}")
        if self.total_samples <= 0 or self.num_folds < 1:
            raise ValueError("total_samples must be > 0 and num_folds >= 1")
        hi = self.fixed_sources if self.mode == "fixed" else self.max_sources
        lo = self.fixed_sources if self.mode == "fixed" else self.min_sources
        if not 1 <= lo <= hi <= self.class_count:
            raise ValueError(f"need 1 <= {lo} <= {hi} <= class_count={self.class_count}")

    @property
    def source_range(self) -> tuple[int, int]:
        if self.mode == "fixed":
            return self.fixed_sources, self.fixed_sources
        return self.min_sources, self.max_sources


@dataclass(frozen=True)
class PlanEntry:
    index: int
    components: tuple[int, ...]  # pool indices
    fold_id: int

    @property
    def file_name(self) -> str:
        return f"mix_{self.index:05d}.wav"


@dataclass(frozen=True)
class MixDescriptor:
    """One metadata row: where a clip lives and which classes it contains."""

    file_name: str
    fold_id: int
    label_ids: tuple[int, ...]
    component_files: tuple[str, ...] = ()
    class_names: tuple[str, ...] = ()

    def labels(self, num_classes: int) -> np.ndarray:
        vec = np.zeros(num_classes, dtype=np.int8)
        vec[list(self.label_ids)] = 1
        return vec

    @property
    def relative_path(self) -> str:
        return f"fold{self.fold_id}/{self.file_name}"


@dataclass(eq=False)
class MixedSample:
    samples: np.ndarray
    labels: np.ndarray
    sample_rate: int
    fold_id: int = 0
    component_ids: tuple[str, ...] = ()
    file_name: str = ""
    class_names: dict[int, str] = field(default_factory=dict)

    def descriptor(self) -> MixDescriptor:
        ids = tuple(int(i) for i in np.flatnonzero(self.labels))
        return MixDescriptor(self.file_name, self.fold_id, ids, self.component_ids)


def build_mix_plan(spec: MixSpec, pool: Sequence) -> list[PlanEntry]:
    """Draw component sets and folds for every mix; pure in (spec, pool order).

    ``pool`` items only need a ``class_id`` attribute. Each entry takes its
    components from distinct classes, one random segment per chosen class.
    """
    if len(pool) == 0:
        raise InsufficientPool("empty segment pool")
    by_class: dict[int, list[int]] = defaultdict(list)
    for i, item in enumerate(pool):
        by_class[int(item.class_id)].append(i)
    classes = np.array(sorted(by_class))
    lo, hi = spec.source_range
    if len(classes) < hi:
        raise InsufficientPool(f"pool covers {len(classes)} classes, mixes need up to {hi}")
    if classes.max() >= spec.class_count or classes.min() < 0:
        raise InsufficientPool(f"pool class ids outside 0..{spec.class_count - 1}")

    rng = np.random.default_rng(spec.rng_seed)
    plan = []
    for index in range(spec.total_samples):
        n = int(rng.integers(lo, hi + 1))
        chosen = rng.choice(classes, size=n, replace=False)
        comps = tuple(sorted(
            by_class[int(c)][int(rng.integers(len(by_class[int(c)])))] for c in chosen))
        fold = int(rng.integers(1, spec.num_folds + 1))
        plan.append(PlanEntry(index, comps, fold))
    return plan


def mix_segments(components: Sequence[AudioSegment], num_classes: int,
                 fold_id: int = 0, file_name: str = "") -> MixedSample:
    """Sample-wise mean of the components, rescaled to a 0.9 peak if louder.

    Summation runs in sorted ``segment_id`` order so any permutation of the
    input yields bit-identical output.
    """
    if not components:
        raise LengthMismatch("no components to mix")
    rate = components[0].sample_rate
    length = len(components[0].samples)
    for c in components:
        if c.sample_rate != rate:
            raise RateMismatch(f"{c.segment_id}: {c.sample_rate} Hz != {rate} Hz")
        if len(c.samples) != length:
            raise LengthMismatch(f"{c.segment_id}: {len(c.samples)} samples != {length}")

    ordered = sorted(components, key=lambda c: (c.segment_id, c.class_id))
    acc = np.zeros(length, dtype=np.float64)
    for c in ordered:
        acc += np.asarray(c.samples, dtype=np.float64)
    mixed = acc / len(ordered)
    peak = np.max(np.abs(mixed)) if length else 0.0
    if peak > PEAK_TARGET:
        mixed *= PEAK_TARGET / peak

    labels = np.zeros(num_classes, dtype=np.int8)
    for c in ordered:
        labels[c.class_id] = 1
    return MixedSample(
        samples=mixed,
        labels=labels,
        sample_rate=rate,
        fold_id=fold_id,
        component_ids=tuple(c.segment_id for c in ordered),
        file_name=file_name,
        class_names={c.class_id: c.class_name for c in ordered},
    )


def generate_corpus(spec: MixSpec, pool: Sequence,
                    fetch: Callable[[int], AudioSegment] | None = None,
                    plan: list[PlanEntry] | None = None) -> Iterator[MixedSample]:
    """Yield mixed samples lazily; ``fetch`` materializes pool item ``i``."""
    fetch = fetch or pool.__getitem__
    plan = build_mix_plan(spec, pool) if plan is None else plan
    for entry in plan:
        comps = [fetch(i) for i in entry.components]
        yield mix_segments(comps, spec.class_count, entry.fold_id, entry.file_name)


def _as_descriptor(row) -> MixDescriptor:
    return row.descriptor() if isinstance(row, MixedSample) else row


def write_metadata(rows: Sequence, path) -> None:
    """Write mix metadata as CSV; labels are ``|``-joined sorted class ids."""
    if len(rows) == 0:
        raise ValueError("refusing to write metadata for an empty corpus")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METADATA_HEADER)
            for row in rows:
                d = _as_descriptor(row)
                w.writerow([
                    d.file_name,
                    d.fold_id,
                    "|".join(str(i) for i in sorted(d.label_ids)),
                    "|".join(d.component_files),
                ])
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def _pick(columns: dict[str, str], candidates) -> str | None:
    for c in candidates:
        if c in columns:
            return columns[c]
    return None


def _parse_int(value: str, row: int, what: str) -> int:
    try:
        return int(value.strip())
    except (ValueError, AttributeError):
        raise BadRow(row, f"{what} {value!r} is not an integer") from None


def read_metadata(path, num_classes: int | None = None) -> list[MixDescriptor]:
    """Parse mix metadata, or single-label corpus metadata.

    Recognized layouts: the mixer's own ``file_name,fold_id,labels,...``
    header, and single-label tables with a file-name column, a class-id
    column and a fold column (UrbanSound8K uses ``slice_file_name``,
    ``classID`` and ``fold``). Row indices in errors count data rows from 1.
    """
    try:
        fh = open(path, newline="", encoding="utf-8-sig")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        cols = {h.strip().lower(): h for h in header}
        own = all(h in cols for h in ("file_name", "fold_id", "labels"))
        name_col = _pick(cols, _NAME_COLUMNS)
        class_col = _pick(cols, _CLASS_COLUMNS)
        fold_col = _pick(cols, _FOLD_COLUMNS)
        cname_col = _pick(cols, _CLASS_NAME_COLUMNS)
        if not own and not (name_col and class_col and fold_col):
            raise UnknownSchema(f"{path}: unrecognized header {header}")

        out = []
        for i, rec in enumerate(reader, start=1):
            if own:
                raw = (rec[cols["labels"]] or "").strip()
                ids = tuple(sorted(_parse_int(t, i, "label") for t in raw.split("|"))) if raw else ()
                comp_raw = rec.get(cols.get("component_files", ""), "") or ""
                comps = tuple(comp_raw.split("|")) if comp_raw else ()
                d = MixDescriptor(rec[cols["file_name"]], _parse_int(rec[cols["fold_id"]], i, "fold"),
                                  ids, comps)
            else:
                cid = _parse_int(rec[class_col], i, "class id")
                cname = (rec.get(cname_col) or "").strip() if cname_col else ""
                d = MixDescriptor(rec[name_col], _parse_int(rec[fold_col], i, "fold"), (cid,),
                                  class_names=(cname,) if cname else ())
            if any(c < 0 for c in d.label_ids):
                raise BadRow(i, f"negative label in {d.label_ids}")
            if num_classes is not None and any(c >= num_classes for c in d.label_ids):
                raise BadRow(i, f"label in {d.label_ids} outside 0..{num_classes - 1}")
            out.append(d)
    return out


@dataclass(frozen=True)
class CorpusSummary:
    num_segments: int
    num_classes: int
    per_class: dict[int, int]
    folds: tuple[int, ...]
    class_names: dict[int, str]

    def lines(self) -> list[str]:
        out = [
            f"segments: {self.num_segments}",
            f"classes: {self.num_classes}",
            f"folds: {len(self.folds)} ({', '.join(str(f) for f in self.folds)})",
        ]
        for cid, n in sorted(self.per_class.items()):
            name = self.class_names.get(cid, "")
            out.append(f"  class {cid:>3} {name:<28} {n}")
        return out


def summarize_metadata(rows: Sequence[MixDescriptor]) -> CorpusSummary:
    """Count segments, classes and folds referenced by a metadata table."""
    per_class: Counter = Counter()
    names: dict[int, str] = {}
    folds = set()
    for d in rows:
        folds.add(d.fold_id)
        for j, cid in enumerate(d.label_ids):
            per_class[cid] += 1
            if j < len(d.class_names) and d.class_names[j]:
                names.setdefault(cid, d.class_names[j])
    return CorpusSummary(
        num_segments=len(rows),
        num_classes=len(per_class),
        per_class=dict(per_class),
        folds=tuple(sorted(folds)),
        class_names=names,
    )


def write_corpus(samples, out_dir, save) -> list[MixDescriptor]:
    """Persist mixes as ``fold{k}/mix_{index:05}.wav`` and return their rows."""
    out_dir = Path(out_dir)
    rows = []
    for s in samples:
        folder = out_dir / f"fold{s.fold_id}"
        folder.mkdir(parents=True, exist_ok=True)
        save(s, folder / s.file_name)
        rows.append(s.descriptor())
    return rows
