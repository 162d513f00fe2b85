"""Deterministic synthetic sound classes for desk-scale end-to-end runs.

Six stand-in classes: three pure tones (300, 700, 1500 Hz), a linear
chirp, white noise, and an amplitude-modulated tone. Each segment draws its
amplitude, phase and small parameter jitter from a per-segment seed, so any
segment can be rebuilt on demand without keeping the pool in memory.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import CANONICAL_DURATION_S, CANONICAL_RATE, AudioSegment, save_wav

# (stand-in class name, generator kind, parameter)
SYNTHETIC_CLASSES = (
    ("tanpura", "tone", 300.0),
    ("harmonium", "tone", 700.0),
    ("flute", "tone", 1500.0),
    ("railway_engine", "chirp", (400.0, 4000.0)),
    ("kalboishakhi_storm", "noise", None),
    ("azan", "am", (2500.0, 6.0)),
)
CLASS_NAMES = tuple(c[0] for c in SYNTHETIC_CLASSES)


def synth_waveform(class_id: int, rng: np.random.Generator,
                   rate: int = CANONICAL_RATE, duration_s: float = CANONICAL_DURATION_S) -> np.ndarray:
    _, kind, param = SYNTHETIC_CLASSES[class_id]
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate
    amp = rng.uniform(0.4, 0.9)
    phase = rng.uniform(0, 2 * np.pi)
    if kind == "tone":
        f = param * rng.uniform(0.99, 1.01)
        x = np.sin(2 * np.pi * f * t + phase)
    elif kind == "chirp":
        f0, f1 = param
        f0 *= rng.uniform(0.9, 1.1)
        f1 *= rng.uniform(0.9, 1.1)
        x = np.sin(2 * np.pi * (f0 * t + (f1 - f0) * t * t / (2 * duration_s)) + phase)
    elif kind == "noise":
        x = rng.uniform(-1.0, 1.0, n)
    else:
        carrier, mod = param
        mod *= rng.uniform(0.8, 1.2)
        x = (0.5 + 0.5 * np.sin(2 * np.pi * mod * t)) * np.sin(2 * np.pi * carrier * t + phase)
    return amp * x


@dataclass(frozen=True)
class SyntheticSource:
    """Lazy pool entry; ``render()`` rebuilds the identical segment every time."""

    class_id: int
    index: int
    seed: int = 0
    rate: int = CANONICAL_RATE
    duration_s: float = CANONICAL_DURATION_S

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.class_id]

    @property
    def segment_id(self) -> str:
        return f"{self.class_name}_{self.index:03d}.wav@0.000000"

    def render(self) -> AudioSegment:
        rng = np.random.default_rng([self.seed, self.class_id, self.index])
        x = synth_waveform(self.class_id, rng, self.rate, self.duration_s)
        return AudioSegment(x, self.rate, self.class_id, self.class_name,
                            f"{self.class_name}_{self.index:03d}.wav", 0.0, self.duration_s)


def synthetic_pool(per_class: int = 100, seed: int = 0, rate: int = CANONICAL_RATE,
                   duration_s: float = CANONICAL_DURATION_S,
                   classes=None) -> list[SyntheticSource]:
    classes = range(len(SYNTHETIC_CLASSES)) if classes is None else classes
    return [SyntheticSource(c, i, seed, rate, duration_s) for c in classes for i in range(per_class)]


def write_pool(out_dir, per_class: int = 10, seed: int = 0, rate: int = CANONICAL_RATE,
               duration_s: float = CANONICAL_DURATION_S) -> list[Path]:
    """Write ``<out>/<class_name>/<class_name>_NNN.wav`` files."""
    out = []
    for src in synthetic_pool(per_class, seed, rate, duration_s):
        seg = src.render()
        folder = Path(out_dir) / src.class_name
        folder.mkdir(parents=True, exist_ok=True)
        path = folder / seg.source_file
        save_wav(seg, path)
        out.append(path)
    return out
